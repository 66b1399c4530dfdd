"""Degradation models checked against their distributions and closed forms."""
import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from netfi.errors import ParameterDomainError
from netfi.services.presets import published_params
from netfi.services.injector import DegradationType
from netfi.services.qos_models import (
    CommLossModel,
    CommLossParams,
    DelayModel,
    GilbertElliottModel,
    GilbertElliottParams,
    HyperExpParams,
    LomaxParams,
    commloss_expected_rate,
    commloss_fit_p_loss,
    commloss_advance,
    ge_advance,
    ge_expected_drop_rate,
    ge_occupancy,
    ge_stationary,
    hyperexp_cdf,
    hyperexp_mean,
    hyperexp_sample,
    hyperexp_sample_array,
    lomax_cdf,
    lomax_sample,
    lomax_sample_array,
    scale_drop_probs,
    simulate_commloss_drops,
    simulate_ge_drops,
    sojourn_mean,
)
from netfi.services.rng import RngStream, derive_seed

N = 1_000_000

SKEWED_ROWS = (
    (0.90, 0.02, 0.05, 0.03),
    (0.10, 0.80, 0.05, 0.05),
    (0.30, 0.10, 0.50, 0.10),
    (0.20, 0.20, 0.10, 0.50),
)


def occupancy_by_power_iteration(p: GilbertElliottParams) -> np.ndarray:
    """Share of packets per state: jump-chain stationary vector times mean sojourn."""
    P = np.asarray(p.transition)
    pi = np.full(4, 0.25)
    for _ in range(5000):
        pi = pi @ P
    k = np.arange(1_000_000)
    # E[max(1, ceil X)] = sum over k >= 0 of P(X > k)
    sojourn = np.array([stats.lomax(c=s.alpha, scale=s.lam).sf(k).sum() for s in p.state_lomax])
    w = pi * sojourn
    return w / w.sum()


class TestRng:
    def test_same_seed_same_sequence(self):
        a, b = RngStream(7), RngStream(7)
        assert [a.uniform() for _ in range(5000)] == [b.uniform() for _ in range(5000)]

    def test_derived_seeds_differ(self):
        assert derive_seed(1, 0) != derive_seed(1, 1)
        assert derive_seed(1, 0) != derive_seed(2, 0)
        assert derive_seed(1, 0) == derive_seed(1, 0)

    def test_choice_respects_cumulative(self):
        rng = RngStream(3)
        picks = np.array([rng.choice([0.2, 1.0]) for _ in range(50_000)])
        assert picks.mean() == pytest.approx(0.8, abs=0.01)

    def test_keyed_substreams(self):
        rng = RngStream(7)
        first = rng.at(42).uniform()
        for k in range(100):
            rng.at(k).uniform()
        assert rng.at(42).uniform() == first
        assert rng.at(43).uniform() != first
        assert RngStream(8).at(42).uniform() != first


class TestLomax:
    P = LomaxParams(alpha=4.43, lam=1.64)

    def test_zero_maps_to_zero(self):
        assert lomax_sample(self.P, 0.0) == 0.0

    def test_median(self):
        assert lomax_sample(self.P, 0.5) == pytest.approx(1.64 * (2 ** (1 / 4.43) - 1))

    def test_u_of_one_rejected(self):
        with pytest.raises(ParameterDomainError) as exc:
            lomax_sample(self.P, 1.0)
        assert exc.value.symbol == "u"

    @pytest.mark.parametrize("alpha,lam", [(0.0, 1.0), (2.0, -1.0)])
    def test_non_positive_params_rejected(self, alpha, lam):
        with pytest.raises(ValidationError):
            LomaxParams(alpha=alpha, lam=lam)

    def test_lambda_alias(self):
        assert LomaxParams.model_validate({"alpha": 3.0, "lambda": 2.0}).lam == 2.0

    def test_empirical_mean(self):
        u = np.random.default_rng(1).random(N)
        x = lomax_sample_array(self.P, u)
        assert x.mean() == pytest.approx(1.64 / 3.43, rel=0.02)

    def test_matches_scipy_lomax(self):
        u = np.random.default_rng(2).random(N)
        x = lomax_sample_array(self.P, u)
        ks = stats.kstest(x, stats.lomax(c=4.43, scale=1.64).cdf)
        assert ks.statistic < 0.005

    def test_cdf_matches_scipy(self):
        xs = np.linspace(0, 10, 41)
        np.testing.assert_allclose(lomax_cdf(self.P, xs), stats.lomax(c=4.43, scale=1.64).cdf(xs), atol=1e-12)

    def test_sojourn_mean_matches_rounded_draws(self):
        p = LomaxParams(alpha=3.0, lam=2.0)
        u = np.random.default_rng(4).random(N)
        draws = np.maximum(1.0, np.ceil(lomax_sample_array(p, u)))
        assert sojourn_mean(p) == pytest.approx(draws.mean(), rel=0.01)


class TestHyperExp:
    @pytest.mark.parametrize("target,expected", [
        (100.0, 100.21),
        (300.0, 297.84),
        (500.0, 502.5),
    ])
    def test_reference_means(self, target, expected):
        assert hyperexp_mean(published_params(DegradationType.DELAY, target)) == pytest.approx(expected, abs=0.01)

    def test_sample_mean(self):
        p = published_params(DegradationType.DELAY, 100.0)
        x = hyperexp_sample_array(p, RngStream(5), 100_000)
        assert x.mean() == pytest.approx(hyperexp_mean(p), rel=0.02)
        assert x.min() >= p.d_min

    def test_matches_cdf(self):
        p = published_params(DegradationType.DELAY, 300.0)
        x = hyperexp_sample_array(p, RngStream(6), N)
        assert stats.kstest(x, lambda v: hyperexp_cdf(p, v)).statistic < 0.005

    def test_scalar_model_mean(self):
        p = published_params(DegradationType.DELAY, 500.0)
        model = DelayModel(p, RngStream(8))
        x = np.array([model.sample() for _ in range(100_000)])
        assert x.mean() == pytest.approx(502.5, rel=0.02)

    def test_keyed_sample_uses_the_key_substream(self):
        p = published_params(DegradationType.DELAY, 100.0)
        model = DelayModel(p, RngStream(4))
        assert model.sample(17) == hyperexp_sample(p, RngStream(4).at(17))
        assert model.sample(17) == model.sample(17)
        assert model.sample(18) != model.sample(17)

    def test_fast_branch_collapses_to_d_min(self):
        p = HyperExpParams(d_min=70.0, weights=(1.0,), rates=(1e9,))
        rng = RngStream(9)
        x = [hyperexp_sample(p, rng) for _ in range(1000)]
        assert min(x) >= 70.0
        assert max(x) == pytest.approx(70.0, abs=1e-5)

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            HyperExpParams(d_min=10.0, weights=(0.5, 0.4), rates=(0.1, 0.2))

    def test_rates_must_match_weights(self):
        with pytest.raises(ValidationError):
            HyperExpParams(d_min=10.0, weights=(1.0,), rates=(0.1, 0.2))


class TestCommLoss:
    @pytest.mark.parametrize("l_max,cooldown,expected", [
        (2000.0, 1000.0, 0.5),
        (1000.0, 1000.0, 1 / 3),
    ])
    def test_always_triggering_rate(self, l_max, cooldown, expected):
        p = CommLossParams(p_loss=1.0, l_min=0.0, l_max=l_max, cooldown=cooldown)
        assert commloss_expected_rate(p, 1.0) == pytest.approx(expected)

    def test_zero_p_loss_never_drops(self):
        p = CommLossParams(p_loss=0.0, l_min=0.0, l_max=1000.0, cooldown=0.0)
        assert commloss_expected_rate(p, 1.0) == 0.0
        model = CommLossModel(p, RngStream(1))
        assert not any(model.advance(float(t)) for t in range(5000))

    def test_interval_must_be_positive(self):
        p = CommLossParams(p_loss=0.5, l_min=0.0, l_max=10.0, cooldown=0.0)
        with pytest.raises(ParameterDomainError):
            commloss_expected_rate(p, 0.0)

    def test_l_min_above_l_max_rejected(self):
        with pytest.raises(ValidationError):
            CommLossParams(p_loss=0.5, l_min=20.0, l_max=10.0, cooldown=0.0)

    @pytest.mark.parametrize("window,target,expected", [
        ((0.0, 3000.0, 8500.0), 0.10, 1 / 5001),
        ((0.0, 1000.0, 1000.0), 0.30, 0.005964214711729622),
        ((0.0, 2000.0, 1000.0), 0.50, 1.0),
    ])
    def test_fit_p_loss(self, window, target, expected):
        p_loss = commloss_fit_p_loss(*window, target, 1.0)
        assert p_loss == pytest.approx(expected)
        if p_loss < 1.0:
            fitted = CommLossParams(p_loss=p_loss, l_min=window[0], l_max=window[1], cooldown=window[2])
            assert commloss_expected_rate(fitted, 1.0) == pytest.approx(target)

    def test_state_machine_cycle(self):
        p = CommLossParams(p_loss=1.0, l_min=10.0, l_max=10.0, cooldown=5.0)
        model = CommLossModel(p, RngStream(1), keep_log=True)
        dropped = [model.advance(float(t)) for t in range(150)]
        assert dropped[:15] == [True] * 10 + [False] * 5
        assert sum(dropped) == 100
        assert [e.start for e in model.events] == [15.0 * k for k in range(10)]

    def test_state_machine_matches_closed_form(self):
        p = published_params(DegradationType.COMM_LOSS, 0.50)
        model = CommLossModel(p, RngStream(11))
        n = 2_000_000
        rate = sum(model.advance(float(t)) for t in range(n)) / n
        assert rate == pytest.approx(0.5, abs=0.02)

    @pytest.mark.parametrize("target", [0.10, 0.30, 0.50])
    def test_vectorized_matches_target(self, target):
        p = published_params(DegradationType.COMM_LOSS, target)
        assert simulate_commloss_drops(p, 1.0, 20_000_000, seed=12) == pytest.approx(target, abs=0.02)

    def test_no_outage_starts_during_cooldown(self):
        rnd = np.random.default_rng(40)
        for case in range(50):
            l_min = rnd.uniform(0, 50)
            p = CommLossParams(p_loss=rnd.uniform(0.01, 1.0), l_min=l_min,
                               l_max=l_min + rnd.uniform(0, 50), cooldown=rnd.uniform(0, 100))
            model = CommLossModel(p, RngStream(case), keep_log=True)
            t = 0.0
            for _ in range(5000):
                t += rnd.exponential(2.0)
                commloss_advance(model, t)
            assert model.events
            for prev, nxt in zip(model.events, model.events[1:]):
                assert prev.cooldown_until == pytest.approx(prev.start + prev.duration + p.cooldown)
                assert nxt.start >= prev.cooldown_until
                assert p.l_min <= prev.duration <= p.l_max

    def test_outage_durations_are_uniform(self):
        p = CommLossParams(p_loss=1.0, l_min=5.0, l_max=25.0, cooldown=3.0)
        model = CommLossModel(p, RngStream(13), keep_log=True)
        t = 0.0
        while len(model.events) < 100_000:
            model.advance(t)
            t += 7.0
        durations = [e.duration for e in model.events]
        assert stats.kstest(durations, stats.uniform(loc=5.0, scale=20.0).cdf).statistic < 0.01

    def test_rate_falls_as_cooldown_grows(self):
        cooldowns = (0.0, 250.0, 500.0, 1000.0, 2000.0)
        windows = [CommLossParams(p_loss=1.0, l_min=0.0, l_max=1000.0, cooldown=c) for c in cooldowns]
        simulated = [simulate_commloss_drops(p, 1.0, 2_000_000, seed=3) for p in windows]
        closed = [commloss_expected_rate(p, 1.0) for p in windows]
        assert all(a > b for a, b in zip(simulated, simulated[1:]))
        assert all(a > b for a, b in zip(closed, closed[1:]))


class TestGilbertElliott:
    def test_symmetric_chain_is_uniform(self):
        p = GilbertElliottParams.with_defaults(LomaxParams(alpha=3, lam=1), LomaxParams(alpha=3, lam=1))
        np.testing.assert_allclose(ge_stationary(p), [0.25] * 4, atol=1e-9)
        assert ge_occupancy(p).sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("target", [0.10, 0.30, 0.50])
    def test_scaled_drop_rate_hits_target(self, target):
        p = published_params(DegradationType.PACKET_LOSS, target)
        assert ge_expected_drop_rate(p) == pytest.approx(target, rel=1e-9)
        h = p.state_drop_prob
        assert h[0] <= min(h[2], h[3]) and max(h[2], h[3]) <= h[1] <= 1.0

    def test_unreachable_target_rejected(self):
        base = published_params(DegradationType.PACKET_LOSS, 0.10)
        with pytest.raises(ParameterDomainError):
            scale_drop_probs(base, 0.99)

    def test_bad_transition_row_rejected(self):
        lx = LomaxParams(alpha=3, lam=1)
        rows = ((0.5, 0.5, 0.0, 0.0), (0.5, 0.4, 0.0, 0.0), (0.25,) * 4, (0.25,) * 4)
        with pytest.raises(ValidationError):
            GilbertElliottParams(transition=rows, state_lomax=(lx,) * 4)

    def test_unordered_drop_probs_rejected(self):
        lx = LomaxParams(alpha=3, lam=1)
        with pytest.raises(ValidationError):
            GilbertElliottParams(state_lomax=(lx,) * 4, state_drop_prob=(0.5, 0.2, 0.3, 0.3))

    @pytest.mark.parametrize("target", [0.10, 0.30, 0.50])
    def test_vectorized_matches_target(self, target):
        p = published_params(DegradationType.PACKET_LOSS, target)
        sim = simulate_ge_drops(p, N, seed=21)
        assert sim.drop_rate == pytest.approx(target, abs=0.02)
        assert sim.occupancy.sum() == pytest.approx(N)

    def test_vectorized_is_deterministic(self):
        p = published_params(DegradationType.PACKET_LOSS, 0.30)
        assert simulate_ge_drops(p, 200_000, seed=5).dropped == simulate_ge_drops(p, 200_000, seed=5).dropped

    def test_state_machine_matches_closed_form(self):
        p = published_params(DegradationType.PACKET_LOSS, 0.30)
        model = GilbertElliottModel(p, RngStream(31))
        n = 200_000
        rate = sum(model.advance() for _ in range(n)) / n
        assert rate == pytest.approx(0.30, abs=0.02)
        assert sum(model.occupancy) == n

    @pytest.mark.parametrize("h,expected", [((1.0,) * 4, True), ((0.0,) * 4, False)])
    def test_constant_drop_probability(self, h, expected):
        p = GilbertElliottParams.with_defaults(
            LomaxParams(alpha=3, lam=1), LomaxParams(alpha=3, lam=2), drop_probs=h)
        model = GilbertElliottModel(p, RngStream(2))
        assert all(ge_advance(model) is expected for _ in range(10_000))

    def test_occupancy_matches_power_iteration(self):
        p = GilbertElliottParams.with_defaults(
            LomaxParams(alpha=4.6, lam=3.55), LomaxParams(alpha=3.9, lam=1.47), transition=SKEWED_ROWS)
        oracle = occupancy_by_power_iteration(p)
        np.testing.assert_allclose(ge_occupancy(p), oracle, rtol=1e-4)

        model = GilbertElliottModel(p, RngStream(17))
        for _ in range(N):
            ge_advance(model)
        empirical = np.asarray(model.occupancy) / N
        assert empirical == pytest.approx(oracle, rel=0.02, abs=0.005)

        sim = simulate_ge_drops(p, N, seed=17)
        assert sim.occupancy / N == pytest.approx(oracle, rel=0.02, abs=0.005)
