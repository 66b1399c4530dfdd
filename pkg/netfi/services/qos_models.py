# netfi/services/qos_models.py
"""Stochastic degradation models: packet loss, delay, communication loss.

Parameter records are immutable pydantic models and can be shared between
threads. The state machines (``GilbertElliottModel``, ``CommLossModel``,
``DelayModel``) are single-owner: exactly one injection stage drives each.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..errors import ParameterDomainError
from .rng import RngStream, derive_seed

NUM_GE_STATES = 4
GOOD, BAD = 0, 1

# Placeholders for the literature values of the four-state chain; every entry
# can be overridden in scenario and jobs files.
DEFAULT_SELF_TRANSITION = 0.9
DEFAULT_DROP_PROBS: Tuple[float, float, float, float] = (0.0, 1.0, 0.25, 0.75)
DEFAULT_INTERMEDIATE_ALPHA = 3.0
DEFAULT_INTERMEDIATE_LAMBDA = 2.0

_ROW_TOL = 1e-9


def default_transition(self_p: float = DEFAULT_SELF_TRANSITION) -> Tuple[Tuple[float, ...], ...]:
    off = (1.0 - self_p) / (NUM_GE_STATES - 1)
    return tuple(
        tuple(self_p if i == j else off for j in range(NUM_GE_STATES)) for i in range(NUM_GE_STATES)
    )


# ---- Parameter records -------------------------------------------------------

class LomaxParams(BaseModel):
    """Pareto type II shape ``alpha`` and scale ``lambda`` (packets)."""

    model_config = ConfigDict(frozen=True, populate_by_name=True, allow_inf_nan=False)

    alpha: float = Field(gt=0)
    lam: float = Field(gt=0, alias="lambda")

    @property
    def mean(self) -> float:
        return lomax_mean(self)


def default_intermediate() -> LomaxParams:
    return LomaxParams(alpha=DEFAULT_INTERMEDIATE_ALPHA, lam=DEFAULT_INTERMEDIATE_LAMBDA)


class GilbertElliottParams(BaseModel):
    """Four-state chain: S0 Good, S1 Bad, S2/S3 intermediate.

    ``transition[i][j]`` is applied when a sojourn in ``S_i`` expires,
    ``state_lomax[i]`` draws sojourn lengths in packets and
    ``state_drop_prob[i]`` is the per-packet drop probability in ``S_i``.
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    transition: Tuple[
        Tuple[float, float, float, float],
        Tuple[float, float, float, float],
        Tuple[float, float, float, float],
        Tuple[float, float, float, float],
    ] = Field(default_factory=default_transition)
    state_lomax: Tuple[LomaxParams, LomaxParams, LomaxParams, LomaxParams]
    state_drop_prob: Tuple[float, float, float, float] = DEFAULT_DROP_PROBS

    @field_validator("transition")
    @classmethod
    def _row_stochastic(cls, rows):
        for i, row in enumerate(rows):
            if any(p < 0.0 or p > 1.0 for p in row):
                raise ValueError(f"transition row {i} has entries outside [0, 1]")
            if abs(sum(row) - 1.0) > _ROW_TOL:
                raise ValueError(f"transition row {i} sums to {sum(row)!r}, expected 1")
        return rows

    @field_validator("state_drop_prob")
    @classmethod
    def _drop_probs(cls, h):
        if any(p < 0.0 or p > 1.0 for p in h):
            raise ValueError("drop probabilities must lie in [0, 1]")
        if not (h[GOOD] <= min(h[2], h[3]) and max(h[2], h[3]) <= h[BAD]):
            raise ValueError("drop probabilities must satisfy h_good <= h_intermediate <= h_bad")
        return h

    @classmethod
    def with_defaults(
        cls,
        good: LomaxParams,
        bad: LomaxParams,
        *,
        intermediate: Optional[Tuple[LomaxParams, LomaxParams]] = None,
        transition=None,
        drop_probs=None,
    ) -> "GilbertElliottParams":
        mid = intermediate or (default_intermediate(), default_intermediate())
        return cls(
            transition=transition if transition is not None else default_transition(),
            state_lomax=(good, bad, mid[0], mid[1]),
            state_drop_prob=drop_probs if drop_probs is not None else DEFAULT_DROP_PROBS,
        )


class HyperExpParams(BaseModel):
    """Delay ``D = d_min + X`` with X a mixture of exponentials (ms, 1/ms)."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    d_min: float = Field(ge=0)
    weights: Tuple[float, ...]
    rates: Tuple[float, ...]

    @model_validator(mode="after")
    def _mixture(self):
        if not self.weights or len(self.weights) != len(self.rates):
            raise ValueError("weights and rates must be non-empty and of equal length")
        if any(w <= 0 for w in self.weights):
            raise ValueError("weights must be > 0")
        if abs(sum(self.weights) - 1.0) > _ROW_TOL:
            raise ValueError(f"weights sum to {sum(self.weights)!r}, expected 1")
        if any(r <= 0 for r in self.rates):
            raise ValueError("rates must be > 0")
        return self

    @property
    def n(self) -> int:
        return len(self.weights)

    def expected_delay(self) -> float:
        return hyperexp_mean(self)


class CommLossParams(BaseModel):
    """Outage trigger probability per packet, uniform duration bounds and cooldown (ms)."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    p_loss: float = Field(ge=0, le=1)
    l_min: float = Field(ge=0)
    l_max: float = Field(ge=0)
    cooldown: float = Field(ge=0)

    @model_validator(mode="after")
    def _bounds(self):
        if self.l_min > self.l_max:
            raise ValueError("l_min must be <= l_max")
        return self

    def expected_duration(self) -> float:
        return (self.l_min + self.l_max) / 2.0


# ---- Lomax -------------------------------------------------------------------

def lomax_sample(p: LomaxParams, u: float) -> float:
    """Inverse transform: ``lambda * ((1 - u) ** (-1 / alpha) - 1)``."""
    if not 0.0 <= u < 1.0:
        raise ParameterDomainError("u", f"uniform variate must lie in [0, 1), got {u!r}")
    return p.lam * ((1.0 - u) ** (-1.0 / p.alpha) - 1.0)


def lomax_sample_array(p: LomaxParams, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any((u < 0.0) | (u >= 1.0)):
        raise ParameterDomainError("u", "uniform variates must lie in [0, 1)")
    return p.lam * (np.power(1.0 - u, -1.0 / p.alpha) - 1.0)


def lomax_cdf(p: LomaxParams, x):
    x = np.asarray(x, dtype=float)
    out = 1.0 - np.power(p.lam / (np.maximum(x, 0.0) + p.lam), p.alpha)
    return np.where(x < 0.0, 0.0, out)


def lomax_mean(p: LomaxParams) -> float:
    return p.lam / (p.alpha - 1.0) if p.alpha > 1.0 else math.inf


def sojourn_mean(p: LomaxParams, terms: int = 20_000) -> float:
    """Mean of ``max(1, ceil(X))``, i.e. ``sum_{k>=0} (lambda / (k + lambda)) ** alpha``."""
    if p.alpha <= 1.0:
        return math.inf
    k = np.arange(terms, dtype=float)
    head = float(np.sum(np.power(p.lam / (k + p.lam), p.alpha)))
    # Euler-Maclaurin tail from k = terms onwards
    edge = terms + p.lam
    tail = p.lam ** p.alpha * edge ** (1.0 - p.alpha) / (p.alpha - 1.0)
    tail += 0.5 * (p.lam / edge) ** p.alpha
    return head + tail


def draw_sojourn(p: LomaxParams, rng: RngStream) -> int:
    x = lomax_sample(p, rng.uniform())
    if not math.isfinite(x):
        return 1 << 62
    return max(1, math.ceil(x))


# ---- Hyperexponential ----------------------------------------------------------

def hyperexp_mean(p: HyperExpParams) -> float:
    return p.d_min + sum(w / r for w, r in zip(p.weights, p.rates))


def hyperexp_sample(p: HyperExpParams, rng: RngStream) -> float:
    i = rng.choice(_cumulative(p.weights))
    return p.d_min + rng.exponential(p.rates[i])


def hyperexp_sample_array(p: HyperExpParams, rng: RngStream, n: int) -> np.ndarray:
    gen = rng.generator
    branch = gen.choice(p.n, size=n, p=np.asarray(p.weights) / sum(p.weights))
    scale = 1.0 / np.asarray(p.rates)[branch]
    return p.d_min + gen.exponential(scale)


def hyperexp_cdf(p: HyperExpParams, x):
    x = np.asarray(x, dtype=float)
    shifted = np.maximum(x - p.d_min, 0.0)[..., None]
    out = np.sum(np.asarray(p.weights) * (1.0 - np.exp(-np.asarray(p.rates) * shifted)), axis=-1)
    return np.where(x < p.d_min, 0.0, out)


# ---- Communication loss -------------------------------------------------------

def commloss_expected_rate(p: CommLossParams, packet_interval: float) -> float:
    """Long-run outage share ``E[L] / (E[L] + C + idle)``.

    ``idle = packet_interval * (1 / p_loss - 1)`` is the wait before the packet
    that opens the next outage; it vanishes when every idle packet triggers.
    """
    if packet_interval <= 0:
        raise ParameterDomainError("packet_interval", "must be > 0")
    if p.p_loss == 0.0:
        return 0.0
    mean_l = p.expected_duration()
    idle = packet_interval * (1.0 / p.p_loss - 1.0)
    total = mean_l + p.cooldown + idle
    return mean_l / total if total > 0 else 0.0


def commloss_fit_p_loss(
    l_min: float, l_max: float, cooldown: float, target: float, packet_interval: float
) -> float:
    """Trigger probability that makes ``commloss_expected_rate`` hit ``target`` (clamped to 1)."""
    if not 0.0 < target < 1.0:
        raise ParameterDomainError("target", "loss rate must lie in (0, 1)")
    mean_l = (l_min + l_max) / 2.0
    idle = mean_l / target - mean_l - cooldown
    if idle <= 0.0:
        return 1.0
    return packet_interval / (idle + packet_interval)


# ---- Gilbert-Elliott analytics ----------------------------------------------------

def ge_stationary(p: GilbertElliottParams) -> np.ndarray:
    """Stationary distribution of the embedded jump chain."""
    P = np.asarray(p.transition, dtype=float)
    A = np.vstack([P.T - np.eye(NUM_GE_STATES), np.ones(NUM_GE_STATES)])
    b = np.zeros(NUM_GE_STATES + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def ge_occupancy(p: GilbertElliottParams) -> np.ndarray:
    """Long-run share of packets spent in each state (sojourn-weighted)."""
    weights = ge_stationary(p) * np.array([sojourn_mean(s) for s in p.state_lomax])
    return weights / weights.sum()


def ge_expected_drop_rate(p: GilbertElliottParams) -> float:
    return float(np.dot(ge_occupancy(p), p.state_drop_prob))


def scale_drop_probs(p: GilbertElliottParams, target: float) -> GilbertElliottParams:
    """Scale every ``h_i`` by one factor so the long-run drop rate equals ``target``."""
    base = ge_expected_drop_rate(p)
    if base <= 0.0:
        raise ParameterDomainError("state_drop_prob", "all-zero drop probabilities cannot be scaled")
    factor = target / base
    scaled = tuple(h * factor for h in p.state_drop_prob)
    if max(scaled) > 1.0:
        raise ParameterDomainError("state_drop_prob", f"target {target} needs h_bad > 1")
    return GilbertElliottParams(
        transition=p.transition, state_lomax=p.state_lomax, state_drop_prob=scaled
    )


# ---- State machines -----------------------------------------------------------------

class GilbertElliottModel:
    """Semi-Markov packet-loss machine: Lomax sojourns, per-state drop probability."""

    def __init__(self, params: GilbertElliottParams, rng: RngStream, initial_state: int = GOOD):
        self.params = params
        self.rng = rng
        self._cum = [_cumulative(row) for row in params.transition]
        self._h = list(params.state_drop_prob)
        self.state = initial_state
        self.remaining = draw_sojourn(params.state_lomax[initial_state], rng)
        self.occupancy = [0] * NUM_GE_STATES

    def advance(self) -> bool:
        """Judge one packet; True means dropped."""
        if self.remaining <= 0:
            self.state = self.rng.choice(self._cum[self.state])
            self.remaining = draw_sojourn(self.params.state_lomax[self.state], self.rng)
        self.remaining -= 1
        self.occupancy[self.state] += 1
        h = self._h[self.state]
        if h <= 0.0:
            return False
        if h >= 1.0:
            return True
        return self.rng.uniform() < h


def ge_advance(model: GilbertElliottModel) -> bool:
    return model.advance()


@dataclass(frozen=True)
class OutageEvent:
    start: float
    duration: float
    cooldown_until: float


@dataclass
class CommLossModel:
    """Outage machine over packet timestamps (ms): idle -> loss -> cooldown -> idle."""

    params: CommLossParams
    rng: RngStream
    keep_log: bool = False
    phase: str = "idle"
    loss_until: float = 0.0
    cooldown_until: float = 0.0
    events: List[OutageEvent] = field(default_factory=list)

    def advance(self, now: float) -> bool:
        """Judge the packet stamped ``now``; True means dropped."""
        if self.phase != "idle":
            if now < self.loss_until:
                return True
            if now < self.cooldown_until:
                self.phase = "cooldown"
                return False
            self.phase = "idle"
        p = self.params.p_loss
        if p <= 0.0 or (p < 1.0 and self.rng.uniform() >= p):
            return False
        duration = self.rng.uniform_between(self.params.l_min, self.params.l_max)
        self.loss_until = now + duration
        self.cooldown_until = self.loss_until + self.params.cooldown
        self.phase = "loss"
        if self.keep_log:
            self.events.append(OutageEvent(now, duration, self.cooldown_until))
        return now < self.loss_until


def commloss_advance(model: CommLossModel, now: float) -> bool:
    return model.advance(now)


class DelayModel:
    """Delay draws for one stage; ``sample(key)`` draws from the sub-stream of ``key``."""

    def __init__(self, params: HyperExpParams, rng: RngStream):
        self.params = params
        self.rng = rng

    def sample(self, key: Optional[int] = None) -> float:
        return hyperexp_sample(self.params, self.rng if key is None else self.rng.at(key))


# ---- Vectorized simulators (same semantics as the machines above) -------------

@dataclass(frozen=True)
class GESimulation:
    packets: int
    dropped: float
    occupancy: np.ndarray

    @property
    def drop_rate(self) -> float:
        return self.dropped / self.packets if self.packets else 0.0


_PATH_CHUNK = 1 << 16


@lru_cache(maxsize=8)
def _embedded_path(seed: int, transition: tuple, length: int, initial_state: int) -> Tuple[np.ndarray, np.ndarray]:
    """State path of the jump chain plus the uniforms that draw each sojourn."""
    gen = np.random.Generator(np.random.Philox(derive_seed(seed, 1)))
    u = gen.random(length)
    cum = np.cumsum(np.asarray(transition, dtype=float), axis=1)
    cum[:, -1] = 1.0
    path = np.empty(length, dtype=np.int8)
    s = initial_state
    for lo in range(0, length, _PATH_CHUNK):
        block = u[lo:lo + _PATH_CHUNK]
        nxt = [np.minimum(np.searchsorted(cum[i], block, side="right"), NUM_GE_STATES - 1).tolist()
               for i in range(NUM_GE_STATES)]
        states = []
        for m in range(len(block)):
            states.append(s)
            s = nxt[s][m]
        path[lo:lo + len(block)] = states
    path.setflags(write=False)
    v = np.random.Generator(np.random.Philox(derive_seed(seed, 2))).random(length)
    v.setflags(write=False)
    return path, v


def simulate_ge_drops(p: GilbertElliottParams, num_packets: int, seed: int) -> GESimulation:
    """Long-run drop fraction of the chain over ``num_packets`` packets.

    Drops are counted as their conditional expectation given the state path
    (``sojourn * h``), which removes per-packet Bernoulli noise.
    """
    if num_packets <= 0:
        return GESimulation(0, 0.0, np.zeros(NUM_GE_STATES))
    alphas = np.array([s.alpha for s in p.state_lomax])
    lams = np.array([s.lam for s in p.state_lomax])
    h = np.asarray(p.state_drop_prob, dtype=float)

    try:
        mean_sojourn = float(np.dot(ge_stationary(p), [sojourn_mean(s, terms=2_000) for s in p.state_lomax]))
    except (FloatingPointError, OverflowError):
        mean_sojourn = 1.0
    if not math.isfinite(mean_sojourn) or mean_sojourn < 1.0:
        mean_sojourn = 1.0
    # power-of-two lengths let DE candidates share one cached path
    length = min(num_packets, 1 << (int(num_packets / mean_sojourn * 1.25) + 1024).bit_length())

    while True:
        path, v = _embedded_path(seed, p.transition, length, GOOD)
        with np.errstate(over="ignore"):
            x = lams[path] * (np.power(1.0 - v, -1.0 / alphas[path]) - 1.0)
        x = np.nan_to_num(x, nan=float(num_packets), posinf=float(num_packets))
        sojourn = np.maximum(1.0, np.ceil(np.minimum(x, float(num_packets))))
        covered = np.cumsum(sojourn)
        if covered[-1] >= num_packets or length >= num_packets:
            break
        length = min(num_packets, length * 2)

    last = int(np.searchsorted(covered, num_packets))
    sojourn = sojourn[: last + 1].copy()
    sojourn[-1] -= covered[last] - num_packets
    states = path[: last + 1]
    dropped = float(np.dot(sojourn, h[states]))
    occupancy = np.bincount(states, weights=sojourn, minlength=NUM_GE_STATES)
    return GESimulation(num_packets, dropped, occupancy)


def simulate_commloss_drops(
    p: CommLossParams, packet_interval: float, num_packets: int, seed: int
) -> float:
    """Drop fraction of a ``1 / packet_interval`` stream, simulated one outage cycle at a time.

    Cycle: ``k - 1`` idle packets (``k ~ Geometric(p_loss)``), then the trigger
    packet opens ``[t, t + L)``, ``ceil(L / T)`` packets drop and the next idle
    packet is the first one at or after ``t + L + C``.
    """
    if packet_interval <= 0:
        raise ParameterDomainError("packet_interval", "must be > 0")
    if p.p_loss == 0.0 or num_packets <= 0:
        return 0.0
    gen = np.random.Generator(np.random.Philox(derive_seed(seed, 4)))
    T = packet_interval
    cycle = (1.0 / p.p_loss - 1.0) + max(1.0, math.ceil((p.expected_duration() + p.cooldown) / T))
    batch = int(num_packets / cycle * 1.1) + 16

    position = 0
    dropped = 0
    while position < num_packets:
        waits = gen.geometric(p.p_loss, batch)
        durations = gen.uniform(p.l_min, p.l_max, batch)
        gaps = np.maximum(1, np.ceil((durations + p.cooldown) / T)).astype(np.int64)
        lengths = waits - 1 + gaps
        starts = position + np.concatenate(([0], np.cumsum(lengths)[:-1]))
        triggers = starts + waits - 1
        losses = np.ceil(durations / T).astype(np.int64)
        kept = triggers < num_packets
        dropped += int(np.sum(np.minimum(losses[kept], num_packets - triggers[kept])))
        position = int(starts[-1] + lengths[-1])
        batch = max(16, batch // 4)
    return dropped / num_packets


def _cumulative(weights) -> List[float]:
    out, acc = [], 0.0
    for w in weights:
        acc += w
        out.append(acc)
    return out
