"""Named parameter vectors (theta) for each degradation type, and target units.

Names: packet loss ``alpha_i``, ``lambda_i``, ``h_i`` (states 0..3) and
``p_i_j`` (transition i -> j); delay ``d_min``, ``w_k``, ``lambda_k``
(branches 1..n); communication loss ``p_loss``, ``l_min``, ``l_max``,
``cooldown``.
"""
from __future__ import annotations

import math
import re
from typing import Dict, Mapping, Union

from ..errors import ParameterDomainError
from .injector import DegradationType
from .qos_models import (
    DEFAULT_DROP_PROBS,
    NUM_GE_STATES,
    CommLossParams,
    GilbertElliottParams,
    HyperExpParams,
    LomaxParams,
    default_intermediate,
    default_transition,
)

ModelParams = Union[GilbertElliottParams, HyperExpParams, CommLossParams]

_ROW_TOL = 1e-9


def _get(theta: Mapping[str, float], name: str, default=None) -> float:
    if name in theta:
        value = float(theta[name])
    elif default is not None:
        value = float(default)
    else:
        raise ParameterDomainError(name, "missing")
    if not math.isfinite(value):
        raise ParameterDomainError(name, f"must be finite, got {value!r}")
    return value


def _positive(theta, name, default=None) -> float:
    v = _get(theta, name, default)
    if v <= 0:
        raise ParameterDomainError(name, f"must be > 0, got {v!r}")
    return v


def _probability(theta, name, default=None) -> float:
    v = _get(theta, name, default)
    if not 0.0 <= v <= 1.0:
        raise ParameterDomainError(name, f"must lie in [0, 1], got {v!r}")
    return v


def params_from_theta(kind: DegradationType, theta: Mapping[str, float]) -> ModelParams:
    kind = DegradationType(kind)
    if kind is DegradationType.PACKET_LOSS:
        mid = default_intermediate()
        defaults = {2: mid, 3: mid}
        lomax = []
        for i in range(NUM_GE_STATES):
            d = defaults.get(i)
            lomax.append(LomaxParams(
                alpha=_positive(theta, f"alpha_{i}", d.alpha if d else None),
                lam=_positive(theta, f"lambda_{i}", d.lam if d else None),
            ))
        base = default_transition()
        rows = []
        for i in range(NUM_GE_STATES):
            row = tuple(_probability(theta, f"p_{i}_{j}", base[i][j]) for j in range(NUM_GE_STATES))
            if abs(sum(row) - 1.0) > _ROW_TOL:
                raise ParameterDomainError(f"p_{i}_*", f"row sums to {sum(row)!r}, expected 1")
            rows.append(row)
        h = tuple(_probability(theta, f"h_{i}", DEFAULT_DROP_PROBS[i]) for i in range(NUM_GE_STATES))
        if not (h[0] <= min(h[2], h[3]) and max(h[2], h[3]) <= h[1]):
            raise ParameterDomainError("h_*", "need h_0 <= h_2, h_3 <= h_1")
        return GilbertElliottParams(transition=tuple(rows), state_lomax=tuple(lomax), state_drop_prob=h)

    if kind is DegradationType.DELAY:
        n = len([k for k in theta if re.fullmatch(r"w_\d+", k)])
        if n == 0:
            raise ParameterDomainError("w_1", "missing")
        raw = [_positive(theta, f"w_{k}") for k in range(1, n + 1)]
        rates = [_positive(theta, f"lambda_{k}") for k in range(1, n + 1)]
        d_min = _get(theta, "d_min")
        if d_min < 0:
            raise ParameterDomainError("d_min", f"must be >= 0, got {d_min!r}")
        total = sum(raw)
        if abs(total - 1.0) > _ROW_TOL:
            raw = [w / total for w in raw]
        # branches ordered by rate: a permuted theta names the same distribution
        branches = sorted(zip(rates, raw))
        return HyperExpParams(
            d_min=d_min,
            weights=tuple(w for _, w in branches),
            rates=tuple(r for r, _ in branches),
        )

    p_loss = _probability(theta, "p_loss")
    l_min = _get(theta, "l_min")
    l_max = _get(theta, "l_max")
    cooldown = _get(theta, "cooldown")
    for name, v in (("l_min", l_min), ("l_max", l_max), ("cooldown", cooldown)):
        if v < 0:
            raise ParameterDomainError(name, f"must be >= 0, got {v!r}")
    if l_min > l_max:
        raise ParameterDomainError("l_min", "must be <= l_max")
    return CommLossParams(p_loss=p_loss, l_min=l_min, l_max=l_max, cooldown=cooldown)


def theta_from_params(params: ModelParams) -> Dict[str, float]:
    if isinstance(params, GilbertElliottParams):
        out: Dict[str, float] = {}
        for i, lx in enumerate(params.state_lomax):
            out[f"alpha_{i}"] = lx.alpha
            out[f"lambda_{i}"] = lx.lam
        for i, h in enumerate(params.state_drop_prob):
            out[f"h_{i}"] = h
        for i, row in enumerate(params.transition):
            for j, p in enumerate(row):
                out[f"p_{i}_{j}"] = p
        return out
    if isinstance(params, HyperExpParams):
        out = {"d_min": params.d_min}
        for k, (w, r) in enumerate(zip(params.weights, params.rates), start=1):
            out[f"w_{k}"] = w
            out[f"lambda_{k}"] = r
        return out
    return {
        "p_loss": params.p_loss,
        "l_min": params.l_min,
        "l_max": params.l_max,
        "cooldown": params.cooldown,
    }


_TARGET_RE = re.compile(r"^\s*([-+]?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)\s*(%|ms|s)?\s*$")


def parse_target(kind: DegradationType, raw: Union[str, float, int]) -> float:
    """Normalize a target: loss as a fraction in [0, 1], delay in ms.

    Accepts numbers, ``"30%"``, ``"300 ms"`` and ``"0.3 s"``.
    """
    kind = DegradationType(kind)
    if isinstance(raw, bool):
        raise ValueError("target must be a number")
    if isinstance(raw, (int, float)):
        value, unit = float(raw), None
    else:
        m = _TARGET_RE.match(str(raw))
        if not m:
            raise ValueError(f"unrecognized target {raw!r}")
        value, unit = float(m.group(1)), m.group(2)

    if not math.isfinite(value) or value < 0:
        raise ValueError(f"target must be a non-negative number, got {raw!r}")
    if kind is DegradationType.DELAY:
        if unit == "%":
            raise ValueError("delay targets take ms or s, not %")
        return value * 1000.0 if unit == "s" else value
    if unit in ("ms", "s"):
        raise ValueError("loss targets take a fraction or a percentage")
    if unit == "%":
        value /= 100.0
    if value > 1.0:
        raise ValueError(f"loss target must be <= 1 (or <= 100%), got {raw!r}")
    return value
