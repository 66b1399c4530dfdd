# netfi/services/presets.py
"""The nine published reference conditions.

Packet-loss rows publish only the Good/Bad Lomax pairs; their ``h`` is scaled
so the chain hits its target. Communication-loss rows publish L and C only;
``p_loss`` is recovered from the extended-cycle rate at the packet interval.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .injector import DegradationType
from .optimizer import OptimizationJob, closed_form_metric, default_job
from .param_db import DbEntry, FaultParameterDatabase, now_iso
from .qos_models import (
    CommLossParams,
    GilbertElliottParams,
    HyperExpParams,
    LomaxParams,
    commloss_fit_p_loss,
    scale_drop_probs,
)
from .scenario import Scenario, StageSpec
from .theta import ModelParams, theta_from_params

# ---- Published values ----

LOSS_LOMAX: Dict[float, Tuple[Tuple[float, float], Tuple[float, float]]] = {
    0.10: ((4.43, 1.64), (4.97, 0.27)),
    0.30: ((4.60, 3.55), (3.90, 1.47)),
    0.50: ((3.86, 3.32), (3.80, 6.05)),
}

DELAY_HYPEREXP: Dict[float, Tuple[float, Tuple[float, float], Tuple[float, float]]] = {
    100.0: (70.0, (0.73, 0.27), (0.027, 0.085)),
    300.0: (210.0, (0.892, 0.108), (0.011, 0.016)),
    500.0: (406.0, (0.895, 0.105), (0.010, 0.015)),
}

# (l_min, l_max, cooldown) in ms
OUTAGE_WINDOWS: Dict[float, Tuple[float, float, float]] = {
    0.10: (0.0, 3000.0, 8500.0),
    0.30: (0.0, 1000.0, 1000.0),
    0.50: (0.0, 2000.0, 1000.0),
}


@dataclass(frozen=True)
class Condition:
    name: str
    kind: DegradationType
    target: float


CONDITIONS: Tuple[Condition, ...] = (
    Condition("loss-10", DegradationType.PACKET_LOSS, 0.10),
    Condition("loss-30", DegradationType.PACKET_LOSS, 0.30),
    Condition("loss-50", DegradationType.PACKET_LOSS, 0.50),
    Condition("delay-100", DegradationType.DELAY, 100.0),
    Condition("delay-300", DegradationType.DELAY, 300.0),
    Condition("delay-500", DegradationType.DELAY, 500.0),
    Condition("outage-10", DegradationType.COMM_LOSS, 0.10),
    Condition("outage-30", DegradationType.COMM_LOSS, 0.30),
    Condition("outage-50", DegradationType.COMM_LOSS, 0.50),
)


def condition(name: str) -> Condition:
    for c in CONDITIONS:
        if c.name == name:
            return c
    raise KeyError(f"unknown condition {name!r}; known: {', '.join(c.name for c in CONDITIONS)}")


def published_params(kind: DegradationType, target: float, packet_interval_ms: float = 1.0) -> ModelParams:
    kind = DegradationType(kind)
    if kind is DegradationType.PACKET_LOSS:
        (a0, l0), (a1, l1) = LOSS_LOMAX[target]
        base = GilbertElliottParams.with_defaults(
            LomaxParams(alpha=a0, lam=l0), LomaxParams(alpha=a1, lam=l1)
        )
        return scale_drop_probs(base, target)
    if kind is DegradationType.DELAY:
        d_min, weights, rates = DELAY_HYPEREXP[target]
        return HyperExpParams(d_min=d_min, weights=weights, rates=rates)
    l_min, l_max, cooldown = OUTAGE_WINDOWS[target]
    p_loss = commloss_fit_p_loss(l_min, l_max, cooldown, target, packet_interval_ms)
    return CommLossParams(p_loss=p_loss, l_min=l_min, l_max=l_max, cooldown=cooldown)


def published_database(packet_interval_ms: float = 1.0) -> FaultParameterDatabase:
    """Database of the nine reference conditions, ``achieved`` from the closed forms."""
    db = FaultParameterDatabase()
    created = now_iso()
    for c in CONDITIONS:
        theta = theta_from_params(published_params(c.kind, c.target, packet_interval_ms))
        achieved = closed_form_metric(c.kind, theta, packet_interval_ms)
        db.add(DbEntry(
            type=c.kind,
            target=c.target,
            theta=theta,
            achieved=achieved,
            seed=0,
            created_at=created,
            objective=(achieved - c.target) ** 2,
            packet_interval_ms=packet_interval_ms,
            message="reference parameters",
        ))
    return db


def normal_scenario(seed: Optional[int] = None) -> Scenario:
    return Scenario(name="normal", seed=seed)


def condition_scenario(name: str, *, inline: bool = True, seed: Optional[int] = None,
                       packet_interval_ms: float = 1.0) -> Scenario:
    """Single-stage scenario for a reference condition (inline params or a db target)."""
    c = condition(name)
    if inline:
        theta = theta_from_params(published_params(c.kind, c.target, packet_interval_ms))
        stage = StageSpec(type=c.kind, params=theta)
    else:
        stage = StageSpec(type=c.kind, target=c.target)
    return Scenario(name=name, seed=seed, packet_interval_ms=packet_interval_ms, stages=[stage])


def reference_jobs(seed: int, packet_interval_ms: float = 1.0) -> List[OptimizationJob]:
    """Optimization jobs that rebuild the reference database from its targets."""
    jobs = []
    for c in CONDITIONS:
        frozen: Dict[str, float] = {}
        if c.kind is DegradationType.DELAY:
            frozen["d_min"] = DELAY_HYPEREXP[c.target][0]
        elif c.kind is DegradationType.COMM_LOSS:
            frozen.update(zip(("l_min", "l_max", "cooldown"), OUTAGE_WINDOWS[c.target]))
        jobs.append(default_job(c.kind, c.target, seed=seed, frozen=frozen,
                                packet_interval_ms=packet_interval_ms))
    return jobs
