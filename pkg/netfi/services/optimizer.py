"""Fit model parameters to target degradation metrics.

Monte-Carlo estimation of the metric, squared-error objective and DE/rand/1/bin
minimization. Every candidate of one run is scored on the same Monte-Carlo
seed (common random numbers); mutation and crossover draw from a stream per
(run seed, generation, member).
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from ..errors import JobsError, KeyCollisionError, NetfiError, ParameterDomainError, SchemaIssue
from .injector import DegradationType
from .param_db import DbEntry, FaultParameterDatabase, FitResult
from .qos_models import (
    DEFAULT_DROP_PROBS,
    NUM_GE_STATES,
    commloss_expected_rate,
    default_intermediate,
    default_transition,
    ge_expected_drop_rate,
    hyperexp_mean,
    hyperexp_sample_array,
    simulate_commloss_drops,
    simulate_ge_drops,
)
from .rng import RngStream, derive_seed
from .theta import params_from_theta, parse_target, theta_from_params

logger = logging.getLogger(__name__)

MIN_MC_SAMPLES = 10_000
_RESAMPLE_KEY = 0x5EED

# Monte-Carlo sizes used by default_job (packets, draws, packets)
DEFAULT_MC_SAMPLES = {
    DegradationType.PACKET_LOSS: 1_000_000,
    DegradationType.DELAY: 100_000,
    DegradationType.COMM_LOSS: 200_000_000,
}

# Search boxes for the free parameters
LOMAX_ALPHA_BOUNDS = (2.5, 12.0)
LOMAX_LAMBDA_BOUNDS = (0.05, 20.0)
DELAY_WEIGHT_BOUNDS = (0.01, 0.99)
DELAY_RATE_BOUNDS = (1e-3, 1.0)
P_LOSS_BOUNDS = (1e-5, 1.0)


class ParameterSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    lower: float = 0.0
    upper: float = 0.0
    frozen: bool = False
    value: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if self.frozen:
            if self.value is None or not math.isfinite(self.value):
                raise ValueError(f"{self.name}: frozen parameter needs a finite value")
        elif not (math.isfinite(self.lower) and math.isfinite(self.upper) and self.lower < self.upper):
            raise ValueError(f"{self.name}: bounds must be finite with lower < upper")
        return self

    @classmethod
    def free(cls, name: str, bounds: Tuple[float, float]) -> "ParameterSpec":
        return cls(name=name, lower=bounds[0], upper=bounds[1])

    @classmethod
    def fixed(cls, name: str, value: float) -> "ParameterSpec":
        return cls(name=name, frozen=True, value=value)


class MCConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_samples: int = Field(ge=MIN_MC_SAMPLES)
    packet_interval_ms: float = Field(default=1.0, gt=0)
    seed: int = 0


class DEConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    population: Optional[int] = None
    mutation: float = Field(default=0.8, gt=0, le=2)
    crossover: float = Field(default=0.9, ge=0, le=1)
    max_generations: int = Field(default=200, ge=0)
    tolerance: float = Field(default=0.02, gt=0)
    stop_tolerance: float = Field(default=0.005, gt=0)
    reevaluate_factor: int = Field(default=10, ge=1)
    recheck_top: int = Field(default=5, ge=1)
    max_resamples: int = Field(default=4, ge=0)
    workers: int = Field(default=1, ge=1)


class OptimizationJob(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: DegradationType
    target: float = Field(gt=0)
    theta_spec: Tuple[ParameterSpec, ...]
    mc: MCConfig
    de: DEConfig = Field(default_factory=DEConfig)

    @model_validator(mode="after")
    def _unique(self):
        names = [s.name for s in self.theta_spec]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in theta_spec")
        return self

    @property
    def key(self) -> Tuple[DegradationType, float]:
        return (self.kind, self.target)

    @property
    def free(self) -> List[ParameterSpec]:
        return [s for s in self.theta_spec if not s.frozen]

    @property
    def frozen(self) -> Dict[str, float]:
        return {s.name: float(s.value) for s in self.theta_spec if s.frozen}

    def population_size(self) -> int:
        dim = len(self.free)
        return self.de.population or max(20, 15 * dim)


# ---- Metric and objective --------------------------------------------------------------

def monte_carlo_metric(kind: DegradationType, theta: Mapping[str, float], mc: MCConfig) -> float:
    """Empirical metric: drop fraction for loss types, mean delay (ms) for delay."""
    kind = DegradationType(kind)
    params = params_from_theta(kind, theta)
    if kind is DegradationType.PACKET_LOSS:
        return simulate_ge_drops(params, mc.num_samples, mc.seed).drop_rate
    if kind is DegradationType.DELAY:
        return float(np.mean(hyperexp_sample_array(params, RngStream(derive_seed(mc.seed, 3)), mc.num_samples)))
    return simulate_commloss_drops(params, mc.packet_interval_ms, mc.num_samples, mc.seed)


def objective(kind: DegradationType, theta: Mapping[str, float], target: float, mc: MCConfig) -> float:
    return (monte_carlo_metric(kind, theta, mc) - target) ** 2


def closed_form_metric(kind: DegradationType, theta: Mapping[str, float], packet_interval_ms: float = 1.0) -> float:
    """Analytic counterpart of ``monte_carlo_metric`` (used as an independent check)."""
    kind = DegradationType(kind)
    params = params_from_theta(kind, theta)
    if kind is DegradationType.PACKET_LOSS:
        return ge_expected_drop_rate(params)
    if kind is DegradationType.DELAY:
        return hyperexp_mean(params)
    return commloss_expected_rate(params, packet_interval_ms)


def _relative_error(value: float, target: float) -> float:
    return abs(value - target) / abs(target)


# ---- Differential evolution ---------------------------------------------------------

def differential_evolution(job: OptimizationJob) -> FitResult:
    """DE/rand/1/bin over the free parameters of ``job``.

    Evolves until the best member's relative error on the fitting sample drops
    below ``de.stop_tolerance`` or ``de.max_generations`` is reached. The
    ``de.recheck_top`` best members are then re-scored on ``reevaluate_factor``
    times more samples and the closest one wins; the result is converged only
    if that score is within ``de.tolerance`` of the target. When none is, the
    fitting sample is redrawn (up to ``de.max_resamples`` times), the
    population is re-scored on it and evolution continues.
    """
    free = job.free
    frozen = job.frozen
    dim = len(free)
    de = job.de
    seed = job.mc.seed
    bounds = {s.name: (s.lower, s.upper) for s in free}
    wide = job.mc.model_copy(update={"num_samples": job.mc.num_samples * de.reevaluate_factor})

    def theta_of(x: Sequence[float]) -> Dict[str, float]:
        theta = dict(frozen)
        theta.update({s.name: float(v) for s, v in zip(free, x)})
        try:
            return theta_from_params(params_from_theta(job.kind, theta))
        except ParameterDomainError:
            return theta

    def scorer(mc: MCConfig):
        def score(x: np.ndarray) -> Tuple[float, float]:
            try:
                metric = monte_carlo_metric(job.kind, theta_of(x), mc)
            except ParameterDomainError:
                return math.inf, math.nan
            return (metric - job.target) ** 2, metric
        return score

    def recheck(xs: Sequence[np.ndarray]) -> Tuple[np.ndarray, float]:
        scored = _score_all(scorer(wide), np.asarray(xs), de.workers)[1]
        errors = [_relative_error(m, job.target) if math.isfinite(m) else math.inf for m in scored]
        k = int(np.argmin(errors))
        return np.asarray(xs[k]).copy(), float(scored[k])

    generation = 0
    if dim == 0:
        best_x = np.zeros(0)
        _, achieved = recheck([best_x])
    else:
        npop = job.population_size()
        if npop < max(4, 4 * dim):
            raise ValueError(f"population {npop} must be >= 4 x {dim} free parameters")
        lower = np.array([s.lower for s in free])
        upper = np.array([s.upper for s in free])

        pop = np.array([
            _member_rng(seed, 0, i).uniform(lower, upper) for i in range(npop)
        ])
        mc = job.mc
        resample = 0
        while True:
            score = scorer(mc)
            fitness, metrics = _score_all(score, pop, de.workers)
            b = int(np.argmin(fitness))
            best_metric = metrics[b]
            while generation < de.max_generations:
                if _relative_error(best_metric, job.target) < de.stop_tolerance:
                    break
                generation += 1
                trials = np.empty_like(pop)
                for i in range(npop):
                    r = _member_rng(seed, generation, i)
                    a, bb, c = r.choice([k for k in range(npop) if k != i], 3, replace=False)
                    mutant = np.clip(pop[a] + de.mutation * (pop[bb] - pop[c]), lower, upper)
                    cross = r.random(dim) < de.crossover
                    cross[r.integers(dim)] = True
                    trials[i] = np.where(cross, mutant, pop[i])
                trial_fit, trial_metrics = _score_all(score, trials, de.workers)
                better = trial_fit <= fitness
                pop[better] = trials[better]
                fitness[better] = trial_fit[better]
                metrics[better] = trial_metrics[better]
                b = int(np.argmin(fitness))
                best_metric = metrics[b]
                logger.debug("%s target=%g gen=%d best=%g", job.kind.value, job.target, generation, best_metric)

            top = [pop[k] for k in np.argsort(fitness, kind="stable")[: de.recheck_top]]
            best_x, achieved = recheck(top)
            if _relative_error(achieved, job.target) <= de.tolerance:
                break
            if generation >= de.max_generations or resample >= de.max_resamples:
                break
            resample += 1
            mc = job.mc.model_copy(update={"seed": derive_seed(seed, _RESAMPLE_KEY, resample)})
            logger.info(
                "%s target=%g: re-evaluation missed (%.4g), redrawing the fitting sample (%d/%d)",
                job.kind.value, job.target, achieved, resample, de.max_resamples,
            )

    if not math.isfinite(achieved):
        raise ValueError(f"no candidate inside the bounds gives valid {job.kind.value} parameters")
    theta_opt = theta_of(best_x)
    rel = _relative_error(achieved, job.target)
    converged = rel <= de.tolerance
    message = "" if converged else (
        f"best relative error {rel:.4f} exceeds tolerance {de.tolerance} after {generation} generations"
    )
    if not converged:
        logger.warning("%s target=%g did not converge: %s", job.kind.value, job.target, message)
    return FitResult(
        kind=job.kind,
        target=job.target,
        theta_opt=theta_opt,
        achieved_metric=achieved,
        objective_value=(achieved - job.target) ** 2,
        generations_used=generation,
        seed=seed,
        converged=converged,
        message=message,
        bounds=bounds,
        num_samples=job.mc.num_samples,
        packet_interval_ms=job.mc.packet_interval_ms,
    )


def _member_rng(seed: int, generation: int, member: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(seed, generation, member)))


def _score_all(score, xs: np.ndarray, workers: int) -> Tuple[np.ndarray, np.ndarray]:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score, xs))
    else:
        results = [score(x) for x in xs]
    return np.array([r[0] for r in results]), np.array([r[1] for r in results])


# ---- Database construction ------------------------------------------------------------

def build_param_db(jobs: Sequence[OptimizationJob]) -> FaultParameterDatabase:
    """Run every job; a failing job is recorded as a failed entry, the batch goes on."""
    if not jobs:
        raise ValueError("job list is empty")
    seen = set()
    for job in jobs:
        if job.key in seen:
            raise KeyCollisionError(f"duplicate job for ({job.kind.value}, {job.target!r})")
        seen.add(job.key)

    db = FaultParameterDatabase()
    for n, job in enumerate(jobs, start=1):
        logger.info("job %d/%d: %s target=%g", n, len(jobs), job.kind.value, job.target)
        try:
            fit = differential_evolution(job)
        except (NetfiError, ValueError) as e:
            logger.error("job %s target=%g failed: %s", job.kind.value, job.target, e)
            fit = FitResult(
                kind=job.kind,
                target=job.target,
                theta_opt=job.frozen,
                achieved_metric=0.0,
                objective_value=job.target ** 2,
                seed=job.mc.seed,
                converged=False,
                message=str(e),
                bounds={s.name: (s.lower, s.upper) for s in job.free},
                num_samples=job.mc.num_samples,
                packet_interval_ms=job.mc.packet_interval_ms,
            )
        db.add(DbEntry.from_fit(fit))
    return db


# ---- Default jobs -----------------------------------------------------------------

def default_theta_spec(kind: DegradationType, frozen: Mapping[str, float], branches: int = 2) -> Tuple[ParameterSpec, ...]:
    """Free/frozen split per degradation type; entries of ``frozen`` override defaults."""
    kind = DegradationType(kind)
    specs: Dict[str, ParameterSpec] = {}
    if kind is DegradationType.PACKET_LOSS:
        for i in (0, 1):
            specs[f"alpha_{i}"] = ParameterSpec.free(f"alpha_{i}", LOMAX_ALPHA_BOUNDS)
            specs[f"lambda_{i}"] = ParameterSpec.free(f"lambda_{i}", LOMAX_LAMBDA_BOUNDS)
        mid = default_intermediate()
        for i in (2, 3):
            specs[f"alpha_{i}"] = ParameterSpec.fixed(f"alpha_{i}", mid.alpha)
            specs[f"lambda_{i}"] = ParameterSpec.fixed(f"lambda_{i}", mid.lam)
        for i in range(NUM_GE_STATES):
            specs[f"h_{i}"] = ParameterSpec.fixed(f"h_{i}", DEFAULT_DROP_PROBS[i])
        for i, row in enumerate(default_transition()):
            for j, p in enumerate(row):
                specs[f"p_{i}_{j}"] = ParameterSpec.fixed(f"p_{i}_{j}", p)
    elif kind is DegradationType.DELAY:
        if "d_min" not in frozen:
            raise ParameterDomainError("d_min", "delay jobs need a frozen d_min")
        for k in range(1, branches + 1):
            specs[f"w_{k}"] = ParameterSpec.free(f"w_{k}", DELAY_WEIGHT_BOUNDS)
            specs[f"lambda_{k}"] = ParameterSpec.free(f"lambda_{k}", DELAY_RATE_BOUNDS)
    else:
        for name in ("l_min", "l_max", "cooldown"):
            if name not in frozen:
                raise ParameterDomainError(name, "comm loss jobs need a frozen value")
        specs["p_loss"] = ParameterSpec.free("p_loss", P_LOSS_BOUNDS)

    for name, value in frozen.items():
        specs[name] = ParameterSpec.fixed(name, value)
    return tuple(specs.values())


def default_job(
    kind: DegradationType,
    target: float,
    *,
    seed: int,
    frozen: Optional[Mapping[str, float]] = None,
    bounds: Optional[Mapping[str, Tuple[float, float]]] = None,
    branches: int = 2,
    num_samples: Optional[int] = None,
    packet_interval_ms: float = 1.0,
    de: Optional[DEConfig] = None,
) -> OptimizationJob:
    kind = DegradationType(kind)
    spec = list(default_theta_spec(kind, frozen or {}, branches))
    for name, (lo, hi) in (bounds or {}).items():
        spec = [ParameterSpec.free(name, (lo, hi)) if s.name == name else s for s in spec]
        if name not in {s.name for s in spec}:
            spec.append(ParameterSpec.free(name, (lo, hi)))
    return OptimizationJob(
        kind=kind,
        target=target,
        theta_spec=tuple(spec),
        mc=MCConfig(
            num_samples=num_samples or DEFAULT_MC_SAMPLES[kind],
            packet_interval_ms=packet_interval_ms,
            seed=seed,
        ),
        de=de or DEConfig(),
    )


# ---- Jobs files ---------------------------------------------------------------------

JOBS_SCHEMA_VERSION = 1


class JobSpec(BaseModel):
    """One entry of a jobs file; ``target`` accepts ``0.3``, ``"30%"`` or ``"300 ms"``."""

    model_config = ConfigDict(extra="forbid")

    type: DegradationType
    target: float
    frozen: Dict[str, float] = Field(default_factory=dict)
    bounds: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    branches: int = Field(default=2, ge=1)
    num_samples: Optional[int] = Field(default=None, ge=MIN_MC_SAMPLES)
    packet_interval_ms: float = Field(default=1.0, gt=0)
    seed: Optional[int] = None
    de: DEConfig = Field(default_factory=DEConfig)

    @field_validator("target", mode="before")
    @classmethod
    def _normalize_target(cls, raw, info: ValidationInfo):
        kind = info.data.get("type")
        return raw if kind is None else parse_target(kind, raw)


class JobsDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = JOBS_SCHEMA_VERSION
    seed: Optional[int] = None
    jobs: List[JobSpec] = Field(default_factory=list)


def parse_jobs(document: str, default_seed: int) -> List[OptimizationJob]:
    """Jobs file to jobs. Seeds: per job, else file-level, else ``default_seed``."""
    try:
        doc = JobsDocument.model_validate_json(document)
    except ValidationError as e:
        raise JobsError([
            SchemaIssue(".".join(str(p) for p in err["loc"]) or "<root>", err["msg"])
            for err in e.errors()
        ]) from e
    if doc.version != JOBS_SCHEMA_VERSION:
        raise JobsError([SchemaIssue("version", f"unsupported jobs file version {doc.version}")])

    base_seed = doc.seed if doc.seed is not None else default_seed
    jobs = []
    for n, spec in enumerate(doc.jobs):
        try:
            jobs.append(default_job(
                spec.type,
                spec.target,
                seed=spec.seed if spec.seed is not None else derive_seed(base_seed, n),
                frozen=spec.frozen,
                bounds=spec.bounds,
                branches=spec.branches,
                num_samples=spec.num_samples,
                packet_interval_ms=spec.packet_interval_ms,
                de=spec.de,
            ))
        except (ParameterDomainError, ValidationError) as e:
            raise JobsError([SchemaIssue(f"jobs.{n}", str(e).splitlines()[0])]) from e
    return jobs
