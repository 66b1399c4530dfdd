# netfi/services/reporting.py
"""Offline stream simulation, per-packet traces and validation reports."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from .injector import DegradationType, InjectionPipeline, PacketEnvelope, PipelineStats, VerdictStatus
from .optimizer import DEFAULT_MC_SAMPLES, MCConfig, closed_form_metric, monte_carlo_metric
from .param_db import FaultParameterDatabase, write_atomic
from .rng import derive_seed
from .scenario import Scenario
from .theta import theta_from_params

logger = logging.getLogger(__name__)

PASS_TOLERANCE = 0.02
TRACE_HEADER = "# netfi-trace/1\n"
TRACE_COLUMNS = ["sequence", "arrival_us", "verdict", "release_us"]

# mixed into entry seeds so validation never reuses a fitting stream
_VALIDATION_KEY = 0x5EED


@dataclass(frozen=True)
class ReportRow:
    condition: str
    kind: str
    target: float
    achieved: float
    relative_error: float
    passed: bool
    note: str = ""


@dataclass
class ValidationReport:
    title: str = "validation"
    tolerance: float = PASS_TOLERANCE
    rows: List[ReportRow] = field(default_factory=list)

    def add(self, condition: str, kind: DegradationType, target: float, achieved: float, note: str = "") -> ReportRow:
        if target == 0:
            rel = 0.0 if achieved == 0 else float("inf")
        elif np.isfinite(achieved):
            rel = abs(achieved - target) / abs(target)
        else:
            rel = float("inf")
        row = ReportRow(condition, DegradationType(kind).value, target, achieved, rel, rel <= self.tolerance, note)
        self.rows.append(row)
        return row

    def fail(self, condition: str, kind: DegradationType, target: float, note: str) -> ReportRow:
        row = ReportRow(condition, DegradationType(kind).value, target, float("nan"), float("inf"), False, note)
        self.rows.append(row)
        return row

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failures(self) -> List[ReportRow]:
        return [r for r in self.rows if not r.passed]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame([r.__dict__ for r in self.rows], columns=list(ReportRow.__dataclass_fields__))
        df["result"] = df["passed"].map({True: "pass", False: "FAIL"})
        return df.drop(columns=["passed"])

    def render(self) -> str:
        if not self.rows:
            return f"{self.title}: no entries\n"
        df = self.to_frame()
        body = df.to_string(
            index=False,
            formatters={
                "target": "{:g}".format,
                "achieved": "{:.6g}".format,
                "relative_error": "{:.2%}".format,
            },
        )
        verdict = "all pass" if self.passed else f"{len(self.failures)} of {len(self.rows)} fail"
        return f"{self.title} (tolerance {self.tolerance:.0%}): {verdict}\n{body}\n"


# ---- Offline simulation ----

@dataclass
class StreamRun:
    trace: pd.DataFrame
    stats: PipelineStats
    packet_interval_ms: float


def simulate_stream(pipeline: InjectionPipeline, num_packets: int, rate_hz: float) -> StreamRun:
    """Push a synthetic constant-rate stream through ``pipeline`` without sockets."""
    if num_packets < 0:
        raise ValueError("num_packets must be >= 0")
    if rate_hz <= 0:
        raise ValueError("rate must be > 0")
    interval_us = 1e6 / rate_hz
    arrivals = np.rint(np.arange(num_packets) * interval_us).astype(np.int64)
    verdicts = np.empty(num_packets, dtype=object)
    releases = np.full(num_packets, -1, dtype=np.int64)

    judge = pipeline.judge
    drain = pipeline.drain_ready
    for seq in range(num_packets):
        t = int(arrivals[seq])
        v = judge(PacketEnvelope(b"", t, seq))
        verdicts[seq] = v.status.value
        if v.status is VerdictStatus.DELAYED:
            releases[seq] = v.release_time
        elif v.status is VerdictStatus.NORMAL:
            releases[seq] = t
        drain(t)
    pipeline.flush()

    trace = pd.DataFrame({
        "sequence": np.arange(num_packets, dtype=np.int64),
        "arrival_us": arrivals,
        "verdict": verdicts,
        "release_us": pd.Series(releases, dtype="Int64").mask(releases < 0),
    })
    logger.debug("simulated %d packets at %g Hz", num_packets, rate_hz)
    return StreamRun(trace, pipeline.stats(), interval_us / 1000.0)


def write_trace(path: Path, trace: pd.DataFrame) -> None:
    write_atomic(Path(path), TRACE_HEADER + trace.to_csv(index=False, columns=TRACE_COLUMNS))


def write_report(path: Path, report: ValidationReport) -> None:
    write_atomic(Path(path), report.to_frame().to_csv(index=False))


def read_trace(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", dtype={"release_us": "Int64"})


def stream_report(scenario: Scenario, pipeline: InjectionPipeline, run: StreamRun) -> ValidationReport:
    """Each stage's achieved metric against its target, or its closed form when inline."""
    report = ValidationReport(title=f"simulate {scenario.name}")
    per_stage = run.stats.stages
    for stage, st in zip(pipeline.stages, per_stage):
        spec = scenario.stages[stage.index] if stage.index is not None else None
        achieved = st.mean_delay_ms if stage.kind is DegradationType.DELAY else (
            st.dropped / st.seen if st.seen else 0.0
        )
        if spec is not None and spec.target is not None:
            target, note = spec.target, "target"
        else:
            theta = theta_from_params(stage.params)
            target = closed_form_metric(stage.kind, theta, run.packet_interval_ms)
            note = "closed form"
        label = f"stage {stage.index}" if stage.index is not None else stage.kind.value
        report.add(label, stage.kind, target, achieved, note)
    return report


def summary_lines(run: StreamRun) -> List[str]:
    s = run.stats
    return [
        f"received={s.received} dropped={s.dropped} forwarded={s.forwarded} in_flight={s.in_flight}",
        f"drop_rate={s.drop_rate:.4f} mean_injected_delay_ms={s.mean_delay_ms:.3f} mean_hold_ms={s.mean_hold_ms:.3f}",
    ]


# ---- Database reports ----

def fit_report(db: FaultParameterDatabase, title: str = "optimize") -> ValidationReport:
    report = ValidationReport(title=title)
    for entry in db:
        name = f"{entry.type.value}@{entry.target:g}"
        if entry.ok:
            report.add(name, entry.type, entry.target, entry.achieved, f"{entry.generations} generations")
        else:
            report.fail(name, entry.type, entry.target, entry.message or "did not converge")
    return report


def validate_database(
    db: FaultParameterDatabase,
    *,
    sample_factor: int = 10,
    seed: Optional[int] = None,
) -> ValidationReport:
    """Re-simulate every entry on fresh seeds with ``sample_factor`` times the fitting samples."""
    report = ValidationReport(title="validate")
    for entry in db:
        name = f"{entry.type.value}@{entry.target:g}"
        if not entry.ok:
            report.fail(name, entry.type, entry.target, entry.message or "entry did not converge")
            continue
        base = entry.num_samples or DEFAULT_MC_SAMPLES[entry.type]
        fresh = derive_seed(seed if seed is not None else entry.seed, _VALIDATION_KEY)
        mc = MCConfig(num_samples=base * sample_factor, packet_interval_ms=entry.packet_interval_ms, seed=fresh)
        try:
            achieved = monte_carlo_metric(entry.type, entry.theta, mc)
        except ValueError as e:
            report.fail(name, entry.type, entry.target, str(e))
            continue
        report.add(name, entry.type, entry.target, achieved, f"{mc.num_samples} samples")
    return report


def db_listing(db: FaultParameterDatabase) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "type": e.type.value,
                "target": e.target,
                "achieved": e.achieved,
                "status": e.status,
                "seed": e.seed,
                "created_at": e.created_at,
            }
            for e in db
        ],
        columns=["type", "target", "achieved", "status", "seed", "created_at"],
    )
