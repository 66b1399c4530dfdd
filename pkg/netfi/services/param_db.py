"""Fault Parameter Database: fitted parameter sets keyed by (degradation type, target)."""
from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..errors import DatabaseError, KeyCollisionError, ResolutionError
from .injector import DegradationType
from .theta import ModelParams, params_from_theta

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

Key = Tuple[DegradationType, float]


def now_iso() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


class FitResult(BaseModel):
    """Outcome of one optimization job (also what a database entry records)."""

    model_config = ConfigDict(frozen=True)

    kind: DegradationType
    target: float
    theta_opt: Dict[str, float]
    achieved_metric: float
    objective_value: float
    generations_used: int = 0
    seed: int = 0
    converged: bool = True
    message: str = ""
    bounds: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    num_samples: int = 0
    packet_interval_ms: float = 1.0

    @property
    def relative_error(self) -> float:
        if self.target == 0:
            return 0.0 if self.achieved_metric == 0 else float("inf")
        return abs(self.achieved_metric - self.target) / abs(self.target)


class DbEntry(BaseModel):
    """On-disk entry; field names follow the published file schema."""

    type: DegradationType
    target: float
    theta: Dict[str, float]
    achieved: float
    seed: int
    created_at: str
    status: str = "ok"
    objective: float = 0.0
    generations: int = 0
    bounds: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    num_samples: int = 0
    packet_interval_ms: float = 1.0
    message: str = ""

    @classmethod
    def from_fit(cls, fit: FitResult, created_at: Optional[str] = None) -> "DbEntry":
        return cls(
            type=fit.kind,
            target=fit.target,
            theta=dict(fit.theta_opt),
            achieved=fit.achieved_metric,
            seed=fit.seed,
            created_at=created_at or now_iso(),
            status="ok" if fit.converged else "failed",
            objective=fit.objective_value,
            generations=fit.generations_used,
            bounds=dict(fit.bounds),
            num_samples=fit.num_samples,
            packet_interval_ms=fit.packet_interval_ms,
            message=fit.message,
        )

    @property
    def key(self) -> Key:
        return (self.type, self.target)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def params(self) -> ModelParams:
        return params_from_theta(self.type, self.theta)


class DbDocument(BaseModel):
    version: int = SCHEMA_VERSION
    entries: List[DbEntry] = Field(default_factory=list)


class FaultParameterDatabase:
    """Exact-key lookup; no interpolation between targets. Immutable once loaded."""

    def __init__(self, entries: Optional[List[DbEntry]] = None, version: int = SCHEMA_VERSION):
        self.version = version
        self._entries: Dict[Key, DbEntry] = {}
        for entry in entries or []:
            self.add(entry)

    def add(self, entry: DbEntry) -> None:
        if entry.key in self._entries:
            raise KeyCollisionError(f"duplicate entry for ({entry.type.value}, {entry.target!r})")
        self._entries[entry.key] = entry

    def lookup(self, kind: DegradationType, target: float) -> DbEntry:
        entry = self._entries.get((DegradationType(kind), float(target)))
        if entry is None:
            raise ResolutionError(DegradationType(kind).value, target)
        return entry

    def __contains__(self, key: Key) -> bool:
        return (DegradationType(key[0]), float(key[1])) in self._entries

    def __iter__(self) -> Iterator[DbEntry]:
        return iter(self._entries.values())

    def __len__(self) -> int:
        return len(self._entries)

    # ---- persistence ------------------------------------------------------------

    def to_json(self) -> str:
        doc = DbDocument(version=self.version, entries=list(self._entries.values()))
        return json.dumps(doc.model_dump(mode="json"), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FaultParameterDatabase":
        try:
            doc = DbDocument.model_validate_json(text)
        except ValidationError as e:
            raise DatabaseError(f"invalid parameter database: {e.errors()[0]['msg']}") from e
        if doc.version != SCHEMA_VERSION:
            raise DatabaseError(f"unsupported database version {doc.version}")
        try:
            return cls(doc.entries, version=doc.version)
        except KeyCollisionError as e:
            raise DatabaseError(str(e)) from e

    @classmethod
    def load(cls, path: Path) -> "FaultParameterDatabase":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise DatabaseError(f"cannot read {path}: {e.strerror}") from e
        db = cls.from_json(text)
        logger.debug("loaded %d entries from %s", len(db), path)
        return db

    def save(self, path: Path) -> None:
        write_atomic(Path(path), self.to_json())


def write_atomic(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
