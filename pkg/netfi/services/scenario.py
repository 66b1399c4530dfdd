# netfi/services/scenario.py
"""Scenario documents (injection campaigns) and their resolution into pipelines.

A scenario is a JSON document::

    {
      "schema_version": 1,
      "name": "delay-300+loss-30",
      "seed": 42,
      "packet_interval_ms": 1.0,
      "stage_order": "loss_first",
      "stages": [
        {"type": "delay", "target": "300 ms"},
        {"type": "packet_loss", "target": "30%"}
      ]
    }

Each stage carries either a ``target`` (looked up in the parameter database)
or inline ``params`` (the named theta of its degradation type).
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from ..config import DEFAULT_SEED
from ..errors import ResolutionError, SchemaIssue, ScenarioError
from .injector import (
    CommLossStage,
    DegradationType,
    DelayStage,
    InjectionPipeline,
    PacketLossStage,
    Stage,
)
from .param_db import FaultParameterDatabase
from .rng import derive_seed
from .theta import ModelParams, params_from_theta, parse_target, theta_from_params

logger = logging.getLogger(__name__)

SCENARIO_SCHEMA_VERSION = 1


class StageSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    type: DegradationType
    target: Optional[float] = None
    params: Optional[Dict[str, float]] = None
    seed: Optional[int] = None
    enabled: bool = True

    @field_validator("target", mode="before")
    @classmethod
    def _normalize_target(cls, raw, info: ValidationInfo):
        if raw is None:
            return None
        kind = info.data.get("type")
        if kind is None:
            return raw
        return parse_target(kind, raw)

    @field_validator("params")
    @classmethod
    def _expand_params(cls, theta, info: ValidationInfo):
        if theta is None or "type" not in info.data:
            return theta
        # fill defaults so the stored form is the canonical one
        return theta_from_params(params_from_theta(info.data["type"], theta))

    @model_validator(mode="after")
    def _one_source(self):
        if (self.target is None) == (self.params is None):
            raise ValueError("exactly one of 'target' and 'params' is required")
        return self

    @property
    def inline(self) -> bool:
        return self.params is not None


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal[1] = SCENARIO_SCHEMA_VERSION
    name: str = "normal"
    seed: Optional[int] = None
    packet_interval_ms: float = Field(default=1.0, gt=0)
    stage_order: Literal["loss_first", "as_written"] = "loss_first"
    stages: List[StageSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _single_delay(self):
        delays = [s for s in self.stages if s.type is DegradationType.DELAY]
        if len(delays) > 1:
            raise ValueError("at most one delay stage is allowed")
        return self

    @property
    def is_normal(self) -> bool:
        return not any(s.enabled for s in self.stages)


# ---- Parse / serialize ---------------------------------------------------------------

def parse_scenario(document: str) -> Scenario:
    if not document or not document.strip():
        raise ScenarioError([SchemaIssue("1:1", "document is empty")])
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as e:
        raise ScenarioError([SchemaIssue(f"{e.lineno}:{e.colno}", e.msg)]) from e
    if not isinstance(raw, dict):
        raise ScenarioError([SchemaIssue("1:1", "top level must be an object")])
    try:
        return Scenario.model_validate(raw)
    except ValidationError as e:
        raise ScenarioError([_issue(err) for err in e.errors()]) from e


def _issue(err) -> SchemaIssue:
    loc = ".".join(str(p) for p in err["loc"]) or "<root>"
    msg = err["msg"]
    if msg.startswith("Value error, "):
        msg = msg[len("Value error, "):]
    return SchemaIssue(loc, msg)


def serialize_scenario(scenario: Scenario) -> str:
    """Canonical text: sorted keys, two-space indent, unset optionals omitted."""
    doc = scenario.model_dump(mode="json", exclude_none=True)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def load_scenario(path: Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioError([SchemaIssue(str(path), e.strerror or "cannot read file")]) from e
    return parse_scenario(text)


# ---- Resolution ----------------------------------------------------------------------

def stage_params(spec: StageSpec, db: Optional[FaultParameterDatabase]) -> ModelParams:
    if spec.inline:
        return params_from_theta(spec.type, spec.params)
    if db is None:
        raise ResolutionError(spec.type.value, spec.target, reason="no parameter database given")
    entry = db.lookup(spec.type, spec.target)
    if not entry.ok:
        raise ResolutionError(spec.type.value, spec.target, reason="parameter entry did not converge")
    return entry.params()


def build_stage(kind: DegradationType, params: ModelParams, seed: int) -> Stage:
    if kind is DegradationType.PACKET_LOSS:
        return PacketLossStage(params, seed)
    if kind is DegradationType.DELAY:
        return DelayStage(params, seed)
    return CommLossStage(params, seed)


def resolve(
    scenario: Scenario,
    db: Optional[FaultParameterDatabase] = None,
    seed: Optional[int] = None,
) -> InjectionPipeline:
    """Build the pipeline for ``scenario``.

    Stage seeds derive from the global seed and the stage's index as written,
    so disabling or reordering stages never changes another stage's stream.
    """
    global_seed = seed if seed is not None else scenario.seed
    if global_seed is None:
        global_seed = DEFAULT_SEED

    built = []
    for index, spec in enumerate(scenario.stages):
        if not spec.enabled:
            continue
        params = stage_params(spec, db)
        stage_seed = spec.seed if spec.seed is not None else derive_seed(global_seed, index)
        stage = build_stage(spec.type, params, stage_seed)
        stage.index = index
        built.append(stage)

    if scenario.stage_order == "loss_first":
        built.sort(key=lambda s: 0 if s.kind.is_loss else 1)
    logger.debug("resolved %r: %s", scenario.name, [s.kind.value for s in built])
    return InjectionPipeline(built)
