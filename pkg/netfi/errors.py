from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence


class NetfiError(Exception):
    code = "netfi"


class ParameterDomainError(NetfiError, ValueError):
    """A model parameter is outside its domain; ``symbol`` names it (e.g. ``alpha_0``)."""

    code = "parameter"

    def __init__(self, symbol: str, message: str):
        super().__init__(f"{symbol}: {message}")
        self.symbol = symbol


@dataclass(frozen=True)
class SchemaIssue:
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.message}"


class ScenarioError(NetfiError, ValueError):
    code = "scenario"

    def __init__(self, issues: Sequence[SchemaIssue]):
        self.issues: List[SchemaIssue] = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues) or "invalid scenario")


class ResolutionError(NetfiError, LookupError):
    code = "resolve"

    def __init__(self, kind: str, target: float, reason: str = "no parameter entry"):
        super().__init__(f"{reason} for ({kind}, {target!r})")
        self.kind = kind
        self.target = target


class KeyCollisionError(NetfiError, ValueError):
    code = "key-collision"


class DatabaseError(NetfiError):
    code = "database"


class ProxyStartupError(NetfiError):
    code = "startup"


class JobsError(ScenarioError):
    code = "jobs"
