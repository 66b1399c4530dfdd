"""Per-packet fault injection pipeline with a time-ordered release buffer.

One agent feeds ``judge`` (receive path) and one drains ``drain_ready``
(release path); they share only the buffer, guarded by a single lock held for
microseconds. ``pipeline_stats`` may be called from any thread.
"""
from __future__ import annotations

import threading
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence, Tuple

from .qos_models import (
    CommLossModel,
    CommLossParams,
    DelayModel,
    GilbertElliottModel,
    GilbertElliottParams,
    HyperExpParams,
)
from .rng import RngStream

Endpoint = Tuple[str, int]


class DegradationType(str, Enum):
    PACKET_LOSS = "packet_loss"
    DELAY = "delay"
    COMM_LOSS = "comm_loss"

    @property
    def is_loss(self) -> bool:
        return self is not DegradationType.DELAY


class VerdictStatus(str, Enum):
    NORMAL = "normal"
    DROPPED = "dropped"
    DELAYED = "delayed"


@dataclass(frozen=True, slots=True)
class PacketEnvelope:
    payload: bytes
    arrival_time: int  # monotonic, µs
    sequence: int
    source: Optional[Endpoint] = None
    destination: Optional[Endpoint] = None


@dataclass(frozen=True, slots=True)
class Verdict:
    status: VerdictStatus
    release_time: Optional[int] = None  # µs, set for DELAYED

    @classmethod
    def normal(cls) -> "Verdict":
        return _NORMAL

    @classmethod
    def dropped(cls) -> "Verdict":
        return _DROPPED

    @classmethod
    def delayed_until(cls, release_time: int) -> "Verdict":
        return cls(VerdictStatus.DELAYED, int(release_time))


_NORMAL = Verdict(VerdictStatus.NORMAL)
_DROPPED = Verdict(VerdictStatus.DROPPED)


# ---- Stages ------------------------------------------------------------------------

class Stage:
    """One model state machine. ``judge`` returns None for a drop, else added delay (ms)."""

    kind: DegradationType

    def __init__(self, seed: int):
        self.seed = seed
        self.rng = RngStream(seed)
        self.index: Optional[int] = None  # position in the scenario as written
        self.seen = 0
        self.dropped = 0
        self.delay_sum_ms = 0.0

    def judge(self, packet: PacketEnvelope) -> Optional[float]:
        raise NotImplementedError

    def describe(self) -> Dict[str, object]:
        params = getattr(self, "params", None)
        return {
            "kind": self.kind.value,
            "seed": self.seed,
            "params": params.model_dump(mode="json", by_alias=True) if params is not None else None,
        }


class PacketLossStage(Stage):
    kind = DegradationType.PACKET_LOSS

    def __init__(self, params: GilbertElliottParams, seed: int):
        super().__init__(seed)
        self.params = params
        self.model = GilbertElliottModel(params, self.rng)

    def judge(self, packet: PacketEnvelope) -> Optional[float]:
        self.seen += 1
        if self.model.advance():
            self.dropped += 1
            return None
        return 0.0


class CommLossStage(Stage):
    kind = DegradationType.COMM_LOSS

    def __init__(self, params: CommLossParams, seed: int, keep_log: bool = False):
        super().__init__(seed)
        self.params = params
        self.model = CommLossModel(params, self.rng, keep_log=keep_log)

    def judge(self, packet: PacketEnvelope) -> Optional[float]:
        self.seen += 1
        # outage windows are wall-clock intervals, not packet counts
        if self.model.advance(packet.arrival_time / 1000.0):
            self.dropped += 1
            return None
        return 0.0


class DelayStage(Stage):
    kind = DegradationType.DELAY

    def __init__(self, params: HyperExpParams, seed: int):
        super().__init__(seed)
        self.params = params
        self.model = DelayModel(params, self.rng)

    def judge(self, packet: PacketEnvelope) -> Optional[float]:
        self.seen += 1
        d = self.model.sample(packet.sequence)
        self.delay_sum_ms += d
        return d


# ---- Stats -------------------------------------------------------------------------

@dataclass(frozen=True)
class StageStats:
    kind: str
    seen: int
    dropped: int
    mean_delay_ms: float


@dataclass(frozen=True)
class PipelineStats:
    received: int = 0
    dropped: int = 0
    delayed: int = 0
    forwarded: int = 0
    in_flight: int = 0
    discarded_on_stop: int = 0
    send_failed: int = 0
    mean_delay_ms: float = 0.0
    mean_hold_ms: float = 0.0
    stages: Tuple[StageStats, ...] = ()
    burst_histogram: Dict[int, int] = field(default_factory=dict)

    @property
    def drop_rate(self) -> float:
        return self.dropped / self.received if self.received else 0.0


# ---- Pipeline ----------------------------------------------------------------------

class InjectionPipeline:
    """Ordered stages feeding a FIFO output buffer with non-decreasing release times."""

    def __init__(self, stages: Sequence[Stage] = ()):
        self.stages: List[Stage] = list(stages)
        self.has_delay = any(s.kind is DegradationType.DELAY for s in self.stages)
        self._lock = threading.Lock()
        self._buffer: Deque[Tuple[int, PacketEnvelope]] = deque()
        self._last_release = 0
        self._received = 0
        self._dropped = 0
        self._delayed = 0
        self._forwarded = 0
        self._discarded = 0
        self._pending = 0
        self._send_failed = 0
        self._delay_sum_ms = 0.0
        self._hold_sum_us = 0
        self._run = 0
        self._bursts: Counter = Counter()

    def judge(self, packet: PacketEnvelope) -> Verdict:
        with self._lock:
            self._received += 1
            added_ms = 0.0
            dropped = False
            for stage in self.stages:
                # loss stages see every packet; delay only the survivors
                if dropped and not stage.kind.is_loss:
                    continue
                out = stage.judge(packet)
                if out is None:
                    dropped = True
                else:
                    added_ms += out
            if dropped:
                self._dropped += 1
                self._run += 1
                return Verdict.dropped()
            if self._run:
                self._bursts[self._run] += 1
                self._run = 0

            release = packet.arrival_time + int(round(added_ms * 1000.0))
            # release in arrival order: never before the previous packet
            release = max(release, self._last_release)
            self._last_release = release
            self._buffer.append((release, packet))
            if self.has_delay:
                self._delayed += 1
                self._delay_sum_ms += added_ms
                self._hold_sum_us += release - packet.arrival_time
                return Verdict.delayed_until(release)
            if release > packet.arrival_time:
                return Verdict.delayed_until(release)
            return Verdict.normal()

    def drain_due(self, now: int, pending: bool = False) -> List[Tuple[int, PacketEnvelope]]:
        """Pop every ``(release_time, packet)`` due at ``now``, in release order.

        With ``pending`` the packets stay in flight until ``settle`` reports
        how many of them were actually sent.
        """
        out: List[Tuple[int, PacketEnvelope]] = []
        with self._lock:
            buf = self._buffer
            while buf and buf[0][0] <= now:
                out.append(buf.popleft())
            self._release(len(out), pending)
        return out

    def settle(self, sent: int, failed: int) -> None:
        """Account for pending packets: ``sent`` forwarded, ``failed`` dropped."""
        with self._lock:
            self._pending -= sent + failed
            self._forwarded += sent
            self._dropped += failed
            self._send_failed += failed

    def _release(self, n: int, pending: bool) -> None:
        if pending:
            self._pending += n
        else:
            self._forwarded += n

    def drain_ready(self, now: int) -> List[PacketEnvelope]:
        return [p for _, p in self.drain_due(now)]

    def next_release(self) -> Optional[int]:
        with self._lock:
            return self._buffer[0][0] if self._buffer else None

    def flush(self) -> List[PacketEnvelope]:
        """Release everything still buffered, ignoring release times."""
        return [p for _, p in self.flush_due()]

    def flush_due(self, pending: bool = False) -> List[Tuple[int, PacketEnvelope]]:
        with self._lock:
            out = list(self._buffer)
            self._buffer.clear()
            self._release(len(out), pending)
        return out

    def discard_in_flight(self) -> int:
        with self._lock:
            n = len(self._buffer)
            self._buffer.clear()
            self._dropped += n
            self._discarded += n
        return n

    def stats(self) -> PipelineStats:
        with self._lock:
            stages = tuple(
                StageStats(
                    kind=s.kind.value,
                    seen=s.seen,
                    dropped=s.dropped,
                    mean_delay_ms=(s.delay_sum_ms / s.seen) if s.seen and s.delay_sum_ms else 0.0,
                )
                for s in self.stages
            )
            return PipelineStats(
                received=self._received,
                dropped=self._dropped,
                delayed=self._delayed,
                forwarded=self._forwarded,
                in_flight=len(self._buffer) + self._pending,
                discarded_on_stop=self._discarded,
                send_failed=self._send_failed,
                mean_delay_ms=self._delay_sum_ms / self._delayed if self._delayed else 0.0,
                mean_hold_ms=self._hold_sum_us / self._delayed / 1000.0 if self._delayed else 0.0,
                stages=stages,
                burst_histogram=dict(sorted(self._bursts.items())),
            )


def judge(pipeline: InjectionPipeline, packet: PacketEnvelope) -> Verdict:
    return pipeline.judge(packet)


def drain_ready(pipeline: InjectionPipeline, now: int) -> List[PacketEnvelope]:
    return pipeline.drain_ready(now)


def pipeline_stats(pipeline: InjectionPipeline) -> PipelineStats:
    return pipeline.stats()
