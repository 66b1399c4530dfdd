# netfi/services/proxy.py
"""Unidirectional UDP relay driven by an injection pipeline.

Three threads: ``receive`` judges every datagram and never waits on the send
schedule, ``send`` is the only writer to the forward socket and releases
packets at their release time, ``stats`` appends a CSV row per flush interval.
"""
from __future__ import annotations

import logging
import signal
import socket
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .. import config
from ..errors import NetfiError, ProxyStartupError
from .injector import InjectionPipeline, PacketEnvelope, VerdictStatus
from .param_db import FaultParameterDatabase
from .scenario import Scenario, resolve

logger = logging.getLogger(__name__)

MAX_DATAGRAM = 65_535
STATS_HEADER = "# netfi-stats/1\n"
STATS_COLUMNS = [
    "timestamp", "received", "dropped", "forwarded",
    "mean_overhead_us", "p99_overhead_us", "mean_injected_delay_ms",
]
OVERHEAD_WINDOW = 10_000
# upper bucket edges (µs) of the overhead histogram; the last bucket is open
OVERHEAD_BUCKETS_US = (50, 100, 200, 500, 1_000, 2_000, 5_000)

_POLL_S = 0.05

Endpoint = Tuple[str, int]


def parse_endpoint(raw: str) -> Endpoint:
    """``"host:port"`` (``"[v6]:port"`` for IPv6) to ``(host, port)``."""
    host, sep, port = raw.rpartition(":")
    if not sep or not port.isdigit():
        raise ProxyStartupError(f"endpoint must be host:port, got {raw!r}")
    host = host.strip("[]") or "0.0.0.0"
    p = int(port)
    if not 0 <= p <= 65535:
        raise ProxyStartupError(f"port out of range in {raw!r}")
    return host, p


def now_us() -> int:
    return time.monotonic_ns() // 1000


class ProxyConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    listen: Endpoint
    forward: Endpoint
    scenario: Scenario = Field(default_factory=Scenario)
    db_path: Optional[Path] = None
    seed: Optional[int] = None
    stats_path: Optional[Path] = None
    flush_interval_s: float = Field(default=config.STATS_FLUSH_S, gt=0)
    drain_on_stop: bool = config.DRAIN_ON_STOP
    http_port: int = Field(default=config.HTTP_PORT, ge=0, le=65535)

    @model_validator(mode="after")
    def _distinct(self):
        if self.listen == self.forward:
            raise ValueError("listen and forward endpoints must differ")
        return self


@dataclass(frozen=True)
class RelayStats:
    timestamp: float = 0.0
    received: int = 0
    dropped: int = 0
    delayed: int = 0
    forwarded: int = 0
    in_flight: int = 0
    discarded_on_stop: int = 0
    send_errors: int = 0
    mean_overhead_us: float = 0.0
    p99_overhead_us: float = 0.0
    mean_injected_delay_ms: float = 0.0
    mean_hold_ms: float = 0.0
    throughput_pps: float = 0.0
    overhead_histogram: Dict[str, int] = field(default_factory=dict)

    def to_row(self) -> Dict[str, float]:
        d = asdict(self)
        return {c: d[c] for c in STATS_COLUMNS}


class Relay:
    def __init__(self, cfg: ProxyConfig, db: Optional[FaultParameterDatabase] = None):
        self.config = cfg
        if db is None and cfg.db_path is not None:
            try:
                db = FaultParameterDatabase.load(cfg.db_path)
            except NetfiError as e:
                raise ProxyStartupError(str(e)) from e
        try:
            self.pipeline: InjectionPipeline = resolve(cfg.scenario, db, seed=cfg.seed)
        except (NetfiError, ValueError) as e:
            raise ProxyStartupError(f"scenario {cfg.scenario.name!r}: {e}") from e

        self._stop = threading.Event()
        self._wake = threading.Event()
        self._threads: List[threading.Thread] = []
        self._rx: Optional[socket.socket] = None
        self._tx: Optional[socket.socket] = None
        self._overhead: Deque[int] = deque(maxlen=OVERHEAD_WINDOW)
        self._overhead_lock = threading.Lock()
        self._warned_at = 0.0
        self._started_at: Optional[float] = None
        self._stopped = False
        self._header_written = False
        self._http = None
        self.listen_address: Optional[Endpoint] = None

    # ---- lifecycle ----

    def start(self) -> "Relay":
        family = socket.AF_INET6 if ":" in self.config.listen[0] else socket.AF_INET
        rx = socket.socket(family, socket.SOCK_DGRAM)
        try:
            rx.bind(self.config.listen)
        except OSError as e:
            rx.close()
            raise ProxyStartupError(f"cannot bind {self.config.listen[0]}:{self.config.listen[1]}: {e.strerror}") from e
        rx.settimeout(_POLL_S)
        self._rx = rx
        self.listen_address = rx.getsockname()[:2]
        fwd_family = socket.AF_INET6 if ":" in self.config.forward[0] else socket.AF_INET
        self._tx = socket.socket(fwd_family, socket.SOCK_DGRAM)
        self._started_at = time.monotonic()

        if self.config.stats_path is not None:
            path = Path(self.config.stats_path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(STATS_HEADER, encoding="utf-8")

        for name, target in (("receive", self._receive_loop), ("send", self._send_loop), ("stats", self._stats_loop)):
            t = threading.Thread(target=target, name=f"netfi-{name}", daemon=True)
            t.start()
            self._threads.append(t)
        if self.config.http_port:
            self._start_http()

        logger.info(
            "relay %s:%d -> %s:%d scenario=%r stages=%s",
            *self.listen_address, *self.config.forward, self.config.scenario.name,
            [s.kind.value for s in self.pipeline.stages],
        )
        return self

    def request_stop(self) -> None:
        self._stop.set()
        self._wake.set()

    def wait(self) -> None:
        while not self._stop.wait(0.5):
            pass

    def stop(self) -> RelayStats:
        if self._stopped:
            return self.stats_snapshot()
        self._stopped = True
        self.request_stop()
        for t in self._threads:
            t.join()
        if self.config.drain_on_stop:
            sent = self._send_batch(self.pipeline.flush_due(pending=True))
            logger.info("drained %d in-flight packets", sent)
        else:
            n = self.pipeline.discard_in_flight()
            logger.info("discarded %d in-flight packets", n)
        self._write_stats_row()
        if self._http is not None:
            self._http.should_exit = True
        for s in (self._rx, self._tx):
            if s is not None:
                s.close()
        snap = self.stats_snapshot()
        logger.info("relay stopped: received=%d dropped=%d forwarded=%d", snap.received, snap.dropped, snap.forwarded)
        return snap

    def __enter__(self) -> "Relay":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # ---- agents ----

    def _receive_loop(self) -> None:
        rx = self._rx
        judge = self.pipeline.judge
        forward = self.config.forward
        seq = 0
        while not self._stop.is_set():
            try:
                data, addr = rx.recvfrom(MAX_DATAGRAM)
            except socket.timeout:
                continue
            except OSError as e:
                if self._stop.is_set():
                    break
                logger.warning("receive error: %s", e)
                continue
            verdict = judge(PacketEnvelope(data, now_us(), seq, addr[:2], forward))
            seq += 1
            if verdict.status is not VerdictStatus.DROPPED:
                self._wake.set()

    def _send_loop(self) -> None:
        pipeline = self.pipeline
        while not self._stop.is_set():
            self._wake.clear()
            self._send_batch(pipeline.drain_due(now_us(), pending=True))
            nxt = pipeline.next_release()
            timeout = _POLL_S if nxt is None else min(_POLL_S, max(0.0, (nxt - now_us()) / 1e6))
            if timeout > 0:
                self._wake.wait(timeout)

    def _send_batch(self, due: List[Tuple[int, PacketEnvelope]]) -> int:
        """Send ``due`` and settle it with the pipeline; returns the number sent."""
        sent = failed = 0
        for release, packet in due:
            try:
                self._tx.sendto(packet.payload, self.config.forward)
                sent += 1
            except OSError as e:
                failed += 1
                self._warn_send_error(e, failed)
                continue
            # lateness past the release time; the injected hold itself is excluded
            overhead = now_us() - release
            with self._overhead_lock:
                self._overhead.append(max(0, overhead))
        if due:
            self.pipeline.settle(sent, failed)
        return sent

    def _warn_send_error(self, e: OSError, failed: int) -> None:
        t = time.monotonic()
        if t - self._warned_at >= self.config.flush_interval_s:
            self._warned_at = t
            total = self.pipeline.stats().send_failed + failed
            logger.warning("forward to %s:%d failed (%d so far): %s", *self.config.forward, total, e)

    def _stats_loop(self) -> None:
        while not self._stop.wait(self.config.flush_interval_s):
            self._write_stats_row()

    def _write_stats_row(self) -> None:
        if self.config.stats_path is None:
            return
        row = pd.DataFrame([self.stats_snapshot().to_row()], columns=STATS_COLUMNS)
        row.to_csv(self.config.stats_path, mode="a", header=not self._header_written, index=False)
        self._header_written = True

    def _start_http(self) -> None:
        import uvicorn

        from ..main import create_app

        server = uvicorn.Server(uvicorn.Config(
            create_app(self), host=config.HTTP_HOST, port=self.config.http_port, log_level="warning",
        ))
        server.install_signal_handlers = lambda: None
        t = threading.Thread(target=server.run, name="netfi-http", daemon=True)
        t.start()
        self._http = server
        logger.info("status page on http://%s:%d/", config.HTTP_HOST, self.config.http_port)

    # ---- stats ----

    def stats_snapshot(self) -> RelayStats:
        ps = self.pipeline.stats()
        with self._overhead_lock:
            window = np.fromiter(self._overhead, dtype=np.int64)
        if window.size:
            mean_oh = float(window.mean())
            p99 = float(np.percentile(window, 99))
            counts = np.bincount(np.searchsorted(OVERHEAD_BUCKETS_US, window, side="left"),
                                 minlength=len(OVERHEAD_BUCKETS_US) + 1)
        else:
            mean_oh = p99 = 0.0
            counts = np.zeros(len(OVERHEAD_BUCKETS_US) + 1, dtype=np.int64)
        labels = [f"<={b}" for b in OVERHEAD_BUCKETS_US] + [f">{OVERHEAD_BUCKETS_US[-1]}"]
        uptime = time.monotonic() - self._started_at if self._started_at else 0.0
        return RelayStats(
            timestamp=time.time(),
            received=ps.received,
            dropped=ps.dropped,
            delayed=ps.delayed,
            forwarded=ps.forwarded,
            in_flight=ps.in_flight,
            discarded_on_stop=ps.discarded_on_stop,
            send_errors=ps.send_failed,
            mean_overhead_us=mean_oh,
            p99_overhead_us=p99,
            mean_injected_delay_ms=ps.mean_delay_ms,
            mean_hold_ms=ps.mean_hold_ms,
            throughput_pps=ps.forwarded / uptime if uptime > 0 else 0.0,
            overhead_histogram={k: int(v) for k, v in zip(labels, counts)},
        )


def stats_snapshot(relay: Relay) -> RelayStats:
    return relay.stats_snapshot()


def run_proxy(cfg: ProxyConfig, db: Optional[FaultParameterDatabase] = None) -> RelayStats:
    """Run until interrupted (SIGINT/SIGTERM); returns the final stats."""
    relay = Relay(cfg, db).start()
    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGTERM, lambda *_: relay.request_stop())
    try:
        relay.wait()
    except KeyboardInterrupt:
        logger.info("interrupted")
    return relay.stop()
