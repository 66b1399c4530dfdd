# netfi/cli.py
"""``netfi`` command line: optimize, simulate, run, validate, db-list, reference.

Exit codes: 0 success, 1 validation failure, 2 usage or configuration error.
Errors print one line: ``netfi: error: <code>: <message>``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from . import config
from .errors import NetfiError
from .services.optimizer import build_param_db, parse_jobs
from .services.param_db import FaultParameterDatabase
from .services.presets import published_database
from .services.proxy import ProxyConfig, parse_endpoint, run_proxy
from .services.reporting import (
    db_listing,
    fit_report,
    simulate_stream,
    stream_report,
    summary_lines,
    validate_database,
    write_report,
    write_trace,
)
from .services.scenario import load_scenario, resolve

logger = logging.getLogger("netfi")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2


class UsageError(Exception):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def seed_int(raw: str) -> int:
    """Decimal or 0x-prefixed seed."""
    return int(raw, 0)


def _seed(args) -> Optional[int]:
    if args.seed is not None:
        return args.seed
    try:
        return config.seed_from_env()
    except ValueError as e:
        raise UsageError(str(e)) from e


def _load_db(path: Optional[Path]) -> Optional[FaultParameterDatabase]:
    return FaultParameterDatabase.load(path) if path is not None else None


# ---- Commands ----

def cmd_optimize(args) -> int:
    try:
        text = Path(args.jobs).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read jobs file {args.jobs}: {e.strerror}") from e
    seed = _seed(args)
    jobs = parse_jobs(text, seed if seed is not None else config.DEFAULT_SEED)
    if not jobs:
        raise UsageError("jobs file lists no jobs")
    if args.workers:
        jobs = [j.model_copy(update={"de": j.de.model_copy(update={"workers": args.workers})}) for j in jobs]

    db = build_param_db(jobs)
    db.save(args.out)
    report = fit_report(db)
    print(report.render(), end="")
    print(f"wrote {len(db)} entries to {args.out}")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    pipeline = resolve(scenario, _load_db(args.db), seed=_seed(args))
    run = simulate_stream(pipeline, args.packets, args.rate)
    if args.trace is not None:
        write_trace(args.trace, run.trace)
        logger.info("trace written to %s", args.trace)
    report = stream_report(scenario, pipeline, run)
    for line in summary_lines(run):
        print(line)
    print(report.render(), end="")
    if args.out is not None:
        write_report(args.out, report)
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_run(args) -> int:
    cfg = ProxyConfig(
        listen=parse_endpoint(args.listen),
        forward=parse_endpoint(args.forward),
        scenario=load_scenario(args.scenario),
        db_path=args.db,
        seed=_seed(args),
        stats_path=args.out,
        flush_interval_s=args.flush_interval,
        drain_on_stop=not args.discard_on_stop,
        http_port=args.http_port,
    )
    snap = run_proxy(cfg)
    print(
        f"received={snap.received} dropped={snap.dropped} forwarded={snap.forwarded} "
        f"p99_overhead_us={snap.p99_overhead_us:.1f}"
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    db = FaultParameterDatabase.load(args.db)
    report = validate_database(db, sample_factor=args.sample_factor, seed=_seed(args))
    print(report.render(), end="")
    if args.out is not None:
        write_report(args.out, report)
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_reference(args) -> int:
    db = published_database(packet_interval_ms=args.packet_interval)
    db.save(args.out)
    print(fit_report(db, title="reference").render(), end="")
    print(f"wrote {len(db)} entries to {args.out}")
    return EXIT_OK


def cmd_db_list(args) -> int:
    db = FaultParameterDatabase.load(args.db)
    df = db_listing(db)
    print(df.to_string(index=False) if len(df) else "no entries")
    return EXIT_OK


# ---- Parser ----

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netfi", description="Model-based network fault injection")
    p.add_argument("--log-level", default=config.LOG_LEVEL,
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"], type=str.upper)
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("optimize", help="fit parameters for a jobs file and write a database")
    o.add_argument("jobs", type=Path)
    o.add_argument("--out", type=Path, default=config.DB_PATH)
    o.add_argument("--seed", type=seed_int)
    o.add_argument("--workers", type=int, default=0, help="evaluation threads per job")
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("simulate", help="run a synthetic stream through a scenario, no sockets")
    s.add_argument("--scenario", type=Path, required=True)
    s.add_argument("--db", type=Path)
    s.add_argument("--packets", type=int, default=10_000)
    s.add_argument("--rate", type=float, default=1000.0, help="packets per second")
    s.add_argument("--seed", type=seed_int)
    s.add_argument("--trace", type=Path, help="per-packet trace CSV")
    s.add_argument("--out", type=Path, help="report CSV")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="relay UDP datagrams through a scenario")
    r.add_argument("--scenario", type=Path, required=True)
    r.add_argument("--db", type=Path)
    r.add_argument("--listen", required=True, help="host:port")
    r.add_argument("--forward", required=True, help="host:port")
    r.add_argument("--seed", type=seed_int)
    r.add_argument("--out", type=Path, help="stats CSV")
    r.add_argument("--flush-interval", type=float, default=config.STATS_FLUSH_S)
    r.add_argument("--http-port", type=int, default=config.HTTP_PORT, help="status page port, 0 disables")
    r.add_argument("--discard-on-stop", action="store_true", default=not config.DRAIN_ON_STOP)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="re-simulate every database entry on fresh seeds")
    v.add_argument("--db", type=Path, default=config.DB_PATH)
    v.add_argument("--seed", type=seed_int)
    v.add_argument("--sample-factor", type=int, default=10)
    v.add_argument("--out", type=Path, help="report CSV")
    v.set_defaults(func=cmd_validate)

    ref = sub.add_parser("reference", help="write the nine reference conditions as a database")
    ref.add_argument("--out", type=Path, default=config.DB_PATH)
    ref.add_argument("--packet-interval", type=float, default=1.0, help="ms between packets")
    ref.set_defaults(func=cmd_reference)

    d = sub.add_parser("db-list", help="list database entries")
    d.add_argument("--db", type=Path, default=config.DB_PATH)
    d.set_defaults(func=cmd_db_list)
    return p


def _fail(code: str, message: str) -> int:
    first = str(message).strip().splitlines()[0] if str(message).strip() else "error"
    print(f"netfi: error: {code}: {first}", file=sys.stderr)
    return EXIT_USAGE


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        return _fail(e.code, str(e))

    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as e:
        return _fail(e.code, str(e))
    except NetfiError as e:
        return _fail(e.code, str(e))
    except ValidationError as e:
        err = e.errors()[0]
        loc = ".".join(str(p) for p in err["loc"])
        return _fail("config", f"{loc}: {err['msg']}" if loc else err["msg"])
    except ValueError as e:
        return _fail("value", str(e))
    except OSError as e:
        where = f"{e.filename}: " if e.filename else ""
        return _fail("io", f"{where}{e.strerror or e}")


if __name__ == "__main__":
    sys.exit(main())
