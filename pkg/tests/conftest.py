import os
import socket
from pathlib import Path

import pytest

from netfi.services.presets import published_database

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def reference_db():
    return published_database()


@pytest.fixture(scope="session")
def scenarios_dir() -> Path:
    return SCENARIOS


@pytest.fixture
def reference_db_file(tmp_path, reference_db) -> Path:
    path = tmp_path / "fault_params.json"
    reference_db.save(path)
    return path


@pytest.fixture
def sink():
    """UDP socket on loopback standing in for the forward endpoint."""
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4 << 20)
    s.bind(("127.0.0.1", 0))
    s.settimeout(2.0)
    yield s
    s.close()


def pytest_collection_modifyitems(config, items):
    if os.environ.get("NETFI_BENCH") == "1":
        return
    skip = pytest.mark.skip(reason="set NETFI_BENCH=1 to run relay benchmarks")
    for item in items:
        if "benchmark" in item.keywords:
            item.add_marker(skip)
