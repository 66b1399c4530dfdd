from pathlib import Path
import os
from typing import Optional

from dotenv import load_dotenv

# Load .env from project root if present
PROJECT_ROOT = Path(__file__).resolve().parents[1]
env_path = PROJECT_ROOT / ".env"
if env_path.exists():
    load_dotenv(env_path)

APP_NAME = os.getenv("APP_NAME", "netfi")
DEBUG = os.getenv("DEBUG", "false").lower() == "true"
LOG_LEVEL = os.getenv("LOG_LEVEL", "DEBUG" if DEBUG else "INFO").upper()

# Status page / stats API served next to the relay (0 disables it)
HTTP_HOST = os.getenv("HTTP_HOST", "127.0.0.1")
HTTP_PORT = int(os.getenv("HTTP_PORT", "0"))

STATS_FLUSH_S = float(os.getenv("STATS_FLUSH_S", "1.0"))
DB_PATH = Path(os.getenv("NETFI_DB_PATH", str(PROJECT_ROOT / "fault_params.json")))
DRAIN_ON_STOP = os.getenv("DRAIN_ON_STOP", "true").lower() == "true"

DEFAULT_SEED = 20250101


def seed_from_env(default: Optional[int] = None) -> Optional[int]:
    """Global seed fallback, read at call time so commands see the current env."""
    raw = os.getenv("NETFI_SEED")
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw.strip(), 0)
    except ValueError:
        raise ValueError(f"NETFI_SEED must be an integer, got {raw!r}")
