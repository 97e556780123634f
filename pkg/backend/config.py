import os
from dataclasses import dataclass
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_int(name: str, default: int) -> int:
    """Read an integer setting from COINTOSS_<name>, falling back to default"""
    raw = os.getenv(f"COINTOSS_{name}")
    if raw is None or raw.strip() == "":
        return default
    return int(raw, 0)


@dataclass
class Config:
    """Default settings for the coin-toss simulator (CLI flags override these)"""
    # Bet settings
    STAKE: int = _env_int("STAKE", 50)                      # X, in atomic units
    BET_LOCKTIME: int = _env_int("BET_LOCKTIME", 20)        # refund_bet offset in blocks
    REVEAL_LOCKTIME: int = _env_int("REVEAL_LOCKTIME", 10)  # refund_reveal offset in blocks
    CONFIRMATION_DEPTH: int = _env_int("CONFIRMATION_DEPTH", 1)
    SETUP_TIMEOUT: int = _env_int("SETUP_TIMEOUT", 10)      # give up when nothing is at stake
    SHA1_THRESHOLD: int = _env_int("SHA1_THRESHOLD", 1 << 159)

    # Ledger settings
    MAX_REORG_DEPTH: int = _env_int("MAX_REORG_DEPTH", 3)

    # Simulation settings
    SEED: int = _env_int("SEED", 1)
    MONTE_CARLO_RUNS: int = _env_int("MONTE_CARLO_RUNS", 10000)
    MONTE_CARLO_WORKERS: int = _env_int("MONTE_CARLO_WORKERS", 1)

    # Diagnostics go to stderr only
    LOG_LEVEL: str = os.getenv("COINTOSS_LOG_LEVEL", "WARNING")

config = Config()
