import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    return int(raw) if raw not in (None, "") else default


class Settings:
    VERSION = "0.3.0"

    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
    LOG_DIR = Path(os.getenv("TASEP_LDP_LOG_DIR", "logs"))
    OUT_DIR = Path(os.getenv("TASEP_LDP_OUT_DIR", "runs"))
    # --threads wins over this when given
    THREADS = _env_int("TASEP_LDP_THREADS", 1)

    # metric truncation depth k_max
    METRIC_DEPTH = 8
    PL_TOLERANCE = 1e-9
    TRIPLET_TOLERANCE = 1e-12
    FLUX_TOLERANCE = 1e-9

    ODE_ATOL = 1e-10
    ODE_RTOL = 1e-10
    DOOB_MAX_STATES = 2_000_000
    DOOB_MAX_GROWTH = 6

    MARGIN_SIGMAS = 6
    DEFAULTS_FILE = Path(__file__).parent / "experiment_defaults.json"

    @classmethod
    def validate_config(cls):
        if cls.THREADS < 1:
            raise ValueError("TASEP_LDP_THREADS must be a positive integer")
        if cls.METRIC_DEPTH < 1:
            raise ValueError("METRIC_DEPTH must be positive")
        cls.OUT_DIR.mkdir(parents=True, exist_ok=True)


settings = Settings()
