from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache

class Settings(BaseSettings):
    APP_NAME: str = "Path Group Lab"
    VERSION: str = "0.1.0"
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Storage
    OUTPUT_DIR: str = "storage/outputs"

    # Numerics
    TOL: float = 1e-9
    LOG_RADIUS: float = 1.9
    DEFAULT_GROUP: str = "SO(3)"

    # Radius schedule R_N = c * N**alpha
    DEFAULT_SCHEDULE_C: float = 1.0
    DEFAULT_SCHEDULE_ALPHA: float = 0.75

    # Monte Carlo
    MC_CHUNK: int = 4096          # samples per RNG substream; never tied to threads
    MAX_SAMPLES: int = 160_000    # cap for the M-doubling significance policy
    THREADS: int = 1
    RECORD_TIMINGS: bool = False  # wall_ms in emitted tables breaks byte determinism

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")

@lru_cache()
def get_settings():
    return Settings()

settings = get_settings()
