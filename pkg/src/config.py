"""
Runtime configuration for the MN-PCA toolkit.

Settings come from environment variables (prefix ``MNPCA_``) or a ``.env``
file in the working directory:

- MNPCA_OUTPUT_DIR: default directory for CLI outputs
- MNPCA_LOG_LEVEL: root log level used by the CLI
- MNPCA_DEFAULT_RHO: glasso penalty used when the lambda grid is undefined
- MNPCA_BENCHMARK_JOBS: default worker count for benchmark sweeps

Numerical tolerances are fixed constants, collected in ``TOLERANCES``.
"""

from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict


# Load environment variables
load_dotenv()


class Tolerances(BaseModel, frozen=True):
    """Numerical tolerances shared by every module."""
    symmetry: float = Field(default=1e-10, description="Max asymmetry accepted as symmetric")
    sparse_export: float = Field(default=1e-8, description="Entries below this are dropped on export")
    invertibility: float = Field(default=1e-10, description="Smallest singular value of a transform")
    max_condition: float = Field(default=1e8, description="Largest accepted condition number")
    monotone_slack: float = Field(default=1e-8, description="Relative objective increase tolerated")
    jitter: float = Field(default=1e-8, description="Ridge added to rank-deficient covariances")


TOLERANCES = Tolerances()


class Settings(BaseSettings):
    """Environment-driven settings."""
    model_config = SettingsConfigDict(
        env_prefix="MNPCA_",
        env_file=".env",
        extra="ignore",
    )

    output_dir: Path = Field(default=Path("runs"), description="Default CLI output directory")
    log_level: str = Field(default="INFO", description="Root log level")
    default_rho: float = Field(default=0.1, gt=0, description="Fallback glasso penalty")
    benchmark_jobs: int = Field(default=1, ge=1, description="Parallel benchmark cells")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Return the process-wide settings object."""
    return Settings()
