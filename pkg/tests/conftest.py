"""
Shared test fixtures and configuration.
"""

import sys
from pathlib import Path

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import numpy as np
import pytest


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(12345)


@pytest.fixture
def random_spd():
    """Factory for well-conditioned random SPD matrices (G^T G + I)."""
    def make(dim: int, seed: int = 0) -> np.ndarray:
        g = np.random.default_rng(seed).standard_normal((dim, dim))
        return g.T @ g + np.eye(dim)
    return make


@pytest.fixture
def small_spec():
    """Small-scale spec scaled down for fast fits."""
    from src.models import SyntheticSpec

    return SyntheticSpec(n=60, p=40, alpha1=0.05, alpha2=0.05, c1=8, c2=8, seed=3)


@pytest.fixture
def small_instance(small_spec):
    """Generated instance for small_spec."""
    from src.synthdata import generate

    return generate(small_spec)


@pytest.fixture
def iid_instance():
    """Instance with identity precisions (c=1)."""
    from src.models import SyntheticSpec
    from src.synthdata import generate

    return generate(SyntheticSpec(n=90, p=60, alpha1=0.0, alpha2=0.0, c1=1, c2=1, seed=7))


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    """Point the output directory at a temporary path and reset cached settings."""
    from src.config import get_settings

    monkeypatch.setenv("MNPCA_OUTPUT_DIR", str(tmp_path / "runs"))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()
