import os
import sys

import numpy as np
import pytest

# Add 'src' to the Python path so tests can find the modules
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "../src")))

from linalg import GenotypeMatrix, center_normalize  # noqa: E402


@pytest.fixture
def random_design():
    """Standardized Gaussian design factory: random_design(n, p, seed)."""

    def _make(n=60, p=12, seed=0):
        rng = np.random.default_rng(seed)
        return center_normalize(rng.standard_normal((n, p)))

    return _make


@pytest.fixture
def orthonormal_design():
    """Centered design with orthonormal columns: orthonormal_design(n, p, seed)."""

    def _make(n=40, p=6, seed=0):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((n, p))
        q, _ = np.linalg.qr(a - a.mean(axis=0))
        return GenotypeMatrix(values=np.ascontiguousarray(q), standardized=True)

    return _make
