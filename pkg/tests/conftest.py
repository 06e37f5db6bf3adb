"""
Shared fixtures for the dirac-loc test suite
"""

import numpy as np
import pytest
from scipy.linalg import expm

from services.matgroup import spo_basis, structural_set


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_symmetric(rng, n, scale=1.0):
    A = rng.normal(scale=scale, size=(n, n))
    return 0.5 * (A + A.T)


def random_symplectic(rng, N, scale=0.5):
    J = structural_set(N).J
    return expm(J @ random_symmetric(rng, 2 * N, scale))


def random_spo(rng, N, scale=0.5):
    basis = spo_basis(N).stacked()
    X = np.tensordot(rng.normal(scale=scale, size=len(basis)), basis, axes=1)
    return expm(X)
