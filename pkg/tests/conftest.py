import numpy as np
import pytest

from plsaudit.linalg_core import PsdMatrix, random_psd_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def diag421():
    """diag(4, 2, 1) 与全 1 向量"""
    return PsdMatrix(np.diag([4.0, 2.0, 1.0])), np.ones(3)


@pytest.fixture
def make_problem():
    """随机半正定问题 (A, b), b ∈ range(A)"""

    def _make(p: int, rank: int = None, seed: int = 0):
        a = random_psd_matrix(p, rank, seed)
        z = np.random.default_rng(seed + 1).standard_normal(p)
        return a, a.entries @ z

    return _make


@pytest.fixture
def regression_data(rng):
    """小规模线性回归数据 (X, y, β)"""
    n, p = 60, 8
    x = rng.standard_normal((n, p)) * np.linspace(3.0, 0.5, p)
    beta = rng.standard_normal(p)
    y = x @ beta + 0.1 * rng.standard_normal(n)
    return x, y, beta
