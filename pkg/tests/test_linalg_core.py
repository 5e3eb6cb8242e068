"""
稠密对称线性代数

对照: scipy.linalg / numpy.linalg (LAPACK)

已知值:
- 对角矩阵: 特征值为对角元, 条件数为最大/最小
- 正交子空间: 主角全为 π/2
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import ortho_group

from plsaudit.errors import DataError, NumericalError
from plsaudit.linalg_core import (
    PsdMatrix,
    check_orthonormal,
    condition_number_psd,
    eigh_descending,
    numerical_rank,
    orthonormalize,
    principal_angles,
    pseudo_inverse,
    random_psd_matrix,
    range_projector,
    standardized_condition_number,
    sym_eigen,
)


class TestPsdMatrix:

    def test_symmetrizes_and_freezes(self):
        a = PsdMatrix(np.array([[2.0, 1.0], [0.0, 2.0]]))
        assert_allclose(a.entries, [[2.0, 0.5], [0.5, 2.0]])
        assert not a.entries.flags.writeable

    def test_rejects_non_square(self):
        with pytest.raises(DataError):
            PsdMatrix(np.ones((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            PsdMatrix(np.array([[1.0, np.nan], [np.nan, 1.0]]))

    def test_indefinite_rejected_on_decomposition(self):
        with pytest.raises(DataError, match="半正定"):
            sym_eigen(np.diag([1.0, -1.0]))

    def test_tiny_negative_eigenvalues_clamped(self):
        eig = sym_eigen(np.diag([1.0, -1e-14]))
        assert eig.eigenvalues[-1] == 0.0

    def test_op_norm(self, diag421):
        a, _ = diag421
        assert a.op_norm == pytest.approx(4.0)


class TestSymEigen:

    def test_diagonal(self):
        eig = sym_eigen(np.diag([1.0, 5.0, 3.0]))
        assert_allclose(eig.eigenvalues, [5.0, 3.0, 1.0])

    def test_reconstruction_and_numpy(self, make_problem):
        a, _ = make_problem(8, seed=3)
        eig = sym_eigen(a)
        v, lam = eig.eigenvectors, eig.eigenvalues
        assert_allclose((v * lam) @ v.T, a.entries, atol=1e-12)
        assert_allclose(lam, np.sort(np.linalg.eigvalsh(a.entries))[::-1], atol=1e-12)
        assert np.all(np.diff(lam) <= 0)

    def test_sign_convention(self, rng):
        g = rng.standard_normal((6, 6))
        _, vectors = eigh_descending(g + g.T)
        pivots = np.argmax(np.abs(vectors), axis=0)
        assert np.all(vectors[pivots, np.arange(6)] > 0)


class TestRankAndPseudoInverse:

    def test_rank_deficient(self, make_problem):
        a, _ = make_problem(10, rank=4, seed=1)
        assert numerical_rank(a) == 4

    def test_penrose_conditions(self, make_problem):
        a, _ = make_problem(10, rank=6, seed=2)
        a_pinv = pseudo_inverse(a).entries
        m = a.entries
        assert_allclose(m @ a_pinv @ m, m, atol=1e-10)
        assert_allclose(a_pinv @ m @ a_pinv, a_pinv, atol=1e-8)

    def test_zero_matrix(self):
        assert_allclose(pseudo_inverse(np.zeros((3, 3))).entries, np.zeros((3, 3)))
        assert numerical_rank(np.zeros((3, 3))) == 0

    def test_range_projector(self):
        proj = range_projector(np.diag([3.0, 0.0, 1.0]))
        assert_allclose(proj, np.diag([1.0, 0.0, 1.0]), atol=1e-15)

    @pytest.mark.parametrize("tol", [0.0, 1.0, -0.5])
    def test_rank_tol_range(self, tol):
        with pytest.raises(DataError):
            numerical_rank(np.eye(2), rank_tol=tol)


class TestConditionNumber:

    def test_diagonal(self, diag421):
        a, _ = diag421
        assert condition_number_psd(a) == pytest.approx(4.0)

    def test_restricted_to_range(self):
        assert condition_number_psd(np.diag([4.0, 2.0, 0.0])) == pytest.approx(2.0)

    def test_zero_matrix(self):
        with pytest.raises(NumericalError, match="undefined condition number"):
            condition_number_psd(np.zeros((2, 2)))


class TestStandardizedConditionNumber:

    def test_scale_invariant(self, rng):
        x = rng.standard_normal((50, 4))
        scaled = x * np.array([1e3, 1.0, 1e-2, 7.0]) + 5.0
        assert standardized_condition_number(scaled) == pytest.approx(standardized_condition_number(x))

    def test_constant_column_dropped(self, rng):
        x = rng.standard_normal((30, 3))
        with_const = np.column_stack([x, np.full(30, 2.5)])
        assert standardized_condition_number(with_const) == pytest.approx(standardized_condition_number(x))

    def test_collinear_is_infinite(self, rng):
        x = rng.standard_normal((30, 2))
        x = np.column_stack([x, x[:, 0] + x[:, 1]])
        assert standardized_condition_number(x) == float('inf')

    def test_needs_two_rows(self):
        with pytest.raises(DataError):
            standardized_condition_number(np.ones((1, 3)))

    def test_all_constant(self):
        with pytest.raises(DataError):
            standardized_condition_number(np.ones((5, 3)))


class TestOrthonormalize:

    def test_dependent_column_dropped(self, rng):
        v = rng.standard_normal((6, 3))
        v = np.column_stack([v[:, 0], v[:, 1], v[:, 0] - 2.0 * v[:, 1], v[:, 2]])
        q = orthonormalize(v)
        assert q.shape == (6, 3)
        assert_allclose(q.T @ q, np.eye(3), atol=1e-14)
        # 张成空间不变
        assert_allclose(q @ q.T @ v, v, atol=1e-12)

    def test_all_zero(self):
        assert orthonormalize(np.zeros((4, 2))).shape == (4, 0)

    def test_check_orthonormal(self):
        with pytest.raises(DataError):
            check_orthonormal(np.ones((3, 2)))


class TestPrincipalAngles:

    def test_identical(self, rng):
        q = orthonormalize(rng.standard_normal((7, 3)))
        assert_allclose(principal_angles(q, q), np.zeros(3), atol=1e-7)

    def test_orthogonal_subspaces(self):
        for seed in range(100):
            u = ortho_group.rvs(8, random_state=seed)
            m = 1 + seed % 4
            angles = principal_angles(u[:, :m], u[:, m:2 * m])
            assert_allclose(angles, np.full(m, np.pi / 2), atol=1e-8)

    def test_known_angle(self):
        theta = 0.3
        b1 = np.array([[1.0], [0.0]])
        b2 = np.array([[np.cos(theta)], [np.sin(theta)]])
        assert_allclose(principal_angles(b1, b2), [theta], atol=1e-12)

    def test_rotation_invariant(self, rng):
        b1 = orthonormalize(rng.standard_normal((6, 2)))
        b2 = orthonormalize(rng.standard_normal((6, 2)))
        u = ortho_group.rvs(6, random_state=4)
        assert_allclose(principal_angles(u @ b1, u @ b2), principal_angles(b1, b2), atol=1e-10)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DataError):
            principal_angles(orthonormalize(rng.standard_normal((5, 2))),
                             orthonormalize(rng.standard_normal((5, 3))))


class TestRandomPsdMatrix:

    def test_rank_and_norm(self):
        a = random_psd_matrix(7, rank=3, seed=4)
        assert a.dim == 7
        assert numerical_rank(a) == 3
        assert a.op_norm == pytest.approx(1.0)

    def test_deterministic(self):
        assert_allclose(random_psd_matrix(5, seed=2).entries, random_psd_matrix(5, seed=2).entries, rtol=0, atol=0)

    def test_one_dimensional(self):
        assert_allclose(random_psd_matrix(1).entries, [[1.0]])

    @pytest.mark.parametrize("rank", [-1, 6])
    def test_invalid_rank(self, rank):
        with pytest.raises(DataError):
            random_psd_matrix(5, rank=rank)
