"""
扰动实验室

已知值:
- 单位阵: κ₂ = 1, 最小二乘界为 5ε
- ε = 0 时观测变化为 0
- 可接受 ε 下审计满足率 >= 99%
"""
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from plsaudit.errors import DataError
from plsaudit.krylov_engine import estimate_kappa_b
from plsaudit.linalg_core import PsdMatrix, condition_number_psd, numerical_rank, random_psd_matrix
from plsaudit.perturbation_lab import (
    PreserveFlags,
    audit_cgne_stop,
    audit_krylov_basis_bound,
    audit_ls_bound,
    audit_pls_bound,
    audit_population_bias,
    cgne_stop,
    cgne_stopping_index,
    draw_perturbation,
    latent_kappa_b,
    perturb_problem,
    ratio_curve,
    sigma0_admissible_bound,
)
from plsaudit.simulation import SimulationConfig, generate_dataset
from plsaudit.workers import make_rng


def _satisfaction(reports):
    judged = [r for r in reports if r.satisfied is not None]
    assert judged, "没有可判定的试验"
    return sum(r.satisfied for r in judged) / len(judged)


@pytest.fixture(scope='module')
def diag421_kappa():
    a = PsdMatrix(np.diag([4.0, 2.0, 1.0]))
    b = np.ones(3)
    return {m: estimate_kappa_b(a, b, m, trials=32, seed=0) for m in (2, 3)}


class TestDrawPerturbation:

    def test_exact_scale(self, make_problem):
        a, b = make_problem(6, seed=3)
        pp = draw_perturbation(a, b, 0.01, make_rng(0, 5, 0))
        assert np.linalg.norm(pp.a_tilde.entries - a.entries, 2) == pytest.approx(0.01 * a.op_norm, rel=1e-8)
        assert np.linalg.norm(pp.b_tilde - b) == pytest.approx(0.01 * np.linalg.norm(b), rel=1e-10)
        assert np.all(np.linalg.eigvalsh(pp.a_tilde.entries) >= -1e-12)

    def test_preserve_rank(self, make_problem):
        a, b = make_problem(4, rank=2, seed=8)
        pp = draw_perturbation(a, b, 0.05, make_rng(1, 5, 0), PreserveFlags(rank=True, range=True))
        assert numerical_rank(pp.a_tilde) == 2
        assert pp.range_feasible

    def test_zero_epsilon(self, diag421):
        a, b = diag421
        a_tilde, b_tilde = perturb_problem(a, b, 0.0, seed=0)
        assert_allclose(a_tilde.entries, a.entries, rtol=0, atol=0)
        assert_allclose(b_tilde, b, rtol=0, atol=0)

    def test_negative_epsilon(self, diag421):
        with pytest.raises(DataError):
            perturb_problem(*diag421, -0.1, seed=0)

    def test_seeded(self, diag421):
        first = perturb_problem(*diag421, 0.02, seed=7, trial=3)
        second = perturb_problem(*diag421, 0.02, seed=7, trial=3)
        assert_allclose(first[0].entries, second[0].entries, rtol=0, atol=0)
        assert_allclose(first[1], second[1], rtol=0, atol=0)


class TestLsAudit:

    def test_identity(self):
        reports = audit_ls_bound(np.eye(3), np.ones(3), 0.1, trials=50, seed=0)
        assert all(r.admissible for r in reports)
        assert all(r.bound == pytest.approx(0.5) for r in reports)
        assert _satisfaction(reports) == 1.0

    def test_admissible_range(self, diag421):
        reports = audit_ls_bound(*diag421, 0.05, trials=200, seed=1)
        assert _satisfaction(reports) >= 0.99

    def test_zero_epsilon(self, diag421):
        reports = audit_ls_bound(*diag421, 0.0, trials=3, seed=0)
        assert all(r.observed == 0.0 for r in reports)
        assert all(r.to_row()['verdict'] == 'satisfied' for r in reports)

    def test_inadmissible(self, diag421):
        reports = audit_ls_bound(*diag421, 0.5, trials=5, seed=0)
        assert all(not r.admissible for r in reports)
        assert all(r.to_row()['verdict'] == '' for r in reports)
        assert all(np.isfinite(r.observed) for r in reports)

    def test_to_row(self, diag421):
        row = audit_ls_bound(*diag421, 0.01, trials=1, seed=0)[0].to_row()
        assert list(row) == ['theorem', 'quantity', 'trial', 'epsilon', 'admissible',
                             'observed', 'observed_ratio', 'bound', 'verdict']
        assert row['theorem'] == 'ls_pert'
        assert row['observed_ratio'] == pytest.approx(row['observed'] / 0.01)

    def test_parallel_matches_sequential(self, diag421):
        seq = audit_ls_bound(*diag421, 0.05, trials=6, seed=2, max_workers=1)
        par = audit_ls_bound(*diag421, 0.05, trials=6, seed=2, max_workers=2)
        assert [r.observed for r in seq] == [r.observed for r in par]


class TestPlsAudit:

    def test_admissible_range(self, diag421, diag421_kappa):
        kappa_b = diag421_kappa[3]
        first = audit_pls_bound(*diag421, 3, 1e-6, trials=1, seed=0, kappa_b=kappa_b)[0]
        epsilon = 0.5 * first.details['threshold']
        reports = audit_pls_bound(*diag421, 3, epsilon, trials=200, seed=3, kappa_b=kappa_b)
        assert _satisfaction(reports) >= 0.99
        assert all(r.details['kappa_b'] == kappa_b.value for r in reports)

    def test_zero_epsilon(self, diag421, diag421_kappa):
        reports = audit_pls_bound(*diag421, 2, 0.0, trials=2, seed=0, kappa_b=diag421_kappa[2])
        assert all(r.observed == 0.0 for r in reports)

    def test_inadmissible(self, diag421, diag421_kappa):
        reports = audit_pls_bound(*diag421, 2, 0.3, trials=4, seed=0, kappa_b=diag421_kappa[2])
        assert all(r.satisfied is None for r in reports)

    def test_m_above_dimension(self):
        with pytest.raises(DataError):
            audit_pls_bound(np.diag([2.0, 2.0, 1.0]), np.ones(3), 3, 1e-4, trials=2, seed=0)


class TestKrylovAudit:

    def test_three_quantities(self, diag421, diag421_kappa):
        kappa_b = diag421_kappa[2]
        first = audit_krylov_basis_bound(*diag421, 2, 1e-6, trials=1, seed=0, kappa_b=kappa_b)
        assert [r.quantity for r in first] == ['basis', 'projected_vector', 'projected_matrix']
        epsilon = 0.5 * first[0].details['threshold']
        reports = audit_krylov_basis_bound(*diag421, 2, epsilon, trials=150, seed=4, kappa_b=kappa_b)
        assert len(reports) == 450
        assert _satisfaction(reports) >= 0.99

    def test_zero_epsilon(self, diag421, diag421_kappa):
        reports = audit_krylov_basis_bound(*diag421, 2, 0.0, trials=1, seed=0, kappa_b=diag421_kappa[2])
        assert all(r.observed == pytest.approx(0.0, abs=1e-14) for r in reports)


ACCEPTANCE_TRIALS = 520


@pytest.fixture(scope='module', params=['diag421', 'diag400', 'random8'])
def audit_problem(request):
    """(A, b, m, κ_b): diag(4,2,1), diag(400,1,0.5) 与 8 维随机半正定谱"""
    if request.param == 'diag421':
        a, b, m = PsdMatrix(np.diag([4.0, 2.0, 1.0])), np.ones(3), 3
    elif request.param == 'diag400':
        a, b, m = PsdMatrix(np.diag([400.0, 1.0, 0.5])), np.ones(3), 2
    else:
        a = random_psd_matrix(8, seed=11)
        b, m = a.entries @ np.random.default_rng(12).standard_normal(8), 3
    return a, b, m, estimate_kappa_b(a, b, m, seed=0)


@pytest.mark.slow
class TestAuditAcceptance:

    def test_ls(self, audit_problem):
        a, b, _, _ = audit_problem
        epsilon = 0.5 / (2.0 * condition_number_psd(a))
        reports = audit_ls_bound(a, b, epsilon, trials=ACCEPTANCE_TRIALS, seed=21)
        assert sum(r.admissible for r in reports) >= 500
        assert all(r.satisfied for r in reports if r.admissible)

    def test_pls(self, audit_problem):
        a, b, m, kappa_b = audit_problem
        threshold = audit_pls_bound(a, b, m, 0.0, trials=1, seed=0, kappa_b=kappa_b)[0].details['threshold']
        reports = audit_pls_bound(a, b, m, 0.5 * threshold, trials=ACCEPTANCE_TRIALS, seed=22, kappa_b=kappa_b)
        assert sum(r.admissible for r in reports) >= 500
        assert _satisfaction(reports) >= 0.99

    def test_krylov_basis(self, audit_problem):
        a, b, m, kappa_b = audit_problem
        threshold = audit_krylov_basis_bound(a, b, m, 0.0, trials=1, seed=0, kappa_b=kappa_b)[0].details['threshold']
        reports = audit_krylov_basis_bound(a, b, m, 0.5 * threshold, trials=ACCEPTANCE_TRIALS, seed=23,
                                           kappa_b=kappa_b)
        by_quantity = {q: [r for r in reports if r.quantity == q]
                       for q in ('basis', 'projected_vector', 'projected_matrix')}
        assert sum(r.admissible for r in by_quantity['basis']) >= 500
        for quantity, rows in by_quantity.items():
            assert _satisfaction(rows) >= 0.99, quantity
        assert all(r.satisfied for r in by_quantity['projected_vector'] if r.admissible)


class TestCgneStop:

    def test_large_threshold_stops_at_one(self, diag421):
        a, b = diag421
        index = cgne_stopping_index(a, b, 0.0, 0.0, float(np.linalg.norm(b)), 0.0)
        assert isinstance(index, int)
        assert index == 1
        assert cgne_stop(a, b, 0.0, 0.0, float(np.linalg.norm(b)), 0.0).reached

    def test_small_threshold(self):
        a = np.diag([2.0, 1.0])
        b = np.array([2.0, 1.0])
        assert cgne_stopping_index(a, b, 0.0, 0.0, 1e-6, 0.0) == 2
        stop = cgne_stop(a, b, 0.0, 0.0, 1e-6, 0.0)
        assert stop.index == 2
        assert stop.reached
        assert_allclose(stop.beta, [1.0, 1.0], atol=1e-12)

    def test_unreached_returns_cap(self):
        # b 有 range(A) 之外的分量, 残差无法低于 1
        a = np.diag([1.0, 0.0])
        b = np.array([1.0, 1.0])
        stop = cgne_stop(a, b, 0.0, 0.0, 0.0, 0.0)
        assert not stop.reached
        assert stop.residual == pytest.approx(1.0)
        assert cgne_stopping_index(a, b, 0.0, 0.0, 0.0, 0.0) == stop.index == 2

    def test_negative_parameters(self, diag421):
        with pytest.raises(DataError):
            cgne_stopping_index(*diag421, -1.0, 1.0, 1.0, 1.0)

    def test_descriptive_audit(self, diag421):
        reports = audit_cgne_stop(*diag421, 0.01, trials=10, seed=0)
        assert all(r.satisfied is None and r.admissible for r in reports)
        assert all(r.to_row()['verdict'] == '' for r in reports)
        assert all(1 <= r.details['stop_index'] <= 3 for r in reports)
        assert all(np.isfinite(r.details['empirical_constant']) for r in reports)


class TestRatioCurve:

    def test_columns(self, diag421):
        curve = ratio_curve(*diag421, 2, [1e-2, 1e-3, 1e-4], trials=8, seed=0)
        assert isinstance(curve, pd.DataFrame)
        assert list(curve.columns) == ['epsilon', 'max_ratio', 'median_ratio', 'admissible']
        assert list(curve['epsilon']) == [1e-2, 1e-3, 1e-4]
        assert (curve['admissible'] <= 8).all()
        assert (curve['median_ratio'] <= curve['max_ratio']).all()

    def test_invalid_grid(self, diag421):
        with pytest.raises(DataError):
            ratio_curve(*diag421, 2, [1e-2, 0.0], trials=2, seed=0)


class TestPopulationBias:

    @staticmethod
    def _model(sigma0):
        cfg = SimulationConfig(n=40, p=10, d=5, m=3, sigma0=sigma0, sigma_yperp_max=2.0, reps=1, seed=1)
        return generate_dataset(cfg, 0)

    def test_noiseless(self):
        report = audit_population_bias(self._model(0.0), trials=16)
        assert report.admissible
        assert report.observed < 1e-8
        assert report.details['krylov_distance'] < 1e-8
        assert report.satisfied
        assert report.details['distance_satisfied']

    def test_inside_boundary(self):
        kappa_b = latent_kappa_b(self._model(0.1), trials=16)
        sigma0 = 0.5 * sigma0_admissible_bound(self._model(0.1), kappa_b)
        report = audit_population_bias(self._model(sigma0), kappa_b=kappa_b)
        assert report.quantity == 'bias'
        assert report.admissible
        assert report.satisfied
        assert report.details['distance_satisfied']
        assert report.observed <= report.bound

    def test_fifty_admissible_configurations(self):
        # 潜空间 κ_b 只依赖 m
        kappa_by_m = {}
        for seed in range(50):
            m = 2 + seed % 3
            d = m + 2 + seed % 4
            cfg = SimulationConfig(n=30, p=d + 3 + seed % 5, d=d, m=m, sigma0=0.1,
                                   sigma_yperp_max=(0.1, 1.0, 10.0)[seed % 3],
                                   noise_rotation=seed % 2 == 1, reps=1, seed=seed)
            model = generate_dataset(cfg, 0)
            if m not in kappa_by_m:
                kappa_by_m[m] = latent_kappa_b(model, trials=32)
            kappa_b = kappa_by_m[m]
            sigma0 = 0.5 * sigma0_admissible_bound(model, kappa_b)
            report = audit_population_bias(generate_dataset(replace(cfg, sigma0=sigma0), 0), kappa_b=kappa_b)
            assert report.admissible, f"seed={seed}"
            assert report.satisfied, f"seed={seed}: {report.observed:.3e} > {report.bound:.3e}"
            assert report.details['distance_satisfied'], f"seed={seed}"

    def test_above_boundary(self):
        model = self._model(0.1)
        kappa_b = estimate_kappa_b(model.sigma_q, model.sigma_qy, 3, trials=16)
        boundary = sigma0_admissible_bound(model, kappa_b)
        model = self._model(2.0 * boundary)
        report = audit_population_bias(model, kappa_b=kappa_b)
        assert not report.admissible
        assert report.satisfied is None
        assert np.isfinite(report.observed)
