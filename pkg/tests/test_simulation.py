"""
潜因子模拟

已知值:
- σ₀ = 0 时总体 PLS (s = m) 精确恢复 β₀ = Pα₀, Krylov 空间等于 ℬ₀
- 同一种子重复生成逐位相同
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from plsaudit.errors import DataError
from plsaudit.estimators import fit_pls
from plsaudit.simulation import (
    PRESETS,
    ROW_COLUMNS,
    SimulationConfig,
    covariance_block_deviations,
    generate_dataset,
    krylov_oracle_distance,
    latent_oracle_gap,
    make_rotation,
    pcr_oracle_distance,
    preset_config,
    run_experiment,
    sigma0_profile,
    sigma_q_profile,
    sigma_yperp_profile,
    summarize_experiment,
)


@pytest.fixture
def small_cfg():
    return SimulationConfig(n=80, p=20, d=10, m=4, sigma0=0.1, sigma_yperp_max=1.0, reps=3, seed=11)


class TestSimulationConfig:

    def test_default_rank(self):
        assert SimulationConfig(n=10, p=8, d=5, m=2).rank_yperp == 3

    @pytest.mark.parametrize("params", [
        dict(n=10, p=8, d=5, m=6),
        dict(n=10, p=8, d=9, m=2),
        dict(n=0, p=8, d=5, m=2),
        dict(n=10, p=8, d=5, m=2, rank_yperp=4),
        dict(n=10, p=8, d=5, m=2, sigma0=-0.1),
        dict(n=10, p=8, d=5, m=2, reps=0),
        dict(n=10, p=8, d=5, m=2, seed=-1),
    ])
    def test_invalid(self, params):
        with pytest.raises(DataError):
            SimulationConfig(**params)

    def test_presets(self):
        assert set(PRESETS) == {'lowrank_n_gt_p', 'sparse_n_gt_p', 'fullrank_p_gt_n', 'lowrank_p_gt_n'}
        cfg = preset_config('fullrank_p_gt_n', reps=2)
        assert (cfg.n, cfg.p, cfg.d, cfg.m, cfg.rank_yperp) == (200, 1000, 100, 25, 900)
        assert cfg.reps == 2
        assert preset_config('sparse_n_gt_p').sparse

    def test_unknown_preset(self):
        with pytest.raises(DataError):
            preset_config('nope')


class TestProfiles:

    def test_sigma_q(self):
        assert_allclose(sigma_q_profile(5), [5.0, 4.0, 3.0, 2.0, 1.0])
        assert_allclose(sigma_q_profile(1), [5.0])

    def test_sigma0(self):
        s0 = sigma0_profile(0.1, 5)
        assert s0[0] == pytest.approx(0.1)
        assert s0[-1] == pytest.approx(1e-3)
        assert np.all(np.diff(s0) < 0)
        assert_allclose(sigma0_profile(0.0, 4), 0.0)

    def test_sigma0_below_floor_stays_largest(self):
        s0 = sigma0_profile(1e-4, 6)
        assert s0.max() == pytest.approx(1e-4)
        assert_allclose(s0, 1e-4)

    def test_sigma_yperp(self):
        syp = sigma_yperp_profile(1.0, 3, 5)
        assert_allclose(syp[:3], [1.0, 0.1, 0.01])
        assert_allclose(syp[3:], 0.0)

    def test_rotation(self):
        u = make_rotation(6, sparse=False, seed=3)
        assert_allclose(u.T @ u, np.eye(6), atol=1e-12)
        assert_allclose(make_rotation(4, sparse=True, seed=3), np.eye(4))


class TestGenerateDataset:

    def test_shapes(self, small_cfg):
        model = generate_dataset(small_cfg, 0)
        assert model.X.shape == (80, 20)
        assert model.y.shape == (80,)
        assert model.Q.shape == (80, 4)
        assert_allclose(model.beta0, model.P @ np.arange(1.0, 5.0))
        assert model.snr == pytest.approx(100.0)

    def test_deterministic(self, small_cfg):
        first = generate_dataset(small_cfg, 2)
        second = generate_dataset(small_cfg, 2)
        assert_allclose(first.X, second.X, rtol=0, atol=0)
        assert_allclose(first.y, second.y, rtol=0, atol=0)
        assert not np.array_equal(first.X, generate_dataset(small_cfg, 1).X)

    def test_rotation_shared_across_reps(self, small_cfg):
        assert_allclose(generate_dataset(small_cfg, 0).U, generate_dataset(small_cfg, 1).U, rtol=0, atol=0)

    def test_noise_rotation(self):
        cfg = SimulationConfig(n=30, p=8, d=5, m=2, sigma0=0.5, noise_rotation=True)
        model = generate_dataset(cfg, 0)
        w = model.residual_rotation
        assert_allclose(w.T @ w, np.eye(5), atol=1e-12)
        assert_allclose(model.residual_covariance(), w @ np.diag(model.sigma_0_diag ** 2) @ w.T)

    def test_block_deviations(self, small_cfg):
        blocks = covariance_block_deviations(generate_dataset(small_cfg, 0))
        assert set(blocks) == {'latent_factors', 'latent_residuals', 'cross', 'irrelevant', 'cross_covariance'}
        for block in blocks.values():
            assert block['deviation'] >= 0.0
            assert block['reference_scale'] > 0.0

    def test_latent_oracle_gap(self, small_cfg):
        model = generate_dataset(small_cfg, 0)
        alpha_ls = np.linalg.lstsq(model.Q, model.y, rcond=None)[0]
        assert latent_oracle_gap(model, model.P @ alpha_ls) == pytest.approx(0.0, abs=1e-12)


class TestPopulationOracle:

    def test_noiseless_recovery(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            d = int(rng.integers(3, 9))
            m = int(rng.integers(1, d + 1))
            p = d + int(rng.integers(0, 10))
            cfg = SimulationConfig(
                n=10, p=p, d=d, m=m, sigma0=0.0,
                sigma_yperp_max=float(rng.uniform(0.0, 10.0)),
                sparse=bool(seed % 2), seed=seed,
            )
            model = generate_dataset(cfg, 0)
            fit = fit_pls(model.population_cov, m)
            rel = np.linalg.norm(fit.beta - model.beta0) / np.linalg.norm(model.beta0)
            assert rel <= 1e-8
            assert krylov_oracle_distance(model.population_cov, model) <= 1e-8

    def test_pcr_distance_needs_m(self, small_cfg):
        model = generate_dataset(small_cfg, 0)
        assert np.isnan(pcr_oracle_distance(model.population_cov, model, 2))
        assert 0.0 <= pcr_oracle_distance(model.population_cov, model) <= np.pi / 2


class TestRunExperiment:

    def test_rows_and_summary(self, small_cfg):
        result = run_experiment(small_cfg, ('pls', 'pcr', 'lasso'))
        assert list(result.rows.columns) == list(ROW_COLUMNS)
        assert len(result.rows) == 9
        assert (result.rows['status'] == 'ok').all()
        assert list(result.summary['method']) == ['lasso', 'pcr', 'pls']
        assert {'n_ok', 'n_failed', 'rel_estimation_error_median', 'kappa_reduced_q75'} <= set(result.summary.columns)
        assert (result.summary['n_ok'] == 3).all()

    def test_lasso_fails_in_population_mode(self, small_cfg):
        cfg = SimulationConfig(**{**small_cfg.to_dict(), 'population': True, 'reps': 1})
        rows = run_experiment(cfg, ('pls', 'lasso')).rows
        status = dict(zip(rows['method'], rows['status']))
        assert status == {'pls': 'ok', 'lasso': 'failed'}

    def test_parallel_matches_sequential(self, small_cfg):
        seq = run_experiment(small_cfg, ('pls', 'pcr'), max_workers=1).rows
        par = run_experiment(small_cfg, ('pls', 'pcr'), max_workers=2).rows
        assert seq.equals(par)

    def test_unknown_method(self, small_cfg):
        with pytest.raises(DataError):
            run_experiment(small_cfg, ('pls', 'svm'))

    def test_summary_counts_failures(self, small_cfg):
        rows = run_experiment(small_cfg, ('pls',)).rows
        rows.loc[0, 'status'] = 'failed'
        summary = summarize_experiment(rows)
        assert summary.loc[0, 'n_failed'] == 1
        assert summary.loc[0, 'n_ok'] == 2
