"""
潜因子模拟

按潜因子线性模型生成数据集, 组装精确的总体协方差, 并运行多方法的蒙特卡洛对比实验。
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import ortho_group

from config import Config
from plsaudit.errors import DataError, PlsAuditError
from plsaudit.estimators import METHODS, CovariancePair, evaluate, fit_method, sample_covariances
from plsaudit.krylov_engine import build_krylov, subspace_distance
from plsaudit.linalg_core import PsdMatrix
from plsaudit.workers import STREAM_DATASET, STREAM_NOISE_ROTATION, STREAM_ROTATION, make_rng, run_tasks

logger = logging.getLogger(__name__)

SUMMARY_METRICS = ('rel_approx_error', 'rel_estimation_error', 'kappa_reduced', 'subspace_distance')
ROW_COLUMNS = (
    'rep', 'method', 'dof', 'rel_approx_error', 'rel_estimation_error',
    'kappa_reduced', 'subspace_distance', 'status', 'error',
)


@dataclass(frozen=True)
class SimulationConfig:
    """
    模拟配置

    Attributes:
        n: 样本量
        p: 特征数
        d: 相关特征数
        m: 潜因子数
        sigma0: 最大残差标准差 (σ₀)_1
        sigma_yperp_max: 无关特征最大标准差
        rank_yperp: 无关特征块的秩, 默认 p − d
        sparse: True 时 U = I_p
        seed: 主种子
        reps: 重复次数
        noise_rotation: 旋转相关空间内的残差协方差
        population: 使用总体协方差拟合
    """

    n: int
    p: int
    d: int
    m: int
    sigma0: float = 0.1
    sigma_yperp_max: float = 0.1
    rank_yperp: Optional[int] = None
    sparse: bool = False
    seed: int = 0
    reps: int = Config.DEFAULT_REPS
    noise_rotation: bool = False
    population: bool = False

    def __post_init__(self):
        if self.rank_yperp is None:
            object.__setattr__(self, 'rank_yperp', self.p - self.d)
        if self.n < 1:
            raise DataError(f"n 必须 >= 1, 实际为 {self.n}")
        if not 1 <= self.m <= self.d <= self.p:
            raise DataError(f"要求 1 <= m <= d <= p, 实际 m={self.m}, d={self.d}, p={self.p}")
        if not 0 <= self.rank_yperp <= self.p - self.d:
            raise DataError(f"rank_yperp 必须位于 [0, {self.p - self.d}], 实际为 {self.rank_yperp}")
        if self.sigma0 < 0 or self.sigma_yperp_max < 0:
            raise DataError("标准差参数必须非负")
        if self.reps < 1:
            raise DataError(f"重复次数必须 >= 1, 实际为 {self.reps}")
        if self.seed < 0:
            raise DataError(f"种子必须非负, 实际为 {self.seed}")

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS: Dict[str, dict] = {
    'lowrank_n_gt_p': dict(n=1000, p=200, d=100, m=25, sigma0=0.1, sigma_yperp_max=1.0, rank_yperp=100),
    'sparse_n_gt_p': dict(n=1000, p=200, d=100, m=25, sigma0=0.1, sigma_yperp_max=1.0, rank_yperp=100, sparse=True),
    'fullrank_p_gt_n': dict(n=200, p=1000, d=100, m=25, sigma0=0.1, sigma_yperp_max=1.0, rank_yperp=900),
    'lowrank_p_gt_n': dict(n=200, p=1000, d=100, m=25, sigma0=0.1, sigma_yperp_max=1.0, rank_yperp=100),
}


def preset_config(name: str, **overrides) -> SimulationConfig:
    """按名称构造已发表实验的配置, overrides 覆盖任意字段"""
    if name not in PRESETS:
        raise DataError(f"未知预设: {name}, 可选 {', '.join(PRESETS)}")
    params = dict(PRESETS[name])
    params.update(overrides)
    return SimulationConfig(**params)


def sigma_q_profile(m: int) -> np.ndarray:
    """潜因子标准差, 从 5 线性递减到 1"""
    return np.linspace(5.0, 1.0, m) if m > 1 else np.array([5.0])


def sigma0_profile(sigma0: float, d: int) -> np.ndarray:
    """残差标准差, 从 σ₀ 几何递减到 min(σ₀, 1e-3); σ₀ = 0 时全为 0"""
    if sigma0 == 0.0:
        return np.zeros(d)
    return np.geomspace(sigma0, min(sigma0, 1e-3), d) if d > 1 else np.array([sigma0])


def sigma_yperp_profile(top: float, rank: int, size: int) -> np.ndarray:
    """无关特征标准差: 前 rank 个从 top 几何递减到 top/100, 其余为 0"""
    out = np.zeros(size)
    if rank > 0 and top > 0.0:
        out[:rank] = np.geomspace(top, top / 100.0, rank) if rank > 1 else top
    return out


def _haar(dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        return np.ones((1, 1))
    u = ortho_group.rvs(dim=dim, random_state=rng)
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(dim)])
    return u * signs


def make_rotation(p: int, sparse: bool, seed: int) -> np.ndarray:
    """
    特征旋转 U

    Args:
        p: 维度
        sparse: True 时返回单位阵
        seed: 随机种子

    Returns:
        p×p 正交矩阵
    """
    if p < 1:
        raise DataError(f"p 必须 >= 1, 实际为 {p}")
    if sparse:
        return np.eye(p)
    return _haar(p, make_rng(seed, STREAM_ROTATION, 0))


def noise_rotation_matrix(cfg: SimulationConfig) -> Optional[np.ndarray]:
    if not cfg.noise_rotation:
        return None
    return _haar(cfg.d, make_rng(cfg.seed, STREAM_NOISE_ROTATION, 0))


@dataclass(frozen=True, eq=False)
class GeneratedModel:
    """一次重复生成的全部潜变量结构与样本"""

    config: SimulationConfig
    rep_index: int
    U: np.ndarray
    P_y: np.ndarray
    P0: np.ndarray
    P: np.ndarray
    R_y: np.ndarray
    P_yperp: np.ndarray
    alpha0: np.ndarray
    beta0: np.ndarray
    sigma_q_diag: np.ndarray
    sigma_0_diag: np.ndarray
    sigma_yperp_diag: np.ndarray
    X: np.ndarray
    y: np.ndarray
    Q: np.ndarray
    population_cov: CovariancePair
    residual_rotation: Optional[np.ndarray] = None

    @property
    def snr(self) -> float:
        """(σ_q)_m² / σ₀²"""
        if self.config.sigma0 == 0.0:
            return float('inf')
        return float(self.sigma_q_diag[-1] ** 2 / self.config.sigma0 ** 2)

    @property
    def sigma_q(self) -> np.ndarray:
        """潜因子协方差 Σ_q"""
        return np.diag(self.sigma_q_diag ** 2)

    @property
    def sigma_qy(self) -> np.ndarray:
        """Σ_qy = Σ_q α₀"""
        return self.sigma_q_diag ** 2 * self.alpha0

    def residual_covariance(self) -> np.ndarray:
        """相关空间内的残差协方差 Σ_e (d×d)"""
        cov = np.diag(self.sigma_0_diag ** 2)
        if self.residual_rotation is not None:
            w = self.residual_rotation
            cov = w @ cov @ w.T
        return cov


def population_covariances(cfg: SimulationConfig, u: np.ndarray, w: Optional[np.ndarray]) -> CovariancePair:
    """
    精确总体协方差

    Σ_x = U·blockdiag(diag(σ_q², 0) + Σ_e, diag(σ_{y⊥}²))·Uᵀ, Σ_xy = P Σ_q α₀
    """
    sq = sigma_q_profile(cfg.m)
    s0 = sigma0_profile(cfg.sigma0, cfg.d)
    syp = sigma_yperp_profile(cfg.sigma_yperp_max, cfg.rank_yperp, cfg.p - cfg.d)

    relevant = np.diag(s0 ** 2)
    if w is not None:
        relevant = w @ relevant @ w.T
    relevant[:cfg.m, :cfg.m] += np.diag(sq ** 2)

    inner = np.zeros((cfg.p, cfg.p))
    inner[:cfg.d, :cfg.d] = relevant
    inner[cfg.d:, cfg.d:] = np.diag(syp ** 2)
    alpha0 = np.arange(1.0, cfg.m + 1.0)
    return CovariancePair(
        sigma_x=PsdMatrix(u @ inner @ u.T),
        sigma_xy=u[:, :cfg.m] @ (sq ** 2 * alpha0),
    )


def generate_dataset(cfg: SimulationConfig, rep_index: int) -> GeneratedModel:
    """
    生成一次重复的数据集

    Args:
        cfg: 模拟配置
        rep_index: 重复序号

    Returns:
        GeneratedModel
    """
    if rep_index < 0:
        raise DataError(f"重复序号必须非负, 实际为 {rep_index}")
    n, p, d, m = cfg.n, cfg.p, cfg.d, cfg.m
    u = make_rotation(p, cfg.sparse, cfg.seed)
    w = noise_rotation_matrix(cfg)
    sq = sigma_q_profile(m)
    s0 = sigma0_profile(cfg.sigma0, d)
    syp = sigma_yperp_profile(cfg.sigma_yperp_max, cfg.rank_yperp, p - d)
    alpha0 = np.arange(1.0, m + 1.0)

    rng = make_rng(cfg.seed, STREAM_DATASET, rep_index)
    q = rng.standard_normal((n, m)) * sq
    e = rng.standard_normal((n, d)) * s0
    if w is not None:
        e = e @ w.T
    q_y = e.copy()
    q_y[:, :m] += q
    q_yperp = rng.standard_normal((n, p - d)) * syp
    x = np.hstack([q_y, q_yperp]) @ u.T
    y = q @ alpha0 + rng.standard_normal(n)

    p0 = np.eye(d, m)
    return GeneratedModel(
        config=cfg,
        rep_index=rep_index,
        U=u,
        P_y=u[:, :d],
        P0=p0,
        P=u[:, :m],
        R_y=u[:, m:d],
        P_yperp=u[:, d:],
        alpha0=alpha0,
        beta0=u[:, :m] @ alpha0,
        sigma_q_diag=sq,
        sigma_0_diag=s0,
        sigma_yperp_diag=syp,
        X=x,
        y=y,
        Q=q,
        population_cov=population_covariances(cfg, u, w),
        residual_rotation=w,
    )


def _op_deviation(sample: np.ndarray, population: np.ndarray) -> float:
    if sample.size == 0:
        return 0.0
    diff = sample - population
    return float(np.linalg.norm(diff, 2) if diff.ndim == 2 else np.linalg.norm(diff))


def covariance_block_deviations(model: GeneratedModel) -> Dict[str, Dict[str, float]]:
    """
    各样本协方差块与总体值的算子范数偏差, 附参考尺度 √(dim/n)

    Returns:
        {块名: {'deviation': ..., 'reference_scale': ...}}
    """
    cfg = model.config
    n, m, d = cfg.n, cfg.m, cfg.d
    z = model.X @ model.U
    e = z[:, :d].copy()
    e[:, :m] -= model.Q
    q_yperp = z[:, d:]
    sample_cov = sample_covariances(model.X, model.y)

    blocks = {
        'latent_factors': (model.Q.T @ model.Q / n, model.sigma_q, m),
        'latent_residuals': (e.T @ e / n, model.residual_covariance(), d),
        'cross': (model.Q.T @ e / n, np.zeros((m, d)), d),
        'irrelevant': (q_yperp.T @ q_yperp / n, np.diag(model.sigma_yperp_diag ** 2), cfg.p - d),
        'cross_covariance': (sample_cov.sigma_xy, model.population_cov.sigma_xy, cfg.p),
    }
    return {
        name: {
            'deviation': _op_deviation(sample, population),
            'reference_scale': float(np.sqrt(dim / n)),
        }
        for name, (sample, population, dim) in blocks.items()
    }


def krylov_oracle_distance(cov: CovariancePair, model: GeneratedModel, s: Optional[int] = None) -> float:
    """
    d(𝒦_s(Σ_x, Σ_xy), ℬ₀), ℬ₀ = span(P)

    Krylov 有效维度与 m 不同时返回 nan。
    """
    s = model.config.m if s is None else s
    kb = build_krylov(cov.sigma_x, cov.sigma_xy, min(s, cov.p))
    if kb.effective_dim != model.P.shape[1]:
        return float('nan')
    return subspace_distance(kb.basis, model.P)


def pcr_oracle_distance(cov: CovariancePair, model: GeneratedModel, s: Optional[int] = None) -> float:
    """前 s 个主成分张成的空间到 ℬ₀ 的距离, s ≠ m 时返回 nan"""
    s = model.config.m if s is None else s
    if s != model.P.shape[1]:
        return float('nan')
    return subspace_distance(cov.sigma_x.eigen.top(s), model.P)


def latent_oracle_gap(model: GeneratedModel, beta) -> float:
    """‖β̂ − P·α̂_ls‖ / ‖β₀‖, α̂_ls 为潜样本 Q 上的最小二乘"""
    alpha_ls = np.linalg.lstsq(model.Q, model.y, rcond=None)[0]
    gap = np.asarray(beta, dtype=float) - model.P @ alpha_ls
    return float(np.linalg.norm(gap) / np.linalg.norm(model.beta0))


def _search_space_distance(method: str, cov: CovariancePair, model: GeneratedModel, dof: int) -> float:
    if method == 'pls':
        return krylov_oracle_distance(cov, model, dof)
    if method == 'pcr':
        return pcr_oracle_distance(cov, model, dof)
    return float('nan')


def _run_repetition(task) -> List[dict]:
    cfg, methods, dof, rep = task
    model = generate_dataset(cfg, rep)
    cov = model.population_cov if cfg.population else sample_covariances(model.X, model.y)

    rows = []
    for method in methods:
        row = {'rep': rep, 'method': method, 'dof': float('nan'),
               'rel_approx_error': float('nan'), 'rel_estimation_error': float('nan'),
               'kappa_reduced': float('nan'), 'subspace_distance': float('nan'),
               'status': 'ok', 'error': ''}
        try:
            if cfg.population and method == 'lasso':
                raise DataError("总体协方差模式不支持 LASSO")
            report = fit_method(method, cov, dof, model.X, model.y)
            report = evaluate(report, model.X, model.y, model.beta0, split='train')
            row.update(
                dof=float(report.dof),
                rel_approx_error=report.metrics['rel_approx_error'],
                rel_estimation_error=report.metrics['rel_estimation_error'],
                kappa_reduced=report.kappa_reduced,
                subspace_distance=_search_space_distance(method, cov, model, dof),
            )
        except PlsAuditError as e:
            row.update(status='failed', error=str(e))
        rows.append(row)
    return rows


@dataclass(frozen=True)
class ExperimentResult:
    """逐次重复结果与按方法汇总"""

    rows: pd.DataFrame
    summary: pd.DataFrame
    config: SimulationConfig


def summarize_experiment(rows: pd.DataFrame) -> pd.DataFrame:
    """
    按方法汇总: 成功 / 失败次数以及各指标的中位数和四分位数

    Args:
        rows: 逐次重复结果

    Returns:
        每个方法一行的 DataFrame
    """
    counts = rows.groupby('method', sort=True)['status'].agg(
        n_ok=lambda s: int((s == 'ok').sum()),
        n_failed=lambda s: int((s != 'ok').sum()),
    )
    ok = rows[rows['status'] == 'ok']
    metrics = [c for c in SUMMARY_METRICS if c in rows.columns]
    grouped = ok.groupby('method', sort=True)[metrics]
    parts = [
        grouped.quantile(0.25).add_suffix('_q25'),
        grouped.median().add_suffix('_median'),
        grouped.quantile(0.75).add_suffix('_q75'),
    ]
    summary = counts.join(parts)
    return summary.reset_index()


def run_experiment(cfg: SimulationConfig, methods: Sequence[str] = ('pls', 'pcr', 'lasso'),
                   dof: Optional[int] = None, max_workers: Optional[int] = None) -> ExperimentResult:
    """
    蒙特卡洛对比实验

    Args:
        cfg: 模拟配置
        methods: 方法集合 (ls | pls | pcr | ridge | lasso)
        dof: 自由度, 默认 cfg.m
        max_workers: 进程数

    Returns:
        ExperimentResult
    """
    methods = tuple(methods)
    unknown = [mth for mth in methods if mth not in METHODS]
    if not methods or unknown:
        raise DataError(f"方法必须是 {', '.join(METHODS)} 的非空子集, 未知: {unknown}")
    dof = cfg.m if dof is None else int(dof)
    if dof < 1:
        raise DataError(f"自由度必须 >= 1, 实际为 {dof}")

    logger.info(f"开始模拟: n={cfg.n}, p={cfg.p}, d={cfg.d}, m={cfg.m}, 重复 {cfg.reps} 次, 方法 {methods}")
    tasks = [(cfg, methods, dof, rep) for rep in range(cfg.reps)]
    chunks = run_tasks(_run_repetition, tasks, max_workers)
    rows = pd.DataFrame([row for chunk in chunks for row in chunk], columns=list(ROW_COLUMNS))

    failed = int((rows['status'] != 'ok').sum())
    if failed:
        logger.warning(f"{failed} 个 (重复, 方法) 组合拟合失败, 已记录在结果中")
    logger.info("模拟完成")
    return ExperimentResult(rows=rows, summary=summarize_experiment(rows), config=cfg)
