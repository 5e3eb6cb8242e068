"""
回归估计量

从样本或总体协方差拟合 PLS、最小范数最小二乘、PCR、岭回归与 LASSO,
并计算相对近似 / 估计 / 预测误差与相关系数。
"""

import logging
import warnings
from dataclasses import InitVar, dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg as sla
from scipy.optimize import brentq
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import lasso_path

from config import Config
from plsaudit.errors import DataError, NumericalError
from plsaudit.krylov_engine import KrylovBasis, build_krylov
from plsaudit.linalg_core import (
    MACHINE_EPSILON,
    MatrixLike,
    PsdMatrix,
    as_psd,
    condition_number_psd,
    numerical_rank,
    pseudo_inverse,
    range_projector,
)

logger = logging.getLogger(__name__)

METHODS = ('ls', 'pls', 'pcr', 'ridge', 'lasso')


@dataclass(frozen=True, eq=False)
class CovariancePair:
    """
    (Σ_x, Σ_xy) 协方差对

    构造时校验 Σ_xy ∈ range(Σ_x), 相对容差 RANGE_TOL。
    n = 0 表示总体协方差; y_energy = n⁻¹‖y‖² 仅在由数据构造时可用。
    """

    sigma_x: PsdMatrix
    sigma_xy: np.ndarray
    n: int = 0
    y_energy: Optional[float] = None
    check_range: InitVar[bool] = True

    def __post_init__(self, check_range: bool):
        sigma_x = as_psd(self.sigma_x)
        sigma_xy = np.array(self.sigma_xy, dtype=float).ravel()
        if sigma_xy.shape[0] != sigma_x.dim:
            raise DataError(f"Σ_xy 长度 {sigma_xy.shape[0]} 与 Σ_x 维度 {sigma_x.dim} 不一致")
        if not np.all(np.isfinite(sigma_xy)):
            raise DataError("Σ_xy 包含非有限值")
        sigma_xy.setflags(write=False)
        object.__setattr__(self, 'sigma_x', sigma_x)
        object.__setattr__(self, 'sigma_xy', sigma_xy)

        if check_range:
            norm = np.linalg.norm(sigma_xy)
            outside = np.linalg.norm(sigma_xy - range_projector(sigma_x) @ sigma_xy)
            if outside > Config.RANGE_TOL * norm:
                raise DataError(f"Σ_xy 不在 Σ_x 的值域内: 值域外分量 {outside:.3e}, ‖Σ_xy‖ = {norm:.3e}")

    @property
    def p(self) -> int:
        return self.sigma_x.dim


@dataclass(frozen=True)
class FitReport:
    """单个估计量的拟合结果"""

    beta: np.ndarray
    method: str
    dof: float
    kappa_reduced: float
    tuning: Optional[float] = None
    in_sample_risk: Optional[float] = None
    metrics: Dict[str, float] = field(default_factory=dict)
    warning: Optional[str] = None

    def summary(self) -> dict:
        """可序列化的摘要 (不含系数向量)"""
        row = {
            'method': self.method,
            'dof': self.dof,
            'kappa_reduced': self.kappa_reduced,
            'tuning': self.tuning,
            'in_sample_risk': self.in_sample_risk,
        }
        row.update(self.metrics)
        if self.warning:
            row['warning'] = self.warning
        return row


def _as_data(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x.ndim != 2:
        raise DataError(f"设计矩阵必须是二维, 实际维数 {x.ndim}")
    if x.shape[0] < 1:
        raise DataError("样本量必须 >= 1")
    if x.shape[0] != y.shape[0]:
        raise DataError(f"样本数不一致: X 有 {x.shape[0]} 行, y 有 {y.shape[0]} 个")
    return x, y


def sample_covariances(x, y, check_range: bool = True) -> CovariancePair:
    """
    样本协方差 Σ̂_x = n⁻¹XᵀX, Σ̂_xy = n⁻¹Xᵀy (不中心化)

    Args:
        x: n×p 设计矩阵
        y: 长度 n 的响应
        check_range: 是否校验 Σ̂_xy ∈ range(Σ̂_x)

    Returns:
        CovariancePair
    """
    x, y = _as_data(x, y)
    n = x.shape[0]
    return CovariancePair(
        sigma_x=PsdMatrix(x.T @ x / n),
        sigma_xy=x.T @ y / n,
        n=n,
        y_energy=float(y @ y / n),
        check_range=check_range,
    )


def in_sample_risk(cov: CovariancePair, beta) -> float:
    """ℓ̂(β) = βᵀΣ̂β − 2βᵀΣ̂_xy + n⁻¹‖y‖² = n⁻¹‖y − Xβ‖²"""
    if cov.y_energy is None:
        raise DataError("协方差对没有 y_energy, 无法计算样本风险")
    beta = np.asarray(beta, dtype=float)
    risk = beta @ cov.sigma_x.entries @ beta - 2.0 * beta @ cov.sigma_xy + cov.y_energy
    return float(max(risk, 0.0))


def _risk_or_none(cov: CovariancePair, beta) -> Optional[float]:
    return in_sample_risk(cov, beta) if cov.y_energy is not None else None


def tridiagonal_condition(t: np.ndarray) -> float:
    """对称三对角矩阵的 κ₂, 奇异时为 +inf"""
    t = np.asarray(t, dtype=float)
    if t.shape[0] == 1:
        return 1.0 if t[0, 0] > 0 else float('inf')
    values = sla.eigvalsh_tridiagonal(np.diag(t).copy(), np.diag(t, 1).copy())
    lam_max, lam_min = values[-1], values[0]
    if lam_max <= 0.0 or lam_min <= t.shape[0] * MACHINE_EPSILON * lam_max:
        return float('inf')
    return float(lam_max / lam_min)


def pls_solve(a: MatrixLike, b, s: int) -> Tuple[np.ndarray, KrylovBasis]:
    """
    PLS(A, b, s) = argmin_{ζ ∈ 𝒦_s(A,b)} ‖Aζ − b‖₂

    利用 A·K_s = K_{s+1}·T̄_s, 系数由 min ‖T̄_s α − ‖b‖e₁‖ 求得。

    Args:
        a: 半正定矩阵
        b: 非零向量
        s: 请求的 Krylov 维度 (超过维度时截断)

    Returns:
        (ζ, Krylov 基)
    """
    a = as_psd(a)
    if s < 1:
        raise DataError(f"PLS 维度必须 >= 1, 实际为 {s}")
    kb = build_krylov(a, b, min(int(s), a.dim))
    return pls_from_basis(kb), kb


def pls_from_basis(kb: KrylovBasis) -> np.ndarray:
    """给定 Krylov 基求 PLS 解 K_s α, α = argmin ‖T̄_s α − ‖b‖e₁‖"""
    rhs = np.zeros(kb.effective_dim + 1)
    rhs[0] = kb.seed_norm
    try:
        alpha = sla.lstsq(kb.extended_tridiag(), rhs)[0]
    except sla.LinAlgError as e:
        raise NumericalError(f"投影最小二乘求解失败 (维度 {kb.effective_dim}): {e}")
    return kb.basis @ alpha


def fit_pls(cov: CovariancePair, s: int) -> FitReport:
    """
    Krylov 偏最小二乘

    Args:
        cov: 协方差对
        s: 自由度

    Returns:
        FitReport, dof 为有效 Krylov 维度, kappa_reduced = κ₂(T_s)
    """
    beta, kb = pls_solve(cov.sigma_x, cov.sigma_xy, s)
    if kb.effective_dim < s:
        logger.info(f"Krylov 维度 {kb.effective_dim} 小于请求的 {s}, 按有效维度拟合")
    return FitReport(
        beta=beta,
        method='pls',
        dof=kb.effective_dim,
        kappa_reduced=tridiagonal_condition(kb.tridiag),
        in_sample_risk=_risk_or_none(cov, beta),
    )


def fit_min_norm_ls(cov: CovariancePair) -> FitReport:
    """最小范数最小二乘 β̂_ls = Σ̂_x⁺ Σ̂_xy"""
    beta = pseudo_inverse(cov.sigma_x).entries @ cov.sigma_xy
    try:
        kappa = condition_number_psd(cov.sigma_x)
    except NumericalError:
        kappa = float('nan')
    return FitReport(
        beta=beta,
        method='ls',
        dof=numerical_rank(cov.sigma_x),
        kappa_reduced=kappa,
        in_sample_risk=_risk_or_none(cov, beta),
    )


def fit_pcr(cov: CovariancePair, s: int) -> FitReport:
    """
    主成分回归: 在前 s 个特征向量张成的空间上做最小二乘

    Args:
        cov: 协方差对
        s: 主成分个数, 1 <= s <= p

    Returns:
        FitReport, kappa_reduced = λ_1/λ_s
    """
    p = cov.p
    if not 1 <= s <= p:
        raise DataError(f"PCR 维度必须位于 [1, {p}], 实际为 {s}")
    eigen = cov.sigma_x.eigen
    values = eigen.eigenvalues
    if values[0] <= 0.0 or values[s - 1] <= p * MACHINE_EPSILON * values[0]:
        raise NumericalError(f"PCR dimension exceeds numerical rank: s = {s}, 数值秩 {numerical_rank(cov.sigma_x)}")

    v = eigen.top(s)
    reduced = v.T @ cov.sigma_x.entries @ v
    try:
        coef = sla.solve(reduced, v.T @ cov.sigma_xy, assume_a='sym')
    except sla.LinAlgError as e:
        raise NumericalError(f"PCR 约化系统求解失败 (维度 {s}): {e}")
    beta = v @ coef
    return FitReport(
        beta=beta,
        method='pcr',
        dof=s,
        kappa_reduced=float(values[0] / values[s - 1]),
        in_sample_risk=_risk_or_none(cov, beta),
    )


def fit_ridge(cov: CovariancePair, lam: float) -> FitReport:
    """
    岭回归 β̂ = (Σ̂_x + λI)⁻¹ Σ̂_xy

    Args:
        cov: 协方差对
        lam: 正则参数 λ > 0

    Returns:
        FitReport, dof 为有效自由度 Σ λ_i/(λ_i+λ)
    """
    if not lam > 0:
        raise DataError(f"岭回归参数必须为正, 实际为 {lam}")
    shifted = cov.sigma_x.entries + lam * np.eye(cov.p)
    try:
        beta = sla.cho_solve(sla.cho_factor(shifted), cov.sigma_xy)
    except sla.LinAlgError as e:
        raise NumericalError(f"岭回归 Cholesky 分解失败 (维度 {cov.p}): {e}")

    values = cov.sigma_x.eigen.eigenvalues
    return FitReport(
        beta=beta,
        method='ridge',
        dof=float(np.sum(values / (values + lam))),
        kappa_reduced=float((values[0] + lam) / (values[-1] + lam)),
        tuning=float(lam),
        in_sample_risk=_risk_or_none(cov, beta),
    )


def ridge_lambda_for_dof(cov: CovariancePair, dof: float) -> float:
    """
    求 λ 使岭回归有效自由度等于 dof

    Args:
        cov: 协方差对
        dof: 目标自由度, 0 < dof < rank(Σ_x)

    Returns:
        λ
    """
    values = cov.sigma_x.eigen.eigenvalues
    rank = numerical_rank(cov.sigma_x)
    if not 0 < dof < rank:
        raise DataError(f"岭回归自由度必须位于 (0, {rank}), 实际为 {dof}")
    positive = values[:rank]

    def gap(log_lam: float) -> float:
        return float(np.sum(positive / (positive + np.exp(log_lam)))) - dof

    lo = np.log(positive[-1]) - 20.0
    hi = np.log(positive[0]) + 20.0
    if gap(lo) <= 0.0 or gap(hi) >= 0.0:
        raise DataError(f"无法为自由度 {dof} 找到岭回归参数")
    return float(np.exp(brentq(gap, lo, hi, xtol=1e-12)))


def default_lasso_path(x, y) -> np.ndarray:
    """λ_max = ‖n⁻¹Xᵀy‖_∞ 起向下 LASSO_PATH_DECADES 个数量级的几何网格"""
    x, y = _as_data(x, y)
    lam_max = float(np.max(np.abs(x.T @ y))) / x.shape[0]
    if lam_max == 0.0:
        return np.zeros(0)
    return np.geomspace(lam_max, lam_max * 10.0 ** (-Config.LASSO_PATH_DECADES), Config.LASSO_PATH_POINTS)


def lasso_coefficient_path(x, y, path=None) -> Tuple[np.ndarray, np.ndarray]:
    """
    LASSO 系数路径, 目标 (2n)⁻¹‖y − Xβ‖² + λ‖β‖₁

    Args:
        x: n×p 设计矩阵
        y: 响应
        path: 严格递减的正 λ 网格, 默认 default_lasso_path

    Returns:
        (λ 网格, p×k 系数矩阵)
    """
    x, y = _as_data(x, y)
    alphas = default_lasso_path(x, y) if path is None else np.asarray(path, dtype=float).ravel()
    if alphas.size == 0:
        return alphas, np.zeros((x.shape[1], 0))
    if np.any(alphas <= 0) or np.any(np.diff(alphas) >= 0):
        raise DataError("LASSO 路径必须是严格递减的正数序列")

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always', ConvergenceWarning)
        alphas_out, coefs, _ = lasso_path(
            x, y, alphas=alphas, tol=Config.LASSO_TOL, max_iter=Config.LASSO_MAX_ITER,
        )
    for w in caught:
        logger.warning(f"LASSO 坐标下降未完全收敛: {w.message}")
    return alphas_out, coefs


def fit_lasso(x, y, target_dof: int, path=None) -> FitReport:
    """
    自由度预算下的 LASSO

    在路径上选择活跃集大小 <= target_dof 且最大的拟合, 同等大小时取最大的 λ。

    Args:
        x: n×p 设计矩阵
        y: 响应
        target_dof: 活跃集大小上限
        path: λ 网格

    Returns:
        FitReport, dof 为活跃集大小
    """
    x, y = _as_data(x, y)
    if target_dof < 1:
        raise DataError(f"LASSO 自由度预算必须 >= 1, 实际为 {target_dof}")
    p = x.shape[1]
    alphas, coefs = lasso_coefficient_path(x, y, path)

    warning = None
    counts = np.count_nonzero(coefs, axis=0)
    candidates = np.flatnonzero(counts <= target_dof)
    if alphas.size == 0:
        beta, lam = np.zeros(p), None
    elif candidates.size == 0:
        beta, lam = np.zeros(p), float(alphas[0])
        warning = f"路径上没有 λ 满足自由度预算 {target_dof}, 返回空模型"
        logger.warning(warning)
    else:
        best = counts[candidates].max()
        idx = int(candidates[counts[candidates] == best][0])
        beta, lam = coefs[:, idx].copy(), float(alphas[idx])

    active = np.flatnonzero(beta)
    if active.size:
        xa = x[:, active]
        kappa = condition_number_psd(xa.T @ xa / x.shape[0])
    else:
        kappa = 1.0
    resid = y - x @ beta
    return FitReport(
        beta=beta,
        method='lasso',
        dof=int(active.size),
        kappa_reduced=float(kappa),
        tuning=lam,
        in_sample_risk=float(resid @ resid / x.shape[0]),
        warning=warning,
    )


def fit_method(method: str, cov: CovariancePair, dof: int, x=None, y=None) -> FitReport:
    """
    按方法名拟合

    Args:
        method: ls | pls | pcr | ridge | lasso
        cov: 协方差对
        dof: 自由度 (ls 忽略)
        x: 设计矩阵 (lasso 必需)
        y: 响应 (lasso 必需)
    """
    if method == 'ls':
        return fit_min_norm_ls(cov)
    if method == 'pls':
        return fit_pls(cov, dof)
    if method == 'pcr':
        return fit_pcr(cov, dof)
    if method == 'ridge':
        return fit_ridge(cov, ridge_lambda_for_dof(cov, dof))
    if method == 'lasso':
        if x is None or y is None:
            raise DataError("LASSO 需要原始数据 (X, y), 不能只用协方差")
        return fit_lasso(x, y, dof)
    raise DataError(f"未知方法: {method}, 可选 {', '.join(METHODS)}")


def evaluate(report: FitReport, x, y, beta0=None, split: str = 'train') -> FitReport:
    """
    计算评估指标

    Args:
        report: 拟合结果
        x: 设计矩阵
        y: 响应
        beta0: 真实系数 (可选)
        split: train 记录 rel_approx_error, test 记录 rel_prediction_error

    Returns:
        填充了 metrics 的新 FitReport
    """
    if split not in ('train', 'test'):
        raise DataError(f"split 必须是 train 或 test, 实际为 {split}")
    x, y = _as_data(x, y)
    y_norm = float(np.linalg.norm(y))
    if y_norm == 0.0:
        raise DataError("‖y‖ = 0, 相对误差无定义")

    y_hat = x @ report.beta
    key = 'rel_approx_error' if split == 'train' else 'rel_prediction_error'
    metrics = dict(report.metrics)
    metrics[key] = float(np.linalg.norm(y_hat - y) / y_norm)

    if np.std(y_hat) == 0.0 or np.std(y) == 0.0:
        metrics['correlation'] = 0.0
    else:
        metrics['correlation'] = float(np.clip(np.corrcoef(y_hat, y)[0, 1], -1.0, 1.0))

    if beta0 is not None:
        beta0 = np.asarray(beta0, dtype=float)
        b_norm = float(np.linalg.norm(beta0))
        if b_norm == 0.0:
            raise DataError("‖β₀‖ = 0, 相对估计误差无定义")
        metrics['rel_estimation_error'] = float(np.linalg.norm(report.beta - beta0) / b_norm)
    return replace(report, metrics=metrics)
