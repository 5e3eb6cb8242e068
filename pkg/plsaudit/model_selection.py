"""
条件数阈值模型选择

在 κ̂_ŝ < κ₀ 的可接受集合中选择样本风险最小的模型。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from plsaudit.errors import DataError
from plsaudit.estimators import (
    CovariancePair,
    FitReport,
    in_sample_risk,
    pls_from_basis,
    tridiagonal_condition,
)
from plsaudit.krylov_engine import LanczosProcess

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionOutcome:
    """模型选择结果"""

    chosen_dof: float
    admissible_set: Tuple[float, ...]
    per_dof: Tuple[Tuple[float, float, float], ...]
    threshold: float
    warning: Optional[str] = None
    fits: Tuple[FitReport, ...] = ()
    chosen_fit: Optional[FitReport] = None

    def to_dict(self) -> dict:
        return {
            'chosen_dof': self.chosen_dof,
            'admissible_set': list(self.admissible_set),
            'per_dof': [
                {'dof': d, 'kappa_reduced': k, 'in_sample_risk': r} for d, k, r in self.per_dof
            ],
            'threshold': self.threshold,
            'warning': self.warning,
        }


def _kappa_key(kappa: float) -> float:
    return float('inf') if np.isnan(kappa) else kappa


def select_by_conditioning(fits: Sequence[FitReport], kappa0: float) -> SelectionOutcome:
    """
    ŝ₀ = argmin_{ŝ : κ̂_ŝ < κ₀} ℓ̂(β̂_ŝ)

    风险相同时取较小自由度; 可接受集合为空时退回条件数最小的模型并给出警告。

    Args:
        fits: 带 kappa_reduced 与 in_sample_risk 的拟合结果
        kappa0: 条件数阈值

    Returns:
        SelectionOutcome
    """
    if not fits:
        raise DataError("模型选择需要至少一个拟合结果")
    if not kappa0 > 0:
        raise DataError(f"κ₀ 必须为正, 实际为 {kappa0}")
    missing = [f.dof for f in fits if f.in_sample_risk is None]
    if missing:
        raise DataError(f"以下自由度缺少样本风险: {missing}")

    ordered = sorted(fits, key=lambda f: (f.dof, _kappa_key(f.kappa_reduced), f.in_sample_risk))
    admissible = [f for f in ordered if f.kappa_reduced < kappa0]

    warning = None
    if admissible:
        chosen = min(admissible, key=lambda f: (f.in_sample_risk, f.dof))
    else:
        chosen = min(ordered, key=lambda f: (_kappa_key(f.kappa_reduced), f.dof))
        warning = f"没有模型满足 κ̂ < κ₀ = {kappa0:g}, 退回条件数最小的模型 (dof={chosen.dof})"
        logger.warning(warning)

    return SelectionOutcome(
        chosen_dof=chosen.dof,
        admissible_set=tuple(f.dof for f in admissible),
        per_dof=tuple((f.dof, f.kappa_reduced, f.in_sample_risk) for f in ordered),
        threshold=float(kappa0),
        warning=warning,
        fits=tuple(ordered),
        chosen_fit=chosen,
    )


def _scan_risk(cov: CovariancePair, beta: np.ndarray) -> float:
    if cov.y_energy is not None:
        return in_sample_risk(cov, beta)
    # 总体协方差: 省略常数项 ‖y‖²/n
    return float(beta @ cov.sigma_x.entries @ beta - 2.0 * beta @ cov.sigma_xy)


def early_stop_scan(cov: CovariancePair, kappa0: float, s_max: int) -> SelectionOutcome:
    """
    逐步增大 PLS 维度, 在第一个 κ₂(T_s) > κ₀ 处停止

    所有维度共享同一个增长的 Lanczos 分解。

    Args:
        cov: 协方差对
        kappa0: 条件数阈值
        s_max: 最大维度

    Returns:
        SelectionOutcome, fits 为扫描过的所有拟合
    """
    if s_max < 1:
        raise DataError(f"s_max 必须 >= 1, 实际为 {s_max}")
    process = LanczosProcess(cov.sigma_x, cov.sigma_xy)
    limit = min(int(s_max), cov.p)

    fits = []
    while True:
        process.step()
        kb = process.snapshot()
        beta = pls_from_basis(kb)
        kappa = tridiagonal_condition(kb.tridiag)
        fits.append(FitReport(
            beta=beta,
            method='pls',
            dof=kb.effective_dim,
            kappa_reduced=kappa,
            in_sample_risk=_scan_risk(cov, beta),
        ))
        if kappa > kappa0:
            logger.info(f"κ₂(T_{kb.effective_dim}) = {kappa:.4g} 超过阈值 {kappa0:g}, 停止扫描")
            break
        if process.exhausted:
            logger.info(f"Krylov 空间在维度 {kb.effective_dim} 处耗尽, 停止扫描")
            break
        if kb.effective_dim >= limit:
            break

    return select_by_conditioning(fits, kappa0)
