"""
广义线性模型的迭代重加权 PLS (IRPLS)

每次迭代用当前权重构造加权设计与工作残差, 以 PLS(ŝ) 求增量,
直到负平均对数似然的下降量 D̂ <= ε̂ 或迭代次数达到 Ĵ。
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
import pandas as pd
from scipy.special import expit, xlogy

from config import Config
from plsaudit.errors import DataError, NumericalError
from plsaudit.estimators import fit_pls, sample_covariances

logger = logging.getLogger(__name__)


class GlmFamily:
    """典则联结的指数族: 累积量 κ(η), 均值 κ′(η), 方差 κ″(η)"""

    tag = ''

    def cumulant(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mean(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def variance(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def validate_response(self, y: np.ndarray) -> None:
        if not np.all(np.isfinite(y)):
            raise DataError(f"{self.tag} 族的响应包含非有限值")

    def saturated_loglik(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mean_negative_loglik(self, y: np.ndarray, eta: np.ndarray) -> float:
        """−n⁻¹ Σ (y_i η_i − κ(η_i)), 省略与 η 无关的项"""
        return float(-np.mean(y * eta - self.cumulant(eta)))

    def deviance(self, y: np.ndarray, eta: np.ndarray) -> float:
        """2 Σ (饱和模型对数似然 − 当前模型对数似然)"""
        return float(2.0 * np.sum(self.saturated_loglik(y) - (y * eta - self.cumulant(eta))))

    def __repr__(self) -> str:
        return f"GlmFamily({self.tag})"


class GaussianFamily(GlmFamily):
    tag = 'gaussian'

    def cumulant(self, eta):
        return 0.5 * eta ** 2

    def mean(self, eta):
        return eta

    def variance(self, eta):
        return np.ones_like(eta)

    def saturated_loglik(self, y):
        return 0.5 * y ** 2


class BinomialFamily(GlmFamily):
    tag = 'binomial'

    def cumulant(self, eta):
        return np.logaddexp(0.0, eta)

    def mean(self, eta):
        return expit(eta)

    def variance(self, eta):
        mu = expit(eta)
        return mu * (1.0 - mu)

    def validate_response(self, y):
        super().validate_response(y)
        if np.any((y < 0) | (y > 1)):
            raise DataError("binomial 族的响应必须位于 [0, 1]")

    def saturated_loglik(self, y):
        return xlogy(y, y) + xlogy(1.0 - y, 1.0 - y)


class PoissonFamily(GlmFamily):
    tag = 'poisson'

    def cumulant(self, eta):
        return np.exp(eta)

    def mean(self, eta):
        return np.exp(eta)

    def variance(self, eta):
        return np.exp(eta)

    def validate_response(self, y):
        super().validate_response(y)
        if np.any(y < 0):
            raise DataError("poisson 族的响应必须非负")

    def saturated_loglik(self, y):
        return xlogy(y, y) - y


FAMILIES = {cls.tag: cls for cls in (GaussianFamily, BinomialFamily, PoissonFamily)}


def get_family(family: Union[str, GlmFamily]) -> GlmFamily:
    """按名称取指数族"""
    if isinstance(family, GlmFamily):
        return family
    if family not in FAMILIES:
        raise DataError(f"未知指数族: {family}, 可选 {', '.join(FAMILIES)}")
    return FAMILIES[family]()


def _check_eta(y: np.ndarray, eta: np.ndarray) -> None:
    if y.shape != eta.shape:
        raise DataError(f"y 与 η 长度不一致: {y.shape[0]} vs {eta.shape[0]}")


def deviance(family: Union[str, GlmFamily], y, eta) -> float:
    """
    指数族偏差

    Args:
        family: 指数族或其名称
        y: 响应
        eta: 线性预测值

    Returns:
        偏差 (gaussian 族为残差平方和)
    """
    family = get_family(family)
    y = np.asarray(y, dtype=float).ravel()
    eta = np.asarray(eta, dtype=float).ravel()
    _check_eta(y, eta)
    family.validate_response(y)
    return family.deviance(y, eta)


@dataclass
class IrplsTrace:
    """IRPLS 迭代轨迹"""

    family: str
    s: int
    iterates: List[np.ndarray] = field(default_factory=list)
    deviance_drops: List[float] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    kappa_reduced: List[float] = field(default_factory=list)
    stopped_by: str = 'max_iter'
    final_deviance: Optional[float] = None

    @property
    def beta(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def iterations(self) -> int:
        return len(self.deviance_drops)

    def to_frame(self) -> pd.DataFrame:
        """每次迭代一行: 下降量、损失、约化条件数、系数范数"""
        j = self.iterations
        return pd.DataFrame({
            'iteration': np.arange(1, j + 1),
            'deviance_drop': self.deviance_drops,
            'loss': self.losses[1:],
            'kappa_reduced': self.kappa_reduced,
            'coef_norm': [float(np.linalg.norm(b)) for b in self.iterates[1:]],
        })


def _gradient_vanishes(x_w: np.ndarray, r: np.ndarray) -> bool:
    grad = np.linalg.norm(x_w.T @ r)
    scale = np.linalg.norm(x_w) * np.linalg.norm(r)
    return bool(grad <= 1e-12 * scale)


def irpls_fit(x, y, family: Union[str, GlmFamily], s: int,
              max_iter: Optional[int] = None, eps: Optional[float] = None) -> IrplsTrace:
    """
    样本 IRPLS

    β⁽⁰⁾ = 0; 每次迭代 Ŵ = diag(κ″(η̂)) (下限 WEIGHT_FLOOR), X(η̂) = Ŵ^{1/2}X,
    r(η̂) = Ŵ^{−1/2}(y − μ̂), β⁽ʲ⁺¹⁾ = β⁽ʲ⁾ + PLS_s(Σ̂_X(η̂), Σ̂_X(η̂),r(η̂))。

    Args:
        x: n×p 设计矩阵
        y: 响应
        family: 指数族或名称
        s: PLS 维度
        max_iter: 最大迭代次数 Ĵ, 默认 Config.IRPLS_MAX_ITER
        eps: 下降量阈值 ε̂, 默认 Config.IRPLS_EPS

    Returns:
        IrplsTrace
    """
    family = get_family(family)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DataError(f"设计矩阵形状 {x.shape} 与响应长度 {y.shape[0]} 不匹配")
    if s < 1:
        raise DataError(f"PLS 维度必须 >= 1, 实际为 {s}")
    family.validate_response(y)
    max_iter = Config.IRPLS_MAX_ITER if max_iter is None else int(max_iter)
    eps = Config.IRPLS_EPS if eps is None else float(eps)
    if max_iter < 1:
        raise DataError(f"最大迭代次数必须 >= 1, 实际为 {max_iter}")

    beta = np.zeros(x.shape[1])
    trace = IrplsTrace(family=family.tag, s=int(s))
    trace.iterates.append(beta)
    trace.losses.append(family.mean_negative_loglik(y, x @ beta))

    for j in range(1, max_iter + 1):
        eta = x @ beta
        weights = np.maximum(family.variance(eta), Config.WEIGHT_FLOOR)
        root = np.sqrt(weights)
        x_w = x * root[:, None]
        r = (y - family.mean(eta)) / root

        if _gradient_vanishes(x_w, r):
            trace.deviance_drops.append(0.0)
            trace.losses.append(trace.losses[-1])
            trace.iterates.append(beta)
            trace.kappa_reduced.append(float('nan'))
            trace.stopped_by = 'epsilon'
            logger.info(f"第 {j} 次迭代工作梯度为零, 停止")
            break

        step = fit_pls(sample_covariances(x_w, r, check_range=False), s)
        beta_next = beta + step.beta
        eta_next = x @ beta_next
        with np.errstate(over='ignore'):
            loss = family.mean_negative_loglik(y, eta_next)
        if not np.all(np.isfinite(eta_next)) or not np.isfinite(loss):
            raise NumericalError(f"第 {j} 次迭代的线性预测值非有限 (族 {family.tag})")

        drop = trace.losses[-1] - loss
        trace.iterates.append(beta_next)
        trace.losses.append(loss)
        trace.deviance_drops.append(float(drop))
        trace.kappa_reduced.append(step.kappa_reduced)
        beta = beta_next
        if drop < 0:
            logger.warning(f"第 {j} 次迭代损失上升 {-drop:.3e}")
        if drop <= eps:
            trace.stopped_by = 'epsilon'
            break

    trace.final_deviance = family.deviance(y, x @ beta)
    logger.info(
        f"IRPLS 结束: {trace.iterations} 次迭代, 停止原因 {trace.stopped_by}, 偏差 {trace.final_deviance:.6g}"
    )
    return trace
