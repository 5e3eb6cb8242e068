"""
扰动实验室

生成满足约束的扰动问题, 把观测到的解变化与扰动定理给出的上界逐次比较。
每次试验从 (seed, STREAM_PERTURB, trial) 派生独立随机流, 结果与进程数无关。
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from config import Config
from plsaudit.errors import DataError, NumericalError
from plsaudit.estimators import fit_pls, pls_from_basis, pls_solve
from plsaudit.krylov_engine import (
    KappaBEstimate,
    LanczosProcess,
    align_signs,
    build_krylov,
    estimate_kappa_b,
    random_symmetric_direction,
    random_unit_vector,
)
from plsaudit.linalg_core import (
    MatrixLike,
    PsdMatrix,
    as_psd,
    condition_number_psd,
    eigh_descending,
    numerical_rank,
    pseudo_inverse,
    range_projector,
)
from plsaudit.simulation import GeneratedModel, krylov_oracle_distance, pcr_oracle_distance
from plsaudit.workers import STREAM_PERTURB, make_rng, run_tasks

logger = logging.getLogger(__name__)

VERDICT_SLACK = 1e-12


@dataclass(frozen=True)
class PreserveFlags:
    """扰动时保持的结构: rank 保持秩, range 令 b̃ ∈ range(Ã)"""

    rank: bool = False
    range: bool = False


@dataclass(frozen=True)
class PerturbedProblem:
    a_tilde: PsdMatrix
    b_tilde: np.ndarray
    projection_drift: float
    range_feasible: bool
    attempts: int


@dataclass(frozen=True)
class PerturbationReport:
    """
    单次试验的审计结果

    Attributes:
        theorem_tag: ls_pert | pls_pert | krylov_pert | cgne_stop | pop_pls_bias
        epsilon: 扰动尺度
        admissible: 定理前提是否满足
        observed: 与 bound 比较的观测量
        bound: 定理右端
        satisfied: observed <= bound, 不可接受时为 None
        quantity: 被审计的量
        trial: 试验序号
        details: 中间量
    """

    theorem_tag: str
    epsilon: float
    admissible: bool
    observed: float
    bound: float
    satisfied: Optional[bool]
    quantity: str = 'solution'
    trial: int = 0
    details: Dict[str, object] = field(default_factory=dict)

    @property
    def observed_ratio(self) -> float:
        return self.observed / self.epsilon if self.epsilon > 0 else 0.0

    def to_row(self) -> dict:
        if self.satisfied is None:
            verdict = ''
        else:
            verdict = 'satisfied' if self.satisfied else 'violated'
        return {
            'theorem': self.theorem_tag,
            'quantity': self.quantity,
            'trial': self.trial,
            'epsilon': self.epsilon,
            'admissible': self.admissible,
            'observed': self.observed,
            'observed_ratio': self.observed_ratio,
            'bound': self.bound,
            'verdict': verdict,
        }


def _verdict(admissible: bool, observed: float, bound: float) -> Optional[bool]:
    if not admissible:
        return None
    return bool(observed <= bound + VERDICT_SLACK)


def _psd_projection(m: np.ndarray, rank: Optional[int]) -> np.ndarray:
    values, vectors = eigh_descending(m)
    values = np.clip(values, 0.0, None)
    if rank is not None:
        values[rank:] = 0.0
    return (vectors * values) @ vectors.T


def _bracket(gap, target: float) -> Optional[float]:
    hi = target
    for _ in range(60):
        if gap(hi) >= 0.0:
            return hi
        hi *= 2.0
    return None


def draw_perturbation(a: MatrixLike, b, epsilon: float, rng: np.random.Generator,
                      preserve: Optional[PreserveFlags] = None) -> PerturbedProblem:
    """
    抽取一个满足 ‖Ã − A‖_op = ε‖A‖_op 且 ‖b̃ − b‖ = ε‖b‖ 的扰动问题

    Ã 为 A + t·G 的半正定投影 (preserve.rank 时截断到 rank(A)), 步长 t 由 brentq 求得;
    projection_drift = t/(ε‖A‖) − 1 记录投影使原始步长放大的比例。

    Args:
        a: 半正定矩阵
        b: 向量
        epsilon: 相对扰动尺度 >= 0
        rng: 随机数生成器
        preserve: 结构保持标志

    Returns:
        PerturbedProblem
    """
    a = as_psd(a)
    b = np.asarray(b, dtype=float).ravel()
    preserve = preserve or PreserveFlags()
    if epsilon < 0:
        raise DataError(f"扰动尺度必须非负, 实际为 {epsilon}")
    if b.shape[0] != a.dim:
        raise DataError(f"向量长度 {b.shape[0]} 与矩阵维度 {a.dim} 不一致")
    if epsilon == 0.0:
        return PerturbedProblem(a, b.copy(), 0.0, True, 0)

    p = a.dim
    target = epsilon * a.op_norm
    rank = numerical_rank(a) if preserve.rank and target > 0 else None

    a_tilde, drift, attempts = a, 0.0, 0
    if target > 0:
        for attempts in range(1, Config.MAX_PERTURB_ATTEMPTS + 1):
            g = random_symmetric_direction(rng, p)

            def gap(t: float) -> float:
                moved = _psd_projection(a.entries + t * g, rank)
                return float(np.linalg.norm(moved - a.entries, 2)) - target

            hi = _bracket(gap, target)
            if hi is None:
                continue
            lo = 0.0 if hi == target else hi / 2.0
            t = hi if gap(hi) == 0.0 else brentq(gap, lo, hi, xtol=1e-12 * target)
            a_tilde = PsdMatrix(_psd_projection(a.entries + t * g, rank))
            drift = t / target - 1.0
            break
        else:
            raise NumericalError(
                f"{Config.MAX_PERTURB_ATTEMPTS} 次尝试后仍无法在半正定投影下达到扰动范数 ε‖A‖ = {target:.3e}"
            )
        if drift > Config.PROJECTION_DRIFT_FLAG:
            logger.debug(f"半正定投影使步长放大 {drift:.1%}")

    h = random_unit_vector(rng, p)
    b_radius = epsilon * float(np.linalg.norm(b))
    feasible = True
    if preserve.range:
        proj = range_projector(a_tilde)
        closest = proj @ b
        outside = float(np.linalg.norm(b - closest))
        if outside > b_radius:
            feasible = False
            b_tilde = closest
        else:
            direction = proj @ h
            d_norm = float(np.linalg.norm(direction))
            inside = np.sqrt(max(b_radius ** 2 - outside ** 2, 0.0))
            b_tilde = closest + (inside * direction / d_norm if d_norm > 0 else 0.0)
    else:
        b_tilde = b + b_radius * h

    return PerturbedProblem(a_tilde, b_tilde, float(drift), feasible, attempts)


def perturb_problem(a: MatrixLike, b, epsilon: float, seed: int,
                    preserve: Optional[PreserveFlags] = None, trial: int = 0) -> Tuple[PsdMatrix, np.ndarray]:
    """
    扰动 (A, b)

    Args:
        a: 半正定矩阵
        b: 向量
        epsilon: 相对扰动尺度
        seed: 随机种子
        preserve: 结构保持标志
        trial: 试验序号

    Returns:
        (Ã, b̃)
    """
    rng = make_rng(seed, STREAM_PERTURB, trial)
    pp = draw_perturbation(a, b, epsilon, rng, preserve)
    return pp.a_tilde, pp.b_tilde


def _perturbation_details(pp: PerturbedProblem) -> dict:
    details = {
        'projection_drift': pp.projection_drift,
        'range_feasible': pp.range_feasible,
        'attempts': pp.attempts,
    }
    if pp.projection_drift > Config.PROJECTION_DRIFT_FLAG:
        details['warnings'] = [f"半正定投影漂移 {pp.projection_drift:.1%} 超过 {Config.PROJECTION_DRIFT_FLAG:.0%}"]
    return details


def _merge_details(base: dict, pp: PerturbedProblem) -> dict:
    pert = _perturbation_details(pp)
    warnings = list(base.get('warnings', [])) + pert.pop('warnings', [])
    details = {**base, **pert}
    if warnings:
        details['warnings'] = warnings
    return details


def _ls_trial(task) -> PerturbationReport:
    a, b, epsilon, seed, trial, kappa, zeta, gate = task
    rng = make_rng(seed, STREAM_PERTURB, trial)
    pp = draw_perturbation(a, b, epsilon, rng, PreserveFlags(rank=True, range=True))
    zeta_tilde = pseudo_inverse(pp.a_tilde).entries @ pp.b_tilde
    observed = float(np.linalg.norm(zeta_tilde - zeta) / np.linalg.norm(zeta))
    bound = 5.0 * kappa * epsilon
    admissible = gate and pp.range_feasible
    details = _perturbation_details(pp)
    details.update(kappa2=kappa, threshold=1.0 / (2.0 * kappa))
    return PerturbationReport('ls_pert', epsilon, admissible, observed, bound,
                              _verdict(admissible, observed, bound), 'solution', trial, details)


def audit_ls_bound(a: MatrixLike, b, epsilon: float, trials: int, seed: int,
                   max_workers: Optional[int] = None) -> List[PerturbationReport]:
    """
    最小范数最小二乘扰动界 ‖ζ̃ − ζ‖/‖ζ‖ <= 5κ₂(A)ε, 前提 ε <= 1/(2κ₂(A))

    Args:
        a: 半正定矩阵
        b: 向量
        epsilon: 相对扰动尺度
        trials: 试验次数
        seed: 随机种子
        max_workers: 进程数

    Returns:
        每次试验一个 PerturbationReport
    """
    a = as_psd(a)
    b = np.asarray(b, dtype=float).ravel()
    zeta = pseudo_inverse(a).entries @ b
    if np.linalg.norm(zeta) == 0.0:
        raise DataError("ζ_ls = 0, 相对变化无定义")
    kappa = condition_number_psd(a)
    gate = epsilon <= 1.0 / (2.0 * kappa)
    if not gate:
        logger.info(f"ε = {epsilon:g} 超过可接受阈值 1/(2κ) = {1.0 / (2.0 * kappa):.3e}, 不给出判定")

    tasks = [(a, b, epsilon, seed, t, kappa, zeta, gate) for t in range(trials)]
    return run_tasks(_ls_trial, tasks, max_workers)


def _kappa_or_estimate(a: PsdMatrix, b: np.ndarray, m: int, kappa_b: Optional[KappaBEstimate],
                       seed: int, max_workers: Optional[int]) -> KappaBEstimate:
    if kappa_b is not None:
        return kappa_b
    return estimate_kappa_b(a, b, m, seed=seed, max_workers=max_workers)


def _kappa_warnings(kappa_b: KappaBEstimate) -> List[str]:
    if kappa_b.converged:
        return []
    return [f"κ_b 估计未收敛 (值 {kappa_b.value:.4g}), 界可能被低估"]


def _pls_trial(task) -> PerturbationReport:
    a, b, m, epsilon, seed, trial, beta_ref, gate, bound, base_details = task
    rng = make_rng(seed, STREAM_PERTURB, trial)
    pp = draw_perturbation(a, b, epsilon, rng, PreserveFlags(range=True))
    details = _merge_details(base_details, pp)

    try:
        beta_tilde, kb = pls_solve(pp.a_tilde, pp.b_tilde, m)
        perturbed_dim = kb.effective_dim
    except DataError:
        beta_tilde, perturbed_dim = np.zeros_like(beta_ref), 0
    details['perturbed_dim'] = perturbed_dim

    admissible = gate and pp.range_feasible and perturbed_dim == m
    observed = float(np.linalg.norm(beta_tilde - beta_ref) / np.linalg.norm(beta_ref))
    return PerturbationReport('pls_pert', epsilon, admissible, observed, bound,
                              _verdict(admissible, observed, bound), 'solution', trial, details)


def _projected_norms(a: PsdMatrix, b: np.ndarray, m: int):
    kb = build_krylov(a, b, m)
    if kb.effective_dim < m:
        raise DataError(f"m = {m} 超过 Krylov 维度 {kb.effective_dim}")
    values = np.linalg.eigvalsh(kb.tridiag)
    norm_am = float(values[-1])
    norm_am_inv = float(1.0 / values[0]) if values[0] > 0 else float('inf')
    return kb, norm_am, norm_am_inv


def audit_pls_bound(a: MatrixLike, b, m: int, epsilon: float, trials: int, seed: int,
                    kappa_b: Optional[KappaBEstimate] = None,
                    max_workers: Optional[int] = None) -> List[PerturbationReport]:
    """
    PLS 解的扰动界 ‖ζ̃_m − ζ_m‖/‖ζ_m‖ <= 120·κ_b(‖A‖/‖A_m‖ + 1)ε

    前提 ε <= 1/max(C_m, D_m), C_m = 64κ_b(κ_b+1), D_m = 48κ_b‖A‖‖A_m⁻¹‖,
    且扰动后 Krylov 维度仍为 m。

    Args:
        a: 半正定矩阵
        b: 向量
        m: Krylov 维度
        epsilon: 相对扰动尺度
        trials: 试验次数
        seed: 随机种子
        kappa_b: κ_b 估计, 缺省时用同一种子估计
        max_workers: 进程数

    Returns:
        每次试验一个 PerturbationReport
    """
    a = as_psd(a)
    b = np.asarray(b, dtype=float).ravel()
    kb, norm_am, norm_am_inv = _projected_norms(a, b, m)
    beta_ref = pls_from_basis(kb)
    kappa_b = _kappa_or_estimate(a, b, m, kappa_b, seed, max_workers)
    kappa = kappa_b.value
    norm_a = a.op_norm

    c_m = 64.0 * kappa * (kappa + 1.0)
    d_m = 48.0 * kappa * norm_a * norm_am_inv
    threshold = 1.0 / max(c_m, d_m) if max(c_m, d_m) > 0 else float('inf')
    bound = 120.0 * kappa * (norm_a / norm_am + 1.0) * epsilon
    gate = epsilon <= threshold

    warnings = _kappa_warnings(kappa_b)
    for w in warnings:
        logger.warning(w)
    base_details = {
        'kappa_b': kappa, 'kappa_b_converged': kappa_b.converged,
        'C_m': c_m, 'D_m': d_m, 'threshold': threshold,
        'norm_a': norm_a, 'norm_a_m': norm_am, 'norm_a_m_inv': norm_am_inv,
    }
    if warnings:
        base_details['warnings'] = warnings

    tasks = [(a, b, m, epsilon, seed, t, beta_ref, gate, bound, base_details) for t in range(trials)]
    return run_tasks(_pls_trial, tasks, max_workers)


def _krylov_trial(task) -> List[PerturbationReport]:
    a, b, m, epsilon, seed, trial, kb_ref, gate, bounds, base_details = task
    rng = make_rng(seed, STREAM_PERTURB, trial)
    pp = draw_perturbation(a, b, epsilon, rng, PreserveFlags(range=True))
    details = _merge_details(base_details, pp)

    try:
        kb = build_krylov(pp.a_tilde, pp.b_tilde, m)
    except DataError:
        kb = None
    if kb is None or kb.effective_dim < m:
        details['perturbed_dim'] = 0 if kb is None else kb.effective_dim
        nan = float('nan')
        return [
            PerturbationReport('krylov_pert', epsilon, False, nan, bounds[q], None, q, trial, details)
            for q in ('basis', 'projected_vector', 'projected_matrix')
        ]
    details['perturbed_dim'] = m

    signs = align_signs(kb_ref.basis, kb.basis)
    basis_diff = float(np.linalg.norm(kb.basis * signs - kb_ref.basis, 2))
    b_m = kb_ref.basis.T @ b
    b_m_tilde = signs * (kb.basis.T @ pp.b_tilde)
    vec_diff = float(np.linalg.norm(b_m_tilde - b_m) / np.linalg.norm(b_m))
    a_m_tilde = signs[:, None] * kb.tridiag * signs[None, :]
    mat_diff = float(np.linalg.norm(a_m_tilde - kb_ref.tridiag, 2) / np.linalg.norm(kb_ref.tridiag, 2))

    admissible = gate and pp.range_feasible
    return [
        PerturbationReport('krylov_pert', epsilon, admissible, observed, bounds[q],
                           _verdict(admissible, observed, bounds[q]), q, trial, details)
        for q, observed in (('basis', basis_diff), ('projected_vector', vec_diff), ('projected_matrix', mat_diff))
    ]


def audit_krylov_basis_bound(a: MatrixLike, b, m: int, epsilon: float, trials: int, seed: int,
                             kappa_b: Optional[KappaBEstimate] = None,
                             max_workers: Optional[int] = None) -> List[PerturbationReport]:
    """
    自然基与投影量的扰动界

    ‖K̃_m S − K_m‖ <= 11κ_b ε, ‖b̃_m − b_m‖/‖b_m‖ <= 2ε,
    ‖Ã_m − A_m‖/‖A_m‖ <= 24κ_b‖A‖‖A_m‖⁻¹ε, 前提 ε <= 1/(64κ_b(κ_b+1))。
    S 为使基差最小的对角符号矩阵。

    Returns:
        每次试验三个 PerturbationReport (basis, projected_vector, projected_matrix)
    """
    a = as_psd(a)
    b = np.asarray(b, dtype=float).ravel()
    kb_ref, norm_am, _ = _projected_norms(a, b, m)
    kappa_b = _kappa_or_estimate(a, b, m, kappa_b, seed, max_workers)
    kappa = kappa_b.value
    norm_a = a.op_norm

    c_m = 64.0 * kappa * (kappa + 1.0)
    threshold = 1.0 / c_m if c_m > 0 else float('inf')
    gate = epsilon <= threshold
    bounds = {
        'basis': 11.0 * kappa * epsilon,
        'projected_vector': 2.0 * epsilon,
        'projected_matrix': 24.0 * kappa * norm_a / norm_am * epsilon,
    }
    warnings = _kappa_warnings(kappa_b)
    for w in warnings:
        logger.warning(w)
    base_details = {'kappa_b': kappa, 'kappa_b_converged': kappa_b.converged, 'threshold': threshold,
                    'norm_a': norm_a, 'norm_a_m': norm_am}
    if warnings:
        base_details['warnings'] = warnings

    tasks = [(a, b, m, epsilon, seed, t, kb_ref, gate, bounds, base_details) for t in range(trials)]
    return [r for chunk in run_tasks(_krylov_trial, tasks, max_workers) for r in chunk]


@dataclass(frozen=True)
class CgneStop:
    """停止规则的结果"""

    index: int
    residual: float
    threshold: float
    reached: bool
    beta: np.ndarray


def cgne_stop(a_tilde: MatrixLike, b_tilde, zeta_ls_norm: float, m_bound: float,
              delta: float, epsilon_op: float) -> CgneStop:
    """
    运行停止规则: 第一个满足 ‖Ãζ̃_s − b̃‖ <= 2(‖ζ_ls‖Mε + δ) 的 s

    Krylov 空间耗尽或达到满维仍未满足时返回最后的 s, reached = False。

    Args:
        a_tilde: 扰动后的矩阵
        b_tilde: 扰动后的向量
        zeta_ls_norm: ‖ζ_ls‖
        m_bound: M >= max(‖Ã‖, ‖A‖)
        delta: ‖b̃ − b‖ 上界
        epsilon_op: ‖Ã − A‖ 上界 (绝对)

    Returns:
        CgneStop
    """
    if min(zeta_ls_norm, m_bound, delta, epsilon_op) < 0:
        raise DataError("停止规则的阈值参数必须非负")
    a_tilde = as_psd(a_tilde)
    b_tilde = np.asarray(b_tilde, dtype=float).ravel()
    threshold = 2.0 * (zeta_ls_norm * m_bound * epsilon_op + delta)
    floor = 1e-12 * float(np.linalg.norm(b_tilde))

    process = LanczosProcess(a_tilde, b_tilde)
    while True:
        process.step()
        beta = pls_from_basis(process.snapshot())
        residual = float(np.linalg.norm(a_tilde.entries @ beta - b_tilde))
        reached = residual <= max(threshold, floor)
        if reached or process.exhausted:
            break
    if not reached:
        logger.info(f"停止规则在 Krylov 维度 {process.steps} 内未满足 (残差 {residual:.3e}, 阈值 {threshold:.3e})")
    return CgneStop(index=process.steps, residual=residual, threshold=threshold, reached=reached, beta=beta)


def cgne_stopping_index(a_tilde: MatrixLike, b_tilde, zeta_ls_norm: float, m_bound: float,
                        delta: float, epsilon_op: float) -> int:
    """停止指标 s̃; 未满足时为 Krylov 维度上限, 诊断量见 cgne_stop"""
    return cgne_stop(a_tilde, b_tilde, zeta_ls_norm, m_bound, delta, epsilon_op).index


def _cgne_trial(task) -> PerturbationReport:
    a, b, epsilon, seed, trial, zeta = task
    rng = make_rng(seed, STREAM_PERTURB, trial)
    pp = draw_perturbation(a, b, epsilon, rng)
    zeta_norm = float(np.linalg.norm(zeta))
    m_bound = max(a.op_norm, pp.a_tilde.op_norm)
    eps_op = epsilon * a.op_norm
    delta = epsilon * float(np.linalg.norm(b))
    stop = cgne_stop(pp.a_tilde, pp.b_tilde, zeta_norm, m_bound, delta, eps_op)

    err = stop.beta - zeta
    a_norm_err = float(np.sqrt(max(err @ a.entries @ err, 0.0)))
    scale = zeta_norm * m_bound * eps_op + delta
    details = _perturbation_details(pp)
    details.update(
        stop_index=stop.index, stop_reached=stop.reached, stop_residual=stop.residual,
        stop_threshold=stop.threshold,
        empirical_constant=a_norm_err / scale if scale > 0 else float('nan'),
    )
    return PerturbationReport('cgne_stop', epsilon, True, a_norm_err, float('nan'), None, 'stop', trial, details)


def audit_cgne_stop(a: MatrixLike, b, epsilon: float, trials: int, seed: int,
                    max_workers: Optional[int] = None) -> List[PerturbationReport]:
    """
    停止规则的描述性审计

    报告停止指标处的 A-范数误差 ‖ζ̃_s̃ − ζ_ls‖_A 与经验常数
    ‖ζ̃_s̃ − ζ_ls‖_A / (‖ζ_ls‖Mε + δ); 常数不可构造, 不给出判定。
    """
    a = as_psd(a)
    b = np.asarray(b, dtype=float).ravel()
    zeta = pseudo_inverse(a).entries @ b
    tasks = [(a, b, epsilon, seed, t, zeta) for t in range(trials)]
    return run_tasks(_cgne_trial, tasks, max_workers)


def _ratio_trial(task) -> List[float]:
    a, b, m, eps_grid, seed, trial, beta_ref = task
    rng = make_rng(seed, STREAM_PERTURB, trial)
    g = random_symmetric_direction(rng, a.dim)
    h = random_unit_vector(rng, a.dim)
    ratios = []
    for eps in eps_grid:
        a_tilde = a.entries + eps * a.op_norm * g
        b_tilde = b + eps * float(np.linalg.norm(b)) * h
        try:
            beta, kb = pls_solve(a_tilde, b_tilde, m)
        except DataError:
            ratios.append(float('nan'))
            continue
        if kb.effective_dim < m:
            ratios.append(float('nan'))
            continue
        ratios.append(float(np.linalg.norm(beta - beta_ref) / np.linalg.norm(beta_ref)) / eps)
    return ratios


def ratio_curve(a: MatrixLike, b, m: int, eps_grid: Sequence[float], trials: int, seed: int,
                max_workers: Optional[int] = None) -> pd.DataFrame:
    """
    ε → 0 时 PLS 解相对变化 / ε 的诊断曲线

    同一试验的扰动方向在整个 ε 网格上共享。

    Returns:
        列为 epsilon, max_ratio, median_ratio, admissible 的 DataFrame
    """
    a = as_psd(a)
    b = np.asarray(b, dtype=float).ravel()
    beta_ref, kb = pls_solve(a, b, m)
    if kb.effective_dim < m:
        raise DataError(f"m = {m} 超过 Krylov 维度 {kb.effective_dim}")
    eps_grid = tuple(float(e) for e in eps_grid)
    if not eps_grid or any(e <= 0 for e in eps_grid):
        raise DataError(f"ε 网格必须非空且为正: {eps_grid}")

    tasks = [(a, b, m, eps_grid, seed, t, beta_ref) for t in range(trials)]
    ratios = pd.DataFrame(run_tasks(_ratio_trial, tasks, max_workers), columns=list(eps_grid))
    return pd.DataFrame({
        'epsilon': list(eps_grid),
        'max_ratio': ratios.max(axis=0).to_numpy(),
        'median_ratio': ratios.median(axis=0).to_numpy(),
        'admissible': ratios.notna().sum(axis=0).to_numpy(),
    })


def latent_kappa_b(model: GeneratedModel, seed: int = 0, trials: Optional[int] = None,
                   eps_grid: Optional[Sequence[float]] = None,
                   max_workers: Optional[int] = None) -> KappaBEstimate:
    """C_{q,y} = κ_b(𝒦_m(Σ_q, Σ_qy)) 的估计"""
    return estimate_kappa_b(model.sigma_q, model.sigma_qy, model.config.m,
                            eps_grid=eps_grid, trials=trials, seed=seed, max_workers=max_workers)


def _sigma0_sq_bound(model: GeneratedModel, c_qy: float) -> float:
    sq2 = model.sigma_q_diag ** 2
    norm_q = float(sq2.max())
    kappa_q = float(sq2.max() / sq2.min())
    if c_qy == 0.0:
        return float('inf')
    return norm_q * min(1.0 / (64.0 * c_qy * (c_qy + 1.0)), 1.0 / (42.0 * kappa_q * c_qy))


def sigma0_admissible_bound(model: GeneratedModel, kappa_b: Optional[KappaBEstimate] = None,
                            seed: int = 0, trials: Optional[int] = None,
                            max_workers: Optional[int] = None) -> float:
    """
    噪声水平假设允许的最大 σ₀

    σ₀² <= ‖Σ_q‖·min{1/(64C(C+1)), 1/(42κ₂(Σ_q)C)}, C = C_{q,y}
    """
    if kappa_b is None:
        kappa_b = latent_kappa_b(model, seed, trials, max_workers=max_workers)
    return float(np.sqrt(_sigma0_sq_bound(model, kappa_b.value)))


def audit_population_bias(model: GeneratedModel, kappa_b: Optional[KappaBEstimate] = None,
                          seed: int = 0, trials: Optional[int] = None,
                          max_workers: Optional[int] = None) -> PerturbationReport:
    """
    总体 PLS 偏差 ‖β_pls,m − β₀‖/‖β₀‖ <= 210·C_{q,y}·σ₀²

    同时报告 d(𝒦_m(Σ_x, Σ_xy), ℬ₀) 与界 C_{q,y}σ₀², 以及 PCR 子空间到 ℬ₀ 的距离。
    不满足噪声水平假设时 admissible = False, 偏差仍描述性报告。

    Args:
        model: 带总体协方差的生成模型
        kappa_b: C_{q,y} 的估计, 缺省时估计
        seed: κ_b 估计的种子
        trials: κ_b 估计的试验次数
        max_workers: 进程数

    Returns:
        PerturbationReport (quantity = bias)
    """
    cfg = model.config
    if kappa_b is None:
        kappa_b = latent_kappa_b(model, seed, trials, max_workers=max_workers)
    c_qy = kappa_b.value
    sigma0_sq = cfg.sigma0 ** 2

    cov = model.population_cov
    fit = fit_pls(cov, cfg.m)
    bias = float(np.linalg.norm(fit.beta - model.beta0) / np.linalg.norm(model.beta0))
    distance = krylov_oracle_distance(cov, model, cfg.m)

    boundary = _sigma0_sq_bound(model, c_qy)
    admissible = sigma0_sq <= boundary * (1.0 + 1e-12) and fit.dof == cfg.m
    bias_bound = 210.0 * c_qy * sigma0_sq
    distance_bound = c_qy * sigma0_sq

    details = {
        'C_qy': c_qy,
        'kappa_b_converged': kappa_b.converged,
        'sigma0_sq': sigma0_sq,
        'sigma0_sq_boundary': boundary,
        'krylov_distance': distance,
        'distance_bound': distance_bound,
        'distance_satisfied': _verdict(admissible and not np.isnan(distance), distance, distance_bound),
        'pcr_distance': pcr_oracle_distance(cov, model, cfg.m),
        'snr': model.snr,
    }
    warnings = _kappa_warnings(kappa_b)
    if warnings:
        details['warnings'] = warnings
    logger.info(f"总体偏差 {bias:.3e} (界 {bias_bound:.3e}), Krylov 距离 {distance:.3e}, 可接受={admissible}")
    return PerturbationReport('pop_pls_bias', sigma0_sq, admissible, bias, bias_bound,
                              _verdict(admissible, bias, bias_bound), 'bias', 0, details)
