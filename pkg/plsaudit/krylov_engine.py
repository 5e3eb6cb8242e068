"""
Krylov 空间引擎

Lanczos 三对角化 (每步完整重正交化) 构造自然正交基 K_s 与投影矩阵 T_s,
并提供子空间距离、符号对齐与 Krylov 条件数 κ_b 的蒙特卡洛估计。
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import Config
from plsaudit.errors import DataError, NumericalError
from plsaudit.linalg_core import MatrixLike, PsdMatrix, as_psd, principal_angles
from plsaudit.workers import STREAM_KAPPA, make_rng, run_tasks

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KrylovBasis:
    """
    Krylov 空间的自然正交基

    Attributes:
        basis: p×s 正交归一矩阵, 第一列为 b/‖b‖
        tridiag: s×s 对称三对角矩阵 T_s = K_sᵀ A K_s, 次对角元为正
        effective_dim: 实际维度 (<= 请求维度)
        breakdown: 是否在请求维度之前中断
        seed_norm: ‖b‖₂
        residual_norm: 下一个 Lanczos 残差范数, 中断或满维时为 0
    """

    basis: np.ndarray
    tridiag: np.ndarray
    effective_dim: int
    breakdown: bool
    seed_norm: float
    residual_norm: float = 0.0

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def extended_tridiag(self) -> np.ndarray:
        """(s+1)×s 矩阵 T̄_s, 满足 A·K_s = K_{s+1}·T̄_s"""
        s = self.effective_dim
        ext = np.zeros((s + 1, s))
        ext[:s, :] = self.tridiag
        ext[s, s - 1] = self.residual_norm
        return ext


def _as_seed(b, dim: int) -> np.ndarray:
    b = np.asarray(b, dtype=float).ravel()
    if b.shape[0] != dim:
        raise DataError(f"向量长度 {b.shape[0]} 与矩阵维度 {dim} 不一致")
    if not np.all(np.isfinite(b)):
        raise DataError("向量包含非有限值")
    return b


class LanczosProcess:
    """
    逐步增长的 Lanczos 分解

    每次 step() 追加一个基向量; 当残差 <= breakdown_tol·‖A‖_op 或达到满维时停止增长。
    """

    def __init__(self, a: MatrixLike, b, breakdown_tol: Optional[float] = None):
        self.a = as_psd(a)
        self.b = _as_seed(b, self.a.dim)
        self.seed_norm = float(np.linalg.norm(self.b))
        if self.seed_norm == 0.0:
            raise DataError("empty Krylov seed: 种子向量为零")

        tol = Config.BREAKDOWN_TOL if breakdown_tol is None else float(breakdown_tol)
        if tol <= 0.0:
            raise DataError(f"breakdown_tol 必须为正, 实际为 {tol}")
        self._threshold = tol * self.a.op_norm

        self._vectors: List[np.ndarray] = []
        self._alphas: List[float] = []
        self._betas: List[float] = []
        self._next = self.b / self.seed_norm
        self.exhausted = False

    @property
    def steps(self) -> int:
        return len(self._vectors)

    def step(self) -> bool:
        """
        执行一步 Lanczos

        Returns:
            是否新增了基向量
        """
        if self.exhausted:
            return False

        q = self._next
        self._vectors.append(q)
        w = self.a.entries @ q
        alpha = float(q @ w)
        self._alphas.append(alpha)

        basis = np.column_stack(self._vectors)
        for _ in range(2):
            w = w - basis @ (basis.T @ w)
        beta = float(np.linalg.norm(w))

        if self.steps == self.a.dim or beta <= self._threshold:
            self.exhausted = True
            self._next = None
            if self.steps < self.a.dim:
                logger.debug(f"Lanczos 在第 {self.steps} 步中断, 残差 {beta:.3e}")
        else:
            self._betas.append(beta)
            self._next = w / beta
        return True

    def snapshot(self, requested: Optional[int] = None, k: Optional[int] = None) -> KrylovBasis:
        """
        当前 (或前 k 步) 分解的 KrylovBasis

        Args:
            requested: 请求的维度, 用于设置 breakdown 标志
            k: 截取的步数, 默认全部
        """
        k = self.steps if k is None else int(k)
        if not 1 <= k <= self.steps:
            raise DataError(f"快照步数 {k} 超出已完成步数 {self.steps}")
        basis = np.column_stack(self._vectors[:k])
        off = np.asarray(self._betas[:k - 1])
        tridiag = np.diag(self._alphas[:k]) + np.diag(off, 1) + np.diag(off, -1)
        residual = self._betas[k - 1] if len(self._betas) >= k else 0.0
        requested = k if requested is None else requested
        return KrylovBasis(
            basis=basis,
            tridiag=tridiag,
            effective_dim=k,
            breakdown=k < requested,
            seed_norm=self.seed_norm,
            residual_norm=float(residual),
        )


def build_krylov(a: MatrixLike, b, s: Optional[int] = None,
                 breakdown_tol: Optional[float] = None) -> KrylovBasis:
    """
    构造 𝒦_s(A, b) 的自然正交基

    Args:
        a: 半正定矩阵
        b: 非零种子向量
        s: 请求维度, 默认 a.dim
        breakdown_tol: 相对中断阈值, 默认 Config.BREAKDOWN_TOL

    Returns:
        KrylovBasis
    """
    process = LanczosProcess(a, b, breakdown_tol)
    dim = process.a.dim
    s = dim if s is None else int(s)
    if not 1 <= s <= dim:
        raise DataError(f"Krylov 维度必须位于 [1, {dim}], 实际为 {s}")

    while process.steps < s and not process.exhausted:
        process.step()
    return process.snapshot(requested=s)


def krylov_dimension(a: MatrixLike, b, breakdown_tol: Optional[float] = None) -> int:
    """dim 𝒦(A, b)"""
    return build_krylov(a, b, None, breakdown_tol).effective_dim


def projected_system(a: MatrixLike, b, kb: KrylovBasis) -> Tuple[PsdMatrix, np.ndarray]:
    """
    投影系统 (A_s, b_s) = (T_s, K_sᵀ b)

    Args:
        a: 构造 kb 时的矩阵
        b: 构造 kb 时的向量
        kb: Krylov 基

    Returns:
        (T_s, K_sᵀ b)
    """
    a = as_psd(a)
    b = _as_seed(b, a.dim)
    if kb.basis.shape[0] != a.dim:
        raise DataError(f"Krylov 基的行数 {kb.basis.shape[0]} 与矩阵维度 {a.dim} 不一致")
    return PsdMatrix(kb.tridiag), kb.basis.T @ b


def subspace_distance(b1: np.ndarray, b2: np.ndarray) -> float:
    """等维子空间距离: 最大主角"""
    angles = principal_angles(b1, b2)
    return float(angles.max()) if angles.size else 0.0


def _sign_patterns(m: int) -> np.ndarray:
    bits = (np.arange(2 ** m)[:, None] >> np.arange(m)) & 1
    return 1.0 - 2.0 * bits


def align_signs(reference: np.ndarray, other: np.ndarray) -> np.ndarray:
    """
    选择对角符号矩阵 S 使 ‖other·S − reference‖_op 最小

    m <= SIGN_EXHAUSTIVE_MAX 时穷举 2^m 种符号, 否则逐列按内积符号贪心匹配。

    Args:
        reference: p×m 矩阵
        other: p×m 矩阵

    Returns:
        长度 m 的 ±1 向量
    """
    reference = np.asarray(reference, dtype=float)
    other = np.asarray(other, dtype=float)
    if reference.shape != other.shape:
        raise DataError(f"符号对齐要求形状一致: {reference.shape} vs {other.shape}")
    m = reference.shape[1]
    cross = other.T @ reference

    if m > Config.SIGN_EXHAUSTIVE_MAX:
        signs = np.sign(np.diag(cross))
        signs[signs == 0] = 1.0
        return signs

    # ‖KS − R‖²_op = λ_max(S KᵀK S − S KᵀR − RᵀK S + RᵀR)
    g_oo = other.T @ other
    g_rr = reference.T @ reference
    patterns = _sign_patterns(m)
    outer = patterns[:, :, None] * patterns[:, None, :]
    gram = outer * g_oo - patterns[:, :, None] * cross - (patterns[:, :, None] * cross).transpose(0, 2, 1) + g_rr
    top = np.linalg.eigvalsh(gram)[:, -1]
    return patterns[int(np.argmin(top))]


def aligned_difference(reference: np.ndarray, other: np.ndarray) -> float:
    """min_S ‖other·S − reference‖_op"""
    signs = align_signs(reference, other)
    return float(np.linalg.norm(np.asarray(other) * signs - np.asarray(reference), 2))


def basis_distance(k_ref: np.ndarray, k_other: np.ndarray) -> float:
    """自然基之间的旋转角 2·arcsin(min(1, ‖K̃S − K‖_op / 2))"""
    diff = aligned_difference(k_ref, k_other)
    return float(2.0 * np.arcsin(min(1.0, diff / 2.0)))


@dataclass(frozen=True)
class KappaBEstimate:
    """κ_b 的蒙特卡洛估计"""

    value: float
    epsilons: Tuple[float, ...]
    max_ratio_per_epsilon: Tuple[float, ...]
    admissible_per_epsilon: Tuple[int, ...]
    trials: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            'value': self.value,
            'epsilons': list(self.epsilons),
            'max_ratio_per_epsilon': list(self.max_ratio_per_epsilon),
            'admissible_per_epsilon': list(self.admissible_per_epsilon),
            'trials': self.trials,
            'converged': self.converged,
        }


def random_symmetric_direction(rng: np.random.Generator, p: int) -> np.ndarray:
    """算子范数为 1 的对称高斯方向"""
    g = rng.standard_normal((p, p))
    g = 0.5 * (g + g.T)
    return g / np.linalg.norm(g, 2)


def random_unit_vector(rng: np.random.Generator, p: int) -> np.ndarray:
    h = rng.standard_normal(p)
    return h / np.linalg.norm(h)


def _kappa_trial(task) -> List[float]:
    a_entries, b, m, reference, eps_grid, seed, trial = task
    rng = make_rng(seed, STREAM_KAPPA, trial)
    p = b.shape[0]
    g = random_symmetric_direction(rng, p)
    h = random_unit_vector(rng, p)
    a_norm = float(np.linalg.norm(a_entries, 2))
    b_norm = float(np.linalg.norm(b))

    ratios = []
    for eps in eps_grid:
        try:
            perturbed = build_krylov(a_entries + eps * a_norm * g, b + eps * b_norm * h, m)
        except DataError:
            ratios.append(float('nan'))
            continue
        if perturbed.effective_dim < m:
            ratios.append(float('nan'))
            continue
        ratios.append(basis_distance(reference, perturbed.basis) / eps)
    return ratios


def estimate_kappa_b(a: MatrixLike, b, m: int,
                     eps_grid: Optional[Sequence[float]] = None,
                     trials: Optional[int] = None, seed: int = 0,
                     max_workers: Optional[int] = None) -> KappaBEstimate:
    """
    估计 Krylov 条件数 κ_b(K_m)

    每次试验抽取一个对称方向 ΔA (‖ΔA‖_op = ε‖A‖_op) 与向量方向 Δb (‖Δb‖ = ε‖b‖),
    同一试验的方向在整个 ε 网格上共享; 记录 basis_distance(K_m, K̃_m)/ε。

    Args:
        a: 半正定矩阵
        b: 非零向量
        m: Krylov 维度 (不超过 krylov_dimension)
        eps_grid: 递减的正扰动尺度, 默认 Config.KAPPA_EPS_GRID
        trials: 每个 ε 的试验次数, 默认 Config.KAPPA_TRIALS
        seed: 随机种子
        max_workers: 进程数

    Returns:
        KappaBEstimate
    """
    a = as_psd(a)
    b = _as_seed(b, a.dim)
    eps_grid = tuple(float(e) for e in (Config.KAPPA_EPS_GRID if eps_grid is None else eps_grid))
    trials = Config.KAPPA_TRIALS if trials is None else int(trials)
    if not eps_grid or any(e <= 0 for e in eps_grid):
        raise DataError(f"ε 网格必须非空且为正: {eps_grid}")
    if any(e1 <= e2 for e1, e2 in zip(eps_grid, eps_grid[1:])):
        raise DataError(f"ε 网格必须严格递减: {eps_grid}")
    if trials < 1:
        raise DataError(f"试验次数必须 >= 1, 实际为 {trials}")

    reference = build_krylov(a, b, m)
    if reference.effective_dim < m:
        raise DataError(f"m = {m} 超过 Krylov 维度 {reference.effective_dim}")

    tasks = [(a.entries, b, m, reference.basis, eps_grid, seed, t) for t in range(trials)]
    ratios = np.array(run_tasks(_kappa_trial, tasks, max_workers), dtype=float)

    admissible = np.count_nonzero(~np.isnan(ratios), axis=0)
    max_ratio = np.array([
        np.nanmax(ratios[:, j]) if admissible[j] else float('nan')
        for j in range(len(eps_grid))
    ])
    valid = [j for j in range(len(eps_grid)) if admissible[j] >= trials / 2]
    if not valid:
        raise NumericalError(
            f"perturbation grid too coarse: 每个 ε 的可接受试验都少于 {trials / 2:g}"
        )

    value = float(max(max_ratio[j] for j in valid))
    converged = False
    if len(valid) >= 2:
        r_small, r_next = max_ratio[valid[-1]], max_ratio[valid[-2]]
        scale = max(r_small, r_next)
        converged = bool(scale == 0.0 or abs(r_small - r_next) <= 0.2 * scale)

    logger.info(f"κ_b 估计值 {value:.4g} (m={m}, 试验 {trials} 次, 收敛={converged})")
    return KappaBEstimate(
        value=value,
        epsilons=eps_grid,
        max_ratio_per_epsilon=tuple(float(r) for r in max_ratio),
        admissible_per_epsilon=tuple(int(c) for c in admissible),
        trials=trials,
        converged=converged,
    )
