"""
稠密对称线性代数

半正定矩阵类型、特征分解、伪逆、条件数、正交化与主角。
所有类型构造后不可变, 所有函数无副作用。
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg as sla
from scipy.stats import ortho_group

from config import Config
from plsaudit.errors import DataError, NumericalError
from plsaudit.workers import STREAM_RANDOM_PSD, make_rng

logger = logging.getLogger(__name__)

MACHINE_EPSILON = np.finfo(np.float64).eps


@dataclass(frozen=True)
class EigenDecomposition:
    """特征分解, 特征值非增, 第 i 列特征向量对应第 i 个特征值"""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def top(self, s: int) -> np.ndarray:
        """前 s 个特征向量"""
        return self.eigenvectors[:, :s]


@dataclass(frozen=True, eq=False)
class PsdMatrix:
    """
    对称半正定矩阵

    构造时对称化 (A + Aᵀ)/2; 特征分解按需计算并缓存,
    低于 -TOL_PSD·λ_max 的负特征值视为非半正定输入。
    """

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DataError(f"半正定矩阵必须是非空方阵, 实际形状 {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DataError("矩阵包含非有限值")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, 'entries', a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def eigen(self) -> EigenDecomposition:
        return _decompose(self.entries)

    @cached_property
    def op_norm(self) -> float:
        """算子范数 (半正定时等于最大特征值)"""
        if 'eigen' in self.__dict__:
            return float(self.eigen.eigenvalues[0])
        n = self.dim
        try:
            top = sla.eigvalsh(self.entries, subset_by_index=[n - 1, n - 1])[0]
        except sla.LinAlgError as e:
            raise NumericalError(f"最大特征值计算失败 (矩阵维度 {n}): {e}")
        return float(max(top, 0.0))


MatrixLike = Union[PsdMatrix, np.ndarray]


def as_psd(a: MatrixLike) -> PsdMatrix:
    """把数组包装为 PsdMatrix, 已是 PsdMatrix 时原样返回"""
    if isinstance(a, PsdMatrix):
        return a
    return PsdMatrix(np.asarray(a, dtype=float))


def eigh_descending(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    对称矩阵 (可以不定) 的特征分解, 特征值降序

    每个特征向量取绝对值最大分量为正的符号。

    Args:
        matrix: 对称矩阵

    Returns:
        (特征值, 特征向量)
    """
    m = np.asarray(matrix, dtype=float)
    try:
        values, vectors = sla.eigh(m)
    except ValueError as e:
        raise DataError(f"特征分解输入无效 (矩阵维度 {m.shape[0]}): {e}")
    except sla.LinAlgError as e:
        raise NumericalError(f"特征分解未收敛 (矩阵维度 {m.shape[0]}): {e}")

    values = values[::-1]
    vectors = vectors[:, ::-1]
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return values, vectors * signs


def _decompose(entries: np.ndarray) -> EigenDecomposition:
    values, vectors = eigh_descending(entries)
    lam_max = max(values[0], 0.0)
    if values[-1] < -Config.TOL_PSD * lam_max:
        raise DataError(
            f"矩阵不是半正定的: 最小特征值 {values[-1]:.3e}, 最大特征值 {lam_max:.3e}"
        )
    values = np.where(values < 0.0, 0.0, values)
    values.setflags(write=False)
    vectors.setflags(write=False)
    return EigenDecomposition(eigenvalues=values, eigenvectors=vectors)


def sym_eigen(a: MatrixLike) -> EigenDecomposition:
    """
    半正定矩阵的特征分解

    Args:
        a: 半正定矩阵

    Returns:
        特征值非增排列的 EigenDecomposition
    """
    return as_psd(a).eigen


def _resolve_rank_tol(dim: int, rank_tol: Optional[float]) -> float:
    if rank_tol is None:
        return dim * MACHINE_EPSILON
    if not 0.0 < rank_tol < 1.0:
        raise DataError(f"rank_tol 必须位于 (0, 1), 实际为 {rank_tol}")
    return float(rank_tol)


def _kept(a: PsdMatrix, rank_tol: Optional[float]) -> np.ndarray:
    tol = _resolve_rank_tol(a.dim, rank_tol)
    values = a.eigen.eigenvalues
    if values[0] <= 0.0:
        return np.zeros_like(values, dtype=bool)
    return values > tol * values[0]


def numerical_rank(a: MatrixLike, rank_tol: Optional[float] = None) -> int:
    """相对阈值 rank_tol·λ_max 之上的特征值个数"""
    return int(np.count_nonzero(_kept(as_psd(a), rank_tol)))


def range_projector(a: MatrixLike, rank_tol: Optional[float] = None) -> np.ndarray:
    """到 range(A) 的正交投影矩阵"""
    a = as_psd(a)
    v = a.eigen.eigenvectors[:, _kept(a, rank_tol)]
    return v @ v.T


def pseudo_inverse(a: MatrixLike, rank_tol: Optional[float] = None) -> PsdMatrix:
    """
    Moore-Penrose 伪逆

    Args:
        a: 半正定矩阵
        rank_tol: 相对秩阈值, 默认 dim·机器精度

    Returns:
        A⁺ (零矩阵返回零矩阵)
    """
    a = as_psd(a)
    keep = _kept(a, rank_tol)
    values = a.eigen.eigenvalues[keep]
    v = a.eigen.eigenvectors[:, keep]
    return PsdMatrix((v / values) @ v.T)


def condition_number_psd(a: MatrixLike, rank_tol: Optional[float] = None) -> float:
    """
    限制在值域上的条件数 κ₂(A) = λ_max / λ_min⁺

    Args:
        a: 非零半正定矩阵
        rank_tol: 相对秩阈值

    Returns:
        条件数
    """
    a = as_psd(a)
    keep = _kept(a, rank_tol)
    if not keep.any():
        raise NumericalError("undefined condition number: 零矩阵没有条件数")
    values = a.eigen.eigenvalues[keep]
    return float(values[0] / values[-1])


def standardized_condition_number(x: np.ndarray) -> float:
    """
    标准化数据集的条件数 κ̃

    丢弃零方差列, 其余列中心化并缩放到单位样本标准差, 返回样本协方差的 κ₂;
    秩亏时返回 +inf。

    Args:
        x: n×p 数据矩阵

    Returns:
        κ̃
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError(f"标准化条件数需要 n >= 2 的二维数据, 实际形状 {x.shape}")

    std = x.std(axis=0, ddof=1)
    scale = np.abs(x).max(axis=0)
    keep = std > 1e-12 * np.where(scale > 0, scale, 1.0)
    if not keep.any():
        raise DataError("所有列均为常数, 无法标准化")
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        logger.info(f"丢弃 {dropped} 个零方差列")

    z = (x[:, keep] - x[:, keep].mean(axis=0)) / std[keep]
    cov = PsdMatrix(z.T @ z / (x.shape[0] - 1))
    values = cov.eigen.eigenvalues
    if values[-1] <= Config.STANDARDIZED_RANK_TOL * values[0]:
        logger.warning("标准化协方差秩亏, 条件数记为无穷大")
        return float('inf')

    kappa = float(values[0] / values[-1])
    if np.log10(kappa) > 3:
        logger.warning(f"多重共线性显著: log10(κ̃) = {np.log10(kappa):.2f}")
    return kappa


def orthonormalize(v: np.ndarray) -> np.ndarray:
    """
    带一次完整重正交化的修正 Gram-Schmidt

    残差范数 <= 1e-12·原列范数的列被丢弃, 其余列保持原顺序。

    Args:
        v: p×k 矩阵

    Returns:
        p×k' 正交归一矩阵
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    columns = []
    for j in range(v.shape[1]):
        col = v[:, j].copy()
        norm0 = np.linalg.norm(col)
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for q in columns:
                col -= (q @ col) * q
        norm1 = np.linalg.norm(col)
        if norm1 <= 1e-12 * norm0:
            continue
        columns.append(col / norm1)

    if not columns:
        return np.zeros((v.shape[0], 0))
    return np.column_stack(columns)


def check_orthonormal(b: np.ndarray, name: str = "basis") -> np.ndarray:
    """校验列正交归一 (容差 ORTHONORMAL_TOL), 返回二维数组"""
    b = np.asarray(b, dtype=float)
    if b.ndim == 1:
        b = b[:, None]
    if b.ndim != 2:
        raise DataError(f"{name} 必须是二维矩阵")
    gram = b.T @ b
    err = np.max(np.abs(gram - np.eye(b.shape[1]))) if b.shape[1] else 0.0
    if err > Config.ORTHONORMAL_TOL:
        raise DataError(f"{name} 不是正交归一的: ‖BᵀB − I‖_max = {err:.3e}")
    return b


def principal_angles(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """
    两个等维子空间之间的主角, 非降序, 取值 [0, π/2]

    Args:
        b1: p×m 正交归一矩阵
        b2: p×m 正交归一矩阵

    Returns:
        m 个主角
    """
    b1 = check_orthonormal(b1, "b1")
    b2 = check_orthonormal(b2, "b2")
    if b1.shape != b2.shape:
        raise DataError(f"主角要求形状一致: {b1.shape} vs {b2.shape}")
    if b1.shape[1] == 0:
        return np.zeros(0)

    forward = np.sort(sla.subspace_angles(b1, b2))
    backward = np.sort(sla.subspace_angles(b2, b1))
    return np.clip(np.maximum(forward, backward), 0.0, np.pi / 2)


def random_psd_matrix(p: int, rank: Optional[int] = None, seed: int = 0,
                      decades: float = 2.0) -> PsdMatrix:
    """
    随机半正定矩阵 V diag(λ) Vᵀ, V 为 Haar 正交矩阵, 非零特征值在 [10^-decades, 1] 上对数均匀

    Args:
        p: 维度
        rank: 秩, 默认满秩
        seed: 随机种子
        decades: 谱跨越的数量级

    Returns:
        PsdMatrix
    """
    rank = p if rank is None else int(rank)
    if p < 1 or not 0 <= rank <= p:
        raise DataError(f"要求 p >= 1 且 0 <= rank <= p, 实际 p={p}, rank={rank}")
    rng = make_rng(seed, STREAM_RANDOM_PSD, 0)
    values = np.zeros(p)
    values[:rank] = np.sort(10.0 ** rng.uniform(-decades, 0.0, rank))[::-1]
    if rank > 0:
        values[0] = 1.0
    v = np.eye(1) if p == 1 else ortho_group.rvs(p, random_state=rng)
    return PsdMatrix((v * values) @ v.T)
