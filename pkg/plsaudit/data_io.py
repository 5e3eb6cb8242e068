"""
CSV 数据读写

数据集格式: 首行为表头, 响应列名为 y, 其余列为数值特征, 逗号分隔, UTF-8 编码。
"""

import logging
import os
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from plsaudit.errors import DataError, UsageError
from plsaudit.linalg_core import PsdMatrix, random_psd_matrix
from plsaudit.report_writer import write_csv

logger = logging.getLogger(__name__)

RESPONSE_COLUMN = 'y'


@dataclass(frozen=True)
class Dataset:
    """读入的数据集"""

    x: np.ndarray
    y: np.ndarray
    feature_names: Tuple[str, ...]
    source: str = ''

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def _read_frame(path: str, **kwargs) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataError(f"文件不存在: {path}")
    try:
        return pd.read_csv(path, encoding='utf-8', float_precision='round_trip', **kwargs)
    except pd.errors.EmptyDataError:
        raise DataError(f"CSV 文件为空: {path}")
    except pd.errors.ParserError as e:
        raise DataError(f"CSV 解析失败 {path}: {e}")
    except UnicodeDecodeError as e:
        raise DataError(f"CSV 不是 UTF-8 编码 {path}: {e}")


def _numeric_values(frame: pd.DataFrame, path: str, header_lines: int) -> np.ndarray:
    """逐列转为浮点数, 第一个非数值单元格报告其所在的文件行号"""
    converted = frame.apply(pd.to_numeric, errors='coerce')
    bad = converted.isna().to_numpy() | ~np.isfinite(converted.to_numpy(dtype=float))
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raw = frame.iat[row, col]
        raise DataError(
            f"{path} 第 {row + 1 + header_lines} 行, 列 {frame.columns[col]!r} 不是有限数值: {raw!r}"
        )
    return converted.to_numpy(dtype=float)


def read_dataset(path: str) -> Dataset:
    """
    读取带表头的数据集 CSV

    Args:
        path: 文件路径

    Returns:
        Dataset
    """
    frame = _read_frame(path)
    columns = [str(c) for c in frame.columns]
    if RESPONSE_COLUMN not in columns:
        raise DataError(f"{path} 缺少响应列 {RESPONSE_COLUMN!r}, 表头为 {columns}")
    features = [c for c in columns if c != RESPONSE_COLUMN]
    if not features:
        raise DataError(f"{path} 没有特征列")
    if frame.shape[0] == 0:
        raise DataError(f"{path} 没有数据行")

    values = _numeric_values(frame[features + [RESPONSE_COLUMN]], path, header_lines=1)
    logger.info(f"读取数据集 {path}: n={values.shape[0]}, p={len(features)}")
    return Dataset(x=values[:, :-1], y=values[:, -1], feature_names=tuple(features), source=path)


def check_compatible(train: Dataset, test: Dataset) -> None:
    """训练集与测试集的特征列必须一致 (名称与顺序)"""
    if train.feature_names != test.feature_names:
        raise DataError(
            f"训练集与测试集特征列不一致: {list(train.feature_names)} vs {list(test.feature_names)}"
        )


def center_datasets(train: Dataset, test: Optional[Dataset] = None) -> Tuple[Dataset, Optional[Dataset], dict]:
    """
    用训练集均值中心化特征与响应

    Returns:
        (中心化训练集, 中心化测试集, 均值字典)
    """
    x_mean = train.x.mean(axis=0)
    y_mean = float(train.y.mean())
    centered_train = replace(train, x=train.x - x_mean, y=train.y - y_mean)
    centered_test = None
    if test is not None:
        centered_test = replace(test, x=test.x - x_mean, y=test.y - y_mean)
    return centered_train, centered_test, {'x_mean': x_mean.tolist(), 'y_mean': y_mean}


def write_dataset(path: str, x, y) -> str:
    """按 x1..xp, y 列写出数据集"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DataError(f"设计矩阵形状 {x.shape} 与响应长度 {y.shape[0]} 不匹配")
    frame = pd.DataFrame(x, columns=[f"x{j}" for j in range(1, x.shape[1] + 1)])
    frame[RESPONSE_COLUMN] = y
    return write_csv(frame, path)


def read_matrix(path: str) -> PsdMatrix:
    """读取无表头的方阵 CSV"""
    frame = _read_frame(path, header=None)
    values = _numeric_values(frame, path, header_lines=0)
    if values.shape[0] != values.shape[1]:
        raise DataError(f"{path} 不是方阵: {values.shape}")
    return PsdMatrix(values)


def parse_vector(text: str) -> np.ndarray:
    """解析逗号分隔的向量"""
    try:
        values = np.array([float(v) for v in text.split(',') if v.strip()])
    except ValueError:
        raise UsageError(f"无法解析向量: {text!r}")
    if values.size == 0:
        raise UsageError(f"向量为空: {text!r}")
    return values


def parse_synthetic(descriptor: str) -> PsdMatrix:
    """
    解析合成矩阵描述

    diag:v1,v2,...          对角矩阵
    random:p[:rank[:seed]]  随机半正定矩阵

    Args:
        descriptor: 描述字符串

    Returns:
        PsdMatrix
    """
    kind, _, rest = descriptor.partition(':')
    if kind == 'diag':
        return PsdMatrix(np.diag(parse_vector(rest)))
    if kind == 'random':
        parts = rest.split(':')
        if not 1 <= len(parts) <= 3:
            raise UsageError(f"random 描述应为 random:p[:rank[:seed]], 实际为 {descriptor!r}")
        try:
            numbers = [int(v) for v in parts]
        except ValueError:
            raise UsageError(f"random 描述中的参数必须是整数: {descriptor!r}")
        p = numbers[0]
        rank = numbers[1] if len(numbers) > 1 else p
        seed = numbers[2] if len(numbers) > 2 else 0
        return random_psd_matrix(p, rank, seed)
    raise UsageError(f"未知合成矩阵描述: {descriptor!r}, 应为 diag:... 或 random:...")


def parse_dof_range(text: str) -> Sequence[int]:
    """解析 a..b, a-b 或 a:b 形式的自由度范围 (闭区间)"""
    for sep in ('..', ':', '-'):
        if sep in text:
            lo, _, hi = text.partition(sep)
            break
    else:
        lo = hi = text
    try:
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise UsageError(f"无法解析自由度范围: {text!r}")
    if lo < 1 or hi < lo:
        raise UsageError(f"自由度范围必须满足 1 <= a <= b, 实际为 {text!r}")
    return range(lo, hi + 1)
