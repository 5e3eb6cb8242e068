"""
随机流与并发任务执行

每个重复实验 / 蒙特卡洛试验都从 (seed, 流编号, 序号) 派生独立的 Philox 计数器随机流,
因此结果与进程数无关。
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

from config import Config
from plsaudit.errors import DataError

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')

# 随机流编号
STREAM_ROTATION = 1
STREAM_NOISE_ROTATION = 2
STREAM_DATASET = 3
STREAM_KAPPA = 4
STREAM_PERTURB = 5
STREAM_RANDOM_PSD = 6


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    派生随机数生成器

    Args:
        seed: 主种子 (非负整数)
        keys: 流编号与序号

    Returns:
        基于 Philox 的生成器
    """
    if int(seed) < 0 or any(int(k) < 0 for k in keys):
        raise DataError(f"种子必须为非负整数: seed={seed}, keys={keys}")
    entropy = [int(seed), *(int(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def run_tasks(func: Callable[[T], R], tasks: Iterable[T],
              max_workers: Optional[int] = None) -> List[R]:
    """
    顺序或在进程池中执行任务, 结果顺序与任务顺序一致

    Args:
        func: 模块级函数 (需可序列化)
        tasks: 任务参数序列
        max_workers: 进程数, 默认取 Config.MAX_WORKERS

    Returns:
        结果列表
    """
    tasks = list(tasks)
    workers = Config.MAX_WORKERS if max_workers is None else int(max_workers)
    if workers <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]

    chunksize = max(1, len(tasks) // (4 * workers))
    logger.info(f"使用 {workers} 个进程执行 {len(tasks)} 个任务")
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, tasks, chunksize=chunksize))
