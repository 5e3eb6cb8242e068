import logging
import os

from dotenv import load_dotenv

# 加载环境变量
load_dotenv()


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name, str(default))
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"环境变量 {name} 必须是整数, 实际为 {raw!r}")


class Config:
    """配置类"""

    # 输出与日志
    OUTPUT_DIR = os.getenv('PLSAUDIT_OUTPUT_DIR', './output')
    LOG_FILE = os.path.join(OUTPUT_DIR, os.getenv('PLSAUDIT_LOG_FILE', 'plsaudit.log'))
    LOG_LEVEL = os.getenv('PLSAUDIT_LOG_LEVEL', 'INFO').upper()
    WRITE_MARKDOWN = os.getenv('PLSAUDIT_WRITE_MARKDOWN', 'true').lower() in ('1', 'true', 'yes')

    # 并发进程数, 1 表示顺序执行
    MAX_WORKERS = _int_env('PLSAUDIT_MAX_WORKERS', 1)

    # 数值容差
    TOL_PSD = 1e-10
    BREAKDOWN_TOL = 1e-10
    RANGE_TOL = 1e-8
    ORTHONORMAL_TOL = 1e-10
    STANDARDIZED_RANK_TOL = 1e-12

    # IRPLS
    WEIGHT_FLOOR = 1e-10
    IRPLS_MAX_ITER = 25
    IRPLS_EPS = 1e-8

    # LASSO 路径
    LASSO_TOL = 1e-8
    LASSO_MAX_ITER = 10000
    LASSO_PATH_POINTS = 100
    LASSO_PATH_DECADES = 4

    # 扰动实验
    KAPPA_EPS_GRID = (1e-3, 1e-4, 1e-5)
    KAPPA_TRIALS = 64
    MAX_PERTURB_ATTEMPTS = 32
    PROJECTION_DRIFT_FLAG = 0.05
    SIGN_EXHAUSTIVE_MAX = 12

    # 模拟
    DEFAULT_REPS = 50

    @classmethod
    def validate(cls):
        """验证配置"""
        if not isinstance(logging.getLevelName(cls.LOG_LEVEL), int):
            raise ValueError(f"PLSAUDIT_LOG_LEVEL 无效: {cls.LOG_LEVEL}")
        if cls.MAX_WORKERS < 1:
            raise ValueError(f"PLSAUDIT_MAX_WORKERS 必须 >= 1, 实际为 {cls.MAX_WORKERS}")
        os.makedirs(cls.OUTPUT_DIR, exist_ok=True)
        return True
