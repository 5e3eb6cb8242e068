"""
异常层次

每个异常类携带命令行退出码: 0 成功, 1 用法错误, 2 数据错误, 3 数值失败。
"""


class PlsAuditError(Exception):
    """工具包异常基类"""

    exit_code = 1


class UsageError(PlsAuditError, ValueError):
    """参数组合或命令行用法错误"""

    exit_code = 1


class DataError(PlsAuditError, ValueError):
    """输入数据不满足前置条件 (维度、取值域、CSV 格式等)"""

    exit_code = 2


class NumericalError(PlsAuditError, ArithmeticError):
    """数值计算失败 (不收敛、溢出、秩不足等)"""

    exit_code = 3
