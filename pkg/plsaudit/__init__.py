# Krylov 偏最小二乘病态回归审计工具包

__version__ = "0.1.0"
