# -*- coding: utf-8 -*-
"""
临界点实验系统 - 异常定义模块
============================

所有库内异常都继承自 LabError，并携带命令行退出码：

- 2：不变量违例（Euler 和、Morse 下界、BK 上界）
- 3：数值容差失败（积分不收敛、非半正定、条件化退化、枚举不可靠）
- 4：配置错误

版本：1.0.0
"""


class LabError(Exception):
    """实验系统异常基类"""

    exit_code = 1


class ConfigError(LabError, ValueError):
    """配置文件或命令行参数无效"""

    exit_code = 4


class FrequencyBudgetError(ConfigError):
    """激活频率数超过预算（ℏ 对当前维数过小）"""

    def __init__(self, message, count=None, budget=None):
        super().__init__(message)
        self.count = count
        self.budget = budget


class InvariantViolation(LabError, AssertionError):
    """拓扑或代数几何不变量被违反"""

    exit_code = 2

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.detail = detail or {}


class EnumerationIncompleteError(InvariantViolation):
    """全环面枚举不满足 Euler 和或 Morse 下界，视为查找器缺陷"""


class NumericalToleranceError(LabError, ArithmeticError):
    """数值计算未达到要求的容差"""

    exit_code = 3


class QuadratureError(NumericalToleranceError):
    """求积不收敛，携带达到的误差估计"""

    def __init__(self, message, achieved_error=None):
        super().__init__(message)
        self.achieved_error = achieved_error


class LatticeTailError(QuadratureError):
    """周期化格点半径不足以满足尾部容差"""


class NotPSDError(NumericalToleranceError):
    """矩阵不是半正定的，携带出错主元"""

    def __init__(self, message, pivot=None, index=None):
        super().__init__(message)
        self.pivot = pivot
        self.index = index


class DegenerateConditioningError(NumericalToleranceError):
    """观测块奇异，高斯条件化退化（y→0 时的预期情形）"""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class EnumerationUnreliableError(NumericalToleranceError):
    """Newton 失败率超过阈值，应提高扫描密度"""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ToleranceError(NumericalToleranceError):
    """Monte Carlo 标准误或奇异切除包络超出允许范围"""

    def __init__(self, message, achieved=None, allowed=None):
        super().__init__(message)
        self.achieved = achieved
        self.allowed = allowed
