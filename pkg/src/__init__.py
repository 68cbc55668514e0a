# -*- coding: utf-8 -*-
"""随机傅里叶级数临界点数值实验系统"""

__version__ = "1.0.0"
