# -*- coding: utf-8 -*-
"""
临界点实验系统 - 高斯工具模块
============================

本模块提供实验所需的稠密对称线性代数与高斯计算工具：

1. 带主元截断的半正定 Cholesky 分解
2. 多元高斯采样与回归公式条件化（Schur 补）
3. GOE 采样及 E|det| 的 Monte Carlo 估计
4. 概率论 Hermite 多项式（单变量与多重指标）
5. 高斯比较界的数值检查

所有维数都不超过 2(m + m(m+1)/2) ≤ 24，因此一律使用稠密矩阵。
对称矩阵以完整的 numpy 数组表示；Hessian 作为向量时按“先对角、
再按字典序的上三角非对角元”排列，非对角元不重复。

版本：1.0.0
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateConditioningError, NotPSDError

logger = logging.getLogger(__name__)

# 主元截断容差（相对 ‖M‖）
PIVOT_TOLERANCE = 1e-10

# Hermite 多项式的最大阶数
MAX_HERMITE_ORDER = 40


@dataclass
class ConditionedGaussian:
    """条件化后剩余坐标的高斯分布"""

    mean: np.ndarray
    cov: np.ndarray
    remaining_idx: Tuple[int, ...]
    observed_idx: Tuple[int, ...] = ()
    min_eigenvalue: float = math.inf
    # 观测块在观测值处的高斯密度
    observed_density: float = 1.0
    # 回归矩阵 Σ₁₂Σ₂₂⁻¹，仅供调试输出
    regression: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dimension(self):
        return len(self.remaining_idx)


@dataclass
class ComparisonCheck:
    """高斯比较界检查结果"""

    lhs: float
    rhs: float
    lhs_se: float
    expectation_a: float
    expectation_b: float

    @property
    def holds(self):
        return self.lhs <= self.rhs


def symmetric_dimension(m):
    """m×m 对称矩阵独立元个数 ν(m) = m(m+1)/2"""
    return m * (m + 1) // 2


def hessian_index_pairs(m):
    """
    Hessian 向量化的坐标顺序

    Returns:
        list: [(0,0), (1,1), ..., (0,1), (0,2), ..., (m-2,m-1)]
    """
    pairs = [(i, i) for i in range(m)]
    pairs.extend((i, j) for i in range(m) for j in range(i + 1, m))
    return pairs


def hessian_to_vector(hessian):
    """把（批量）对称矩阵按约定顺序展平为向量"""
    hessian = np.asarray(hessian, dtype=float)
    m = hessian.shape[-1]
    rows, cols = zip(*hessian_index_pairs(m))
    return hessian[..., list(rows), list(cols)]


def vector_to_hessian(vector, m):
    """把（批量）约定顺序的向量还原为对称矩阵"""
    vector = np.asarray(vector, dtype=float)
    nu = symmetric_dimension(m)
    if vector.shape[-1] != nu:
        raise ValueError(f"向量长度 {vector.shape[-1]} 与 ν({m})={nu} 不符")
    matrix = np.zeros(vector.shape[:-1] + (m, m))
    for k, (i, j) in enumerate(hessian_index_pairs(m)):
        matrix[..., i, j] = vector[..., k]
        matrix[..., j, i] = vector[..., k]
    return matrix


def multi_indices(dimension, max_order, min_order=0):
    """
    按分次字典序枚举多重指标 α（min_order ≤ |α| ≤ max_order）

    同一总阶数内，第一个分量较大的指标排在前面。
    """
    indices = [
        alpha for alpha in product(range(max_order + 1), repeat=dimension)
        if min_order <= sum(alpha) <= max_order
    ]
    indices.sort(key=lambda alpha: (sum(alpha), tuple(-a for a in alpha)))
    return indices


def multi_factorial(alpha):
    """α! = Π α_k!"""
    return math.prod(math.factorial(a) for a in alpha)


def _check_symmetric(matrix):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"需要方阵，得到形状 {matrix.shape}")
    scale = max(np.abs(matrix).max(initial=0.0), 1.0)
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError("矩阵不对称")
    return 0.5 * (matrix + matrix.T)


def factor_psd(matrix, tol=PIVOT_TOLERANCE, return_pivot=False):
    """
    半正定矩阵的下三角分解 L·Lᵀ = M

    主元落在 [−tol·‖M‖, tol·‖M‖] 内时截断为 0（对应列置零），
    低于 −tol·‖M‖ 视为非半正定。

    Args:
        matrix: 对称矩阵
        tol (float): 相对主元容差
        return_pivot (bool): 是否同时返回最小主元

    Returns:
        np.ndarray 或 (np.ndarray, float)

    Raises:
        NotPSDError: 主元低于容差，异常携带主元值
    """
    matrix = _check_symmetric(matrix)
    n = matrix.shape[0]
    lower = np.zeros_like(matrix)
    norm = float(np.linalg.norm(matrix, 2)) if n else 0.0
    if norm == 0.0:
        return (lower, 0.0) if return_pivot else lower

    threshold = tol * norm
    min_pivot = math.inf
    for j in range(n):
        row = lower[j, :j]
        pivot = matrix[j, j] - row @ row
        min_pivot = min(min_pivot, pivot)
        column = matrix[j + 1:, j] - lower[j + 1:, :j] @ row
        if pivot < -threshold:
            raise NotPSDError(f"矩阵非半正定：第 {j} 个主元为 {pivot:.3e}", pivot=pivot, index=j)
        if pivot <= threshold:
            # 零主元：剩余列必须同时消失
            if column.size and np.abs(column).max() > 10.0 * math.sqrt(threshold * norm):
                worst = float(np.abs(column).max())
                raise NotPSDError(
                    f"矩阵非半正定：第 {j} 个主元为零但耦合项为 {worst:.3e}",
                    pivot=pivot, index=j,
                )
            continue
        lower[j, j] = math.sqrt(pivot)
        lower[j + 1:, j] = column / lower[j, j]

    return (lower, float(min_pivot)) if return_pivot else lower


def psd_sqrt(matrix):
    """对称半正定平方根（特征分解，负特征值截断为 0）"""
    matrix = _check_symmetric(matrix)
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    scale = max(abs(eigenvalues).max(initial=0.0), 1e-300)
    if eigenvalues.min(initial=0.0) < -PIVOT_TOLERANCE * scale:
        raise NotPSDError(f"矩阵非半正定：最小特征值 {eigenvalues.min():.3e}", pivot=float(eigenvalues.min()))
    root = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (eigenvectors * root) @ eigenvectors.T


def sample_gaussian(cov, rng, size=None, mean=None):
    """
    多元高斯采样 x = mean + L·g

    Args:
        cov: 协方差矩阵（半正定）
        rng (np.random.Generator): 随机数流
        size (int): 样本数；None 表示单个向量
        mean: 均值向量，默认 0

    Returns:
        np.ndarray: 形状 (n,) 或 (size, n)
    """
    lower = factor_psd(cov)
    n = lower.shape[0]
    draws = rng.standard_normal((1 if size is None else int(size), n)) @ lower.T
    if mean is not None:
        draws = draws + np.asarray(mean, dtype=float)
    return draws[0] if size is None else draws


def condition_gaussian(joint, observed_idx, observed_vals, mean=None, tol=PIVOT_TOLERANCE):
    """
    回归公式条件化：在 X₂ = v 的条件下求 X₁ 的分布

    mean = μ₁ + Σ₁₂Σ₂₂⁻¹(v − μ₂)，cov = Σ₁₁ − Σ₁₂Σ₂₂⁻¹Σ₂₁

    Raises:
        DegenerateConditioningError: 观测块最小特征值 ≤ tol·‖Σ₂₂‖
    """
    joint = _check_symmetric(joint)
    n = joint.shape[0]
    observed = tuple(int(i) for i in observed_idx)
    remaining = tuple(i for i in range(n) if i not in observed)
    mu = np.zeros(n) if mean is None else np.asarray(mean, dtype=float)

    if not observed:
        return ConditionedGaussian(mean=mu.copy(), cov=joint.copy(), remaining_idx=remaining)

    values = np.asarray(observed_vals, dtype=float).reshape(len(observed))
    obs = list(observed)
    rest = list(remaining)
    s22 = joint[np.ix_(obs, obs)]
    s12 = joint[np.ix_(rest, obs)]
    s11 = joint[np.ix_(rest, rest)]

    eigenvalues = np.linalg.eigvalsh(s22)
    min_eig = float(eigenvalues[0])
    scale = max(abs(float(eigenvalues[-1])), 1e-300)
    if min_eig <= tol * scale:
        raise DegenerateConditioningError(
            f"观测块近奇异：最小特征值 {min_eig:.3e}（尺度 {scale:.3e}）", min_eigenvalue=min_eig,
        )

    factor = cho_factor(s22, lower=True)
    residual = values - mu[obs]
    regression = cho_solve(factor, s12.T).T
    cond_mean = mu[rest] + regression @ residual
    cond_cov = s11 - regression @ s12.T
    cond_cov = 0.5 * (cond_cov + cond_cov.T)

    # 观测块在 v 处的密度
    log_det = 2.0 * np.log(np.diag(factor[0])).sum()
    quad = residual @ cho_solve(factor, residual)
    density = math.exp(-0.5 * quad - 0.5 * log_det - 0.5 * len(obs) * math.log(2.0 * math.pi))

    logger.debug("条件化: 观测 %d 维, 最小特征值 %.3e", len(obs), min_eig)
    return ConditionedGaussian(
        mean=cond_mean,
        cov=cond_cov,
        remaining_idx=remaining,
        observed_idx=observed,
        min_eigenvalue=min_eig,
        observed_density=density,
        regression=regression,
    )


def sample_goe(m, rng, size=None):
    """GOE 采样：对角方差 2，非对角方差 1，均值 0，对称"""
    if m < 1:
        raise ValueError(f"维数必须 ≥ 1，得到 {m}")
    shape = (m, m) if size is None else (int(size), m, m)
    gauss = rng.standard_normal(shape)
    upper = np.triu(gauss, 1)
    matrix = upper + np.swapaxes(upper, -1, -2)
    diag = np.arange(m)
    matrix[..., diag, diag] = math.sqrt(2.0) * gauss[..., diag, diag]
    return matrix


def expected_abs_det_goe(m, n_samples, rng, batch=100_000):
    """
    GOE 的 E|det A| 的 Monte Carlo 估计

    Returns:
        tuple: (估计值, 标准误)
    """
    if n_samples < 10_000:
        raise ValueError(f"样本数至少 10⁴，得到 {n_samples}")
    total = 0.0
    total_sq = 0.0
    remaining = int(n_samples)
    while remaining > 0:
        size = min(batch, remaining)
        dets = np.abs(np.linalg.det(sample_goe(m, rng, size)))
        total += dets.sum()
        total_sq += (dets ** 2).sum()
        remaining -= size
    n = float(n_samples)
    mean = total / n
    variance = max(total_sq / n - mean ** 2, 0.0) * n / (n - 1.0)
    return mean, math.sqrt(variance / n)


def hermite(n, x):
    """
    概率论 Hermite 多项式 H_n(x)

    递推 H_{n+1}(x) = x·H_n(x) − n·H_{n−1}(x)，支持数组输入。
    """
    if n < 0 or n > MAX_HERMITE_ORDER:
        raise ValueError(f"Hermite 阶数必须在 [0, {MAX_HERMITE_ORDER}]，得到 {n}")
    x_arr = np.asarray(x, dtype=float)
    previous = np.ones_like(x_arr)
    if n == 0:
        return previous if x_arr.ndim else float(previous)
    current = x_arr.copy()
    for k in range(1, n):
        previous, current = current, x_arr * current - k * previous
    return current if x_arr.ndim else float(current)


def hermite_table(n_max, x):
    """H_0..H_{n_max} 在 x 处的值，形状 (n_max+1,) + x.shape"""
    x_arr = np.asarray(x, dtype=float)
    table = np.empty((n_max + 1,) + x_arr.shape)
    table[0] = 1.0
    if n_max >= 1:
        table[1] = x_arr
    for k in range(1, n_max):
        table[k + 1] = x_arr * table[k] - k * table[k - 1]
    return table


def hermite_multi(alpha, x):
    """多重指标 Hermite 多项式 H_α(x) = Π H_{α_k}(x_k)"""
    x_arr = np.asarray(x, dtype=float)
    if x_arr.shape[-1] != len(alpha):
        raise ValueError(f"多重指标长度 {len(alpha)} 与向量维数 {x_arr.shape[-1]} 不符")
    result = np.ones(x_arr.shape[:-1])
    for k, order in enumerate(alpha):
        if order:
            result = result * hermite(order, x_arr[..., k])
    return result if result.ndim else float(result)


def hermite_at_zero(n):
    """H_n(0) 的精确整数值：奇数为 0，H_{2r}(0) = (−1)^r (2r)!/(2^r r!)"""
    if n % 2:
        return 0
    r = n // 2
    return (-1) ** r * math.factorial(2 * r) // (2 ** r * math.factorial(r))


# 齐次函数标签 -> (求值函数, 次数, Lipschitz 常数)
def _abs_det_function(dimension):
    m = int(round((math.sqrt(8 * dimension + 1) - 1) / 2))
    if symmetric_dimension(m) != dimension:
        raise ValueError(f"维数 {dimension} 不是某个 ν(m)")
    # 单位球上余子式范数的上界
    lipschitz = {1: 1.0, 2: 2.0, 3: 4.0}.get(m, float(m * m))

    def evaluate(vectors):
        return np.abs(np.linalg.det(vector_to_hessian(vectors, m)))

    return evaluate, float(m), lipschitz


def _norm_power_function(degree):
    if degree < 1:
        raise ValueError(f"次数必须 ≥ 1，得到 {degree}")

    def evaluate(vectors):
        return np.linalg.norm(vectors, axis=-1) ** degree

    return evaluate, float(degree), float(degree)


def _homogeneous_function(tag, dimension, degree):
    if tag == "abs-det":
        return _abs_det_function(dimension)
    if tag == "norm-power":
        return _norm_power_function(degree if degree is not None else 1)
    raise ValueError(f"未知的齐次函数标签: {tag}")


def gaussian_comparison_check(f, cov_a, cov_b, n_samples, rng, degree=None, bound=None, constant=1.0):
    """
    高斯比较界检查 |E_A f − E_B f| ≤ C·L_f·Λ^{(α−1)/2}·‖A−B‖^{1/2}

    两个期望使用同一组标准正态抽样（共同随机数），因此 A = B 时左端恰为 0。

    Args:
        f (str): 'abs-det'（向量按 Hessian 约定还原为对称矩阵）或 'norm-power'
        cov_a, cov_b: 协方差矩阵
        n_samples (int): 抽样数
        rng: 随机数流
        degree: norm-power 的次数
        bound: Λ，默认 max(‖A‖, ‖B‖)
        constant: 标定常数 C

    Returns:
        ComparisonCheck
    """
    cov_a = _check_symmetric(cov_a)
    cov_b = _check_symmetric(cov_b)
    if cov_a.shape != cov_b.shape:
        raise ValueError("两个协方差矩阵维数不同")
    evaluate, alpha, lipschitz = _homogeneous_function(f, cov_a.shape[0], degree)

    norm_a = float(np.linalg.norm(cov_a, 2))
    norm_b = float(np.linalg.norm(cov_b, 2))
    lam = max(norm_a, norm_b) if bound is None else float(bound)
    if max(norm_a, norm_b) > lam * (1.0 + 1e-12):
        raise ValueError(f"‖A‖、‖B‖ 超过给定的 Λ={lam}")

    gauss = rng.standard_normal((int(n_samples), cov_a.shape[0]))
    values_a = evaluate(gauss @ psd_sqrt(cov_a))
    values_b = evaluate(gauss @ psd_sqrt(cov_b))
    diff = values_a - values_b
    n = float(n_samples)
    lhs = abs(float(diff.mean()))
    lhs_se = float(diff.std(ddof=1) / math.sqrt(n))
    rhs = constant * lipschitz * lam ** ((alpha - 1.0) / 2.0) * math.sqrt(float(np.linalg.norm(cov_a - cov_b, 2)))
    return ComparisonCheck(
        lhs=lhs, rhs=rhs, lhs_se=lhs_se,
        expectation_a=float(values_a.mean()), expectation_b=float(values_b.mean()),
    )


def calibrate_comparison_constant(f, dimension, rng, n_pairs=20, n_samples=20_000, degree=None):
    """
    在固定随机套件上标定比较界常数：最大比值 lhs/(L_f Λ^{(α−1)/2} ‖A−B‖^{1/2}) 的 2 倍
    """
    ratios = []
    for _ in range(n_pairs):
        root = rng.standard_normal((dimension, dimension))
        cov_a = root @ root.T / dimension
        perturb = rng.standard_normal((dimension, dimension))
        cov_b = cov_a + 0.05 * rng.uniform() * (perturb @ perturb.T) / dimension
        check = gaussian_comparison_check(f, cov_a, cov_b, n_samples, rng, degree=degree, constant=1.0)
        if check.rhs > 0:
            ratios.append(check.lhs / check.rhs)
    return 2.0 * max(ratios, default=0.0)
