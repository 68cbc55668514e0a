# -*- coding: utf-8 -*-
"""
临界点实验系统 - Wiener 混沌分析模块
================================

临界点计数按 Hermite 混沌展开：
    Z(B) = Σ_q ∫_B ρ_q(x)dx，
    ρ_q(x) = ω Σ_{|α|+|β|=q} d_α f_β H_α(Λ₁⁻¹∇Y(x)) H_β(Λ₂⁻¹∇²Y(x))

本模块给出 d_α（精确）、f_β（Monte Carlo，对偶变量）、q=0 的均值恒等式，
以及 E[ρ_q(0)ρ_q(u)] 与部分方差和 Σ S_q 的估计。

版本：1.0.0
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Tuple

import numpy as np
from scipy.linalg import block_diag

from .errors import DegenerateConditioningError, ToleranceError
from .gaussian_toolkit import (
    PIVOT_TOLERANCE,
    hermite_at_zero,
    hermite_table,
    multi_factorial,
    multi_indices,
    psd_sqrt,
    sample_gaussian,
    symmetric_dimension,
    vector_to_hessian,
)
from .kac_rice_engine import gradient_covariance, hessian_covariance, jet_pair_covariance, y_quadrature
from .spectral_weights import correlation_length

logger = logging.getLogger(__name__)

# 系数个数随 q 增长，按维数限制最高阶
MAX_CHAOS_ORDER = {1: 6, 2: 4, 3: 2}

_BATCH = 50_000


def d_alpha_fraction(alpha):
    """d_α 的有理部分：d_α = H_α(0)/α! × (2π)^{−m/2}"""
    numerator = math.prod(hermite_at_zero(a) for a in alpha)
    return Fraction(numerator, multi_factorial(alpha))


def d_alpha(alpha):
    """
    d_α = (1/α!)(2π)^{−m/2}H_α(0)

    Args:
        alpha: 多重指标，|α| ≤ 40

    Returns:
        float: 任一分量为奇数时精确为 0
    """
    alpha = tuple(int(a) for a in alpha)
    if sum(alpha) > 40:
        raise ValueError(f"|α| 必须 ≤ 40，得到 {sum(alpha)}")
    return float(d_alpha_fraction(alpha)) * (2.0 * math.pi) ** (-len(alpha) / 2.0)


@dataclass
class ChaosCoefficients:
    """一个尺度 ℏ 下的混沌展开系数"""

    m: int
    hbar: float
    lambda1: np.ndarray = field(repr=False)
    lambda2: np.ndarray = field(repr=False)
    omega: float
    q_max: int
    f: Dict[Tuple[int, ...], float] = field(repr=False)
    f_se: Dict[Tuple[int, ...], float] = field(repr=False)
    d: Dict[Tuple[int, ...], float] = field(repr=False)
    samples: int = 0
    second_moment: float = 0.0
    second_moment_se: float = 0.0

    def bessel_sum(self, q):
        """Σ_{|β|≤q} f_β²β!，不超过 E|det|²"""
        return sum(value ** 2 * multi_factorial(beta) for beta, value in self.f.items() if sum(beta) <= q)

    def terms(self, q):
        """第 q 阶混沌中系数非零的 (α, β, d_α·f_β)"""
        result = []
        for order in range(q + 1):
            for alpha in multi_indices(self.m, order, order):
                coefficient = self.d[alpha]
                if coefficient == 0.0:
                    continue
                for beta in multi_indices(symmetric_dimension(self.m), q - order, q - order):
                    if self.f[beta] != 0.0:
                        result.append((alpha, beta, coefficient * self.f[beta]))
        return result

    def rho(self, q, gradient_white, hessian_white):
        """在白化喷射 (Λ₁⁻¹∇Y, Λ₂⁻¹∇²Y) 上批量计算 ρ_q"""
        gradient_white = np.atleast_2d(gradient_white)
        hessian_white = np.atleast_2d(hessian_white)
        grad_table = hermite_table(q, gradient_white)
        hess_table = hermite_table(q, hessian_white)
        total = np.zeros(gradient_white.shape[0])
        for alpha, beta, coefficient in self.terms(q):
            term = np.full(gradient_white.shape[0], coefficient)
            for k, order in enumerate(alpha):
                term *= grad_table[order, :, k]
            for k, order in enumerate(beta):
                term *= hess_table[order, :, k]
            total += term
        return self.omega * total


def hessian_hermite_coeffs(spec, m, hbar, q_max, mc_samples, rng, tolerance=None):
    """
    估计 f_β = (1/β!)E[f(A)H_β(A)]，f(A) = |det(Λ₂A 还原为对称矩阵)|，A 为 ν 维标准高斯

    采用对偶变量 (A, −A)：|det| 为偶函数，故 |β| 为奇数时估计值精确为 0，
    标准误由配对均值计算。

    Raises:
        ValueError: q_max 超过维数允许的最高阶
        ToleranceError: 指定 tolerance 且某个 f_β 的标准误超过它
    """
    if m not in MAX_CHAOS_ORDER:
        raise ValueError(f"维数必须为 1、2 或 3，得到 {m}")
    if not 0 <= q_max <= MAX_CHAOS_ORDER[m]:
        raise ValueError(f"m={m} 时 q_max 必须在 [0, {MAX_CHAOS_ORDER[m]}]，得到 {q_max}")

    lambda1 = psd_sqrt(gradient_covariance(spec, m, hbar))
    lambda2 = psd_sqrt(hessian_covariance(spec, m, hbar))
    omega = 1.0 / float(np.linalg.det(lambda1))
    nu = symmetric_dimension(m)
    betas = multi_indices(nu, q_max)
    even = [beta for beta in betas if sum(beta) % 2 == 0]

    pairs = max(int(mc_samples) // 2, 2)
    sums = np.zeros(len(even))
    squares = np.zeros(len(even))
    moment_sum = 0.0
    moment_square = 0.0
    remaining = pairs
    while remaining > 0:
        size = min(_BATCH, remaining)
        draws = rng.standard_normal((size, nu))
        values = np.abs(np.linalg.det(vector_to_hessian(draws @ lambda2.T, m)))
        table = hermite_table(q_max, draws)
        for i, beta in enumerate(even):
            product = values.copy()
            for k, order in enumerate(beta):
                if order:
                    product *= table[order, :, k]
            sums[i] += product.sum()
            squares[i] += (product ** 2).sum()
        moment_sum += (values ** 2).sum()
        moment_square += (values ** 4).sum()
        remaining -= size

    f = {beta: 0.0 for beta in betas}
    f_se = {beta: 0.0 for beta in betas}
    for i, beta in enumerate(even):
        mean = sums[i] / pairs
        variance = max(squares[i] / pairs - mean ** 2, 0.0) * pairs / (pairs - 1.0)
        f[beta] = mean / multi_factorial(beta)
        f_se[beta] = math.sqrt(variance / pairs) / multi_factorial(beta)

    second = moment_sum / pairs
    second_se = math.sqrt(max(moment_square / pairs - second ** 2, 0.0) / (pairs - 1.0))

    worst = max(f_se.values())
    if tolerance is not None and worst > tolerance:
        raise ToleranceError(f"f_β 的最大标准误 {worst:.3e} 超过容差 {tolerance:.3e}，请增加样本数",
                             achieved=worst, allowed=tolerance)

    d = {alpha: d_alpha(alpha) for alpha in multi_indices(m, q_max)}
    logger.info("混沌系数: m=%d, ℏ=%g, q≤%d, f₀=%.6f ± %.2g", m, hbar, q_max, f[(0,) * nu], f_se[(0,) * nu])
    return ChaosCoefficients(
        m=m, hbar=float(hbar), lambda1=lambda1, lambda2=lambda2, omega=omega, q_max=q_max,
        f=f, f_se=f_se, d=d, samples=2 * pairs, second_moment=second, second_moment_se=second_se,
    )


def chaos_mean(coefficients, volume):
    """
    q = 0 项给出的均值 (2π)^{−m/2}·ω·f₀·|B|

    Returns:
        tuple: (均值, 标准误)
    """
    m = coefficients.m
    zero = (0,) * symmetric_dimension(m)
    factor = (2.0 * math.pi) ** (-m / 2.0) * coefficients.omega * volume
    return factor * coefficients.f[zero], factor * coefficients.f_se[zero]


def _whitened_pair(coefficients, spec, u, check=True):
    m = coefficients.m
    covariance = jet_pair_covariance(spec, m, coefficients.hbar, u)
    inv1 = np.linalg.inv(coefficients.lambda1)
    inv2 = np.linalg.inv(coefficients.lambda2)
    transform = block_diag(inv1, inv1, inv2, inv2)
    white = transform @ covariance.matrix @ transform.T
    white = 0.5 * (white + white.T)
    eigenvalues = np.linalg.eigvalsh(white)
    if check and eigenvalues[0] <= PIVOT_TOLERANCE * eigenvalues[-1]:
        raise DegenerateConditioningError(
            f"|u|={np.linalg.norm(u):.3e} 处联合白化协方差退化：最小特征值 {eigenvalues[0]:.3e}",
            min_eigenvalue=float(eigenvalues[0]),
        )
    return white


def rho_q_correlations(coefficients, spec, orders, u, mc_samples, rng, check=True):
    """
    一组阶数 q 的 E[ρ_q(0)ρ_q(u)]，共用同一批联合白化样本

    Returns:
        tuple: (值数组, 标准误数组)
    """
    m = coefficients.m
    nu = symmetric_dimension(m)
    u = np.asarray(u, dtype=float).reshape(m)
    white = _whitened_pair(coefficients, spec, u, check)
    draws = sample_gaussian(white, rng, size=int(mc_samples))
    grad0, grad_u = draws[:, :m], draws[:, m:2 * m]
    hess0, hess_u = draws[:, 2 * m:2 * m + nu], draws[:, 2 * m + nu:]

    values = np.empty(len(orders))
    errors = np.empty(len(orders))
    for i, q in enumerate(orders):
        product = coefficients.rho(q, grad0, hess0) * coefficients.rho(q, grad_u, hess_u)
        values[i] = product.mean()
        errors[i] = product.std(ddof=1) / math.sqrt(len(product))
    return values, errors


def rho_q_correlation(coefficients, spec, q, u, mc_samples, rng):
    """
    E[ρ_q(0)ρ_q(u)] 的 Monte Carlo 估计

    Raises:
        ValueError: q 超过系数的最高阶
        DegenerateConditioningError: u 过于接近 0
    """
    if not 0 <= q <= coefficients.q_max:
        raise ValueError(f"q 必须在 [0, {coefficients.q_max}]，得到 {q}")
    values, errors = rho_q_correlations(coefficients, spec, [q], u, mc_samples, rng)
    return float(values[0]), float(errors[0])


@dataclass
class ChaosVarianceRow:
    """部分方差表的一行"""

    q: int
    s_q: float
    se: float
    partial_sum: float
    partial_se: float


def variance_chaos_partial(coefficients, spec, q_max, mc_samples, rng, decorrelation_lengths=6.0,
                           r_sing_fraction=1e-3, spacing_fraction=0.125, points_per_panel=4):
    """
    S_q = ∫E[ρ_q(0)ρ_q(u)]du（q = 1..q_max）与部分和

    u 的求积与二阶阶乘矩相同：[r_sing, K] 上复合 Gauss–Legendre 乘以 2（对称），
    内球 |u| < r_sing 用首节点值近似，K 为 decorrelation_lengths 个相关长度。

    Returns:
        list[ChaosVarianceRow]
    """
    if coefficients.m != 1:
        raise ValueError(f"部分方差只支持 m = 1，得到 {coefficients.m}")
    if not 1 <= q_max <= coefficients.q_max:
        raise ValueError(f"q_max 必须在 [1, {coefficients.q_max}]，得到 {q_max}")

    corr = correlation_length(spec, 1)
    r_sing = r_sing_fraction * corr
    cutoff = decorrelation_lengths * corr
    if coefficients.hbar > 0:
        cutoff = min(cutoff, 0.5 / coefficients.hbar)
    nodes, weights = y_quadrature(corr, cutoff, r_sing, spacing_fraction, points_per_panel)
    weights = 2.0 * weights

    orders = list(range(1, q_max + 1))
    streams = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(len(nodes))
    integrand = np.empty((len(nodes), len(orders)))
    integrand_se = np.empty((len(nodes), len(orders)))
    for i, (node, stream) in enumerate(zip(nodes, streams)):
        integrand[i], integrand_se[i] = rho_q_correlations(
            coefficients, spec, orders, [node], mc_samples, np.random.default_rng(stream), check=False,
        )

    core = 2.0 * r_sing
    totals = weights @ integrand + core * integrand[0]
    variances = (weights ** 2) @ (integrand_se ** 2) + (core * integrand_se[0]) ** 2

    rows: List[ChaosVarianceRow] = []
    partial = 0.0
    partial_var = 0.0
    for q, total, var in zip(orders, totals, variances):
        partial += float(total)
        partial_var += float(var)
        rows.append(ChaosVarianceRow(q=q, s_q=float(total), se=math.sqrt(var),
                                     partial_sum=partial, partial_se=math.sqrt(partial_var)))
        logger.debug("S_%d = %.6g ± %.2g", q, total, math.sqrt(var))
    return rows
