# -*- coding: utf-8 -*-
"""
临界点实验系统 - Kac–Rice 计算模块
================================

本模块给出临界点统计的理论预测：

1. 平均密度 Z̄₀ 的多条独立路线（main1 Monte Carlo、m=1 闭式、GOE 形式 cmw/sdh、大 m 渐近式）
2. 两点喷射协方差 (∇Y(0), ∇Y(y), ∇²Y(0), ∇²Y(y))
3. 条件两点强度 g(v,y)·p_{0,y}(v,v)
4. 二阶阶乘矩 E[Z(Z−1)] 与方差预测

Fourier 约定固定为 V(t) = (2π)^{-m}∫e^{-i⟨ξ,t⟩}w(|ξ|)dξ；
在此约定下 main1 与一维 Kac–Rice 闭式一致，而 cmw、sdh 两式给出不同数值，
三者并列报告，由模拟结果裁决。

版本：1.0.0
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import gamma

from .errors import ToleranceError
from .gaussian_toolkit import (
    condition_gaussian,
    expected_abs_det_goe,
    hessian_index_pairs,
    sample_gaussian,
    symmetric_dimension,
    vector_to_hessian,
)
from .spectral_weights import (
    correlation_length,
    covariance_jet_at_scale,
    covariance_jets,
    periodized_covariance_jet,
    radial_moment,
)

logger = logging.getLogger(__name__)

# Monte Carlo 分批大小
_MC_BATCH = 100_000


@dataclass
class DensityEstimate:
    """密度估计：值、标准误（纯求积路线为 0）与路线标签"""

    value: float
    se: float
    route: str
    samples: int = 0
    nodes: int = 0
    exact: bool = False


@dataclass
class JetCovariance:
    """两点喷射向量 (∇Y(0), ∇Y(y), ∇²Y(0), ∇²Y(y)) 的协方差"""

    y: Tuple[float, ...]
    hbar: float
    matrix: np.ndarray = field(repr=False)

    @property
    def m(self):
        return len(self.y)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    @property
    def A(self):
        """梯度自协方差 −∇²V(0)"""
        m = self.m
        return self.matrix[:m, :m]

    @property
    def B(self):
        """梯度交叉协方差 −∇²V(y)"""
        m = self.m
        return self.matrix[:m, m:2 * m]

    @property
    def gradient_block(self):
        m = self.m
        return self.matrix[:2 * m, :2 * m]

    def cross_norm(self):
        """两点之间全部交叉块的谱范数"""
        m, nu = self.m, symmetric_dimension(self.m)
        first = list(range(m)) + list(range(2 * m, 2 * m + nu))
        second = list(range(m, 2 * m)) + list(range(2 * m + nu, 2 * m + 2 * nu))
        return float(np.linalg.norm(self.matrix[np.ix_(first, second)], 2))


@dataclass
class IntensityEstimate:
    """两点强度 g(v,y)·p_{0,y}(v,v)"""

    value: float
    se: float
    density: float
    g: float
    g_se: float
    method: str


@dataclass
class SecondMomentEstimate:
    """二阶阶乘矩与由此得到的方差预测"""

    value: float
    se: float
    variance: float
    variance_se: float
    s0: float
    s0_se: float
    s0_limit: float
    s0_limit_se: float
    mean_count: float
    window: float
    excision_bound: float
    correlation_length: float
    nodes: int


# ---------------------------------------------------------------------------
# 平均密度
# ---------------------------------------------------------------------------

def _sphere_area(m):
    """|S^{m−1}| = 2π^{m/2}/Γ(m/2)"""
    return 2.0 * math.pi ** (m / 2.0) / gamma(m / 2.0)


def sdh_constants(spec, m):
    """
    常数 (s_m, d_m, h_m)：
    (2π)^{m/2}s_m = |S^{m−1}|·I_{m−1}，(2π)^{m/2}d_m = |S^{m−1}|/m·I_{m+1}，
    (2π)^{m/2}h_m = |S^{m−1}|/(m(m+2))·I_{m+3}
    """
    area = _sphere_area(m) / (2.0 * math.pi) ** (m / 2.0)
    s_m = area * radial_moment(spec, m - 1)
    d_m = area / m * radial_moment(spec, m + 1)
    h_m = area / (m * (m + 2)) * radial_moment(spec, m + 3)
    return s_m, d_m, h_m


def hessian_covariance(spec, m, hbar=0.0):
    """∇²Y(0) 的协方差：E[Y_ij Y_kl] = ∂_i∂_j∂_k∂_l V^ℏ(0)，按 Hessian 向量约定排列"""
    jet = covariance_jet_at_scale(spec, m, hbar, np.zeros(m), 4)
    pairs = hessian_index_pairs(m)
    nu = len(pairs)
    cov = np.empty((nu, nu))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            cov[a, b] = jet.derivative(i, j, k, l)
    return cov


def gradient_covariance(spec, m, hbar=0.0):
    """∇Y(0) 的协方差 −∇²V^ℏ(0)"""
    return -covariance_jet_at_scale(spec, m, hbar, np.zeros(m), 2).hessian()


def _mean_abs_det(cov, m, n_samples, rng):
    total = 0.0
    total_sq = 0.0
    remaining = int(n_samples)
    while remaining > 0:
        size = min(_MC_BATCH, remaining)
        dets = np.abs(np.linalg.det(vector_to_hessian(sample_gaussian(cov, rng, size), m)))
        total += dets.sum()
        total_sq += (dets ** 2).sum()
        remaining -= size
    n = float(n_samples)
    mean = total / n
    variance = max(total_sq / n - mean ** 2, 0.0) * n / (n - 1.0)
    return mean, math.sqrt(variance / n)


def density_route_main1(spec, m, mc_samples, rng, hbar=0.0):
    """
    Z̄₀ = E|det ∇²Y(0)| / √det(−2π∇²V(0))，E|det| 由 Monte Carlo 估计

    Raises:
        ValueError: m > 3
        NotPSDError: Hessian 协方差非半正定（求积失败的征兆）
    """
    if m not in (1, 2, 3):
        raise ValueError(f"main1 路线要求 m ≤ 3，得到 {m}")
    mean, se = _mean_abs_det(hessian_covariance(spec, m, hbar), m, mc_samples, rng)
    denominator = math.sqrt(np.linalg.det(2.0 * math.pi * gradient_covariance(spec, m, hbar)))
    return DensityEstimate(value=mean / denominator, se=se / denominator, route="main1", samples=int(mc_samples))


def density_route_exact(spec, m=1, hbar=0.0):
    """m = 1 的闭式路线：E|N(0,σ²)| = σ√(2/π)，σ² = V''''(0)"""
    if m != 1:
        raise ValueError(f"闭式路线只适用于 m = 1，得到 {m}")
    jet = covariance_jet_at_scale(spec, 1, hbar, np.zeros(1), 4)
    sigma = math.sqrt(jet[(4,)])
    value = sigma * math.sqrt(2.0 / math.pi) / math.sqrt(-2.0 * math.pi * jet[(2,)])
    return DensityEstimate(value=value, se=0.0, route="exact", exact=True)


def density_route_cmw(spec, m, mc_samples, rng):
    """(I_{m+1}/(2π(m+2)I_{m+3}))^{m/2}·E_GOE|det|"""
    ratio = radial_moment(spec, m + 1) / (2.0 * math.pi * (m + 2) * radial_moment(spec, m + 3))
    mean, se = expected_abs_det_goe(m, mc_samples, rng)
    factor = ratio ** (m / 2.0)
    return DensityEstimate(value=factor * mean, se=factor * se, route="cmw", samples=int(mc_samples))


def density_route_sdh(spec, m, mc_samples, rng):
    """(h_m/(2πd_m))^{m/2}·E_GOE|det|"""
    _, d_m, h_m = sdh_constants(spec, m)
    factor = (h_m / (2.0 * math.pi * d_m)) ** (m / 2.0)
    mean, se = expected_abs_det_goe(m, mc_samples, rng)
    return DensityEstimate(value=factor * mean, se=factor * se, route="sdh", samples=int(mc_samples))


def density_asymptotic(spec, m):
    """大 m 渐近式 8/√(πm)·Γ((m+3)/2)·(2I_{m+3}/(π(m+2)I_{m+1}))^{m/2}，仅用于趋势图"""
    if m < 1:
        raise ValueError(f"m 必须 ≥ 1，得到 {m}")
    ratio = 2.0 * radial_moment(spec, m + 3) / (math.pi * (m + 2) * radial_moment(spec, m + 1))
    return 8.0 / math.sqrt(math.pi * m) * gamma((m + 3) / 2.0) * ratio ** (m / 2.0)


def compare_routes(spec, m, mc_samples, rng):
    """全部密度路线并列"""
    routes = [density_route_main1(spec, m, mc_samples, rng)]
    if m == 1:
        routes.append(density_route_exact(spec, 1))
    routes.append(density_route_cmw(spec, m, mc_samples, rng))
    routes.append(density_route_sdh(spec, m, mc_samples, rng))
    routes.append(DensityEstimate(value=density_asymptotic(spec, m), se=0.0, route="asymptotic", exact=True))
    return routes


# ---------------------------------------------------------------------------
# 两点喷射协方差
# ---------------------------------------------------------------------------

def _pair_jets(spec, m, hbar, y, max_order):
    origin = np.zeros(m)
    if hbar == 0:
        return covariance_jets(spec, m, [origin, y], max_order)
    return [periodized_covariance_jet(spec, m, hbar, point, max_order=max_order) for point in (origin, y)]


def jet_vector_covariance(spec, m, hbar, y, components):
    """
    任意导数分量向量的协方差：E[∂^αY(p)∂^βY(q)] = (−1)^{|α|}(∂^{α+β}V)(q − p)

    Args:
        components: [(点, α)]，点取 0（原点）或 1（y）
    """
    y = np.asarray(y, dtype=float).reshape(m)
    if not np.linalg.norm(y) > 0:
        raise ValueError("两点间距 |y| 必须为正")
    if not 0 <= hbar <= 0.25:
        raise ValueError(f"ℏ 必须在 [0, 1/4]，得到 {hbar}")
    if hbar > 0 and np.abs(y).max() > 0.5 / hbar:
        raise ValueError(f"ℏ={hbar} 时要求 |y|∞ ≤ {0.5 / hbar}")

    max_order = 2 * max(sum(alpha) for _, alpha in components)
    at_origin, at_y = _pair_jets(spec, m, hbar, y, max_order)
    size = len(components)
    matrix = np.empty((size, size))
    for a, (p, alpha) in enumerate(components):
        for b, (q, beta) in enumerate(components):
            combined = tuple(i + j for i, j in zip(alpha, beta))
            if p == q:
                value = at_origin[combined]
            elif q > p:
                value = at_y[combined]
            else:
                value = (-1) ** sum(combined) * at_y[combined]
            matrix[a, b] = (-1) ** sum(alpha) * value
    return 0.5 * (matrix + matrix.T)


def _unit(m, *axes):
    alpha = [0] * m
    for axis in axes:
        alpha[axis] += 1
    return tuple(alpha)


def jet_pair_covariance(spec, m, hbar, y):
    """
    (∇Y(0), ∇Y(y), ∇²Y(0), ∇²Y(y)) 的协方差，维数 2m + 2ν(m)

    Raises:
        ValueError: |y| = 0，或 ℏ > 0 时 |y|∞ > 1/(2ℏ)
    """
    pairs = hessian_index_pairs(m)
    components = [(0, _unit(m, i)) for i in range(m)]
    components += [(1, _unit(m, i)) for i in range(m)]
    components += [(0, _unit(m, i, j)) for i, j in pairs]
    components += [(1, _unit(m, i, j)) for i, j in pairs]
    matrix = jet_vector_covariance(spec, m, hbar, y, components)
    return JetCovariance(y=tuple(float(c) for c in np.asarray(y, dtype=float).reshape(m)), hbar=float(hbar), matrix=matrix)


def _bivariate_abs_product(cov):
    """零均值二元正态的 E|XY| = (2/π)σ₁σ₂(√(1−ρ²) + ρ·arcsin ρ)"""
    s1, s2 = math.sqrt(max(cov[0, 0], 0.0)), math.sqrt(max(cov[1, 1], 0.0))
    if s1 * s2 == 0.0:
        return 0.0
    rho = min(1.0, max(-1.0, cov[0, 1] / (s1 * s2)))
    return 2.0 / math.pi * s1 * s2 * (math.sqrt(1.0 - rho ** 2) + rho * math.asin(rho))


def two_point_intensity(spec, m, hbar, y, v, mc_samples, rng, method="auto"):
    """
    两点强度 g(v,y)·p_{0,y}(v,v)

    在 ∇Y(0) = ∇Y(y) = v 的条件下求 E|det∇²Y(0)·det∇²Y(y)|，
    乘以梯度块在 (v,v) 处的高斯密度。m = 1 且条件均值为零时可用闭式（method='exact'）。

    Raises:
        DegenerateConditioningError: y 过小，梯度块近奇异
    """
    if method not in ("auto", "mc", "exact"):
        raise ValueError(f"未知方法: {method}")
    covariance = jet_pair_covariance(spec, m, hbar, y)
    v = np.asarray(v, dtype=float).reshape(m)
    conditioned = condition_gaussian(covariance.matrix, range(2 * m), np.concatenate([v, v]))
    density = conditioned.observed_density
    nu = symmetric_dimension(m)

    centered = bool(np.all(conditioned.mean == 0.0))
    if method == "exact" and not (m == 1 and centered):
        raise ValueError("闭式两点强度只适用于 m = 1 且条件均值为零")
    if method == "exact" or (method == "auto" and m == 1 and centered):
        g, g_se, used = _bivariate_abs_product(conditioned.cov), 0.0, "exact"
    else:
        draws = sample_gaussian(conditioned.cov, rng, size=int(mc_samples), mean=conditioned.mean)
        first = np.linalg.det(vector_to_hessian(draws[:, :nu], m))
        second = np.linalg.det(vector_to_hessian(draws[:, nu:], m))
        products = np.abs(first * second)
        g = float(products.mean())
        g_se = float(products.std(ddof=1) / math.sqrt(len(products)))
        used = "mc"
    return IntensityEstimate(value=g * density, se=g_se * density, density=density, g=g, g_se=g_se, method=used)


def third_derivative_regression(spec, hbar, y):
    """m = 1 诊断：在 Y'(0) = Y'(y) = 0 条件下 (Y'''(0), Y'''(y)) 的条件分布（用到六阶导数）"""
    components = [(0, (1,)), (1, (1,)), (0, (3,)), (1, (3,))]
    matrix = jet_vector_covariance(spec, 1, hbar, np.atleast_1d(y), components)
    return condition_gaussian(matrix, (0, 1), np.zeros(2))


# ---------------------------------------------------------------------------
# 二阶阶乘矩
# ---------------------------------------------------------------------------

def y_quadrature(correlation, cutoff, r_sing, spacing_fraction=0.125, points_per_panel=4, include_core=False):
    """
    一维复合 Gauss–Legendre 节点：[r_sing, 1/8 相关长度] 上按比 2 几何加密，
    其后等距（间距 spacing_fraction·相关长度）直到 cutoff；include_core 时补上 [0, r_sing]
    """
    if not 0 < r_sing < cutoff:
        raise ValueError(f"要求 0 < r_sing < cutoff，得到 r_sing={r_sing}, cutoff={cutoff}")
    fine = spacing_fraction * correlation
    edges = [r_sing]
    while 2.0 * edges[-1] < min(fine, cutoff):
        edges.append(2.0 * edges[-1])
    position = fine
    while position < cutoff * (1.0 - 1e-12):
        if position > edges[-1]:
            edges.append(position)
        position += fine
    edges.append(cutoff)
    if include_core:
        edges.insert(0, 0.0)

    base_nodes, base_weights = np.polynomial.legendre.leggauss(points_per_panel)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        nodes.append(a + half * (base_nodes + 1.0))
        weights.append(half * base_weights)
    return np.concatenate(nodes), np.concatenate(weights)


def _ball_volume(m, radius):
    return math.pi ** (m / 2.0) / gamma(m / 2.0 + 1.0) * radius ** m


def second_factorial_moment(spec, m, hbar, window, rng, mc_samples=20_000, decorrelation_lengths=6.0,
                            r_sing_fraction=1e-3, spacing_fraction=0.125, points_per_panel=4):
    """
    窗口 [0, L)^m 上的 E[Z(Z−1)] 与方差预测

    以中心化形式积分：E[Z(Z−1)] = ∫overlap·(I(y) − Z̄₀²)dy + Z̄₀²L^{2m}，
    其中 overlap = Π(L − |y_k|)⁺，I(y) 为 v = 0 的两点强度；被积函数在
    decorrelation_lengths 个相关长度外视为 0。半径 r_sing 的内球被切除，
    其贡献用近零包络 C₁C₂∫|y|^{2−m}overlap 界定。

    Returns:
        SecondMomentEstimate

    Raises:
        ValueError: m ∉ {1,2}，或 ℏ > 0 时 L > 1/(2ℏ)
        ToleranceError: 包络贡献超过积分的 1%
    """
    if m not in (1, 2):
        raise ValueError(f"二阶阶乘矩只支持 m ∈ {{1, 2}}，得到 {m}")
    if hbar > 0 and window > 0.5 / hbar:
        raise ValueError(f"ℏ={hbar} 时要求 L ≤ {0.5 / hbar}，得到 {window}")

    corr = correlation_length(spec, m)
    r_sing = r_sing_fraction * corr
    cutoff = min(window, decorrelation_lengths * corr)

    if m == 1:
        zbar = density_route_exact(spec, 1, hbar)
    else:
        zbar = density_route_main1(spec, m, max(mc_samples * 10, 200_000), rng, hbar)

    axis_nodes, axis_weights = y_quadrature(corr, cutoff, r_sing, spacing_fraction, points_per_panel,
                                            include_core=(m == 2))
    if m == 1:
        points = axis_nodes[:, None]
        weights = 2.0 * axis_weights
    else:
        grid = np.stack(np.meshgrid(axis_nodes, axis_nodes, indexing="ij"), axis=-1).reshape(-1, 2)
        grid_weights = np.outer(axis_weights, axis_weights).ravel()
        keep = np.linalg.norm(grid, axis=1) >= r_sing
        points = grid[keep]
        weights = 4.0 * grid_weights[keep]

    overlap = np.prod(np.clip(window - np.abs(points), 0.0, None), axis=1)
    streams = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(len(points))
    values = np.empty(len(points))
    errors = np.empty(len(points))
    densities = np.empty(len(points))
    conditional = np.empty(len(points))
    for i, (point, stream) in enumerate(zip(points, streams)):
        estimate = two_point_intensity(spec, m, hbar, point, np.zeros(m), mc_samples, np.random.default_rng(stream))
        values[i], errors[i] = estimate.value, estimate.se
        densities[i], conditional[i] = estimate.density, estimate.g

    zbar_sq = zbar.value ** 2
    volume = window ** m
    centered = float(np.sum(weights * overlap * (values - zbar_sq)))
    centered -= zbar_sq * volume * _ball_volume(m, r_sing)
    weighted_overlap = float(np.sum(weights * overlap))
    # 无窗口的极限 S₀ = Z̄₀ + ∫(I − Z̄₀²)dy
    limit_integral = float(np.sum(weights * (values - zbar_sq))) - zbar_sq * _ball_volume(m, r_sing)
    limit_var = float(np.sum((weights * errors) ** 2)) + (2.0 * zbar.value * zbar.se * float(np.sum(weights))) ** 2
    variance_of_centered = float(np.sum((weights * overlap * errors) ** 2))
    variance_of_centered += (2.0 * zbar.value * zbar.se * weighted_overlap) ** 2

    # 近零包络常数：环带 [r_sing, 10 r_sing] 上实测比值的 2 倍
    radii = np.linalg.norm(points, axis=1)
    annulus = (radii >= r_sing) & (radii <= 10.0 * r_sing)
    if not annulus.any():
        raise ToleranceError("环带 [r_sing, 10 r_sing] 内没有求积节点")
    c1 = 2.0 * float(np.max(densities[annulus] * radii[annulus] ** m))
    c2 = 2.0 * float(np.max(conditional[annulus] / radii[annulus] ** 2))
    excision_bound = c1 * c2 * volume * _sphere_area(m) * r_sing ** 2 / 2.0

    mean_count = zbar.value * volume
    value = centered + zbar_sq * volume ** 2
    se = math.sqrt(variance_of_centered)
    if excision_bound > 0.01 * abs(value):
        raise ToleranceError(
            f"切除球包络贡献 {excision_bound:.3e} 超过积分 {value:.3e} 的 1%，请缩小 r_sing",
            achieved=excision_bound, allowed=0.01 * abs(value),
        )
    variance = centered + mean_count
    logger.info("二阶阶乘矩: L=%.3g, 节点 %d, Var=%.6g ± %.2g", window, len(points), variance, se)
    return SecondMomentEstimate(
        value=value,
        se=se,
        variance=variance,
        variance_se=se,
        s0=variance / volume,
        s0_se=se / volume,
        s0_limit=zbar.value + limit_integral,
        s0_limit_se=math.sqrt(limit_var + zbar.se ** 2),
        mean_count=mean_count,
        window=float(window),
        excision_bound=excision_bound,
        correlation_length=corr,
        nodes=len(points),
    )
