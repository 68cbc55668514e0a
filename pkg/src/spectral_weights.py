# -*- coding: utf-8 -*-
"""
临界点实验系统 - 谱权重模块
============================

本模块表示谱权重 w，并计算由它导出的全部协方差量：

1. 权重求值（gaussian / bump / rational 三个族）
2. 径向矩 I_k(w) = ∫_0^∞ w(r) r^k dr
3. 协方差函数 V(t) = (2π)^{-m} ∫ e^{-i⟨ξ,t⟩} w(|ξ|) dξ 及其至多 6 阶偏导数
4. 周期化协方差 V^ℏ(z) = Σ_ν V(z + ν/ℏ)
5. 包络 ψ^ℏ(x) = max_{|α|≤4} |∂^α V^ℏ(x)|
6. 相关长度与尾半径

导数一律通过截断立方体上的张量积 Gauss–Legendre 求积直接计算：
|α| 为偶数时取余弦部分，为奇数时取正弦部分，全程实数运算。
高斯权重的解析结果只作为测试的参照。

版本：1.0.0
"""

import logging
import math
import threading
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import integrate

from .errors import LatticeTailError, QuadratureError
from .gaussian_toolkit import multi_indices

logger = logging.getLogger(__name__)

WEIGHT_FAMILIES = ("gaussian", "bump", "rational")
MAX_DIMENSION = 3
MAX_DERIVATIVE_ORDER = 6
MAX_MOMENT_ORDER = 12

# 截断半径外要求 w(r)·r^8 < 1e-12·w(0)（m ≤ 3 时 m+5 ≤ 8）
TRUNCATION_TOLERANCE = 1e-12
TRUNCATION_EXPONENT = 8

QUADRATURE_RTOL = 1e-8
MOMENT_RTOL = 1e-9
TAIL_TOLERANCE = 1e-14
CORRELATION_THRESHOLD = 1e-3

# 每维 Gauss–Legendre 节点数
BASE_NODES = {1: 96, 2: 64, 3: 40}
MAX_NODES = {1: 16384, 2: 1024, 3: 128}

# 一次求值中相位矩阵的最大元素数
_PHASE_BLOCK = 4_000_000


def _shape(family, support, decay, r):
    """归一化形状 w(r)/w(0)，支持数组"""
    r = np.abs(np.asarray(r, dtype=float))
    if family == "gaussian":
        return np.exp(-0.5 * r ** 2)
    if family == "rational":
        return (1.0 + r ** 2) ** (-decay)
    # bump: exp(1 − 1/(1 − (r/R)²))，r ≥ R 时恰为 0
    x = r / support
    inside = x < 1.0
    safe = np.where(inside, x, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - safe ** 2)), 0.0)


def _required_truncation(family, support, decay):
    if family == "bump":
        return float(support)
    r = 1.0
    while r < 4.0 or _shape(family, support, decay, r) * r ** TRUNCATION_EXPONENT >= TRUNCATION_TOLERANCE:
        r += 0.25
        if r > 1e4:
            raise QuadratureError(f"无法为权重族 {family} 找到截断半径")
    return r


@dataclass(frozen=True)
class WeightSpec:
    """
    谱权重及其求积参数

    Attributes:
        family (str): 'gaussian' 为 exp(-r²/2)；'bump' 为支撑在 [0, support) 上的光滑鼓包；
            'rational' 为 (1+r²)^(-decay)
        amplitude (float): 整体倍数 c（w ↦ c·w）
        support (float): bump 的支撑半径 R
        decay (float): rational 的衰减指数（> 6.5 以保证 I_12 有限）
        truncation_radius (float): 频率空间截断半径，None 时自动选取
        node_count (int): 每维基础节点数，None 时按维数取默认值
        eps_cut (float): 可忽略权重值的阈值
    """

    family: str = "gaussian"
    amplitude: float = 1.0
    support: float = 1.0
    decay: float = 10.0
    truncation_radius: Optional[float] = None
    node_count: Optional[int] = None
    eps_cut: float = 1e-12

    def __post_init__(self):
        if self.family not in WEIGHT_FAMILIES:
            raise ValueError(f"未知的权重族: {self.family}（可选 {', '.join(WEIGHT_FAMILIES)}）")
        if not self.amplitude > 0:
            raise ValueError(f"amplitude 必须为正，得到 {self.amplitude}")
        if not self.support > 0:
            raise ValueError(f"support 必须为正，得到 {self.support}")
        if self.family == "rational" and not self.decay > 6.5:
            raise ValueError(f"rational 族要求 decay > 6.5，得到 {self.decay}")
        if not 0 < self.eps_cut < 1:
            raise ValueError(f"eps_cut 必须在 (0, 1) 内，得到 {self.eps_cut}")
        if self.node_count is not None and self.node_count < 8:
            raise ValueError(f"node_count 至少为 8，得到 {self.node_count}")

        required = _required_truncation(self.family, self.support, self.decay)
        if self.truncation_radius is None:
            object.__setattr__(self, "truncation_radius", required)
        elif self.truncation_radius < required:
            raise ValueError(
                f"截断半径 {self.truncation_radius} 过小：{self.family} 族至少需要 {required}"
            )

    @classmethod
    def from_dict(cls, data):
        allowed = {"family", "amplitude", "support", "decay", "truncation_radius", "node_count", "eps_cut"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"未知的权重参数: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self):
        return {
            "family": self.family,
            "amplitude": self.amplitude,
            "support": self.support,
            "decay": self.decay,
            "truncation_radius": self.truncation_radius,
            "node_count": self.node_count,
            "eps_cut": self.eps_cut,
        }

    def scaled(self, factor):
        """返回 w ↦ factor·w 的权重"""
        return WeightSpec(
            family=self.family, amplitude=self.amplitude * factor, support=self.support,
            decay=self.decay, truncation_radius=self.truncation_radius,
            node_count=self.node_count, eps_cut=self.eps_cut,
        )


def weight_values(spec, r):
    """向量化的权重求值 w(|r|)"""
    return spec.amplitude * _shape(spec.family, spec.support, spec.decay, r)


def eval_weight(spec, r):
    """
    权重求值 w(r)

    Raises:
        ValueError: r 为负
    """
    if r < 0:
        raise ValueError(f"r 必须非负，得到 {r}")
    return float(weight_values(spec, r))


@lru_cache(maxsize=256)
def radial_moment(spec, k):
    """
    径向矩 I_k(w)，自适应求积，相对误差 ≤ 1e-9

    Raises:
        ValueError: k 不在 [0, 12]
        QuadratureError: 求积不收敛，携带误差估计
    """
    if int(k) != k or not 0 <= k <= MAX_MOMENT_ORDER:
        raise ValueError(f"矩阶数必须是 [0, {MAX_MOMENT_ORDER}] 内的整数，得到 {k}")
    upper = spec.support if spec.family == "bump" else np.inf

    def integrand(r):
        return float(weight_values(spec, r)) * r ** k

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, error = integrate.quad(integrand, 0.0, upper, epsabs=0.0, epsrel=1e-11, limit=400)
    if not value > 0 or error > MOMENT_RTOL * abs(value):
        raise QuadratureError(f"径向矩 I_{k} 求积未收敛：值 {value:.6e}，误差估计 {error:.2e}", achieved_error=error)
    return value


# ---------------------------------------------------------------------------
# 频率空间求积
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _legendre_rule(n):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=24)
def _frequency_grid(spec, m, n):
    """截断立方体上的张量积节点与质量 w(|ξ|)·权重/(2π)^m（零质量节点已剔除）"""
    nodes, weights = _legendre_rule(n)
    radius = spec.truncation_radius
    axes = np.meshgrid(*([nodes * radius] * m), indexing="ij")
    xi = np.stack([axis.ravel() for axis in axes], axis=1)
    weight_axes = np.meshgrid(*([weights * radius] * m), indexing="ij")
    mass = np.prod(np.stack([axis.ravel() for axis in weight_axes], axis=1), axis=1)
    mass = mass * weight_values(spec, np.linalg.norm(xi, axis=1)) / (2.0 * math.pi) ** m
    keep = mass != 0.0
    xi, mass = xi[keep], mass[keep]
    xi.setflags(write=False)
    mass.setflags(write=False)
    return xi, mass


@lru_cache(maxsize=64)
def _monomials(spec, m, n, alphas):
    xi, _ = _frequency_grid(spec, m, n)
    table = np.stack([np.prod(xi ** np.asarray(alpha), axis=1) for alpha in alphas])
    table.setflags(write=False)
    return table


def _fourier_derivatives(spec, m, points, alphas, n):
    """∂^α V 在一批点上的求积值，形状 (len(points), len(alphas))"""
    xi, mass = _frequency_grid(spec, m, n)
    monomials = _monomials(spec, m, n, alphas)
    orders = np.array([sum(alpha) for alpha in alphas])
    even = orders % 2 == 0
    # (−iξ)^α 的实部：偶阶 (−1)^{|α|/2}·cos，奇阶 (−1)^{(|α|+1)/2}·sin
    signs = np.where(even, (-1.0) ** (orders // 2), (-1.0) ** ((orders + 1) // 2))

    out = np.empty((len(points), len(alphas)))
    chunk = max(1, _PHASE_BLOCK // max(len(mass), 1))
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        phase = block @ xi.T
        rows = slice(start, start + len(block))
        if even.any():
            out[rows, even] = (np.cos(phase) * mass) @ monomials[even].T
        if (~even).any():
            out[rows, ~even] = (np.sin(phase) * mass) @ monomials[~even].T
    return out * signs


@lru_cache(maxsize=16)
def _origin_scale(spec, m):
    _, mass = _frequency_grid(spec, m, spec.node_count or BASE_NODES[m])
    return float(mass.sum())


def _node_count(spec, m, reach):
    base = spec.node_count or BASE_NODES[m]
    n = base + 2 * int(math.ceil(spec.truncation_radius * reach))
    return min(16 * int(math.ceil(n / 16)), MAX_NODES[m])


_converged_counts = {}
_converged_lock = threading.Lock()


def _converged_derivatives(spec, m, points, alphas):
    """与节点数加倍的结果比较，直到相对误差 ≤ 1e-8；已验证的节点数按 (spec, m, n) 缓存"""
    reach = float(np.abs(points).max()) if points.size else 0.0
    n = _node_count(spec, m, reach)
    key = (spec, m, n)
    with _converged_lock:
        verified = _converged_counts.get(key)
    if verified is not None:
        return _fourier_derivatives(spec, m, points, alphas, verified), verified

    scale = _origin_scale(spec, m)
    coarse = _fourier_derivatives(spec, m, points, alphas, n)
    while True:
        fine_n = 2 * n
        if fine_n > MAX_NODES[m]:
            raise QuadratureError(
                f"协方差求积在 {n} 节点/维时仍未收敛（m={m}，|z|∞={reach:.3g}）",
                achieved_error=float(np.abs(coarse).max()),
            )
        fine = _fourier_derivatives(spec, m, points, alphas, fine_n)
        error = float(np.abs(fine - coarse).max())
        if error <= QUADRATURE_RTOL * max(float(np.abs(fine).max()), scale):
            break
        logger.debug("求积未收敛（n=%d，误差 %.2e），节点数加倍", fine_n, error)
        n, coarse = fine_n, fine

    with _converged_lock:
        _converged_counts[key] = fine_n
    return fine, fine_n


# ---------------------------------------------------------------------------
# 协方差喷射
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovarianceJet:
    """V（或 V^ℏ）在 z 处的偏导数表，按多重指标存储"""

    z: Tuple[float, ...]
    values: Dict[Tuple[int, ...], float] = field(repr=False)
    max_order: int
    hbar: float = 0.0
    periodized: bool = False
    truncation_radius: float = 0.0
    node_count: int = 0
    tail_bound: float = 0.0
    lattice_radius: int = 0

    @property
    def m(self):
        return len(self.z)

    def __getitem__(self, alpha):
        return self.values[tuple(int(a) for a in alpha)]

    def derivative(self, *axes):
        """按坐标轴列表取偏导，例如 derivative(0, 0) = ∂₁²V"""
        alpha = [0] * self.m
        for axis in axes:
            alpha[axis] += 1
        return self[alpha]

    @property
    def value(self):
        return self[(0,) * self.m]

    def gradient(self):
        return np.array([self.derivative(i) for i in range(self.m)])

    def hessian(self):
        m = self.m
        return np.array([[self.derivative(i, j) for j in range(m)] for i in range(m)])

    def max_abs(self, max_order=4):
        return max(abs(v) for alpha, v in self.values.items() if sum(alpha) <= max_order)


def _check_jet_request(m, max_order):
    if m not in (1, 2, 3):
        raise ValueError(f"维数必须为 1、2 或 3（求积代价），得到 {m}")
    if not 0 <= max_order <= MAX_DERIVATIVE_ORDER:
        raise ValueError(f"导数阶数必须在 [0, {MAX_DERIVATIVE_ORDER}]，得到 {max_order}")


def covariance_jets(spec, m, points, max_order=4):
    """一批点上的协方差喷射，共享同一求积网格"""
    _check_jet_request(m, max_order)
    points = np.asarray(points, dtype=float).reshape(-1, m)
    alphas = tuple(multi_indices(m, max_order))
    values, n = _converged_derivatives(spec, m, points, alphas)
    return [
        CovarianceJet(
            z=tuple(float(c) for c in point),
            values={alpha: float(v) for alpha, v in zip(alphas, row)},
            max_order=max_order,
            truncation_radius=spec.truncation_radius,
            node_count=n,
        )
        for point, row in zip(points, values)
    ]


def covariance_jet(spec, m, z, max_order=4):
    """
    V 在 z 处的至多 max_order 阶偏导数

    Args:
        spec (WeightSpec): 谱权重
        m (int): 维数（1–3）
        z: m 维向量
        max_order (int): 最高导数阶（≤ 6）

    Returns:
        CovarianceJet

    Raises:
        ValueError: m > 3 或阶数越界
        QuadratureError: 节点数加倍后仍未收敛
    """
    return covariance_jets(spec, m, [z], max_order)[0]


@lru_cache(maxsize=64)
def _lattice_shell(m, radius):
    if radius == 0:
        return np.zeros((1, m))
    shell = [nu for nu in product(range(-radius, radius + 1), repeat=m) if max(abs(c) for c in nu) == radius]
    return np.asarray(shell, dtype=float)


def periodized_covariance_jet(spec, m, hbar, z, lattice_radius=2, max_order=4,
                              tail_tolerance=TAIL_TOLERANCE, max_lattice_radius=16):
    """
    周期化协方差 V^ℏ(z) = Σ_{|ν|∞ ≤ L} V(z + ν/ℏ) 及其导数

    z 先约化到基本区域；从 lattice_radius 开始逐壳扩展，直到最外层壳贡献
    < tail_tolerance。超出尾半径的格点项被筛除，其个数计入 tail_bound。

    Raises:
        ValueError: ℏ ∉ (0, 1/4] 或 lattice_radius < 1
        LatticeTailError: 扩展到 max_lattice_radius 仍不满足尾部容差
    """
    _check_jet_request(m, max_order)
    if not 0 < hbar <= 0.25:
        raise ValueError(f"ℏ 必须在 (0, 1/4]，得到 {hbar}")
    if lattice_radius < 1:
        raise ValueError(f"lattice_radius 至少为 1，得到 {lattice_radius}")

    z = np.asarray(z, dtype=float).reshape(m)
    period = 1.0 / hbar
    z_reduced = z - period * np.round(z / period)
    cutoff = tail_radius(spec, m, max_order, tail_tolerance)
    alphas = tuple(multi_indices(m, max_order))

    total = np.zeros(len(alphas))
    screened = 0
    node_count = 0
    radius = 0
    while True:
        points = z_reduced + _lattice_shell(m, radius) * period
        near = np.linalg.norm(points, axis=1) <= cutoff
        screened += int((~near).sum())
        shell_size = 0.0
        if near.any():
            values, n = _converged_derivatives(spec, m, points[near], alphas)
            contribution = values.sum(axis=0)
            total += contribution
            shell_size = float(np.abs(contribution).max())
            node_count = max(node_count, n)
        if radius >= lattice_radius and shell_size < tail_tolerance:
            break
        if radius >= max_lattice_radius:
            raise LatticeTailError(
                f"格点半径 {radius} 的外壳贡献 {shell_size:.2e} 仍超过容差 {tail_tolerance:.0e}",
                achieved_error=shell_size,
            )
        radius += 1
        if radius > lattice_radius:
            logger.debug("周期化外壳扩展到半径 %d（ℏ=%g）", radius, hbar)

    return CovarianceJet(
        z=tuple(float(c) for c in z),
        values={alpha: float(v) for alpha, v in zip(alphas, total)},
        max_order=max_order,
        hbar=float(hbar),
        periodized=True,
        truncation_radius=spec.truncation_radius,
        node_count=node_count,
        tail_bound=(screened + len(_lattice_shell(m, radius + 1))) * tail_tolerance,
        lattice_radius=radius,
    )


def covariance_jet_at_scale(spec, m, hbar, z, max_order=4):
    """ℏ = 0 取 V，ℏ > 0 取 V^ℏ"""
    if hbar == 0:
        return covariance_jet(spec, m, z, max_order)
    return periodized_covariance_jet(spec, m, hbar, z, max_order=max_order)


def envelope_psi(spec, m, hbar, x):
    """
    包络 ψ^ℏ(x) = max_{|α|≤4} |∂^α V^ℏ(x)|（|x|∞ ≤ 1/(2ℏ)），否则为 0

    ℏ = 0 时使用 V 本身且不加窗口。
    """
    x = np.asarray(x, dtype=float).reshape(m)
    if hbar < 0 or hbar > 0.25:
        raise ValueError(f"ℏ 必须在 [0, 1/4]，得到 {hbar}")
    if hbar > 0 and np.abs(x).max() > 0.5 / hbar:
        return 0.0
    return covariance_jet_at_scale(spec, m, hbar, x, 4).max_abs(4)


@lru_cache(maxsize=32)
def _decay_radius(spec, m, max_order, threshold, relative):
    """沿坐标轴与对角方向扫描，返回使 max_{|α|≤max_order}|∂^αV(y)| < 阈值 对更远处均成立的最小半径"""
    alphas = tuple(multi_indices(m, max_order))
    if relative:
        threshold = threshold * covariance_jet(spec, m, np.zeros(m), max_order).max_abs(max_order)
    directions = [np.eye(m)[0]]
    if m > 1:
        directions.append(np.ones(m) / math.sqrt(m))
    step = math.pi / (4.0 * spec.truncation_radius)
    batch = 32
    last_above = 0.0
    start = 0.0
    while True:
        radii = start + step * np.arange(1, batch + 1)
        points = np.concatenate([radii[:, None] * d for d in directions])
        values, _ = _converged_derivatives(spec, m, points, alphas)
        peaks = np.abs(values).max(axis=1).reshape(len(directions), batch).max(axis=0)
        above = radii[peaks >= threshold]
        if above.size:
            last_above = float(above.max())
        elif start > last_above:
            return last_above + step
        start = float(radii[-1])
        if start > 4000 * step:
            raise QuadratureError(f"在半径 {start:.3g} 内未找到衰减到 {threshold:.1e} 的位置")


def correlation_length(spec, m):
    """相关长度：max_{|α|≤4}|∂^αV(y)| < 1e-3·ψ(0) 对所有更远的 |y| 成立的最小 s"""
    return _decay_radius(spec, m, 4, CORRELATION_THRESHOLD, True)


def tail_radius(spec, m, max_order=4, tolerance=TAIL_TOLERANCE):
    """尾半径：超出后所有至多 max_order 阶导数的绝对值 < tolerance"""
    return _decay_radius(spec, m, max_order, tolerance, False)


def gradient_variance(spec, m, hbar=0.0):
    """λ² = −∂₁²V^ℏ(0)"""
    return -covariance_jet_at_scale(spec, m, hbar, np.zeros(m), 2).derivative(0, 0)
