# -*- coding: utf-8 -*-
"""
临界点实验系统 - 随机场采样模块
==============================

合成环面 T^m 上的随机傅里叶级数

    X^ℏ(θ) = Σ_k a_k (A_k cos 2π⟨k,θ⟩ + B_k sin 2π⟨k,θ⟩)

并在任意点上逐项求值、梯度、Hessian 与三阶导数。

频率配对约定：每个半空间内的 k ≻ 0 存储一对 (A_k, B_k)，振幅为
√2·ℏ^{m/2}·w(2πℏ|k|)^{1/2}；k = 0 只对应常数基函数，振幅为
ℏ^{m/2}·w(0)^{1/2}。这样实现的协方差恰为全格点和
ℏ^m Σ_{k∈ℤ^m} w(2πℏ|k|) cos 2π⟨k, θ′−θ⟩。

版本：1.0.0
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import FrequencyBudgetError
from .spectral_weights import weight_values

logger = logging.getLogger(__name__)

DEFAULT_FREQUENCY_BUDGET = 1_000_000
SAMPLE_FORMAT_VERSION = "fourier-sample v1"

# 相位矩阵 (点数 × 频率数) 的最大元素数
_EVAL_BLOCK = 2_000_000


@dataclass(frozen=True, eq=False)
class FieldSample:
    """X^ℏ 的一次实现：激活频率、振幅与高斯系数"""

    m: int
    hbar: float
    frequencies: np.ndarray
    amplitudes: np.ndarray
    a_coeffs: np.ndarray
    b_coeffs: np.ndarray
    eps_cut: float = 1e-12
    seed: str = ""
    truncation_bias: float = 0.0

    @property
    def count(self):
        return len(self.amplitudes)

    @classmethod
    def from_terms(cls, m, hbar, frequencies, amplitudes, a_coeffs, b_coeffs, seed="manual"):
        """由显式项构造（确定性测试场）"""
        frequencies = np.asarray(frequencies, dtype=np.int64).reshape(-1, m)
        amplitudes = np.asarray(amplitudes, dtype=float).reshape(-1)
        a_coeffs = np.asarray(a_coeffs, dtype=float).reshape(-1)
        b_coeffs = np.asarray(b_coeffs, dtype=float).reshape(-1)
        if not len(frequencies) == len(amplitudes) == len(a_coeffs) == len(b_coeffs):
            raise ValueError("频率、振幅与系数的个数不一致")
        if np.any(amplitudes <= 0):
            raise ValueError("振幅必须严格为正")
        return cls(m=m, hbar=float(hbar), frequencies=frequencies, amplitudes=amplitudes,
                   a_coeffs=a_coeffs, b_coeffs=b_coeffs, seed=seed)


@dataclass
class Jet:
    """场在一点的值、梯度、Hessian 与可选三阶导数"""

    point: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: Optional[np.ndarray] = None
    third: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class JetBatch:
    """批量求值结果，首维为点"""

    points: np.ndarray
    values: np.ndarray
    gradients: Optional[np.ndarray] = None
    hessians: Optional[np.ndarray] = None
    thirds: Optional[np.ndarray] = None


def cutoff_radius(spec, eps_cut):
    """w(r) ≥ eps_cut 的最大 r（w 单调递减）"""
    if weight_values(spec, 0.0) < eps_cut:
        raise FrequencyBudgetError(f"w(0) 已小于截断阈值 {eps_cut}")
    upper = 1.0
    while weight_values(spec, upper) >= eps_cut:
        upper *= 2.0
    return brentq(lambda r: float(weight_values(spec, r)) - eps_cut, 0.0, upper, xtol=1e-12)


def _in_half_space(frequencies):
    """k ≻ 0：第一个非零分量为正"""
    result = np.zeros(len(frequencies), dtype=bool)
    undecided = np.ones(len(frequencies), dtype=bool)
    for axis in range(frequencies.shape[1]):
        column = frequencies[:, axis]
        result |= undecided & (column > 0)
        undecided &= column == 0
    return result


def active_frequencies(spec, m, hbar, eps_cut=None, budget=DEFAULT_FREQUENCY_BUDGET):
    """
    激活频率集：半空间 k ≻ 0 与 k = 0 中满足 w(2πℏ|k|) ≥ eps_cut 的格点

    Returns:
        tuple: (频率数组 (K, m)，权重值 (K,))

    Raises:
        FrequencyBudgetError: 频率数超过预算
    """
    eps_cut = spec.eps_cut if eps_cut is None else eps_cut
    radius = cutoff_radius(spec, eps_cut) / (2.0 * math.pi * hbar)
    k_max = int(math.ceil(radius))
    # 半球体积估计，先于分配检查
    estimate = 0.5 * math.pi ** (m / 2) / math.gamma(m / 2 + 1) * radius ** m
    if estimate > budget:
        raise FrequencyBudgetError(
            f"ℏ={hbar} 时激活频率约 {estimate:.0f} 个，超过预算 {budget}", count=int(estimate), budget=budget,
        )
    axes = np.arange(-k_max, k_max + 1)
    grid = np.stack(np.meshgrid(*([axes] * m), indexing="ij"), axis=-1).reshape(-1, m)
    keep = _in_half_space(grid) | ~grid.any(axis=1)
    grid = grid[keep]
    weights = weight_values(spec, 2.0 * math.pi * hbar * np.linalg.norm(grid, axis=1))
    active = weights >= eps_cut
    grid, weights = grid[active], weights[active]
    if len(grid) > budget:
        raise FrequencyBudgetError(f"激活频率 {len(grid)} 个，超过预算 {budget}", count=len(grid), budget=budget)
    return grid.astype(np.int64), weights


def _amplitudes(frequencies, weights, m, hbar):
    pairing = np.where(frequencies.any(axis=1), math.sqrt(2.0), 1.0)
    return hbar ** (m / 2.0) * np.sqrt(weights) * pairing


def build_sample(spec, m, hbar, rng, eps_cut=None, budget=DEFAULT_FREQUENCY_BUDGET, seed_label=""):
    """
    合成 X^ℏ 的一个样本

    Args:
        spec (WeightSpec): 谱权重
        m (int): 维数
        hbar (float): 尺度 ℏ ∈ (0, 1/4]
        rng (np.random.Generator): 独立随机数流
        eps_cut (float): 权重截断阈值，默认取 spec.eps_cut
        budget (int): 频率数预算
        seed_label (str): 种子来源说明，写入样本元数据

    Returns:
        FieldSample
    """
    if not 0 < hbar <= 0.25:
        raise ValueError(f"ℏ 必须在 (0, 1/4]，得到 {hbar}")
    eps_cut = spec.eps_cut if eps_cut is None else eps_cut
    frequencies, weights = active_frequencies(spec, m, hbar, eps_cut, budget)
    count = len(frequencies)
    a_coeffs = rng.standard_normal(count)
    b_coeffs = rng.standard_normal(count)
    return FieldSample(
        m=m,
        hbar=float(hbar),
        frequencies=frequencies,
        amplitudes=_amplitudes(frequencies, weights, m, hbar),
        a_coeffs=a_coeffs,
        b_coeffs=b_coeffs,
        eps_cut=eps_cut,
        seed=seed_label,
        truncation_bias=eps_cut * count,
    )


def eval_jets(sample, points, max_order=2):
    """
    批量逐项求值：每求一次导数乘以 2πk 分量并把相位旋转 90°

    Args:
        sample (FieldSample): 样本
        points: 形状 (n, m) 的环面坐标
        max_order (int): 0–3

    Returns:
        JetBatch
    """
    if max_order not in (0, 1, 2, 3):
        raise ValueError(f"max_order 必须为 0–3，得到 {max_order}")
    m = sample.m
    points = np.asarray(points, dtype=float).reshape(-1, m)
    n = len(points)
    wave = 2.0 * math.pi * sample.frequencies.astype(float)
    amp_a = sample.amplitudes * sample.a_coeffs
    amp_b = sample.amplitudes * sample.b_coeffs

    values = np.empty(n)
    gradients = np.empty((n, m)) if max_order >= 1 else None
    hessians = np.empty((n, m, m)) if max_order >= 2 else None
    thirds = np.empty((n, m, m, m)) if max_order >= 3 else None

    chunk = max(1, _EVAL_BLOCK // max(sample.count, 1))
    for start in range(0, n, chunk):
        rows = slice(start, min(start + chunk, n))
        phase = points[rows] @ wave.T
        cos, sin = np.cos(phase), np.sin(phase)
        even = cos * amp_a + sin * amp_b
        values[rows] = even.sum(axis=1)
        if max_order >= 1:
            odd = cos * amp_b - sin * amp_a
            gradients[rows] = odd @ wave
        if max_order >= 2:
            hessians[rows] = -np.einsum("nk,ki,kj->nij", even, wave, wave, optimize=True)
        if max_order >= 3:
            thirds[rows] = -np.einsum("nk,ki,kj,kl->nijl", odd, wave, wave, wave, optimize=True)
    return JetBatch(points=points, values=values, gradients=gradients, hessians=hessians, thirds=thirds)


def eval_jet(sample, theta, max_order=2):
    """单点求值，返回 Jet（精确三角和，无插值）"""
    batch = eval_jets(sample, np.asarray(theta, dtype=float).reshape(1, sample.m), max_order)
    return Jet(
        point=batch.points[0],
        value=float(batch.values[0]),
        gradient=None if batch.gradients is None else batch.gradients[0],
        hessian=None if batch.hessians is None else batch.hessians[0],
        third=None if batch.thirds is None else batch.thirds[0],
    )


def exact_sample_covariance(spec, m, hbar, theta, theta_prime, eps_cut=None):
    """采样器实现的真实协方差 ℏ^m Σ_k w(2πℏ|k|) cos 2π⟨k, θ′−θ⟩（全格点，截断同 build_sample）"""
    frequencies, weights = active_frequencies(spec, m, hbar, eps_cut)
    amplitudes = _amplitudes(frequencies, weights, m, hbar)
    delta = np.asarray(theta_prime, dtype=float).reshape(m) - np.asarray(theta, dtype=float).reshape(m)
    phase = 2.0 * math.pi * frequencies.astype(float) @ delta
    return float((amplitudes ** 2 * np.cos(phase)).sum())


def rescaled_jets(sample, points, max_order=2):
    """Y^ℏ(x) = X^ℏ(ℏx mod 1) 的批量喷射，k 阶导数乘 ℏ^k"""
    points = np.asarray(points, dtype=float).reshape(-1, sample.m)
    hbar = sample.hbar
    batch = eval_jets(sample, np.mod(hbar * points, 1.0), max_order)
    return JetBatch(
        points=points,
        values=batch.values,
        gradients=None if batch.gradients is None else hbar * batch.gradients,
        hessians=None if batch.hessians is None else hbar ** 2 * batch.hessians,
        thirds=None if batch.thirds is None else hbar ** 3 * batch.thirds,
    )


def rescaled_jet(sample, x, max_order=2):
    """Y^ℏ 在 x 处的喷射"""
    batch = rescaled_jets(sample, np.asarray(x, dtype=float).reshape(1, sample.m), max_order)
    return Jet(
        point=batch.points[0],
        value=float(batch.values[0]),
        gradient=None if batch.gradients is None else batch.gradients[0],
        hessian=None if batch.hessians is None else batch.hessians[0],
        third=None if batch.thirds is None else batch.thirds[0],
    )


def dump_sample(sample, path):
    """
    把样本写成纯文本表格

    格式：以 '#' 开头的头部行（版本、m、hbar、eps_cut、seed、列名），
    随后每行一个频率：k_1 … k_m amplitude A B，浮点数用 repr 保证可逆。
    """
    from .file_utils import write_text

    header = [
        f"# {SAMPLE_FORMAT_VERSION}",
        f"# m={sample.m}",
        f"# hbar={sample.hbar!r}",
        f"# eps_cut={sample.eps_cut!r}",
        f"# seed={sample.seed}",
        "# columns: " + " ".join([f"k_{i + 1}" for i in range(sample.m)] + ["amplitude", "A", "B"]),
    ]
    rows = []
    for k, amp, a, b in zip(sample.frequencies, sample.amplitudes, sample.a_coeffs, sample.b_coeffs):
        rows.append(" ".join([str(int(c)) for c in k] + [repr(float(amp)), repr(float(a)), repr(float(b))]))
    return write_text(path, "\n".join(header + rows) + "\n")


def load_sample(path):
    """读取 dump_sample 写出的样本"""
    from .file_utils import read_file

    meta = {}
    rows = []
    for line in read_file(path).splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body and not body.startswith("columns"):
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
            continue
        rows.append([float(token) for token in line.split()])
    if "m" not in meta or "hbar" not in meta:
        raise ValueError(f"样本文件缺少 m 或 hbar 头部: {path}")
    m = int(meta["m"])
    table = np.asarray(rows, dtype=float).reshape(-1, m + 3)
    return FieldSample(
        m=m,
        hbar=float(meta["hbar"]),
        frequencies=table[:, :m].astype(np.int64),
        amplitudes=table[:, m],
        a_coeffs=table[:, m + 1],
        b_coeffs=table[:, m + 2],
        eps_cut=float(meta.get("eps_cut", 1e-12)),
        seed=meta.get("seed", ""),
        truncation_bias=float(meta.get("eps_cut", 1e-12)) * len(table),
    )
