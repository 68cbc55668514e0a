# -*- coding: utf-8 -*-
"""
临界点实验系统 - 临界点枚举模块
==============================

两阶段枚举采样场的全部临界点：

1. 均匀网格扫描（格宽 ℏ/scan_per_wavelength，x 坐标系下为 1/scan_per_wavelength），
   标记梯度各分量在格角上全部变号的格子，以及 |∇X|² 相对轴向邻居取局部极小的格点；
2. 从每个标记处出发做阻尼 Newton，步长不超过一个格对角线。

收敛点按环面距离 < 1e-6·ℏ 去重（保留残差较小者），按位置排序输出。
盒子采用半开约定 [lo, hi)，因此互不相交的盒子恰好拼接。

版本：1.0.0
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import EnumerationIncompleteError, EnumerationUnreliableError, InvariantViolation
from .field_sampler import eval_jets, rescaled_jets

logger = logging.getLogger(__name__)

BOUNDARY_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class CriticalPointRecord:
    """一个已定位的临界点"""

    position: Tuple[float, ...]
    value: float
    grad_residual: float
    hessian: np.ndarray = field(repr=False)
    morse_index: int
    degeneracy_margin: float
    cell: Tuple[int, ...] = ()
    degenerate: bool = False


@dataclass
class FinderOptions:
    """枚举参数"""

    scan_per_wavelength: int = 6
    max_newton_iter: int = 60
    residual_factor: float = 1e-8
    dedup_factor: float = 1e-6
    max_failure_rate: float = 0.01
    degeneracy_factor: float = 1e-10

    def __post_init__(self):
        if self.scan_per_wavelength < 4:
            raise ValueError(f"scan_per_wavelength 至少为 4，得到 {self.scan_per_wavelength}")
        if self.max_newton_iter < 1:
            raise ValueError("max_newton_iter 至少为 1")

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        allowed = set(cls.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"未知的查找器参数: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class FinderResult:
    """枚举结果与诊断信息"""

    records: List[CriticalPointRecord]
    seeds: int
    newton_failures: int
    speculative_misses: int
    duplicates_merged: int
    degenerate_flags: int
    gradient_scale: float
    chart: str = "theta"

    @property
    def diagnostics(self):
        return {
            "seeds": self.seeds,
            "newton_failures": self.newton_failures,
            "speculative_misses": self.speculative_misses,
            "duplicates_merged": self.duplicates_merged,
            "degenerate_flags": self.degenerate_flags,
            "gradient_scale": self.gradient_scale,
        }


class _Chart:
    """θ 坐标系（周期 1）或重标度 x 坐标系（周期 1/ℏ）"""

    def __init__(self, sample, name):
        if name not in ("theta", "x"):
            raise ValueError(f"未知坐标系: {name}")
        self.sample = sample
        self.name = name
        self.period = 1.0 if name == "theta" else 1.0 / sample.hbar
        # 去重距离与格宽都以 ℏ 为单位
        self.unit = sample.hbar if name == "theta" else 1.0

    def jets(self, points, max_order):
        if self.name == "theta":
            return eval_jets(self.sample, points, max_order)
        return rescaled_jets(self.sample, points, max_order)


def _grid_axes(lo, hi, step, period):
    """每个轴的格点；覆盖整个周期时为周期网格"""
    axes = []
    periodic = []
    for a, b in zip(lo, hi):
        width = b - a
        if width >= period * (1.0 - 1e-12):
            count = int(math.ceil(period / step))
            axes.append(a + np.arange(count) * (period / count))
            periodic.append(True)
        else:
            count = int(math.ceil(width / step))
            spacing = width / count
            axes.append(a + spacing * np.arange(-2, count + 3))
            periodic.append(False)
    return axes, periodic


def _scan(chart, axes, periodic):
    """网格梯度扫描，返回种子与梯度尺度"""
    m = len(axes)
    shape = tuple(len(axis) for axis in axes)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    gradients = chart.jets(mesh, 1).gradients.reshape(shape + (m,))
    squared = (gradients ** 2).sum(axis=-1)
    scale = math.sqrt(float(squared.mean()))

    # 格角上各梯度分量的最小、最大值
    low = gradients.copy()
    high = gradients.copy()
    for offset in product((0, 1), repeat=m):
        if not any(offset):
            continue
        shifted = gradients
        for axis, step in enumerate(offset):
            if step:
                shifted = np.roll(shifted, -1, axis=axis)
        low = np.minimum(low, shifted)
        high = np.maximum(high, shifted)
    sign_change = np.all((low <= 0.0) & (high >= 0.0), axis=-1)

    local_min = np.ones(shape, dtype=bool)
    for axis in range(m):
        local_min &= squared <= np.roll(squared, 1, axis=axis)
        local_min &= squared <= np.roll(squared, -1, axis=axis)

    # 非周期轴上丢弃绕回的格子与边缘格点
    for axis, is_periodic in enumerate(periodic):
        if is_periodic:
            continue
        index = [slice(None)] * m
        index[axis] = -1
        sign_change[tuple(index)] = False
        local_min[tuple(index)] = False
        index[axis] = 0
        local_min[tuple(index)] = False

    spacing = np.array([axis[1] - axis[0] if len(axis) > 1 else 0.0 for axis in axes])
    origin = np.array([axis[0] for axis in axes])
    cells = np.argwhere(sign_change)
    nodes = np.argwhere(local_min & ~sign_change)
    seeds = np.concatenate([origin + (cells + 0.5) * spacing, origin + nodes * spacing]).reshape(-1, m)
    seed_cells = np.concatenate([cells, nodes]).reshape(-1, m)
    speculative = np.concatenate([np.zeros(len(cells), dtype=bool), np.ones(len(nodes), dtype=bool)])
    return seeds, seed_cells, speculative, scale, spacing


def _newton(chart, seeds, cap, tolerance, max_iter):
    """批量阻尼 Newton，返回终点、残差与收敛标志"""
    points = seeds.copy()
    residuals = np.full(len(points), np.inf)
    active = np.ones(len(points), dtype=bool)
    target = 1e-3 * tolerance
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        batch = chart.jets(points[idx], 2)
        grads = batch.gradients
        norms = np.linalg.norm(grads, axis=1)
        residuals[idx] = norms
        done = norms <= target
        active[idx[done]] = False
        idx, grads, hessians = idx[~done], grads[~done], batch.hessians[~done]
        if not len(idx):
            break
        eigenvalues, vectors = np.linalg.eigh(hessians)
        floor = 1e-12 * np.abs(eigenvalues).max(axis=1, keepdims=True) + 1e-300
        safe = np.where(np.abs(eigenvalues) < floor, np.where(eigenvalues < 0, -floor, floor), eigenvalues)
        coords = np.einsum("nji,nj->ni", vectors, grads) / safe
        steps = -np.einsum("nij,nj->ni", vectors, coords)
        lengths = np.linalg.norm(steps, axis=1)
        factor = np.minimum(1.0, cap / np.maximum(lengths, 1e-300))
        points[idx] += steps * factor[:, None]
        # 步长已降到舍入水平
        stalled = lengths < 1e-15 * chart.period
        active[idx[stalled]] = False

    final = chart.jets(points, 1).gradients
    residuals = np.linalg.norm(final, axis=1)
    return points, residuals, residuals <= tolerance


def _wrap(points, low, period):
    """约化到 [low, low + period)"""
    wrapped = low + np.mod(points - low, period)
    wrapped = np.where(wrapped >= low + period, low, wrapped)
    return wrapped


def find_critical_points(sample, region=None, options=None, chart="theta"):
    """
    枚举区域内的全部临界点

    Args:
        sample (FieldSample): 样本
        region: (lo, hi) 盒子，坐标属于所选坐标系；None 表示整个环面
        options (FinderOptions): 扫描与 Newton 参数
        chart (str): 'theta'（环面坐标）或 'x'（重标度坐标 x = θ/ℏ）

    Returns:
        FinderResult: 按位置排序、已去重的记录与诊断

    Raises:
        EnumerationUnreliableError: 确定性种子的 Newton 失败率超过阈值
    """
    options = options or FinderOptions()
    frame = _Chart(sample, chart)
    m = sample.m
    period = frame.period
    if region is None:
        lo, hi = np.zeros(m), np.full(m, period)
    else:
        lo = np.asarray(region[0], dtype=float).reshape(m)
        hi = np.asarray(region[1], dtype=float).reshape(m)
        if np.any(hi <= lo) or np.any(hi - lo > period * (1.0 + 1e-12)):
            raise ValueError(f"区域无效: lo={lo}, hi={hi}")

    step = frame.unit / options.scan_per_wavelength
    axes, periodic = _grid_axes(lo, hi, step, period)
    seeds, seed_cells, speculative, scale, spacing = _scan(frame, axes, periodic)
    tolerance = options.residual_factor * scale
    cap = float(np.linalg.norm(spacing))

    points, residuals, converged = _newton(frame, seeds, cap, tolerance, options.max_newton_iter)
    definite = ~speculative
    failures = int((definite & ~converged).sum())
    misses = int((speculative & ~converged).sum())
    if definite.any() and failures > options.max_failure_rate * definite.sum():
        diagnostics = {"seeds": len(seeds), "newton_failures": failures, "gradient_scale": scale}
        raise EnumerationUnreliableError(
            f"Newton 失败 {failures}/{int(definite.sum())}，超过 {options.max_failure_rate:.0%}，请提高扫描密度",
            diagnostics=diagnostics,
        )

    points, residuals, seed_cells = points[converged], residuals[converged], seed_cells[converged]
    center = 0.5 * (lo + hi)
    frame_low = center - 0.5 * period
    points = _wrap(points, frame_low, period)

    kept, merged = _deduplicate(points, residuals, frame_low, period, options.dedup_factor * frame.unit)
    points, residuals, seed_cells = points[kept], residuals[kept], seed_cells[kept]

    inside = np.all((points >= lo) & (points < hi), axis=1)
    points, residuals, seed_cells = points[inside], residuals[inside], seed_cells[inside]
    if chart == "theta":
        points = _wrap(points, np.zeros(m), 1.0)

    records = _classify(frame, points, seed_cells, options.degeneracy_factor)
    flagged = sum(1 for record in records if record.degenerate)
    if flagged:
        logger.warning("%d 个临界点的 Hessian 近退化", flagged)
    return FinderResult(
        records=records,
        seeds=len(seeds),
        newton_failures=failures,
        speculative_misses=misses,
        duplicates_merged=merged,
        degenerate_flags=flagged,
        gradient_scale=scale,
        chart=chart,
    )


def _deduplicate(points, residuals, frame_low, period, radius):
    """周期 KD 树去重：先按位置排序，再按残差从小到大贪心保留"""
    if not len(points):
        return np.zeros(0, dtype=int), 0
    order = np.lexsort(points.T[::-1])
    shifted = np.mod(points[order] - frame_low, period)
    shifted = np.where(shifted >= period, 0.0, shifted)
    tree = cKDTree(shifted, boxsize=period)
    ranking = np.argsort(residuals[order], kind="stable")
    taken = np.zeros(len(order), dtype=bool)
    dropped = np.zeros(len(order), dtype=bool)
    for i in ranking:
        if dropped[i]:
            continue
        taken[i] = True
        for j in tree.query_ball_point(shifted[i], radius):
            if j != i and not taken[j]:
                dropped[j] = True
    kept = np.sort(order[taken])
    return kept, int(dropped.sum())


def _classify(frame, points, cells, degeneracy_factor):
    if not len(points):
        return []
    order = np.lexsort(points.T[::-1])
    points, cells = points[order], cells[order]
    batch = frame.jets(points, 2)
    records = []
    for point, value, grad, hessian, cell in zip(points, batch.values, batch.gradients, batch.hessians, cells):
        eigenvalues = np.linalg.eigvalsh(hessian)
        margin = float(np.abs(eigenvalues).min())
        norm = float(np.abs(eigenvalues).max())
        records.append(CriticalPointRecord(
            position=tuple(float(c) for c in point),
            value=float(value),
            grad_residual=float(np.linalg.norm(grad)),
            hessian=hessian,
            morse_index=int((eigenvalues < 0).sum()),
            degeneracy_margin=margin,
            cell=tuple(int(c) for c in cell),
            degenerate=margin < degeneracy_factor * norm,
        ))
    return records


def count_in_region(records, lo, hi, period=1.0):
    """半开盒子 [lo, hi) 内的记录数（环面坐标按周期约化到 [lo, lo + period)）"""
    if not records:
        return 0
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    positions = np.asarray([record.position for record in records])
    wrapped = _wrap(positions, lo, period)
    return int(np.all(wrapped < hi, axis=1).sum())


def boundary_hits(records, lo, hi, period=1.0, tolerance=BOUNDARY_TOLERANCE):
    """距离盒子边界 < tolerance 的记录数（几乎必然为 0）"""
    if not records:
        return 0
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    positions = _wrap(np.asarray([record.position for record in records]), lo, period)
    gaps = np.minimum(np.abs(positions - lo), np.abs(positions - hi))
    gaps = np.minimum(gaps, np.abs(positions - (lo + period)))
    return int(np.any(gaps < tolerance, axis=1).sum())


def count_in_box(records, r, m=None):
    """
    以 0 为中心、边长 r 的半开盒子 B_r = [−r/2, r/2)^m 内的临界点数

    r = 1 时返回总数；有记录贴近边界时记录警告。
    """
    if not 0 < r <= 1:
        raise ValueError(f"盒子边长必须在 (0, 1]，得到 {r}")
    if not records:
        return 0
    m = m or len(records[0].position)
    if r == 1:
        return len(records)
    lo, hi = np.full(m, -0.5 * r), np.full(m, 0.5 * r)
    hits = boundary_hits(records, lo, hi)
    if hits:
        logger.warning("%d 个临界点距 B_%g 边界不足 %.0e", hits, r, BOUNDARY_TOLERANCE)
    return count_in_region(records, lo, hi)


def euler_alternating_sum(records):
    """Σ (−1)^index，T^m 上应为 χ(T^m) = 0"""
    return int(sum((-1) ** record.morse_index for record in records))


def bk_upper_bound(nu, m):
    """Bernshtein–Kouchnirenko 界：多面体 [−ν,ν]^m 给出 m!·(2ν)^m"""
    if int(nu) != nu or nu < 1:
        raise ValueError(f"ν 必须是正整数，得到 {nu}")
    if int(m) != m or m < 1:
        raise ValueError(f"m 必须是正整数，得到 {m}")
    return math.factorial(int(m)) * (2 * int(nu)) ** int(m)


def bump_polytope_radius(spec, hbar):
    """bump 权重下 Newton 多面体 ⊂ [−ν,ν]^m 的 ν = floor(R/(2πℏ))"""
    if spec.family != "bump":
        raise ValueError(f"只有 bump 权重有紧支撑，得到 {spec.family}")
    return int(math.floor(spec.support / (2.0 * math.pi * hbar)))


def check_bk_bound(sample, count, nu):
    """检查样本频率位于 [−ν,ν]^m 且计数不超过 BK 界"""
    bound = bk_upper_bound(nu, sample.m)
    reach = int(np.abs(sample.frequencies).max(initial=0))
    if reach > nu:
        raise InvariantViolation(f"样本频率 {reach} 超出多面体 [−{nu},{nu}]^{sample.m}", {"reach": reach, "nu": nu})
    if count > bound:
        raise InvariantViolation(f"临界点数 {count} 超过 BK 上界 {bound}", {"count": count, "bound": bound})
    return bound


def morse_lower_bound_check(records, m):
    """
    Morse 不等式检查：总数 ≥ 2^m，指标 i 的个数 ≥ C(m, i)

    Returns:
        tuple: (True, 详情)

    Raises:
        EnumerationIncompleteError: 任一下界或 Euler 和被违反
    """
    counts = [0] * (m + 1)
    for record in records:
        counts[record.morse_index] += 1
    betti = [math.comb(m, i) for i in range(m + 1)]
    detail = {
        "index_counts": counts,
        "betti": betti,
        "total": len(records),
        "euler_sum": euler_alternating_sum(records),
    }
    if len(records) < 2 ** m or any(c < b for c, b in zip(counts, betti)):
        raise EnumerationIncompleteError(f"Morse 下界不满足：指标计数 {counts}，Betti 数 {betti}", detail)
    if detail["euler_sum"] != 0:
        raise EnumerationIncompleteError(f"Euler 交错和为 {detail['euler_sum']}，应为 0", detail)
    return True, detail
