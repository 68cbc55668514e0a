# -*- coding: utf-8 -*-
"""
临界点实验系统 - 实验编排模块
============================

Monte Carlo 实验的配置、执行与结果汇总：

1. 均值律：E[Z(B_r)]·ℏ^m 与 Z̄₀·vol(B_r) 对比
2. 方差标度：Var 对 1/ℏ 的双对数斜率与 S₀ 估计
3. 中心极限：自标准化计数的 KS 距离、偏度、超额峰度与分位数表
4. 几乎必然收敛：ℏ_n = ℏ₀·n^{−2/p} 序列上的 ℏ_n^m·Z_n
5. BK 上界、密度常数、两点 Kac–Rice 方差、混沌部分和、单样本枚举

确定性约定：主种子经 SeedSequence(entropy=seed, spawn_key=(用途, 单元, 序号))
展开为每个任务独立的随机数流，结果按任务序号归并，与线程数无关。

版本：1.0.0
"""

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from functools import cached_property, partial
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import stats
from sklearn.linear_model import LinearRegression
from tqdm import tqdm

from .chaos_analyzer import chaos_mean, hessian_hermite_coeffs, variance_chaos_partial
from .critical_finder import (
    FinderOptions,
    bump_polytope_radius,
    check_bk_bound,
    count_in_box,
    find_critical_points,
    morse_lower_bound_check,
)
from .errors import ConfigError, EnumerationUnreliableError
from .field_sampler import DEFAULT_FREQUENCY_BUDGET, build_sample, dump_sample
from .file_utils import read_json, write_csv, write_json, write_jsonl
from .kac_rice_engine import (
    compare_routes,
    density_route_exact,
    density_route_main1,
    sdh_constants,
    second_factorial_moment,
)
from .result_formatter import (
    AS_COLUMNS,
    BK_COLUMNS,
    CELL_DETAIL_COLUMNS,
    CHAOS_COLUMNS,
    CONSTANTS_COLUMNS,
    COUNTS_COLUMNS,
    FIT_COLUMNS,
    KACRICE_COLUMNS,
    QUANTILE_LEVELS,
    SUMMARY_COLUMNS,
    critical_point_columns,
    csv_rows,
    jsonl_records,
)
from .spectral_weights import WeightSpec, correlation_length

logger = logging.getLogger(__name__)

# 子流用途编码
PURPOSE_SAMPLES = 0
PURPOSE_PREDICTIONS = 1
PURPOSE_BOOTSTRAP = 2
PURPOSE_AS = 3

REPORT_FORMATS = ("csv", "jsonl", "svg", "html")
META_FILENAME = "report_meta.json"

# 两点求积的远场节点间距（相关长度的倍数）
_KR_SPACING = {1: 0.125, 2: 0.5}


def substream(seed, purpose, cell, index):
    """(用途, 单元, 序号) 对应的独立随机数流"""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(purpose), int(cell), int(index)))
    return np.random.default_rng(sequence)


# ---------------------------------------------------------------------------
# 配置
# ---------------------------------------------------------------------------

def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass
class ExperimentConfig:
    """实验配置，字段名与 JSON 配置键一一对应"""

    weight: Dict = field(default_factory=lambda: {"family": "gaussian"})
    m: int = 1
    hbars: List[float] = field(default_factory=lambda: [1.0 / 64])
    r: List[float] = field(default_factory=lambda: [1.0])
    samples: int = 2000
    seed: int = 20240601
    threads: int = 1
    out_dir: str = "output"
    finder: Dict = field(default_factory=dict)
    mc_samples: int = 400_000
    kr_mc_samples: int = 20_000
    coeff_samples: int = 400_000
    predict_variance: bool = False
    window_correlation_lengths: float = 8.0
    chaos_q_max: int = 6
    ks_coefficient: float = 1.63
    ks_slack: float = 0.02
    max_abs_skew: float = 0.15
    max_abs_exkurt: float = 0.3
    as_power: Optional[float] = None
    as_hbar0: float = 0.25
    as_steps: List[int] = field(default_factory=lambda: [1, 2, 3, 4])
    as_replicates: int = 20
    chart_check_fraction: float = 0.01
    eps_cut: Optional[float] = None
    frequency_budget: int = DEFAULT_FREQUENCY_BUDGET
    bootstrap_resamples: int = 200
    plot: bool = False
    progress: bool = True
    formats: List[str] = field(default_factory=lambda: ["csv", "jsonl"])

    def __post_init__(self):
        self.hbars = [float(h) for h in _as_list(self.hbars)]
        self.r = [float(r) for r in _as_list(self.r)]
        self.as_steps = [int(n) for n in _as_list(self.as_steps)]
        self.formats = [str(f) for f in _as_list(self.formats)]
        self.validate()

    @classmethod
    def from_dict(cls, data):
        """
        由 JSON 字典构造

        Raises:
            ConfigError: 未知键、类型错误或违反约束
        """
        if not isinstance(data, dict):
            raise ConfigError(f"配置必须是 JSON 对象，得到 {type(data).__name__}")
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"未知的配置项: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"配置无效: {e}") from e

    def validate(self):
        """检查全部约束，失败抛 ConfigError"""
        problems = []
        if self.m not in (1, 2, 3) or isinstance(self.m, bool):
            problems.append(f"m 必须为 1、2 或 3，得到 {self.m}")
        if not self.hbars:
            problems.append("hbars 不能为空")
        for hbar in self.hbars:
            if not 0 < hbar <= 0.25:
                problems.append(f"ℏ 必须在 (0, 1/4]，得到 {hbar}")
        if not self.r:
            problems.append("r 不能为空")
        for r in self.r:
            if not (0 < r <= 0.5 or r == 1.0):
                problems.append(f"盒子边长 r 必须满足 0 < r ≤ 1/2 或 r = 1，得到 {r}")
        for name, minimum in (("samples", 100), ("threads", 1), ("as_replicates", 1),
                              ("chaos_q_max", 1), ("bootstrap_resamples", 10),
                              ("mc_samples", 10_000), ("kr_mc_samples", 100), ("coeff_samples", 1000),
                              ("frequency_budget", 1)):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
                problems.append(f"{name} 必须是 ≥ {minimum} 的整数，得到 {value!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            problems.append(f"seed 必须是非负整数，得到 {self.seed!r}")
        if self.as_power is not None and not (_is_number(self.as_power) and 0 < self.as_power < self.m):
            problems.append(f"as_power 必须在 (0, m) 内，得到 {self.as_power}")
        if not (_is_number(self.as_hbar0) and 0 < self.as_hbar0 <= 0.25):
            problems.append(f"as_hbar0 必须在 (0, 1/4]，得到 {self.as_hbar0}")
        if not self.as_steps or any(n < 1 for n in self.as_steps) or sorted(set(self.as_steps)) != self.as_steps:
            problems.append(f"as_steps 必须是严格递增的正整数列表，得到 {self.as_steps}")
        if not (_is_number(self.chart_check_fraction) and 0 <= self.chart_check_fraction <= 1):
            problems.append(f"chart_check_fraction 必须在 [0, 1]，得到 {self.chart_check_fraction}")
        if self.eps_cut is not None and not (_is_number(self.eps_cut) and 0 < self.eps_cut < 1):
            problems.append(f"eps_cut 必须在 (0, 1)，得到 {self.eps_cut}")
        for name in ("window_correlation_lengths", "ks_coefficient", "max_abs_skew", "max_abs_exkurt"):
            value = getattr(self, name)
            if not (_is_number(value) and value > 0):
                problems.append(f"{name} 必须为正数，得到 {value!r}")
        if not (_is_number(self.ks_slack) and self.ks_slack >= 0):
            problems.append(f"ks_slack 必须非负，得到 {self.ks_slack!r}")
        bad_formats = set(self.formats) - set(REPORT_FORMATS)
        if bad_formats:
            problems.append(f"未知的输出格式: {', '.join(sorted(bad_formats))}（可选 {', '.join(REPORT_FORMATS)}）")
        if problems:
            raise ConfigError("；".join(problems))

        try:
            self.weight_spec
            self.finder_options
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @cached_property
    def weight_spec(self):
        return WeightSpec.from_dict(self.weight)

    @cached_property
    def finder_options(self):
        return FinderOptions.from_dict(self.finder)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def settings_hash(self):
        """规范化 JSON（排序键）的 SHA-256 前 16 位"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def with_overrides(self, **overrides):
        """以非 None 的参数覆盖同名字段（命令行全局参数）"""
        changes = {key: value for key, value in overrides.items() if value is not None}
        if not changes:
            return self
        try:
            return replace(self, **changes)
        except TypeError as e:
            raise ConfigError(f"无效的覆盖参数: {e}") from e

    def thresholds(self):
        return {
            "ks_coefficient": self.ks_coefficient,
            "ks_slack": self.ks_slack,
            "max_abs_skew": self.max_abs_skew,
            "max_abs_exkurt": self.max_abs_exkurt,
            "chart_check_fraction": self.chart_check_fraction,
        }

    @property
    def output_formats(self):
        formats = list(self.formats)
        if self.plot and "svg" not in formats:
            formats.append("svg")
        return formats


def load_config(path):
    """
    读取 JSON 配置文件

    Raises:
        ConfigError: 内容无效
        OSError: 文件不存在或不可读
    """
    try:
        data = read_json(path)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# 报告
# ---------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    """一次实验的全部结果表、诊断与元数据"""

    kind: str
    config: ExperimentConfig = field(repr=False)
    tables: Dict[str, Tuple[Tuple[str, ...], List[dict]]] = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    meta: Dict = field(default_factory=dict)
    standardized: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    cell_counts: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    sample: object = field(default=None, repr=False)

    def add_table(self, name, columns, records):
        self.tables[name] = (tuple(columns), list(records))

    def records(self, name):
        return self.tables.get(name, ((), []))[1]

    @property
    def cells(self):
        return self.records("summary")

    @property
    def passed(self):
        return all(self.checks.values())

    def metadata(self):
        return {
            "kind": self.kind,
            "settings_hash": self.config.settings_hash(),
            "seed": self.config.seed,
            "threads": self.config.threads,
            "thresholds": self.config.thresholds(),
            "checks": self.checks,
            **self.meta,
        }


@dataclass
class SampleOutcome:
    """单个样本的全环面枚举结果"""

    index: int
    counts: Tuple[int, ...]
    total: int
    index_counts: Tuple[int, ...]
    degenerate: int
    chart_checked: bool = False
    chart_mismatch: bool = False


# ---------------------------------------------------------------------------
# 样本级任务
# ---------------------------------------------------------------------------

def _chart_mismatch(sample, options, radii, counts):
    """在重标度坐标 x = θ/ℏ 中重新枚举对应窗口，比较计数"""
    mismatch = False
    for r, expected in zip(radii, counts):
        if r == 1.0:
            found = len(find_critical_points(sample, None, options, chart="x").records)
        else:
            half = r / (2.0 * sample.hbar)
            region = (np.full(sample.m, -half), np.full(sample.m, half))
            found = len(find_critical_points(sample, region, options, chart="x").records)
        if found != expected:
            logger.warning("坐标系抽查不符: 样本 %s, r=%g, θ 计数 %d, x 计数 %d", sample.seed, r, expected, found)
            mismatch = True
    return mismatch


def _enumerate_sample(config, purpose, cell, hbar, radii, chart_every, index, bk_nu=None):
    rng = substream(config.seed, purpose, cell, index)
    sample = build_sample(
        config.weight_spec, config.m, hbar, rng, config.eps_cut, config.frequency_budget,
        seed_label=f"{config.seed}/{purpose}/{cell}/{index}",
    )
    result = find_critical_points(sample, None, config.finder_options)
    _, detail = morse_lower_bound_check(result.records, config.m)
    if bk_nu is not None:
        check_bk_bound(sample, len(result.records), bk_nu)
    counts = tuple(count_in_box(result.records, r, config.m) for r in radii)
    checked = bool(chart_every) and index % chart_every == 0
    mismatch = _chart_mismatch(sample, config.finder_options, radii, counts) if checked else False
    return SampleOutcome(
        index=index,
        counts=counts,
        total=len(result.records),
        index_counts=tuple(detail["index_counts"]),
        degenerate=result.degenerate_flags,
        chart_checked=checked,
        chart_mismatch=mismatch,
    )


def split_degenerate(outcomes):
    """含退化临界点的样本不进入计数统计；返回 (保留, 排除)"""
    kept = [o for o in outcomes if not o.degenerate]
    dropped = [o for o in outcomes if o.degenerate]
    return kept, dropped


def _map_tasks(config, worker, count, desc):
    """线程池按序号映射，结果顺序与线程数无关"""
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        results = pool.map(worker, range(count))
        return list(tqdm(results, total=count, desc=desc, disable=not config.progress, leave=False))


# ---------------------------------------------------------------------------
# 统计
# ---------------------------------------------------------------------------

def jackknife_variance_se(values):
    """样本方差的删一刀切标准误（闭式留一方差）"""
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 3:
        return math.nan
    s1, s2 = x.sum(), (x ** 2).sum()
    leave_one_out = ((s2 - x ** 2) - (s1 - x) ** 2 / (n - 1)) / (n - 2)
    return float(math.sqrt((n - 1) / n * ((leave_one_out - leave_one_out.mean()) ** 2).sum()))


def summarize_counts(values, config):
    """
    一个单元的计数摘要：矩、KS 距离、分位数与正态性判定

    标准化使用单元自身的均值与标准差，因此标准化样本的均值恰为 0。
    """
    x = np.asarray(values, dtype=float)
    n = len(x)
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    std = math.sqrt(var)
    summary = {
        "n": n,
        "mean": mean,
        "mean_se": std / math.sqrt(n),
        "var": var,
        "var_se": jackknife_variance_se(x),
        "min": int(x.min()),
        "max": int(x.max()),
        "ks_critical": config.ks_coefficient / math.sqrt(n) + config.ks_slack,
    }
    if std > 0:
        z = (x - mean) / std
        summary.update(
            skew=float(stats.skew(x, bias=False)),
            exkurt=float(stats.kurtosis(x, fisher=True, bias=False)),
            ks=float(stats.kstest(z, "norm").statistic),
            standardized=z,
        )
        quantiles = np.quantile(z, QUANTILE_LEVELS)
    else:
        logger.warning("单元计数方差为 0，跳过正态性诊断")
        summary.update(skew=math.nan, exkurt=math.nan, ks=math.nan, standardized=np.zeros(n))
        quantiles = [math.nan] * len(QUANTILE_LEVELS)
    for level, value in zip(QUANTILE_LEVELS, quantiles):
        summary[f"q{int(round(level * 100)):02d}"] = float(value)
    summary["ks_pass"] = bool(summary["ks"] < summary["ks_critical"])
    summary["skew_pass"] = bool(abs(summary["skew"]) < config.max_abs_skew)
    summary["kurt_pass"] = bool(abs(summary["exkurt"]) < config.max_abs_exkurt)
    return summary


def _joint_z(a, a_se, b, b_se):
    scale = math.sqrt(a_se ** 2 + b_se ** 2)
    if scale == 0:
        return 0.0 if a == b else math.inf
    return abs(a - b) / scale


# ---------------------------------------------------------------------------
# 理论预测
# ---------------------------------------------------------------------------

def density_prediction(config):
    """Z̄₀：m = 1 用闭式，否则用 main1 Monte Carlo"""
    if config.m == 1:
        return density_route_exact(config.weight_spec, 1)
    rng = substream(config.seed, PURPOSE_PREDICTIONS, 0, 0)
    return density_route_main1(config.weight_spec, config.m, config.mc_samples, rng)


def variance_prediction(config):
    """窗口 window_correlation_lengths 个相关长度上的二阶阶乘矩估计"""
    if config.m not in (1, 2):
        raise ConfigError(f"方差预测只支持 m ∈ {{1, 2}}，得到 {config.m}")
    spec = config.weight_spec
    window = config.window_correlation_lengths * correlation_length(spec, config.m)
    rng = substream(config.seed, PURPOSE_PREDICTIONS, 0, 2)
    return second_factorial_moment(
        spec, config.m, 0.0, window, rng, mc_samples=config.kr_mc_samples, spacing_fraction=_KR_SPACING[config.m],
    )


# ---------------------------------------------------------------------------
# 计数实验
# ---------------------------------------------------------------------------

def _run_count_cells(config, kind):
    start = time.perf_counter()
    m = config.m
    radii = config.r
    zbar = density_prediction(config)
    second = variance_prediction(config) if config.predict_variance else None
    chart_every = int(round(1.0 / config.chart_check_fraction)) if config.chart_check_fraction > 0 else 0

    report = ExperimentReport(kind=kind, config=config)
    counts_rows, summary_rows, detail_rows = [], [], []
    chart_checked = chart_mismatches = enumerations = degenerate = 0
    excluded = {}

    for h_idx, hbar in enumerate(config.hbars):
        logger.info("单元组 ℏ=%g：%d 个样本", hbar, config.samples)
        worker = partial(_enumerate_sample, config, PURPOSE_SAMPLES, h_idx, hbar, radii, chart_every)
        outcomes = _map_tasks(config, worker, config.samples, f"ℏ={hbar:g}")
        enumerations += len(outcomes)
        chart_checked += sum(o.chart_checked for o in outcomes)
        chart_mismatches += sum(o.chart_mismatch for o in outcomes)
        degenerate += sum(o.degenerate for o in outcomes)
        outcomes, dropped = split_degenerate(outcomes)
        for o in dropped:
            logger.warning("ℏ=%g 样本 %d 含 %d 个退化临界点，不计入统计", hbar, o.index, o.degenerate)
        excluded[h_idx] = [o.index for o in dropped]
        if len(outcomes) < 3:
            raise EnumerationUnreliableError(
                f"ℏ={hbar} 只剩 {len(outcomes)} 个非退化样本",
                diagnostics={"hbar": hbar, "excluded": excluded[h_idx]},
            )

        for r_idx, r in enumerate(radii):
            cell_id = h_idx * len(radii) + r_idx
            values = np.array([o.counts[r_idx] for o in outcomes])
            counts_rows.extend(
                {"cell_id": cell_id, "hbar": hbar, "r": r, "sample_idx": o.index, "count": o.counts[r_idx]}
                for o in outcomes
            )
            summary = summarize_counts(values, config)
            report.standardized[cell_id] = summary.pop("standardized")
            report.cell_counts[cell_id] = values

            volume = r ** m
            scale = hbar ** (-m)
            n_hbar = int(math.floor(r / (2.0 * hbar)))
            row = {
                "cell_id": cell_id, "hbar": hbar, "r": r, **summary,
                "pred_mean": zbar.value * scale * volume,
                "pred_mean_se": zbar.se * scale * volume,
                "pred_var": None if second is None else second.s0_limit * scale * volume,
                "pred_var_se": None if second is None else second.s0_limit_se * scale * volume,
                "n_hbar": n_hbar,
                "s_hbar": r / (2.0 * hbar * n_hbar) if n_hbar else None,
                "s0": summary["var"] * hbar ** m / volume,
                "s0_se": summary["var_se"] * hbar ** m / volume,
            }
            summary_rows.append(row)
            detail_rows.append(row)

    report.add_table("counts", COUNTS_COLUMNS, counts_rows)
    report.add_table("summary", SUMMARY_COLUMNS, summary_rows)
    report.add_table("cells", CELL_DETAIL_COLUMNS, detail_rows)
    if chart_mismatches:
        logger.warning("坐标系抽查：%d/%d 个样本不符", chart_mismatches, chart_checked)
    report.checks["chart_equivalence"] = chart_mismatches == 0
    report.meta.update(
        excluded_samples={f"{config.hbars[h]:g}": indices for h, indices in excluded.items()},
        zbar=zbar.value,
        zbar_se=zbar.se,
        zbar_route=zbar.route,
        s0_prediction=None if second is None else second.s0_limit,
        s0_prediction_se=None if second is None else second.s0_limit_se,
        enumerations=enumerations,
        invariant_violations=0,
        degenerate_points=degenerate,
        chart_checks=chart_checked,
        chart_mismatches=chart_mismatches,
        window_identity="Z(X^ℏ, B_r) = Z(Y^ℏ, B̂_{r/ℏ})",
        wall_time=time.perf_counter() - start,
    )
    return report


def run_mean_experiment(config):
    """
    均值律实验：每个 (ℏ, r) 单元报告均值 ± 标准误及其与 Z̄₀ℏ^{−m}r^m 的比值

    Raises:
        EnumerationUnreliableError: 枚举失败率超过阈值
        InvariantViolation: 任一全环面枚举违反 Euler/Morse 不变量
    """
    report = _run_count_cells(config, "mean")
    for cell in report.cells:
        z = _joint_z(cell["mean"], cell["mean_se"], cell["pred_mean"], cell["pred_mean_se"])
        cell["mean_ratio"] = cell["mean"] / cell["pred_mean"]
        report.checks[f"mean_cell_{cell['cell_id']}"] = z <= 3.0
    return report


def _slope(hbars, variances):
    x = np.log(1.0 / np.asarray(hbars)).reshape(-1, 1)
    y = np.log(np.asarray(variances))
    model = LinearRegression().fit(x, y)
    return float(model.coef_[0]), float(model.intercept_)


def run_variance_scaling(config):
    """
    方差标度实验：每个 r 拟合 log Var 对 log(1/ℏ) 的斜率并给出 bootstrap 置信区间

    Raises:
        ConfigError: 尺度少于 3 个
    """
    if len(config.hbars) < 3:
        raise ConfigError(f"方差标度至少需要 3 个尺度，得到 {len(config.hbars)}")
    if config.samples < 2000:
        logger.warning("方差标度建议每个单元至少 2000 个样本，当前 %d", config.samples)
    report = _run_count_cells(config, "variance")
    m = config.m
    fit_rows = []
    for r_idx, r in enumerate(config.r):
        cells = [cell for cell in report.cells if cell["r"] == r]
        if any(cell["var"] <= 0 for cell in cells):
            logger.warning("r=%g 存在零方差单元，跳过斜率拟合", r)
            continue
        hbars = [cell["hbar"] for cell in cells]
        slope, intercept = _slope(hbars, [cell["var"] for cell in cells])
        slopes = []
        for b in range(config.bootstrap_resamples):
            rng = substream(config.seed, PURPOSE_BOOTSTRAP, r_idx, b)
            variances = []
            for cell in cells:
                values = report.cell_counts[cell["cell_id"]]
                variances.append(values[rng.integers(0, len(values), len(values))].var(ddof=1))
            if min(variances) > 0:
                slopes.append(_slope(hbars, variances)[0])
        low, high = (np.percentile(slopes, [2.5, 97.5]) if slopes else (math.nan, math.nan))
        fit_rows.append({"r": r, "slope": slope, "intercept": intercept, "ci_low": float(low),
                         "ci_high": float(high), "resamples": len(slopes)})
        report.checks[f"slope_r{r:g}"] = 0.9 * m <= slope <= 1.1 * m

        s0 = [(cell["s0"], cell["s0_se"]) for cell in cells]
        worst = max((_joint_z(a, a_se, b, b_se) for i, (a, a_se) in enumerate(s0) for b, b_se in s0[i + 1:]),
                    default=0.0)
        report.checks[f"s0_consistent_r{r:g}"] = worst <= 3.0
        report.checks[f"s0_positive_r{r:g}"] = all(value > 3.0 * se for value, se in s0)
        if config.predict_variance:
            for cell in cells:
                z = _joint_z(cell["var"], cell["var_se"], cell["pred_var"], cell["pred_var_se"])
                report.checks[f"kacrice_var_cell_{cell['cell_id']}"] = z <= 3.0
    report.add_table("fit", FIT_COLUMNS, fit_rows)
    return report


def run_clt_experiment(config):
    """
    中心极限实验：按 (ℏ/r)^{m/2}(Z − E[Z]) 自标准化后报告 KS、偏度、超额峰度与分位数
    （判定针对最小的 ℏ）
    """
    if config.samples < 4000:
        logger.warning("CLT 检验建议至少 4000 个样本，当前 %d", config.samples)
    report = _run_count_cells(config, "clt")
    smallest = min(config.hbars)
    for cell in report.cells:
        if cell["hbar"] != smallest:
            continue
        suffix = f"h{cell['hbar']:g}_r{cell['r']:g}"
        report.checks[f"ks_{suffix}"] = cell["ks_pass"]
        report.checks[f"skew_{suffix}"] = cell["skew_pass"]
        report.checks[f"exkurt_{suffix}"] = cell["kurt_pass"]
    return report


def as_schedule(config):
    """ℏ_n = ℏ₀·n^{−2/p}（默认 p = m/2）"""
    power = config.as_power if config.as_power is not None else config.m / 2.0
    return power, [(n, config.as_hbar0 * n ** (-2.0 / power)) for n in config.as_steps]


def run_as_convergence(config):
    """
    几乎必然收敛诊断：每个重复、每个 n 独立抽样，报告 ℏ_n^m·Z_n 及其与 Z̄₀r^m 偏差的滚动最大值

    只做趋势诊断；唯一的判定是级数 Σℏ_n^p 的有限性。
    """
    start = time.perf_counter()
    m = config.m
    r = config.r[0]
    power, schedule = as_schedule(config)
    zbar = density_prediction(config)
    target = zbar.value * r ** m

    def task(flat):
        replicate, step = divmod(flat, len(schedule))
        n, hbar = schedule[step]
        return _enumerate_sample(config, PURPOSE_AS, replicate, hbar, [r], 0, n)

    outcomes = _map_tasks(config, task, config.as_replicates * len(schedule), "as-convergence")

    rows = []
    improved = 0
    for replicate in range(config.as_replicates):
        running = 0.0
        deviations = []
        for step, (n, hbar) in enumerate(schedule):
            count = outcomes[replicate * len(schedule) + step].counts[0]
            scaled = hbar ** m * count
            deviation = abs(scaled - target)
            running = max(running, deviation)
            deviations.append(deviation)
            rows.append({"replicate": replicate, "n": n, "hbar": hbar, "count": count, "scaled": scaled,
                         "deviation": deviation, "running_max": running})
        if len(deviations) > 1 and deviations[-1] < deviations[0]:
            improved += 1

    step_means = []
    for step, (n, hbar) in enumerate(schedule):
        scaled = np.array([row["scaled"] for row in rows if row["n"] == n])
        se = float(scaled.std(ddof=1) / math.sqrt(len(scaled))) if len(scaled) > 1 else math.nan
        step_means.append({"n": n, "hbar": hbar, "mean": float(scaled.mean()), "se": se})

    series = sum(hbar ** power for _, hbar in schedule)
    bound = config.as_hbar0 ** power * math.pi ** 2 / 6.0
    report = ExperimentReport(kind="as-convergence", config=config)
    report.add_table("as_convergence", AS_COLUMNS, rows)
    report.checks["series_finite"] = series <= bound * (1.0 + 1e-12)
    report.meta.update(
        power=power,
        target=target,
        improved_fraction=improved / config.as_replicates,
        step_means=step_means,
        series_partial_sum=series,
        series_bound=bound,
        independent_samples_per_step=True,
        wall_time=time.perf_counter() - start,
    )
    logger.info("as-convergence: 末步偏差小于首步的重复比例 %.0f%%", 100.0 * improved / config.as_replicates)
    return report


def run_bk_experiment(config):
    """
    BK 上界实验：bump 权重下每个样本的频率位于 [−ν,ν]^m 且全环面计数 ≤ m!(2ν)^m

    Raises:
        ConfigError: 非 bump 权重或 ν < 1
        InvariantViolation: 任一样本越界
    """
    start = time.perf_counter()
    spec = config.weight_spec
    if spec.family != "bump":
        raise ConfigError(f"bk 实验需要 bump 权重，得到 {spec.family}")
    report = ExperimentReport(kind="bk", config=config)
    counts_rows, bk_rows = [], []
    for h_idx, hbar in enumerate(config.hbars):
        nu = bump_polytope_radius(spec, hbar)
        if nu < 1:
            raise ConfigError(f"ℏ={hbar} 时 ν = floor(R/(2πℏ)) = {nu}，请增大 support")
        worker = partial(_enumerate_sample, config, PURPOSE_SAMPLES, h_idx, hbar, [1.0], 0, bk_nu=nu)
        outcomes = _map_tasks(config, worker, config.samples, f"bk ℏ={hbar:g}")
        totals = np.array([o.total for o in outcomes])
        counts_rows.extend({"cell_id": h_idx, "hbar": hbar, "r": 1.0, "sample_idx": o.index, "count": o.total}
                           for o in outcomes)
        bound = math.factorial(config.m) * (2 * nu) ** config.m
        bk_rows.append({"cell_id": h_idx, "hbar": hbar, "nu": nu, "bound": bound, "n": len(totals),
                        "max_count": int(totals.max()), "mean": float(totals.mean())})
        report.checks[f"bk_cell_{h_idx}"] = int(totals.max()) <= bound
    report.add_table("counts", COUNTS_COLUMNS, counts_rows)
    report.add_table("bk", BK_COLUMNS, bk_rows)
    report.meta.update(wall_time=time.perf_counter() - start, invariant_violations=0)
    return report


def run_constants(config):
    """密度常数的全部路线（不断言路线之间相等）"""
    start = time.perf_counter()
    spec = config.weight_spec
    rng = substream(config.seed, PURPOSE_PREDICTIONS, 0, 0)
    routes = compare_routes(spec, config.m, config.mc_samples, rng)
    report = ExperimentReport(kind="constants", config=config)
    report.add_table("constants", CONSTANTS_COLUMNS, [
        {"route": route.route, "m": config.m, "value": route.value, "se": None if route.exact else route.se}
        for route in routes
    ])
    s_m, d_m, h_m = sdh_constants(spec, config.m)
    report.meta.update(s_m=s_m, d_m=d_m, h_m=h_m, wall_time=time.perf_counter() - start)
    return report


def run_kacrice_variance(config):
    """两点 Kac–Rice 方差预测（ℏ = 0，窗口 window_correlation_lengths 个相关长度）"""
    start = time.perf_counter()
    estimate = variance_prediction(config)
    report = ExperimentReport(kind="kacrice-var", config=config)
    report.add_table("kacrice", KACRICE_COLUMNS, [{
        "m": config.m,
        "window": estimate.window,
        "second_factorial_moment": estimate.value,
        "se": estimate.se,
        "variance": estimate.variance,
        "variance_se": estimate.variance_se,
        "s0_window": estimate.s0,
        "s0_limit": estimate.s0_limit,
        "s0_se": estimate.s0_limit_se,
        "excision_bound": estimate.excision_bound,
        "nodes": estimate.nodes,
    }])
    report.checks["variance_positive"] = estimate.variance > 0
    report.meta.update(correlation_length=estimate.correlation_length, wall_time=time.perf_counter() - start)
    return report


def run_chaos(config):
    """混沌部分方差和 S_q（m = 1），并核对 q = 0 均值恒等式"""
    if config.m != 1:
        raise ConfigError(f"chaos 子命令只支持 m = 1，得到 {config.m}")
    start = time.perf_counter()
    spec = config.weight_spec
    coefficients = hessian_hermite_coeffs(
        spec, 1, 0.0, config.chaos_q_max, config.coeff_samples, substream(config.seed, PURPOSE_PREDICTIONS, 0, 1),
    )
    rows = variance_chaos_partial(
        coefficients, spec, config.chaos_q_max, config.kr_mc_samples, substream(config.seed, PURPOSE_PREDICTIONS, 0, 3),
    )
    report = ExperimentReport(kind="chaos", config=config)
    report.add_table("chaos", CHAOS_COLUMNS, [
        {"q": row.q, "s_q": row.s_q, "se": row.se, "partial_sum": row.partial_sum} for row in rows
    ])
    mean, mean_se = chaos_mean(coefficients, 1.0)
    exact = density_route_exact(spec, 1).value
    report.checks["chaos_mean_identity"] = _joint_z(mean, mean_se, exact, 0.0) <= 3.0
    report.checks["s_q_nonnegative"] = all(row.s_q >= -3.0 * row.se for row in rows)
    report.meta.update(
        omega=coefficients.omega,
        f0=coefficients.f[(0,)],
        f0_se=coefficients.f_se[(0,)],
        second_moment=coefficients.second_moment,
        bessel_sums=[coefficients.bessel_sum(q) for q in range(config.chaos_q_max + 1)],
        chaos_mean=mean,
        chaos_mean_se=mean_se,
        partial_se=rows[-1].partial_se,
        wall_time=time.perf_counter() - start,
    )
    return report


def run_find(config):
    """单样本枚举（第一个 ℏ，子流 (0, 0, 0)），输出临界点表与样本转储"""
    start = time.perf_counter()
    hbar = config.hbars[0]
    rng = substream(config.seed, PURPOSE_SAMPLES, 0, 0)
    sample = build_sample(config.weight_spec, config.m, hbar, rng, config.eps_cut, config.frequency_budget,
                          seed_label=f"{config.seed}/{PURPOSE_SAMPLES}/0/0")
    result = find_critical_points(sample, None, config.finder_options)
    _, detail = morse_lower_bound_check(result.records, config.m)
    columns = critical_point_columns(config.m)
    rows = []
    for record in result.records:
        row = {f"theta_{i + 1}": c for i, c in enumerate(record.position)}
        row.update(value=record.value, grad_residual=record.grad_residual,
                   morse_index=record.morse_index, degeneracy_margin=record.degeneracy_margin)
        rows.append(row)
    report = ExperimentReport(kind="find", config=config, sample=sample)
    report.add_table("critical_points", columns, rows)
    report.meta.update(frequencies=sample.count, morse=detail, finder=result.diagnostics,
                       wall_time=time.perf_counter() - start)
    return report


EXPERIMENTS = {
    "mean": run_mean_experiment,
    "variance": run_variance_scaling,
    "clt": run_clt_experiment,
    "as-convergence": run_as_convergence,
    "bk": run_bk_experiment,
    "constants": run_constants,
    "kacrice-var": run_kacrice_variance,
    "chaos": run_chaos,
    "find": run_find,
}


def run_experiment(kind, config):
    if kind not in EXPERIMENTS:
        raise ConfigError(f"未知的实验类型: {kind}")
    return EXPERIMENTS[kind](config)


# ---------------------------------------------------------------------------
# 输出
# ---------------------------------------------------------------------------

def emit_report(report, out_dir=None, formats=None):
    """
    写出报告文件

    CSV/JSONL 每个结果表一个文件，内容只依赖种子与配置；
    耗时等运行信息单独写入 report_meta.json。

    Returns:
        list: 写出的文件路径

    Raises:
        OSError: 目录或文件不可写（信息含路径）
    """
    out_dir = out_dir or report.config.out_dir
    formats = list(formats or report.config.output_formats)
    paths = []
    for name, (columns, records) in report.tables.items():
        if "csv" in formats:
            paths.append(write_csv(os.path.join(out_dir, f"{name}.csv"), columns, csv_rows(columns, records)))
        if "jsonl" in formats:
            paths.append(write_jsonl(os.path.join(out_dir, f"{name}.jsonl"), jsonl_records(columns, records)))
    if report.sample is not None:
        paths.append(dump_sample(report.sample, os.path.join(out_dir, "sample.txt")))

    figures = []
    if "svg" in formats or "html" in formats:
        from .report_generator import plot_standardized_histograms, plot_variance_scaling

        figures.extend(plot_standardized_histograms(report, out_dir))
        figure = plot_variance_scaling(report, out_dir)
        if figure:
            figures.append(figure)
        paths.extend(figures)
    if "html" in formats:
        from .report_generator import generate_html_report

        paths.append(generate_html_report(report, os.path.join(out_dir, "report.html"), figures))

    paths.append(write_json(os.path.join(out_dir, META_FILENAME), _jsonable(report.metadata())))
    return paths


def _jsonable(value):
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return None if math.isnan(value) or math.isinf(value) else value
    return value
