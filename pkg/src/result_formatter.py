# 结果格式化模块
# 负责 CSV/JSONL 表格的列定义、数值格式与终端摘要

import math

# 各结果表的列（CSV 表头与 JSONL 键一致）
COUNTS_COLUMNS = ("cell_id", "hbar", "r", "sample_idx", "count")
SUMMARY_COLUMNS = (
    "cell_id", "hbar", "r", "n", "mean", "mean_se", "var", "var_se", "skew", "exkurt", "ks",
    "pred_mean", "pred_mean_se", "mean_ratio", "pred_var", "pred_var_se",
)
CELL_DETAIL_COLUMNS = (
    "cell_id", "hbar", "r", "n_hbar", "s_hbar", "s0", "s0_se", "ks_critical",
    "q01", "q05", "q25", "q50", "q75", "q95", "q99", "min", "max",
)
FIT_COLUMNS = ("r", "slope", "intercept", "ci_low", "ci_high", "resamples")
CONSTANTS_COLUMNS = ("route", "m", "value", "se")
CHAOS_COLUMNS = ("q", "s_q", "se", "partial_sum")
KACRICE_COLUMNS = (
    "m", "window", "second_factorial_moment", "se", "variance", "variance_se",
    "s0_window", "s0_limit", "s0_se", "excision_bound", "nodes",
)
AS_COLUMNS = ("replicate", "n", "hbar", "count", "scaled", "deviation", "running_max")
BK_COLUMNS = ("cell_id", "hbar", "nu", "bound", "n", "max_count", "mean")

QUANTILE_LEVELS = (0.01, 0.05, 0.25, 0.50, 0.75, 0.95, 0.99)


def critical_point_columns(m):
    return tuple(f"theta_{i + 1}" for i in range(m)) + (
        "value", "grad_residual", "morse_index", "degeneracy_margin",
    )


def format_number(value):
    """
    CSV 单元格：整数原样输出，浮点数用 repr（往返无损），缺失值为空串
    """
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return value
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def json_value(value):
    """JSONL 值：缺失与 NaN 记为 null"""
    if value is None:
        return None
    if isinstance(value, (bool, int, str)):
        return value
    value = float(value)
    return None if math.isnan(value) or math.isinf(value) else value


def csv_rows(columns, records):
    return [[format_number(record.get(column)) for column in columns] for record in records]


def jsonl_records(columns, records):
    return [{column: json_value(record.get(column)) for column in columns} for record in records]


def format_estimate(value, se=None, digits=6):
    """'值 ± 标准误'，缺失时为 '—'"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "—"
    if se is None or (isinstance(se, float) and math.isnan(se)):
        return f"{value:.{digits}g}"
    return f"{value:.{digits}g} ± {se:.2g}"


def format_cell_line(cell):
    """单元格摘要（终端输出）"""
    line = (
        f"ℏ={cell['hbar']:.6g}  r={cell['r']:.6g}  n={cell['n']}  "
        f"均值={format_estimate(cell['mean'], cell['mean_se'])}  "
        f"方差={format_estimate(cell['var'], cell['var_se'])}"
    )
    if cell.get("pred_mean") is not None:
        line += f"  预测均值={format_estimate(cell['pred_mean'], cell.get('pred_mean_se'))}"
    if cell.get("mean_ratio") is not None:
        line += f"  比值={cell['mean_ratio']:.4f}"
    if cell.get("pred_var") is not None:
        line += f"  预测方差={format_estimate(cell['pred_var'], cell.get('pred_var_se'))}"
    return line


def format_normality_line(cell, thresholds):
    """正态性诊断摘要"""
    marks = []
    for key, label in (("ks_pass", "KS"), ("skew_pass", "偏度"), ("kurt_pass", "峰度")):
        marks.append(f"{label}{'✅' if cell.get(key) else '❌'}")
    return (
        f"KS={cell['ks']:.4f} (临界 {cell['ks_critical']:.4f})  "
        f"偏度={cell['skew']:.4f} (限 {thresholds['max_abs_skew']})  "
        f"超额峰度={cell['exkurt']:.4f} (限 {thresholds['max_abs_exkurt']})  " + " ".join(marks)
    )
