"""
报告生成器
SVG 图表（标准化计数直方图、方差双对数图）与 HTML 汇总报告
"""

import base64
import html
import logging
import math
import os
from datetime import datetime

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402

from .file_utils import ensure_directory, write_text  # noqa: E402
from .result_formatter import format_estimate  # noqa: E402

logger = logging.getLogger(__name__)


def _save_svg(figure, path, description):
    """SVG 输出固定哈希盐且不写日期，保证重跑字节一致"""
    ensure_directory(os.path.dirname(path))
    with matplotlib.rc_context({"svg.hashsalt": "critical-lab", "svg.fonttype": "path"}):
        figure.savefig(path, format="svg", metadata={"Date": None, "Description": description})
    plt.close(figure)
    return path


def plot_standardized_histograms(report, out_dir):
    """每个单元一张标准化计数直方图，叠加 N(0,1) 密度；分箱数 ceil(√n)"""
    paths = []
    for cell in report.cells:
        values = report.standardized.get(cell["cell_id"])
        if values is None or not len(values):
            continue
        bins = int(math.ceil(math.sqrt(len(values))))
        figure, axis = plt.subplots(figsize=(6, 4))
        axis.hist(values, bins=bins, density=True, color="#007bff", alpha=0.6, label="standardized counts")
        grid = np.linspace(min(values.min(), -4.0), max(values.max(), 4.0), 400)
        axis.plot(grid, stats.norm.pdf(grid), color="#dc3545", label="N(0,1)")
        axis.set_title(f"hbar={cell['hbar']:g}, r={cell['r']:g}, n={cell['n']}")
        axis.set_xlabel("z")
        axis.legend()
        path = os.path.join(out_dir, f"histogram_cell{cell['cell_id']}.svg")
        paths.append(_save_svg(figure, path, f"bins={bins}"))
    return paths


def plot_variance_scaling(report, out_dir):
    """log Var 对 log(1/ℏ) 的散点（含 ±SE）与拟合直线；没有拟合结果时返回 None"""
    fits = report.records("fit")
    if not fits:
        return None
    figure, axis = plt.subplots(figsize=(6, 4))
    for fit in fits:
        cells = [cell for cell in report.cells if cell["r"] == fit["r"]]
        x = np.array([1.0 / cell["hbar"] for cell in cells])
        y = np.array([cell["var"] for cell in cells])
        errors = np.array([cell["var_se"] for cell in cells])
        axis.errorbar(x, y, yerr=errors, fmt="o", capsize=3, label=f"r={fit['r']:g}")
        line = np.exp(fit["intercept"]) * x ** fit["slope"]
        axis.plot(x, line, "--", label=f"slope {fit['slope']:.3f}")
    axis.set_xscale("log")
    axis.set_yscale("log")
    axis.set_xlabel("1/hbar")
    axis.set_ylabel("Var Z")
    axis.legend()
    return _save_svg(figure, os.path.join(out_dir, "variance_scaling.svg"), "log-log variance fit")


def encode_image_to_base64(image_path):
    """将图片文件编码为 base64 字符串，失败返回 None"""
    try:
        with open(image_path, "rb") as img_file:
            return base64.b64encode(img_file.read()).decode("utf-8")
    except OSError as e:
        logger.warning("编码图片失败 %s: %s", image_path, e)
    return None


_STYLE = """
        body { font-family: Arial, sans-serif; margin: 20px; background-color: #f5f5f5; }
        .container { max-width: 1200px; margin: 0 auto; background: white; padding: 20px; border-radius: 8px; }
        .header { text-align: center; margin-bottom: 30px; padding-bottom: 20px; border-bottom: 2px solid #007bff; }
        .section h2 { color: #007bff; border-left: 4px solid #007bff; padding-left: 10px; }
        .metric { display: inline-block; margin: 10px; padding: 15px; background: #f8f9fa; border-radius: 5px; min-width: 120px; text-align: center; }
        .metric-value { font-size: 20px; font-weight: bold; color: #007bff; }
        .metric-label { font-size: 14px; color: #666; }
        table { width: 100%; border-collapse: collapse; margin-top: 15px; }
        th, td { padding: 8px; text-align: left; border-bottom: 1px solid #ddd; }
        th { background-color: #f8f9fa; }
        .success { color: #28a745; }
        .danger { color: #dc3545; }
        .chart-grid { display: grid; grid-template-columns: repeat(auto-fit, minmax(400px, 1fr)); gap: 20px; }
        .chart-grid img { max-width: 100%; border: 1px solid #ddd; border-radius: 5px; }
"""


def _metric(value, label, css=""):
    return f'<div class="metric"><div class="metric-value {css}">{html.escape(str(value))}</div>' \
           f'<div class="metric-label">{html.escape(label)}</div></div>'


def _table(columns, records):
    head = "".join(f"<th>{html.escape(column)}</th>" for column in columns)
    body = []
    for record in records:
        cells = []
        for column in columns:
            value = record.get(column)
            if isinstance(value, float):
                value = f"{value:.6g}"
            cells.append(f"<td>{'' if value is None else html.escape(str(value))}</td>")
        body.append("<tr>" + "".join(cells) + "</tr>")
    return f"<table><tr>{head}</tr>{''.join(body)}</table>"


def generate_html_report(report, output_path, figures=()):
    """生成 HTML 汇总报告：检查项、结果表与内嵌的 SVG 图"""
    meta = report.metadata()
    status_css = "success" if report.passed else "danger"
    parts = [
        '<!DOCTYPE html><html lang="zh-CN"><head><meta charset="UTF-8">',
        f"<title>临界点实验 - {html.escape(report.kind)}报告</title><style>{_STYLE}</style></head><body>",
        '<div class="container"><div class="header">',
        f"<h1>临界点实验 - {html.escape(report.kind)}报告</h1>",
        f"<p>生成时间: {datetime.now().isoformat(timespec='seconds')}  设置哈希: {meta['settings_hash']}</p></div>",
        '<div class="section"><h2>📊 概览</h2>',
        _metric(report.config.seed, "主种子"),
        _metric(report.config.threads, "线程数"),
        _metric(f"{meta.get('wall_time', 0.0):.1f}s", "耗时"),
        _metric("PASS" if report.passed else "FAIL", "检查结果", status_css),
    ]
    if "zbar" in meta:
        parts.append(_metric(format_estimate(meta["zbar"], meta.get("zbar_se")), "Z̄₀"))
    parts.append("</div>")

    if report.checks:
        parts.append('<div class="section"><h2>✅ 检查项</h2><table><tr><th>检查</th><th>结果</th></tr>')
        for name, ok in report.checks.items():
            css = "success" if ok else "danger"
            parts.append(f'<tr><td>{html.escape(name)}</td><td class="{css}">{"通过" if ok else "未通过"}</td></tr>')
        parts.append("</table></div>")

    for name, (columns, records) in report.tables.items():
        if name == "counts":
            continue
        parts.append(f'<div class="section"><h2>📋 {html.escape(name)}</h2>{_table(columns, records)}</div>')

    if figures:
        parts.append('<div class="section"><h2>📈 图表</h2><div class="chart-grid">')
        for figure in figures:
            encoded = encode_image_to_base64(figure)
            if encoded:
                parts.append(f'<img src="data:image/svg+xml;base64,{encoded}" alt="{html.escape(os.path.basename(figure))}">')
        parts.append("</div></div>")

    parts.append("</div></body></html>\n")
    return write_text(output_path, "\n".join(parts))
