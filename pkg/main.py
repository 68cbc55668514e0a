# 随机傅里叶级数临界点实验 - 命令行入口
# 用法: python main.py <子命令> [--config 配置文件] [--seed N] [--threads N] [--out 目录] [--plot]

import argparse
import logging
import sys
import time

COMMANDS = (
    ("constants", "密度常数 Z̄₀ 的各条路线"),
    ("mean", "均值律实验"),
    ("variance", "方差标度实验（至少 3 个 ℏ）"),
    ("clt", "中心极限实验"),
    ("kacrice-var", "两点 Kac–Rice 方差预测"),
    ("chaos", "Wiener 混沌部分方差和（m = 1）"),
    ("find", "单样本临界点枚举与样本转储"),
    ("as-convergence", "几乎必然收敛诊断"),
    ("bk", "bump 权重的 BK 上界检查"),
    ("selftest", "运行公式级自检"),
)

# 退出码：0 成功，1 I/O 或中断，2 不变量违例，3 数值容差失败，4 配置错误
EXIT_IO = 1


class _ArgumentParser(argparse.ArgumentParser):
    """参数错误转为 ConfigError（退出码 4），不直接退出"""

    def error(self, message):
        from src.errors import ConfigError

        raise ConfigError(f"命令行参数无效: {message}")


def build_parser():
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON 配置文件路径")
    common.add_argument("--seed", type=int, help="主种子（覆盖配置）")
    common.add_argument("--threads", type=int, help="并行线程数（覆盖配置）")
    common.add_argument("--out", help="输出目录（覆盖配置）")
    common.add_argument("--plot", action="store_const", const=True, default=None, help="同时输出 SVG 图")
    common.add_argument("--verbose", action="store_true", help="输出 DEBUG 日志")

    parser = _ArgumentParser(prog="main.py", description="随机傅里叶级数临界点实验")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="子命令")
    for name, description in COMMANDS:
        sub = subparsers.add_parser(name, parents=[common], help=description, description=description)
        if name == "selftest":
            sub.add_argument("--full", action="store_true", help="运行全部单元测试而非公式级套件")
    return parser


def _print_report(report, paths):
    from src.result_formatter import format_cell_line, format_estimate, format_normality_line

    thresholds = report.config.thresholds()
    for cell in report.cells:
        print(format_cell_line(cell))
        if report.kind == "clt":
            print("    " + format_normality_line(cell, thresholds))
    for fit in report.records("fit"):
        print(f"r={fit['r']:g}: 斜率 {fit['slope']:.4f}，95% 区间 [{fit['ci_low']:.4f}, {fit['ci_high']:.4f}]")
    for row in report.records("constants"):
        print(f"{row['route']:>10}  m={row['m']}  {format_estimate(row['value'], row['se'], 8)}")
    for row in report.records("kacrice"):
        print(f"窗口 L={row['window']:.4g}: Var={format_estimate(row['variance'], row['variance_se'])}，"
              f"S₀={format_estimate(row['s0_limit'], row['s0_se'])}")
    for row in report.records("chaos"):
        print(f"q={row['q']}: S_q={format_estimate(row['s_q'], row['se'])}，部分和 {row['partial_sum']:.6g}")
    for row in report.records("bk"):
        print(f"ℏ={row['hbar']:g}: ν={row['nu']}，最大计数 {row['max_count']} ≤ 上界 {row['bound']}")
    if report.kind == "as-convergence":
        print(f"末步偏差小于首步的重复比例: {report.meta['improved_fraction']:.0%}")
    if report.kind == "find":
        print(f"临界点数: {len(report.records('critical_points'))}，频率数: {report.meta['frequencies']}")

    for name, ok in report.checks.items():
        print(f"  {name}: {'✅ 通过' if ok else '❌ 未通过'}")
    for path in paths:
        print(f"结果已保存到: {path}")


def run_command(args):
    if args.command == "selftest":
        from run_all_tests import run_unit_tests

        result = run_unit_tests(fast=not args.full)
        return 0 if result["status"] == "success" else 2

    from src.experiment_harness import ExperimentConfig, emit_report, load_config, run_experiment

    config = load_config(args.config) if args.config else ExperimentConfig()
    config = config.with_overrides(seed=args.seed, threads=args.threads, out_dir=args.out, plot=args.plot)
    report = run_experiment(args.command, config)
    paths = emit_report(report)
    _print_report(report, paths)
    return 0


def main(argv=None):
    """
    主函数 - 解析子命令、运行实验并映射退出码
    """
    from src.errors import ConfigError, InvariantViolation, LabError, NumericalToleranceError

    start_time = time.time()
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        code = run_command(args)
    except ConfigError as e:
        print(f"错误: 配置无效 - {e}")
        return e.exit_code
    except InvariantViolation as e:
        print(f"错误: 不变量被违反 - {e}")
        if e.detail:
            print(f"详情: {e.detail}")
        return e.exit_code
    except NumericalToleranceError as e:
        print(f"错误: 数值容差失败 - {e}")
        return e.exit_code
    except LabError as e:
        print(f"错误: {e}")
        return e.exit_code
    except OSError as e:
        print(f"错误: 文件读写失败 - {e}")
        return EXIT_IO
    except KeyboardInterrupt:
        print("错误: 程序被用户中断")
        return EXIT_IO

    print(f"总耗时: {time.time() - start_time:.2f}秒")
    return code


if __name__ == "__main__":
    sys.exit(main())
