# 实验编排模块单元测试

import json
import math
import os
import shutil
import sys
import tempfile
import unittest

# 设置编码
os.environ['PYTHONIOENCODING'] = 'utf-8'

# 添加项目根目录到路径
sys.path.append(os.path.dirname(os.path.dirname(__file__)))


def small_config(**overrides):
    """ℏ = 1/4、100 个样本的快速配置"""
    from src.experiment_harness import ExperimentConfig

    settings = dict(hbars=[0.25], r=[1.0, 0.5], samples=100, progress=False, formats=["csv"])
    settings.update(overrides)
    return ExperimentConfig(**settings)


class TestConfig(unittest.TestCase):
    """配置解析与校验"""

    def test_defaults_are_valid(self):
        """测试默认配置通过校验"""
        from src.experiment_harness import ExperimentConfig

        config = ExperimentConfig()
        self.assertEqual(config.m, 1)
        self.assertEqual(config.weight_spec.family, "gaussian")
        self.assertEqual(config.output_formats, ["csv", "jsonl"])

    def test_invalid_values(self):
        """测试越界的 ℏ、r、样本数与输出格式"""
        from src.errors import ConfigError

        cases = [
            {"hbars": [0.5]},
            {"hbars": []},
            {"r": [0.7]},
            {"samples": 50},
            {"threads": 0},
            {"m": 4},
            {"seed": -1},
            {"as_power": 1.0},
            {"as_steps": [2, 1]},
            {"formats": ["pdf"]},
            {"weight": {"family": "triangle"}},
            {"finder": {"grid": 8}},
        ]
        for overrides in cases:
            with self.subTest(overrides=overrides):
                with self.assertRaises(ConfigError):
                    small_config(**overrides)

    def test_from_dict(self):
        """测试 JSON 字典构造与未知键"""
        from src.errors import ConfigError
        from src.experiment_harness import ExperimentConfig

        config = ExperimentConfig.from_dict({"m": 2, "hbars": 0.125, "r": 0.5, "samples": 200})
        self.assertEqual(config.hbars, [0.125])
        self.assertEqual(config.r, [0.5])
        with self.assertRaises(ConfigError) as context:
            ExperimentConfig.from_dict({"sample": 200})
        self.assertIn("sample", str(context.exception))
        self.assertEqual(context.exception.exit_code, 4)
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict([1, 2])
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"hbars": ["small"]})

    def test_load_config(self):
        """测试从文件读取配置，语法错误转为 ConfigError"""
        from src.errors import ConfigError
        from src.experiment_harness import load_config

        temp_dir = tempfile.mkdtemp()
        try:
            good = os.path.join(temp_dir, "good.json")
            with open(good, "w", encoding="utf-8") as f:
                json.dump({"samples": 300, "seed": 7}, f)
            config = load_config(good)
            self.assertEqual((config.samples, config.seed), (300, 7))

            bad = os.path.join(temp_dir, "bad.json")
            with open(bad, "w", encoding="utf-8") as f:
                f.write("{\"samples\": 300,")
            with self.assertRaises(ConfigError):
                load_config(bad)
            with self.assertRaises(FileNotFoundError):
                load_config(os.path.join(temp_dir, "missing.json"))
        finally:
            shutil.rmtree(temp_dir)

    def test_settings_hash_and_overrides(self):
        """测试设置哈希与命令行覆盖"""
        from src.errors import ConfigError

        config = small_config()
        digest = config.settings_hash()
        print(f"  设置哈希: {digest}")
        self.assertEqual(len(digest), 16)
        self.assertEqual(digest, small_config().settings_hash())
        self.assertIs(config.with_overrides(seed=None, threads=None), config)
        changed = config.with_overrides(seed=5)
        self.assertEqual(changed.seed, 5)
        self.assertNotEqual(changed.settings_hash(), digest)
        with self.assertRaises(ConfigError):
            config.with_overrides(threads=0)
        self.assertIn("svg", config.with_overrides(plot=True).output_formats)


class TestStatistics(unittest.TestCase):
    """随机数流与统计量"""

    def test_substreams(self):
        """测试子流只依赖 (种子, 用途, 单元, 序号)"""
        import numpy as np
        from src.experiment_harness import substream

        first = substream(1, 0, 2, 3).random(5)
        np.testing.assert_array_equal(first, substream(1, 0, 2, 3).random(5))
        self.assertFalse(np.array_equal(first, substream(1, 0, 2, 4).random(5)))
        self.assertFalse(np.array_equal(first, substream(1, 1, 2, 3).random(5)))
        self.assertFalse(np.array_equal(first, substream(2, 0, 2, 3).random(5)))

    def test_jackknife_matches_explicit_leave_one_out(self):
        """测试闭式留一方差与逐个删除的结果一致"""
        import numpy as np
        from src.experiment_harness import jackknife_variance_se

        x = np.random.default_rng(4).poisson(6.0, size=40).astype(float)
        leave_one_out = np.array([np.delete(x, i).var(ddof=1) for i in range(len(x))])
        expected = math.sqrt((len(x) - 1) / len(x) * ((leave_one_out - leave_one_out.mean()) ** 2).sum())
        self.assertAlmostEqual(jackknife_variance_se(x), expected, places=10)
        self.assertTrue(math.isnan(jackknife_variance_se([1.0, 2.0])))

    def test_summarize_counts(self):
        """测试单元摘要的矩、分位数与 KS 临界值"""
        import numpy as np
        from src.experiment_harness import ExperimentConfig, summarize_counts

        config = ExperimentConfig()
        values = np.random.default_rng(11).poisson(50.0, size=400)
        summary = summarize_counts(values, config)
        print(f"  均值 {summary['mean']:.3f}  方差 {summary['var']:.3f}  KS {summary['ks']:.4f}")
        self.assertEqual(summary["n"], 400)
        self.assertAlmostEqual(summary["mean"], values.mean(), places=12)
        self.assertAlmostEqual(summary["var"], values.var(ddof=1), places=9)
        self.assertAlmostEqual(summary["ks_critical"], 1.63 / 20.0 + 0.02, places=12)
        self.assertLessEqual(summary["q05"], summary["q50"])
        self.assertLessEqual(summary["q50"], summary["q95"])
        self.assertAlmostEqual(float(summary["standardized"].mean()), 0.0, places=10)
        self.assertEqual((summary["min"], summary["max"]), (int(values.min()), int(values.max())))

    def test_summarize_constant_counts(self):
        """测试零方差单元跳过正态性诊断"""
        import numpy as np
        from src.experiment_harness import ExperimentConfig, summarize_counts

        summary = summarize_counts(np.full(100, 4), ExperimentConfig())
        self.assertEqual(summary["var"], 0.0)
        self.assertTrue(math.isnan(summary["ks"]))
        self.assertFalse(summary["ks_pass"])

    def test_split_degenerate(self):
        """测试按退化标记拆分样本，保持序号顺序"""
        from src.experiment_harness import SampleOutcome, split_degenerate

        outcomes = [SampleOutcome(index=i, counts=(2,), total=2, index_counts=(1, 1), degenerate=d)
                    for i, d in enumerate([0, 1, 0, 2, 0])]
        kept, dropped = split_degenerate(outcomes)
        self.assertEqual([o.index for o in kept], [0, 2, 4])
        self.assertEqual([o.index for o in dropped], [1, 3])

    def test_as_schedule(self):
        """测试 ℏ_n = ℏ₀·n^{−2/p}，默认 p = m/2"""
        from src.experiment_harness import as_schedule

        power, schedule = as_schedule(small_config(m=2))
        self.assertEqual(power, 1.0)
        for n, hbar in schedule:
            self.assertAlmostEqual(hbar, 0.25 / n ** 2, places=14)
        power, schedule = as_schedule(small_config(m=1, as_power=0.25, as_steps=[1, 2]))
        self.assertAlmostEqual(schedule[1][1], 0.25 * 2 ** -8, places=14)


class TestExperiments(unittest.TestCase):
    """端到端实验（小规模）"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def _read(self, *parts):
        with open(os.path.join(self.temp_dir, *parts), "rb") as f:
            return f.read()

    def test_mean_experiment_structure(self):
        """测试均值实验的表、预测与元数据"""
        from src.experiment_harness import run_experiment

        report = run_experiment("mean", small_config())
        self.assertEqual(report.kind, "mean")
        self.assertEqual(len(report.records("counts")), 200)
        self.assertEqual([cell["r"] for cell in report.cells], [1.0, 0.5])
        full = report.cells[0]
        self.assertAlmostEqual(full["pred_mean"], math.sqrt(3.0) / math.pi * 4.0, places=12)
        self.assertAlmostEqual(report.cells[1]["pred_mean"], full["pred_mean"] / 2.0, places=12)
        self.assertEqual(full["n_hbar"], 2)
        self.assertEqual(report.meta["zbar_route"], "exact")
        self.assertEqual(report.meta["enumerations"], 100)
        self.assertEqual(report.meta["chart_checks"], 1)
        self.assertIn("mean_cell_0", report.checks)
        print(f"  r=1: 均值 {full['mean']:.3f}，预测 {full['pred_mean']:.3f}，比值 {full['mean_ratio']:.3f}")
        # 全环面计数总是偶数（m = 1 极大极小交替）
        for row in report.records("counts"):
            if row["r"] == 1.0:
                self.assertEqual(row["count"] % 2, 0)

    def test_degenerate_samples_excluded(self):
        """测试含退化临界点的样本不进入单元统计"""
        from dataclasses import replace
        from unittest import mock
        import src.experiment_harness as harness

        original = harness._enumerate_sample

        def flagged(*args, **kwargs):
            outcome = original(*args, **kwargs)
            return replace(outcome, degenerate=1 if outcome.index in (3, 40) else 0)

        with mock.patch.object(harness, "_enumerate_sample", flagged):
            with self.assertLogs("src.experiment_harness", level="WARNING") as logs:
                report = harness.run_experiment("mean", small_config())
        print(f"  排除的样本: {report.meta['excluded_samples']}")
        self.assertEqual([cell["n"] for cell in report.cells], [98, 98])
        self.assertEqual(len(report.records("counts")), 196)
        self.assertNotIn(3, {row["sample_idx"] for row in report.records("counts")})
        self.assertEqual(report.meta["excluded_samples"], {"0.25": [3, 40]})
        self.assertEqual(report.meta["enumerations"], 100)
        self.assertEqual(report.meta["degenerate_points"], 2)
        self.assertTrue(any("样本 40" in line for line in logs.output))

    def test_all_degenerate_samples(self):
        """测试非退化样本不足时抛出 EnumerationUnreliableError"""
        from dataclasses import replace
        from unittest import mock
        import src.experiment_harness as harness
        from src.errors import EnumerationUnreliableError

        original = harness._enumerate_sample

        def flagged(*args, **kwargs):
            return replace(original(*args, **kwargs), degenerate=1)

        with mock.patch.object(harness, "_enumerate_sample", flagged):
            with self.assertRaises(EnumerationUnreliableError) as context:
                harness.run_experiment("mean", small_config())
        self.assertEqual(context.exception.exit_code, 3)
        self.assertEqual(len(context.exception.diagnostics["excluded"]), 100)

    def test_chart_mismatch_fails_check(self):
        """测试坐标系抽查不符时 chart_equivalence 检查失败"""
        from unittest import mock
        import src.experiment_harness as harness

        report = harness.run_experiment("mean", small_config())
        self.assertTrue(report.checks["chart_equivalence"])
        with mock.patch.object(harness, "_chart_mismatch", return_value=True):
            report = harness.run_experiment("mean", small_config())
        self.assertFalse(report.checks["chart_equivalence"])
        self.assertEqual(report.meta["chart_mismatches"], 1)
        self.assertFalse(report.passed)

    def test_mean_ratio_column(self):
        """测试均值比值写入 summary 表，其他实验留空"""
        from src.experiment_harness import run_experiment
        from src.result_formatter import SUMMARY_COLUMNS, csv_rows

        column = SUMMARY_COLUMNS.index("mean_ratio")
        mean_report = run_experiment("mean", small_config(r=[1.0]))
        cell = mean_report.cells[0]
        self.assertAlmostEqual(cell["mean_ratio"], cell["mean"] / cell["pred_mean"], places=12)
        self.assertNotEqual(csv_rows(SUMMARY_COLUMNS, mean_report.cells)[0][column], "")
        clt_report = run_experiment("clt", small_config(r=[1.0]))
        self.assertEqual(csv_rows(SUMMARY_COLUMNS, clt_report.cells)[0][column], "")

    def test_thread_count_does_not_change_output(self):
        """测试 1 线程与 3 线程的 CSV 输出字节一致"""
        from src.experiment_harness import emit_report, run_experiment

        outputs = []
        for threads in (1, 3):
            out_dir = os.path.join(self.temp_dir, f"t{threads}")
            emit_report(run_experiment("mean", small_config(threads=threads)), out_dir)
            outputs.append((self._read(f"t{threads}", "counts.csv"), self._read(f"t{threads}", "summary.csv")))
        self.assertEqual(outputs[0], outputs[1])

    def test_emit_formats(self):
        """测试 CSV/JSONL 表头一致，SVG 记录分箱数"""
        from src.experiment_harness import META_FILENAME, emit_report, run_experiment
        from src.result_formatter import SUMMARY_COLUMNS

        report = run_experiment("mean", small_config(r=[1.0]))
        paths = emit_report(report, self.temp_dir, ["csv", "jsonl", "svg"])
        names = {os.path.basename(p) for p in paths}
        self.assertTrue({"counts.csv", "summary.csv", "cells.jsonl", "histogram_cell0.svg", META_FILENAME} <= names)

        header = self._read("summary.csv").decode("utf-8").splitlines()[0]
        self.assertEqual(header.split(","), list(SUMMARY_COLUMNS))
        first = json.loads(self._read("summary.jsonl").decode("utf-8").splitlines()[0])
        self.assertEqual(list(first), list(SUMMARY_COLUMNS))
        self.assertIn("bins=10", self._read("histogram_cell0.svg").decode("utf-8"))

        meta = json.loads(self._read(META_FILENAME).decode("utf-8"))
        self.assertEqual(meta["settings_hash"], report.config.settings_hash())
        self.assertEqual(meta["kind"], "mean")

    def test_find_writes_sample_dump(self):
        """测试单样本枚举输出临界点表与样本转储"""
        from src.experiment_harness import emit_report, run_experiment
        from src.field_sampler import load_sample

        report = run_experiment("find", small_config(m=2))
        emit_report(report, self.temp_dir)
        header = self._read("critical_points.csv").decode("utf-8").splitlines()[0]
        self.assertTrue(header.startswith("theta_1,theta_2,value"))
        loaded = load_sample(os.path.join(self.temp_dir, "sample.txt"))
        self.assertEqual(loaded.count, report.meta["frequencies"])
        self.assertEqual(report.meta["morse"]["euler_sum"], 0)

    def test_constants(self):
        """测试常数表列出全部路线"""
        from src.experiment_harness import run_experiment

        report = run_experiment("constants", small_config(mc_samples=20_000))
        routes = {row["route"]: row for row in report.records("constants")}
        self.assertEqual(list(routes), ["main1", "exact", "cmw", "sdh", "asymptotic"])
        self.assertAlmostEqual(routes["exact"]["value"], math.sqrt(3.0) / math.pi, places=12)
        self.assertIsNone(routes["exact"]["se"])
        self.assertAlmostEqual(routes["asymptotic"]["value"], 8.0 * math.sqrt(2.0) / math.pi, delta=1e-9)

    def test_experiment_preconditions(self):
        """测试各实验的前置条件"""
        from src.errors import ConfigError
        from src.experiment_harness import run_experiment

        with self.assertRaises(ConfigError):
            run_experiment("histogram", small_config())
        with self.assertRaises(ConfigError):
            run_experiment("variance", small_config(hbars=[0.25, 0.125]))
        with self.assertRaises(ConfigError):
            run_experiment("bk", small_config())
        with self.assertRaises(ConfigError):
            run_experiment("chaos", small_config(m=2))
        with self.assertRaises(ConfigError):
            run_experiment("kacrice-var", small_config(m=3))

    def test_bk_experiment(self):
        """测试 bump 权重的计数不超过 m!(2ν)^m"""
        from src.experiment_harness import run_experiment

        config = small_config(weight={"family": "bump", "support": 2.0}, hbars=[1.0 / 16], r=[1.0])
        report = run_experiment("bk", config)
        row = report.records("bk")[0]
        print(f"  ν={row['nu']}  最大计数 {row['max_count']}  上界 {row['bound']}")
        self.assertEqual((row["nu"], row["bound"]), (5, 10))
        self.assertLessEqual(row["max_count"], row["bound"])
        self.assertTrue(report.passed)


class TestCommandLine(unittest.TestCase):
    """命令行退出码"""

    def test_exit_codes(self):
        """测试参数错误返回 4，配置文件缺失返回 1"""
        from main import main

        self.assertEqual(main(["mean", "--bogus"]), 4)
        self.assertEqual(main(["teleport"]), 4)
        missing = os.path.join(tempfile.gettempdir(), "no_such_config_dir", "config.json")
        self.assertEqual(main(["mean", "--config", missing]), 1)

    def test_bad_config_value(self):
        """测试配置值越界返回 4"""
        from main import main

        temp_dir = tempfile.mkdtemp()
        try:
            path = os.path.join(temp_dir, "config.json")
            with open(path, "w", encoding="utf-8") as f:
                json.dump({"hbars": [0.3]}, f)
            self.assertEqual(main(["mean", "--config", path, "--out", temp_dir]), 4)
        finally:
            shutil.rmtree(temp_dir)


if __name__ == '__main__':
    unittest.main(verbosity=2)
