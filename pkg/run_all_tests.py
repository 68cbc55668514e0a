"""
测试运行器
运行单元测试（或公式级快速套件）并生成综合报告
用法: python run_all_tests.py [--fast] [--batch]
"""

import argparse
import importlib
import io
import json
import os
import sys
import time
import unittest
from datetime import datetime

# 设置环境变量确保正确的编码
os.environ['PYTHONIOENCODING'] = 'utf-8'

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

UNIT_TEST_MODULES = (
    "tests.test_spectral_weights",
    "tests.test_gaussian_toolkit",
    "tests.test_field_sampler",
    "tests.test_critical_finder",
    "tests.test_kac_rice_engine",
    "tests.test_chaos_analyzer",
    "tests.test_experiment_harness",
)

# 公式级套件：不含随机场枚举，一分钟内完成
FAST_TEST_CASES = (
    ("tests.test_spectral_weights", "TestRadialMoments"),
    ("tests.test_spectral_weights", "TestCovarianceJets"),
    ("tests.test_spectral_weights", "TestPeriodization"),
    ("tests.test_spectral_weights", "TestEnvelope"),
    ("tests.test_gaussian_toolkit", "TestHermite"),
    ("tests.test_gaussian_toolkit", "TestGaussianComparison"),
    ("tests.test_kac_rice_engine", "TestDensityRoutes"),
    ("tests.test_chaos_analyzer", "TestDAlpha"),
    ("tests.test_chaos_analyzer", "TestChaosMean"),
    ("tests.test_experiment_harness", "TestConfig"),
    ("tests.test_experiment_harness", "TestStatistics"),
)


def build_suite(fast=False):
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    if fast:
        for module_name, case_name in FAST_TEST_CASES:
            module = importlib.import_module(module_name)
            suite.addTest(loader.loadTestsFromTestCase(getattr(module, case_name)))
    else:
        for module_name in UNIT_TEST_MODULES:
            suite.addTest(loader.loadTestsFromModule(importlib.import_module(module_name)))
    return suite


def run_unit_tests(fast=False):
    """运行单元测试，返回结果摘要字典"""
    test_name = "公式级自检" if fast else "单元测试"
    print(f"\n{'='*60}")
    print(f"运行 {test_name}")
    print(f"{'='*60}")

    start_time = time.time()
    stream = io.StringIO()
    try:
        suite = build_suite(fast)
        runner = unittest.TextTestRunner(verbosity=2, stream=stream)
        result = runner.run(suite)
    except ImportError as e:
        print(f"❌ {test_name} 错误: {e}")
        return {
            "test_name": test_name,
            "status": "error",
            "execution_time": time.time() - start_time,
            "error": str(e),
        }

    output = stream.getvalue()
    print(output)
    execution_time = time.time() - start_time
    print(f"\n{test_name} 耗时: {execution_time:.2f}秒")
    status = "success" if result.wasSuccessful() else "failed"
    print(f"{'✅' if status == 'success' else '❌'} {test_name} {'完成' if status == 'success' else '失败'}!")
    return {
        "test_name": test_name,
        "status": status,
        "execution_time": execution_time,
        "tests_run": result.testsRun,
        "failures": len(result.failures),
        "errors": len(result.errors),
        "output": output,
    }


def run_batch_tests():
    """运行 data/ 下的验收配置"""
    print(f"\n{'='*60}")
    print("运行 验收批量测试")
    print(f"{'='*60}")

    start_time = time.time()
    from tests.test_batch import run_batch_tests as batch_test_func

    results = batch_test_func()
    failed = [r for r in results if r["status"] != "success"]
    execution_time = time.time() - start_time
    print(f"\n验收批量测试 耗时: {execution_time:.2f}秒")
    return {
        "test_name": "验收批量测试",
        "status": "success" if not failed else "failed",
        "execution_time": execution_time,
        "tests_run": len(results),
        "failures": len(failed),
        "errors": 0,
        "output": "\n".join(f"{r['name']}: {r['status']}" for r in results),
    }


def generate_comprehensive_report(test_results, report_dir="test_reports"):
    """写出 JSON 摘要（HTML 报告只针对实验结果生成）"""
    os.makedirs(report_dir, exist_ok=True)
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    failed = [r for r in test_results if r["status"] != "success"]
    report_data = {
        "timestamp": timestamp,
        "test_time": datetime.now().isoformat(),
        "test_results": test_results,
        "summary": {
            "total_tests": len(test_results),
            "successful_tests": len(test_results) - len(failed),
            "failed_tests": len(failed),
            "total_execution_time": sum(r["execution_time"] for r in test_results),
            "overall_status": "success" if not failed else "failed",
        },
    }
    json_path = os.path.join(report_dir, f"comprehensive_test_report_{timestamp}.json")
    with open(json_path, 'w', encoding='utf-8') as f:
        json.dump(report_data, f, ensure_ascii=False, indent=2)
    print(f"JSON报告: {json_path}")
    return report_data


def main(argv=None):
    parser = argparse.ArgumentParser(description="临界点实验系统 - 测试运行器")
    parser.add_argument("--fast", action="store_true", help="只运行公式级套件")
    parser.add_argument("--batch", action="store_true", help="同时运行 data/ 中的验收配置（耗时较长）")
    args = parser.parse_args(argv)

    print("=" * 80)
    print("临界点实验系统 - 综合测试运行器")
    print("=" * 80)
    print(f"开始时间: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")

    test_results = [run_unit_tests(fast=args.fast)]
    if args.batch:
        test_results.append(run_batch_tests())
    report_data = generate_comprehensive_report(test_results)

    summary = report_data["summary"]
    print(f"总测试数: {summary['total_tests']}")
    print(f"成功: {summary['successful_tests']}")
    print(f"失败: {summary['failed_tests']}")
    print(f"总体状态: {'成功' if summary['overall_status'] == 'success' else '失败'}")
    return 0 if summary["overall_status"] == "success" else 1


if __name__ == '__main__':
    sys.exit(main())
