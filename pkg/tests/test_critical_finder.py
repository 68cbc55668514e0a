# 临界点枚举模块单元测试

import math
import os
import sys
import unittest

from hypothesis import given, settings, strategies as st

# 设置编码
os.environ['PYTHONIOENCODING'] = 'utf-8'

# 添加项目根目录到路径
sys.path.append(os.path.dirname(os.path.dirname(__file__)))


def cosine_field(m, frequency=1):
    """确定性测试场：Σ_i cos(2π·frequency·θ_i)"""
    from src.field_sampler import FieldSample

    frequencies = [[frequency if j == i else 0 for j in range(m)] for i in range(m)]
    return FieldSample.from_terms(m, 0.25, frequencies, [1.0] * m, [1.0] * m, [0.0] * m)


def torus_position(record):
    """位置四舍五入后约化到 [0,1)，−1e-13 与 0 视为同一点"""
    return tuple(round(c, 9) % 1.0 for c in record.position)


def synthetic_records(positions):
    import numpy as np
    from src.critical_finder import CriticalPointRecord

    return [
        CriticalPointRecord(position=(p,), value=0.0, grad_residual=0.0, hessian=np.eye(1),
                            morse_index=0, degeneracy_margin=1.0)
        for p in positions
    ]


class TestDeterministicFields(unittest.TestCase):
    """已知临界点集的余弦场"""

    def test_torus_cosine_indices(self):
        """测试 T² 上 cos+cos 的临界点：指标多重集 {0,1,1,2}"""
        from src.critical_finder import find_critical_points, morse_lower_bound_check

        result = find_critical_points(cosine_field(2))
        indices = sorted(record.morse_index for record in result.records)
        positions = sorted(torus_position(record) for record in result.records)
        print(f"  临界点: {positions}")
        print(f"  指标: {indices}")
        self.assertEqual(indices, [0, 1, 1, 2])
        self.assertEqual(positions, [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)])
        ok, detail = morse_lower_bound_check(result.records, 2)
        self.assertTrue(ok)
        self.assertEqual(detail["index_counts"], [1, 2, 1])

    def test_maximum_at_origin(self):
        """测试原点为极大值（指标 2），Hessian = −4π²I"""
        import numpy as np
        from src.critical_finder import find_critical_points

        records = find_critical_points(cosine_field(2)).records
        origin = [r for r in records if torus_position(r) == (0.0, 0.0)][0]
        self.assertEqual(origin.morse_index, 2)
        np.testing.assert_allclose(origin.hessian, -4.0 * math.pi ** 2 * np.eye(2), atol=1e-8)
        self.assertLess(origin.grad_residual, 1e-8)
        self.assertFalse(origin.degenerate)

    def test_one_dimensional_cosine(self):
        """测试 cos(6πθ) 恰有 6 个临界点，极大极小交替"""
        from src.critical_finder import euler_alternating_sum, find_critical_points

        records = find_critical_points(cosine_field(1, 3)).records
        self.assertEqual(len(records), 6)
        located = sorted((torus_position(r)[0], r.morse_index) for r in records)
        self.assertEqual([index for _, index in located], [1, 0, 1, 0, 1, 0])
        self.assertEqual(euler_alternating_sum(records), 0)
        for k, (position, _) in enumerate(located):
            self.assertAlmostEqual(position, k / 6.0, places=8)

    def test_region_and_x_chart(self):
        """测试子区域枚举与 x 坐标系"""
        from src.critical_finder import find_critical_points

        sample = cosine_field(1, 3)
        inside = find_critical_points(sample, region=([0.1], [0.4])).records
        self.assertEqual(len(inside), 2)
        rescaled = find_critical_points(sample, chart="x").records
        self.assertEqual(len(rescaled), 6)
        expected = (1.0 / 6.0) / sample.hbar
        self.assertTrue(any(abs(r.position[0] - expected) < 1e-8 for r in rescaled))

    def test_invalid_region(self):
        """测试无效区域与未知坐标系"""
        from src.critical_finder import find_critical_points

        with self.assertRaises(ValueError):
            find_critical_points(cosine_field(1), region=([0.5], [0.2]))
        with self.assertRaises(ValueError):
            find_critical_points(cosine_field(1), chart="polar")


class TestRandomFields(unittest.TestCase):
    """随机样本的拓扑检查"""

    def test_one_dimensional_sample(self):
        """测试 m=1 随机样本：Euler 和为 0，计数为偶数"""
        import numpy as np
        from src.critical_finder import euler_alternating_sum, find_critical_points, morse_lower_bound_check
        from src.field_sampler import build_sample
        from src.spectral_weights import WeightSpec

        for seed in range(5):
            sample = build_sample(WeightSpec(), 1, 1.0 / 32, np.random.default_rng(seed))
            result = find_critical_points(sample)
            self.assertEqual(euler_alternating_sum(result.records), 0)
            self.assertEqual(len(result.records) % 2, 0)
            self.assertTrue(morse_lower_bound_check(result.records, 1)[0])

    def test_two_dimensional_sample(self):
        """测试 m=2 随机样本满足 Morse 下界与 Euler 和"""
        import numpy as np
        from src.critical_finder import find_critical_points, morse_lower_bound_check
        from src.field_sampler import build_sample
        from src.spectral_weights import WeightSpec

        sample = build_sample(WeightSpec(), 2, 0.125, np.random.default_rng(8))
        result = find_critical_points(sample)
        ok, detail = morse_lower_bound_check(result.records, 2)
        print(f"  m=2 指标计数: {detail['index_counts']}")
        self.assertTrue(ok)
        self.assertEqual(detail["euler_sum"], 0)

    def test_doubling_scan_density_keeps_counts(self):
        """测试 scan_per_wavelength 6 → 12 时 50 个样本的计数不变"""
        import numpy as np
        from src.critical_finder import FinderOptions, find_critical_points
        from src.field_sampler import build_sample
        from src.spectral_weights import WeightSpec

        coarse, fine = FinderOptions(scan_per_wavelength=6), FinderOptions(scan_per_wavelength=12)
        for m in (1, 2):
            for seed in range(50):
                sample = build_sample(WeightSpec(), m, 0.25, np.random.default_rng(1000 * m + seed))
                n_coarse = len(find_critical_points(sample, options=coarse).records)
                n_fine = len(find_critical_points(sample, options=fine).records)
                self.assertEqual(n_coarse, n_fine, f"m={m}, seed={seed}")

    def test_index_stable_under_small_perturbation(self):
        """测试位置扰动 1e-9 后非退化临界点的 Hessian 指数不变"""
        import numpy as np
        from src.critical_finder import find_critical_points
        from src.field_sampler import build_sample, eval_jet
        from src.spectral_weights import WeightSpec

        rng = np.random.default_rng(77)
        checked = 0
        for m, hbar, seed in ((1, 1.0 / 32, 3), (2, 0.125, 8)):
            sample = build_sample(WeightSpec(), m, hbar, np.random.default_rng(seed))
            for record in find_critical_points(sample).records:
                if record.degenerate:
                    continue
                direction = rng.standard_normal(m)
                direction /= np.linalg.norm(direction)
                shifted = np.asarray(record.position) + 1e-9 * direction
                hessian = eval_jet(sample, shifted, 2).hessian
                index = int(np.sum(np.linalg.eigvalsh(np.atleast_2d(hessian)) < 0))
                self.assertEqual(index, record.morse_index)
                checked += 1
        print(f"  检查的临界点数: {checked}")
        self.assertGreater(checked, 0)

    def test_options_from_dict(self):
        """测试查找器参数校验"""
        from src.critical_finder import FinderOptions

        self.assertEqual(FinderOptions.from_dict({"scan_per_wavelength": 8}).scan_per_wavelength, 8)
        with self.assertRaises(ValueError):
            FinderOptions.from_dict({"grid": 8})
        with self.assertRaises(ValueError):
            FinderOptions(scan_per_wavelength=2)


class TestCounting(unittest.TestCase):
    """盒子计数与不变量"""

    def test_count_in_box(self):
        """测试半开盒子 B_r 计数"""
        from src.critical_finder import count_in_box

        records = synthetic_records([k / 6.0 for k in range(6)])
        self.assertEqual(count_in_box(records, 1.0), 6)
        # [−1/4, 1/4) 含 0、1/6 与 5/6 ≡ −1/6
        self.assertEqual(count_in_box(records, 0.5), 3)
        with self.assertRaises(ValueError):
            count_in_box(records, 1.5)
        self.assertEqual(count_in_box([], 0.5), 0)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(min_value=0, max_value=999), max_size=40), st.integers(min_value=1, max_value=998))
    def test_disjoint_boxes_are_additive(self, grid_positions, split):
        """测试 [0,a) 与 [a,1) 的计数之和等于总数"""
        from src.critical_finder import count_in_region

        records = synthetic_records([p / 1000.0 for p in grid_positions])
        a = split / 1000.0 + 0.0005
        total = count_in_region(records, [0.0], [a]) + count_in_region(records, [a], [1.0])
        self.assertEqual(total, len(records))

    def test_morse_check_detects_missing_point(self):
        """测试漏掉一个临界点时抛出 EnumerationIncompleteError"""
        from src.critical_finder import find_critical_points, morse_lower_bound_check
        from src.errors import EnumerationIncompleteError

        records = find_critical_points(cosine_field(2)).records
        with self.assertRaises(EnumerationIncompleteError) as context:
            morse_lower_bound_check(records[:-1], 2)
        self.assertEqual(context.exception.exit_code, 2)
        self.assertEqual(context.exception.detail["total"], 3)

    def test_bk_bound(self):
        """测试 BK 上界 m!(2ν)^m 与多面体半径"""
        from src.critical_finder import bk_upper_bound, bump_polytope_radius, check_bk_bound
        from src.errors import InvariantViolation
        from src.spectral_weights import WeightSpec

        self.assertEqual(bk_upper_bound(3, 2), 72)
        self.assertEqual(bk_upper_bound(1, 1), 2)
        self.assertEqual(bump_polytope_radius(WeightSpec(family="bump", support=2.0), 1.0 / 16), 5)
        with self.assertRaises(ValueError):
            bump_polytope_radius(WeightSpec(), 1.0 / 16)
        sample = cosine_field(2, 3)
        self.assertEqual(check_bk_bound(sample, 36, 3), 72)
        with self.assertRaises(InvariantViolation):
            check_bk_bound(sample, 73, 3)
        with self.assertRaises(InvariantViolation):
            check_bk_bound(sample, 4, 2)


if __name__ == '__main__':
    unittest.main(verbosity=2)
