# 随机场采样模块单元测试

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


class TestActiveFrequencies(unittest.TestCase):
    """激活频率集"""

    def test_half_space_convention(self):
        """测试 k 与 −k 不同时出现，k = 0 只出现一次"""
        import numpy as np
        from src.field_sampler import active_frequencies
        from src.spectral_weights import WeightSpec

        frequencies, weights = active_frequencies(WeightSpec(), 2, 0.25)
        as_set = {tuple(k) for k in frequencies}
        print(f"  ℏ=1/4, m=2 激活频率数: {len(frequencies)}")
        self.assertIn((0, 0), as_set)
        for k in as_set:
            if any(k):
                self.assertNotIn(tuple(-c for c in k), as_set)
        self.assertTrue(np.all(weights >= 1e-12))

    def test_budget_exceeded(self):
        """测试频率数超过预算"""
        from src.errors import FrequencyBudgetError
        from src.field_sampler import active_frequencies
        from src.spectral_weights import WeightSpec

        with self.assertRaises(FrequencyBudgetError) as context:
            active_frequencies(WeightSpec(), 2, 1.0 / 64, budget=100)
        self.assertEqual(context.exception.budget, 100)
        self.assertEqual(context.exception.exit_code, 4)

    def test_bump_frequencies_inside_support(self):
        """测试 bump 权重的频率满足 2πℏ|k| < R"""
        import numpy as np
        from src.field_sampler import active_frequencies
        from src.spectral_weights import WeightSpec

        hbar = 1.0 / 16
        frequencies, _ = active_frequencies(WeightSpec(family="bump", support=2.0), 1, hbar)
        self.assertLess(2.0 * math.pi * hbar * np.abs(frequencies).max(), 2.0)


class TestSampleCovariance(unittest.TestCase):
    """采样器实现的协方差"""

    def test_exact_covariance_matches_periodization(self):
        """测试 ℏ^m Σ_k w(2πℏ|k|) cos 2π⟨k,δ⟩ = V^ℏ(δ/ℏ)"""
        from src.field_sampler import exact_sample_covariance
        from src.spectral_weights import WeightSpec, periodized_covariance_jet

        spec = WeightSpec()
        hbar = 0.125
        for delta in (0.0, 0.1, 0.37):
            lattice = exact_sample_covariance(spec, 1, hbar, [0.0], [delta])
            continuum = periodized_covariance_jet(spec, 1, hbar, [delta / hbar], max_order=0).value
            print(f"  δ={delta}: 格点和 {lattice:.10f}  V^ℏ {continuum:.10f}")
            self.assertAlmostEqual(lattice, continuum, delta=1e-9)

    def test_empirical_variance(self):
        """测试样本方差接近 V^ℏ(0)"""
        import numpy as np
        from src.field_sampler import build_sample, eval_jets, exact_sample_covariance
        from src.spectral_weights import WeightSpec

        spec = WeightSpec()
        rng = np.random.default_rng(2024)
        points = np.array([[0.0], [0.3]])
        values = np.array([eval_jets(build_sample(spec, 1, 0.25, rng), points, 0).values for _ in range(4000)])
        expected_var = exact_sample_covariance(spec, 1, 0.25, [0.0], [0.0])
        expected_cov = exact_sample_covariance(spec, 1, 0.25, [0.0], [0.3])
        empirical = np.cov(values.T)
        print(f"  方差: {empirical[0, 0]:.5f}  期望: {expected_var:.5f}")
        # 4000 个样本的方差相对标准误约 2.2%
        self.assertAlmostEqual(empirical[0, 0] / expected_var, 1.0, delta=0.1)
        self.assertAlmostEqual(empirical[0, 1], expected_cov, delta=0.1 * expected_var)


class TestJetEvaluation(unittest.TestCase):
    """逐项导数求值"""

    def setUp(self):
        import numpy as np
        from src.field_sampler import build_sample
        from src.spectral_weights import WeightSpec

        self.sample = build_sample(WeightSpec(), 2, 0.25, np.random.default_rng(17))
        self.point = np.array([0.31, 0.77])

    def _central_difference(self, attribute, step=1e-6):
        import numpy as np
        from src.field_sampler import eval_jets

        columns = []
        for axis in range(2):
            shift = np.zeros(2)
            shift[axis] = step
            batch = eval_jets(self.sample, np.stack([self.point + shift, self.point - shift]), 3)
            upper, lower = getattr(batch, attribute)
            columns.append((upper - lower) / (2.0 * step))
        return np.stack(columns, axis=-1)

    def test_gradient_matches_finite_difference(self):
        """测试梯度与中心差分一致"""
        import numpy as np
        from src.field_sampler import eval_jet

        jet = eval_jet(self.sample, self.point, 3)
        numeric = self._central_difference("values")
        scale = max(1.0, np.abs(jet.gradient).max())
        np.testing.assert_allclose(jet.gradient, numeric, atol=1e-5 * scale)

    def test_hessian_and_third_symmetric_and_consistent(self):
        """测试 Hessian、三阶导数与差分一致且对称"""
        import numpy as np
        from src.field_sampler import eval_jet

        jet = eval_jet(self.sample, self.point, 3)
        np.testing.assert_allclose(jet.hessian, jet.hessian.T, atol=1e-10)
        hessian_numeric = self._central_difference("gradients")
        third_numeric = self._central_difference("hessians")
        np.testing.assert_allclose(jet.hessian, hessian_numeric, atol=1e-5 * max(1.0, np.abs(jet.hessian).max()))
        np.testing.assert_allclose(jet.third, third_numeric, atol=1e-5 * max(1.0, np.abs(jet.third).max()))
        np.testing.assert_allclose(jet.third, np.transpose(jet.third, (1, 0, 2)), atol=1e-8)

    def test_rescaled_jet(self):
        """测试 Y^ℏ(x) = X^ℏ(ℏx mod 1)，导数乘 ℏ^k"""
        import numpy as np
        from src.field_sampler import eval_jet, rescaled_jet

        x = np.array([5.2, -1.4])
        hbar = self.sample.hbar
        direct = eval_jet(self.sample, np.mod(hbar * x, 1.0), 2)
        rescaled = rescaled_jet(self.sample, x, 2)
        self.assertAlmostEqual(rescaled.value, direct.value, places=12)
        np.testing.assert_allclose(rescaled.gradient, hbar * direct.gradient, atol=1e-12)
        np.testing.assert_allclose(rescaled.hessian, hbar ** 2 * direct.hessian, atol=1e-12)

    def test_invalid_order(self):
        """测试导数阶数越界"""
        from src.field_sampler import eval_jets

        with self.assertRaises(ValueError):
            eval_jets(self.sample, [[0.0, 0.0]], 4)


class TestSampleConstruction(unittest.TestCase):
    """样本构造与转储"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def test_from_terms_validation(self):
        """测试显式项的校验"""
        from src.field_sampler import FieldSample

        with self.assertRaises(ValueError):
            FieldSample.from_terms(1, 0.25, [[1]], [0.0], [1.0], [0.0])
        with self.assertRaises(ValueError):
            FieldSample.from_terms(1, 0.25, [[1], [2]], [1.0], [1.0], [0.0])
        sample = FieldSample.from_terms(1, 0.25, [[1]], [1.0], [1.0], [0.0])
        self.assertEqual(sample.count, 1)

    def test_build_sample_rejects_large_hbar(self):
        """测试 ℏ > 1/4 被拒绝"""
        import numpy as np
        from src.field_sampler import build_sample
        from src.spectral_weights import WeightSpec

        with self.assertRaises(ValueError):
            build_sample(WeightSpec(), 1, 0.5, np.random.default_rng(0))

    def test_same_stream_same_sample(self):
        """测试同一随机流得到相同样本"""
        import numpy as np
        from src.field_sampler import build_sample
        from src.spectral_weights import WeightSpec

        first = build_sample(WeightSpec(), 1, 1.0 / 16, np.random.default_rng(99))
        second = build_sample(WeightSpec(), 1, 1.0 / 16, np.random.default_rng(99))
        np.testing.assert_array_equal(first.a_coeffs, second.a_coeffs)
        np.testing.assert_array_equal(first.b_coeffs, second.b_coeffs)
        self.assertGreater(first.truncation_bias, 0.0)

    def test_dump_and_load(self):
        """测试样本文本转储可逆"""
        import numpy as np
        from src.field_sampler import build_sample, dump_sample, load_sample
        from src.spectral_weights import WeightSpec

        sample = build_sample(WeightSpec(), 2, 0.25, np.random.default_rng(5), seed_label="20240601/0/0/0")
        path = dump_sample(sample, os.path.join(self.temp_dir, "sample.txt"))
        loaded = load_sample(path)
        self.assertEqual(loaded.m, 2)
        self.assertEqual(loaded.hbar, 0.25)
        self.assertEqual(loaded.seed, "20240601/0/0/0")
        np.testing.assert_array_equal(loaded.frequencies, sample.frequencies)
        np.testing.assert_array_equal(loaded.amplitudes, sample.amplitudes)
        np.testing.assert_array_equal(loaded.b_coeffs, sample.b_coeffs)


if __name__ == '__main__':
    unittest.main(verbosity=2)
