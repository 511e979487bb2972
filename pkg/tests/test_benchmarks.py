"""
Tests for the benchmark likelihoods and their quadrature oracles.

Repeated-run calibration checks are slow; set SUSBAYES_SLOW=1 to run them.
"""

import math
import os
import unittest
from pathlib import Path
import sys

import numpy as np

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

SLOW = os.environ.get("SUSBAYES_SLOW", "") not in ("", "0")
PEAK_SHELL = -0.5 * math.log(2.0 * math.pi * 0.01)


class TestEggbox(unittest.TestCase):
    """Test the eggbox log-likelihood."""

    def test_known_points(self):
        """Test the eggbox at its maximum, midpoint and minimum."""
        from susbayes.benchmarks import eggbox_loglik

        self.assertAlmostEqual(eggbox_loglik(np.array([0.0, 0.0])), 243.0)
        self.assertAlmostEqual(eggbox_loglik(np.array([math.pi, math.pi])), 32.0)
        self.assertAlmostEqual(eggbox_loglik(np.array([2.0 * math.pi, 0.0])), 1.0)

    def test_rows(self):
        """Test a 2-D array is evaluated row by row."""
        from susbayes.benchmarks import eggbox_loglik

        values = eggbox_loglik(np.array([[0.0, 0.0], [2.0 * math.pi, 0.0]]))
        np.testing.assert_allclose(values, [243.0, 1.0])


class TestShells(unittest.TestCase):
    """Test the Gaussian shells log-likelihood."""

    def test_on_first_shell(self):
        """Test a point on the first shell."""
        from susbayes.benchmarks import shells_loglik

        self.assertAlmostEqual(shells_loglik(np.array([-1.5, 0.0])), PEAK_SHELL, places=6)
        self.assertAlmostEqual(PEAK_SHELL, 1.3836, places=4)

    def test_between_shells(self):
        """Test the origin, at distance 3.5 from both centres."""
        from susbayes.benchmarks import shells_loglik

        expected = PEAK_SHELL - 112.5 + math.log(2.0)
        self.assertAlmostEqual(shells_loglik(np.array([0.0, 0.0])), expected, places=9)

    def test_mirror_symmetry(self):
        """Test L(t1, t2, ...) = L(-t1, t2, ...)."""
        from susbayes.benchmarks import shells_loglik

        t = np.random.default_rng(0).uniform(-6.0, 6.0, (20, 5))
        mirrored = t.copy()
        mirrored[:, 0] *= -1.0
        np.testing.assert_allclose(shells_loglik(t), shells_loglik(mirrored))

    def test_finite_over_box(self):
        """Test the log-likelihood is finite at the box corners."""
        from susbayes.benchmarks import shells_loglik

        corners = np.array([[-6.0] * 30, [6.0] * 30])
        self.assertTrue(np.all(np.isfinite(shells_loglik(corners))))


class TestNormLogGamma(unittest.TestCase):
    """Test the Normal / LogGamma mixture log-likelihood."""

    def test_loggamma_at_location(self):
        """Test LogGamma(10, 1, 1) at x = 10 has log-density -1."""
        from susbayes.benchmarks import loggamma_logpdf

        self.assertAlmostEqual(float(loggamma_logpdf(10.0, 10.0)), -1.0)

    def test_normal_mixture_factor(self):
        """Test the second coordinate at a mode centre."""
        from susbayes.benchmarks import norm_loggamma_factors

        factors = norm_loggamma_factors(np.array([[10.0, 10.0]]))
        expected = math.log(0.5) - 0.5 * math.log(2.0 * math.pi)
        self.assertAlmostEqual(factors[0, 1], expected, places=9)

    def test_separable(self):
        """Test the log-likelihood is the sum of its factors."""
        from susbayes.benchmarks import norm_loggamma_factors, norm_loggamma_loglik

        t = np.random.default_rng(1).uniform(-30.0, 30.0, (5, 10))
        np.testing.assert_allclose(norm_loggamma_loglik(t),
                                   norm_loggamma_factors(t).sum(axis=1))

    def test_finite_over_box(self):
        """Test the log-likelihood stays finite at the box edges."""
        from susbayes.benchmarks import norm_loggamma_loglik

        corners = np.array([[-30.0] * 20, [30.0] * 20])
        self.assertTrue(np.all(np.isfinite(norm_loggamma_loglik(corners))))

    def test_odd_dimension(self):
        """Test an odd dimension is refused."""
        from susbayes.benchmarks import norm_loggamma_loglik

        with self.assertRaises(ValueError):
            norm_loggamma_loglik(np.zeros((1, 3)))


class TestRegistry(unittest.TestCase):
    """Test benchmark lookup."""

    def test_invalid_specs(self):
        """Test invalid names and dimensions raise ConfigurationError."""
        from susbayes.benchmarks import benchmark_spec
        from susbayes.errors import ConfigurationError

        for name, dim in (("eggbox", 3), ("shells", 1), ("norm_loggamma", 3),
                          ("rosenbrock", 2)):
            with self.assertRaises(ConfigurationError, msg=name):
                benchmark_spec(name, dim)

    def test_problem(self):
        """Test a registered problem carries its prior and reference."""
        from susbayes.benchmarks import make_problem

        problem = make_problem("shells", 5)
        self.assertEqual(problem.name, "shells-5d")
        self.assertEqual(problem.dimension, 5)
        self.assertEqual(problem.reference_log_evidence, -5.67)
        np.testing.assert_allclose(problem.prior.lower, -6.0)
        self.assertAlmostEqual(problem.log_likelihood_sup, math.log(2.0) + PEAK_SHELL)

    def test_eggbox_default_dimension(self):
        """Test the eggbox defaults to two dimensions."""
        from susbayes.benchmarks import benchmark_spec

        spec = benchmark_spec("eggbox")
        self.assertEqual(spec.dimension, 2)
        self.assertAlmostEqual(spec.upper, 10.0 * math.pi)

    def test_untabulated_norm_loggamma_reference(self):
        """Test the reference for an untabulated dimension is -d ln 60."""
        from susbayes.benchmarks import benchmark_spec

        spec = benchmark_spec("norm_loggamma", 4)
        self.assertAlmostEqual(spec.analytic_log_evidence, -4.0 * math.log(60.0))


class TestOracles(unittest.TestCase):
    """Test quadrature oracles against the tabulated analytic values."""

    def test_shells_radial(self):
        """Test the radial shells oracle in 2 and 5 dimensions."""
        from susbayes.benchmarks import shells_radial_log_evidence

        self.assertAlmostEqual(shells_radial_log_evidence(2), -1.75, delta=0.01)
        self.assertAlmostEqual(shells_radial_log_evidence(5), -5.67, delta=0.02)

    def test_shells_high_dimension(self):
        """Test the radial oracle up to 30 dimensions."""
        from susbayes.benchmarks import shells_radial_log_evidence

        for d, expected in ((10, -14.59), (20, -36.09), (30, -60.13)):
            self.assertAlmostEqual(shells_radial_log_evidence(d), expected, delta=0.02)

    def test_shells_grid_matches_radial(self):
        """Test the 2-D grid oracle agrees with the radial reduction."""
        from susbayes.benchmarks import benchmark_spec, oracle_log_evidence, \
            shells_radial_log_evidence

        grid = oracle_log_evidence(benchmark_spec("shells", 2))
        self.assertAlmostEqual(grid, shells_radial_log_evidence(2), delta=2e-3)

    def test_eggbox(self):
        """Test the eggbox grid oracle."""
        from susbayes.benchmarks import benchmark_spec, oracle_log_evidence

        self.assertAlmostEqual(oracle_log_evidence(benchmark_spec("eggbox")), 235.86, delta=0.02)

    def test_norm_loggamma(self):
        """Test the separable oracle in 2 and 20 dimensions."""
        from susbayes.benchmarks import benchmark_spec, oracle_log_evidence

        self.assertAlmostEqual(oracle_log_evidence(benchmark_spec("norm_loggamma", 2)),
                               -2.0 * math.log(60.0), delta=1e-3)
        self.assertAlmostEqual(oracle_log_evidence(benchmark_spec("norm_loggamma", 20)),
                               -81.89, delta=0.02)


def repeated_runs(name, dim, runs):
    """(result, report) of ``runs`` seeded N = 1000 runs of a benchmark."""
    from susbayes.benchmarks import make_problem
    from susbayes.diagnostics import uncertainty_report
    from susbayes.sus import RunConfig, run

    problem = make_problem(name, dim)
    for seed in range(runs):
        result = run(problem, RunConfig(n=1000, rng_seed=seed))
        yield result, uncertainty_report(result)


@unittest.skipUnless(SLOW, "set SUSBAYES_SLOW=1 for repeated-run checks")
class TestRepeatedRuns(unittest.TestCase):
    """Repeated-run checks of the evidence estimate and its predicted c.o.v."""

    def _study(self, name, dim, runs):
        log_z, predicted, ratio = [], [], []
        for result, report in repeated_runs(name, dim, runs):
            log_z.append(result.log_evidence)
            predicted.append(report.cov_z_hat)
            ratio.append(report.n_ess_ratio)
        return np.array(log_z), np.array(predicted), np.array(ratio)

    def test_shells_2d_calibration(self):
        """Test mean ln z and predicted c.o.v. over repeated 2-D shells runs."""
        log_z, predicted, ratio = self._study("shells", 2, 200)
        self.assertAlmostEqual(log_z.mean(), -1.75, delta=0.05)
        z = np.exp(log_z - log_z.max())
        empirical = np.std(z, ddof=1) / np.mean(z)
        self.assertLess(np.median(predicted), 2.0 * empirical)
        self.assertGreater(np.median(predicted), 0.5 * empirical)
        self.assertAlmostEqual(100.0 * ratio.mean(), 24.96, delta=12.5)

    def test_eggbox(self):
        """Test mean ln z over repeated eggbox runs."""
        log_z, _, _ = self._study("eggbox", 2, 20)
        self.assertAlmostEqual(log_z.mean(), 235.86, delta=0.5)


@unittest.skipUnless(SLOW, "set SUSBAYES_SLOW=1 for repeated-run checks")
class TestShells10d(unittest.TestCase):
    """Repeated 10-D shells runs: evidence spread and effective sample size."""

    @classmethod
    def setUpClass(cls):
        log_z, ratio = [], []
        for result, report in repeated_runs("shells", 10, 100):
            log_z.append(result.log_evidence)
            ratio.append(report.n_ess_ratio)
        cls.log_z, cls.ratio = np.array(log_z), np.array(ratio)

    def test_evidence(self):
        """Test mean ln z near -14.59 with a spread of ln z under 2%."""
        self.assertAlmostEqual(self.log_z.mean(), -14.59, delta=0.3)
        self.assertLessEqual(np.std(self.log_z, ddof=1) / abs(self.log_z.mean()), 0.02)

    def test_effective_sample_ratio(self):
        """Test mean N_ess / N_cal within half of 4.35%."""
        self.assertAlmostEqual(100.0 * self.ratio.mean(), 4.35, delta=0.5 * 4.35)


@unittest.skipUnless(SLOW, "set SUSBAYES_SLOW=1 for repeated-run checks")
class TestNormLogGamma20d(unittest.TestCase):
    """Repeated 20-D Normal / LogGamma runs: ESS and resampled marginals."""

    RUNS = 40
    DRAWS = 15
    BINS = 5

    @classmethod
    def setUpClass(cls):
        from susbayes.resampling import build_pool, resample_equal

        rng = np.random.default_rng(99)
        ratio, draws = [], []
        for result, report in repeated_runs("norm_loggamma", 20, cls.RUNS):
            ratio.append(report.n_ess_ratio)
            pool = build_pool(result)
            draws.append(pool.theta[resample_equal(pool, cls.DRAWS, rng)])
        cls.ratio, cls.draws = np.array(ratio), np.vstack(draws)

    def test_effective_sample_ratio(self):
        """Test mean N_ess / N_cal within half of 1.83%."""
        self.assertAlmostEqual(100.0 * self.ratio.mean(), 1.83, delta=0.5 * 1.83)

    def test_marginals(self):
        """Test every resampled marginal against its analytic density by chi-square."""
        from scipy import integrate, stats
        from susbayes.benchmarks import norm_loggamma_factors

        d = self.draws.shape[1]
        x = np.linspace(-30.0, 30.0, 60001)
        density = np.exp(norm_loggamma_factors(np.repeat(x[:, None], d, axis=1)))
        for j in range(d):
            cdf = integrate.cumulative_trapezoid(density[:, j], x, initial=0.0)
            cdf /= cdf[-1]
            inner = np.interp(np.arange(1, self.BINS) / self.BINS, cdf, x)
            counts = np.bincount(np.searchsorted(inner, self.draws[:, j]), minlength=self.BINS)
            _, p_value = stats.chisquare(counts)
            self.assertGreater(p_value, 0.01 / d, msg=f"coordinate {j}")


if __name__ == '__main__':
    unittest.main()
