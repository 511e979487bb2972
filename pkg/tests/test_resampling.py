"""
Tests for posterior weighting, resampling and rejuvenation.
"""

import math
import unittest
from pathlib import Path
import sys

import numpy as np
import pandas as pd

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))


def samples_table(levels, log_lik, theta=None):
    """Minimal samples table as written by a run."""
    n = len(levels)
    theta = np.zeros(n) if theta is None else np.asarray(theta, dtype=float)
    return pd.DataFrame({
        "level": levels,
        "chain": np.arange(n),
        "step": np.zeros(n, dtype=int),
        "log_lik": log_lik,
        "theta_1": theta,
    })


class TestWeightedPool(unittest.TestCase):
    """Test building weighted pools."""

    def test_level_factor(self):
        """Test equal likelihoods on levels 0 and 1 weigh 10:1 at p_c = 0.1."""
        from susbayes.resampling import pool_from_frame

        pool = pool_from_frame(samples_table([0, 1], [0.0, 0.0]), 0.1)
        w = pool.weights
        self.assertAlmostEqual(w[0] / w[1], 10.0)
        self.assertAlmostEqual(w.sum(), 1.0)

    def test_constant_likelihood_single_level(self):
        """Test a single level with constant likelihood has equal weights."""
        from susbayes.resampling import pool_from_frame

        pool = pool_from_frame(samples_table([0] * 4, [1.5] * 4), 0.1)
        np.testing.assert_allclose(pool.weights, 0.25)

    def test_recorded_level_probabilities(self):
        """Test recorded level probabilities replace the p_c powers."""
        from susbayes.resampling import pool_from_frame

        pool = pool_from_frame(samples_table([0, 1], [0.0, 0.0]), 0.1,
                               level_log_p=[0.0, math.log(0.03)])
        w = pool.weights
        self.assertAlmostEqual(w[0] / w[1], 1.0 / 0.03)

    def test_recorded_levels_must_cover_table(self):
        """Test a table reaching past the recorded levels is refused."""
        from susbayes.resampling import pool_from_frame

        with self.assertRaises(ValueError):
            pool_from_frame(samples_table([0, 1], [0.0, 0.0]), 0.1, level_log_p=[0.0])

    def test_pool_from_sparse_support_run(self):
        """Test a run with a sparse level 0 is weighted by its recorded ln P."""
        from susbayes.model import BayesProblem, PriorSpec
        from susbayes.resampling import build_pool
        from susbayes.sus import RunConfig, run

        batch = lambda t: np.where(np.atleast_2d(t)[:, 0] < 0.03,
                                   -100.0 * np.atleast_2d(t)[:, 0], -math.inf)
        problem = BayesProblem(dimension=1, prior=PriorSpec.uniform_box(0.0, 1.0, 1),
                               log_likelihood=lambda t: float(batch(t)[0]),
                               log_likelihood_batch=batch, name="narrow")
        result = run(problem, RunConfig(n=1000, rng_seed=2))
        self.assertGreater(result.n_levels, 1)
        pool = build_pool(result)
        for level in result.levels:
            mask = pool.level == level.level_index
            np.testing.assert_allclose(pool.log_weight[mask], level.log_p + level.log_lik)
        self.assertNotAlmostEqual(result.levels[1].log_p, math.log(0.1))

    def test_zero_weights(self):
        """Test a pool of zero weights is degenerate."""
        from susbayes.errors import DegenerateWeightsError
        from susbayes.resampling import pool_from_frame

        with self.assertRaises(DegenerateWeightsError):
            pool_from_frame(samples_table([0, 0], [-math.inf, -math.inf]), 0.1)

    def test_missing_columns(self):
        """Test a table without log_lik is refused."""
        from susbayes.resampling import pool_from_frame

        frame = samples_table([0], [0.0]).drop(columns=["log_lik"])
        with self.assertRaises(ValueError):
            pool_from_frame(frame, 0.1)

    def test_pool_from_run(self):
        """Test the pool of a run covers every sample."""
        from susbayes.benchmarks import make_problem
        from susbayes.resampling import build_pool, last_level_pool
        from susbayes.sus import RunConfig, run

        result = run(make_problem("shells", 2), RunConfig(n=300, rng_seed=1))
        pool = build_pool(result)
        self.assertEqual(len(pool), 300 * result.n_levels)
        self.assertAlmostEqual(pool.weights.sum(), 1.0)
        self.assertEqual(pool.theta.shape, (len(pool), 2))
        last = last_level_pool(pool)
        self.assertEqual(len(last), 300)
        self.assertTrue(np.all(last.level == result.n_levels - 1))


class TestExpectation(unittest.TestCase):
    """Test weighted expectations."""

    def test_constant_function(self):
        """Test E[1] = 1."""
        from susbayes.resampling import expectation, pool_from_frame

        pool = pool_from_frame(samples_table([0, 1, 1], [0.0, -1.0, 2.0]), 0.1)
        self.assertAlmostEqual(expectation(pool, np.ones(3)), 1.0)

    def test_equal_weights_mean(self):
        """Test equal weights give the arithmetic mean."""
        from susbayes.resampling import expectation, pool_from_frame

        pool = pool_from_frame(samples_table([0] * 3, [0.0] * 3), 0.1)
        self.assertAlmostEqual(expectation(pool, np.array([1.0, 2.0, 6.0])), 3.0)

    def test_length_mismatch(self):
        """Test g values must align with the pool."""
        from susbayes.resampling import expectation, pool_from_frame

        pool = pool_from_frame(samples_table([0] * 3, [0.0] * 3), 0.1)
        with self.assertRaises(ValueError):
            expectation(pool, np.ones(2))


class TestResampleEqual(unittest.TestCase):
    """Test equally weighted resampling."""

    def test_single_positive_weight(self):
        """Test weights (1, 0, 0) always draw index 0."""
        from susbayes.resampling import RESAMPLING_METHODS, pool_from_frame, resample_equal

        pool = pool_from_frame(samples_table([0] * 3, [0.0, -math.inf, -math.inf]), 0.1)
        for method in RESAMPLING_METHODS:
            idx = resample_equal(pool, 50, np.random.default_rng(0), method)
            self.assertTrue(np.all(idx == 0), method)

    def test_equal_weights_frequencies(self):
        """Test equal weights give uniform index frequencies."""
        from susbayes.resampling import RESAMPLING_METHODS, pool_from_frame, resample_equal

        pool = pool_from_frame(samples_table([0] * 4, [0.0] * 4), 0.1)
        for method in RESAMPLING_METHODS:
            idx = resample_equal(pool, 100000, np.random.default_rng(1), method)
            freq = np.bincount(idx, minlength=4) / idx.size
            np.testing.assert_allclose(freq, 0.25, atol=0.01)

    def test_resampled_mean_is_unbiased(self):
        """Test resampled means converge to the weighted expectation."""
        from susbayes.resampling import expectation, pool_from_frame, resample_equal

        rng = np.random.default_rng(2)
        theta = rng.normal(size=200)
        pool = pool_from_frame(samples_table(rng.integers(0, 3, 200), -0.5 * theta ** 2, theta),
                               0.1)
        target = expectation(pool, theta)
        w = pool.weights
        stderr = math.sqrt(np.sum(w * (theta - target) ** 2) / 100000)
        idx = resample_equal(pool, 100000, rng, "multinomial")
        self.assertLess(abs(theta[idx].mean() - target), 3.0 * stderr)

    def test_count_and_method_validated(self):
        """Test bad count and method raise ValueError."""
        from susbayes.resampling import pool_from_frame, resample_equal

        pool = pool_from_frame(samples_table([0], [0.0]), 0.1)
        with self.assertRaises(ValueError):
            resample_equal(pool, 0, np.random.default_rng(0))
        with self.assertRaises(ValueError):
            resample_equal(pool, 5, np.random.default_rng(0), "stratified-ish")

    def test_ancestor_diversity(self):
        """Test the distinct-ancestor fraction."""
        from susbayes.resampling import ancestor_diversity

        self.assertEqual(ancestor_diversity(np.array([0, 0, 1, 2])), 0.75)
        self.assertEqual(ancestor_diversity(np.array([], dtype=int)), 0.0)


class TestPosteriorSummary(unittest.TestCase):
    """Test weighted posterior summaries."""

    def test_summary_columns(self):
        """Test mean and interval per parameter."""
        from susbayes.resampling import pool_from_frame, posterior_summary

        theta = np.linspace(0.0, 1.0, 101)
        pool = pool_from_frame(samples_table([0] * 101, [0.0] * 101, theta), 0.1)
        summary = posterior_summary(pool, ["x"])
        row = summary.iloc[0]
        self.assertEqual(row["parameter"], "x")
        self.assertAlmostEqual(row["mean"], 0.5)
        self.assertAlmostEqual(row["lower"], 0.05, delta=0.011)
        self.assertAlmostEqual(row["upper"], 0.95, delta=0.011)


class TestRejuvenation(unittest.TestCase):
    """Test posterior MCMC rejuvenation."""

    def _setup(self):
        from susbayes.model import BayesProblem, PriorSpec
        from susbayes.resampling import pool_from_frame

        prior = PriorSpec.uniform_box(0.0, 1.0, 1)
        problem = BayesProblem(dimension=1, prior=prior, log_likelihood=lambda t: 0.0)
        theta = np.random.default_rng(5).random(500)
        pool = pool_from_frame(samples_table([0] * 500, [0.0] * 500, theta), 0.1, prior)
        return problem, pool

    def test_zero_steps_returns_seeds(self):
        """Test zero steps leaves the seeds unchanged."""
        from susbayes.resampling import mcmc_rejuvenate

        problem, pool = self._setup()
        seeds = np.array([3, 3, 10])
        out = mcmc_rejuvenate(pool, seeds, problem, 0, seed=1)
        np.testing.assert_allclose(out.theta[:, 0], pool.theta[seeds, 0])
        self.assertEqual(len(out), 3)

    def test_constant_likelihood_accepts_all(self):
        """Test every move is accepted under a constant likelihood."""
        from susbayes.resampling import mcmc_rejuvenate

        problem, pool = self._setup()
        out = mcmc_rejuvenate(pool, np.arange(500), problem, 5, seed=2)
        self.assertEqual(out.acceptance_rate, 1.0)
        self.assertTrue(np.all((out.theta >= 0.0) & (out.theta <= 1.0)))

    def test_normal_posterior_reached_from_one_point(self):
        """Test chains started at theta = 2 settle on the N(0, 1) posterior."""
        from scipy import stats
        from susbayes.model import BayesProblem, PriorSpec
        from susbayes.resampling import mcmc_rejuvenate, pool_from_frame

        prior = PriorSpec.uniform_box(-6.0, 6.0, 1)
        batch = lambda t: stats.norm.logpdf(np.atleast_2d(t)[:, 0])
        problem = BayesProblem(dimension=1, prior=prior,
                               log_likelihood=lambda t: float(batch(t)[0]),
                               log_likelihood_batch=batch, name="normal-1d")
        pool = pool_from_frame(samples_table([0], [stats.norm.logpdf(2.0)], [2.0]), 0.1, prior)
        n = 2000
        out = mcmc_rejuvenate(pool, np.zeros(n, dtype=int), problem, 80, seed=4,
                              sigma=np.array([0.3]))
        theta = out.theta[:, 0]
        self.assertGreater(out.acceptance_rate, 0.1)
        self.assertLess(out.acceptance_rate, 1.0)
        self.assertLess(abs(theta.mean()), 3.0 * theta.std(ddof=1) / math.sqrt(n))
        self.assertAlmostEqual(theta.var(ddof=1), 1.0, delta=3.0 * math.sqrt(2.0 / n))

    def test_needs_u(self):
        """Test a pool without u coordinates cannot be rejuvenated."""
        from susbayes.resampling import mcmc_rejuvenate, pool_from_frame

        problem, _ = self._setup()
        pool = pool_from_frame(samples_table([0, 0], [0.0, 0.0]), 0.1)
        with self.assertRaises(ValueError):
            mcmc_rejuvenate(pool, np.array([0]), problem, 1, seed=0)


if __name__ == '__main__':
    unittest.main()
