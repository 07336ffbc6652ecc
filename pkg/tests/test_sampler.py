import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy.special import expit

from src.errors import ConfigError, SamplerError
from src.models.glmm import ModelSpec
from src.models.sampler import (PosteriorDraws, SamplerConfig, adaptation_windows, chain_seed, kinetic_energy,
                                leapfrog, regularized_variance, run_chains, sample_target)
from src.utils.diagnostics import ess, rhat
from src.utils.survey_processor import CoopDataset, CoopRow


class GaussianTarget:
    """Zero-mean Gaussian with the given covariance"""

    def __init__(self, covariance):
        self.covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
        self.precision = np.linalg.inv(self.covariance)
        self.dim = self.covariance.shape[0]
        self.param_names = [f"x[{k}]" for k in range(self.dim)]

    def initial_point(self, rng):
        return rng.uniform(-2.0, 2.0, size=self.dim)

    def log_density_and_grad(self, u):
        grad = -self.precision @ u
        return 0.5 * float(u @ grad), grad

    def constrained_vector(self, u):
        return np.array(u, dtype=float)


class BetaBinomialTarget:
    """Success probability after 7 of 10 successes under a uniform prior, sampled on the logit scale"""
    dim = 1
    param_names = ['p']

    def initial_point(self, rng):
        return rng.uniform(-2.0, 2.0, size=1)

    def log_density_and_grad(self, u):
        p = expit(u[0])
        return 8.0 * np.log(p) + 4.0 * np.log1p(-p), np.array([8.0 - 12.0 * p])

    def constrained_vector(self, u):
        return expit(u)


class BrokenTarget(GaussianTarget):
    def log_density_and_grad(self, u):
        return -np.inf, np.zeros(self.dim)


def config(**overrides):
    settings = dict(n_chains=4, n_warmup=1000, n_draws=1000, seed=42)
    settings.update(overrides)
    return SamplerConfig(**settings)


class TestKnownTargets(unittest.TestCase):
    def assertConverged(self, draws):
        for name in draws.param_names:
            with self.subTest(parameter=name):
                self.assertLess(rhat(draws.get(name)), 1.01)
                self.assertGreater(ess(draws.get(name)), 400)

    def test_standard_normal(self):
        draws = sample_target(GaussianTarget([[1.0]]), config())
        x = draws.flat('x[0]')
        self.assertEqual(x.size, 4000)
        self.assertLess(abs(x.mean()), 0.05)
        self.assertLess(abs(x.std() - 1.0), 0.05)
        self.assertConverged(draws)

    def test_correlated_gaussian(self):
        draws = sample_target(GaussianTarget([[1.0, 0.8], [0.8, 1.0]]), config(seed=7))
        corr = np.corrcoef(draws.flat('x[0]'), draws.flat('x[1]'))[0, 1]
        self.assertAlmostEqual(corr, 0.8, delta=0.05)
        self.assertConverged(draws)

    def test_beta_binomial(self):
        """Test the posterior mean of a conjugate beta-binomial model"""
        draws = sample_target(BetaBinomialTarget(), config(seed=3))
        self.assertAlmostEqual(float(draws.flat('p').mean()), 8 / 12, delta=0.02)
        self.assertTrue(np.all((draws.flat('p') > 0) & (draws.flat('p') < 1)))

    def test_no_divergences_on_gaussian(self):
        draws = sample_target(GaussianTarget(np.eye(3)), config(n_chains=2, n_warmup=300, n_draws=300))
        self.assertEqual(draws.n_divergent, 0)
        self.assertFalse(draws.failed)


class TestDeterminism(unittest.TestCase):
    def test_same_seed_same_draws(self):
        target = GaussianTarget([[2.0, 0.3], [0.3, 0.5]])
        first = sample_target(target, config(n_chains=2, n_warmup=200, n_draws=100))
        second = sample_target(target, config(n_chains=2, n_warmup=200, n_draws=100))
        np.testing.assert_array_equal(first.values, second.values)

    def test_parallel_chains_match_serial(self):
        target = GaussianTarget([[1.0, 0.5], [0.5, 1.0]])
        serial = sample_target(target, config(n_chains=3, n_warmup=200, n_draws=100, n_jobs=1))
        parallel = sample_target(target, config(n_chains=3, n_warmup=200, n_draws=100, n_jobs=3))
        np.testing.assert_array_equal(serial.values, parallel.values)
        self.assertEqual(serial.chain_seeds, parallel.chain_seeds)

    def test_chain_seeds_differ(self):
        seeds = {chain_seed(42, index) for index in range(8)}
        self.assertEqual(len(seeds), 8)
        self.assertEqual(chain_seed(42, 0), chain_seed(42, 0))


class TestLeapfrog(unittest.TestCase):
    def max_energy_error(self, step_size, duration=2.0):
        target = GaussianTarget([[1.0]])
        inv_metric = np.ones(1)
        theta, r = np.array([1.0]), np.array([0.5])
        logp, grad = target.log_density_and_grad(theta)
        h0 = -logp + kinetic_energy(r, inv_metric)
        worst = 0.0
        for _ in range(int(round(duration / step_size))):
            theta, r, grad, logp = leapfrog(target.log_density_and_grad, theta, r, grad, step_size, inv_metric)
            worst = max(worst, abs(-logp + kinetic_energy(r, inv_metric) - h0))
        return worst

    def test_energy_error_second_order(self):
        """Test halving the step size cuts the energy error about fourfold"""
        ratio = self.max_energy_error(0.1) / self.max_energy_error(0.05)
        self.assertGreater(ratio, 3.5)
        self.assertLess(ratio, 4.5)

    def test_reversible(self):
        target = GaussianTarget([[1.0, 0.2], [0.2, 0.7]])
        theta0, r0 = np.array([0.3, -0.4]), np.array([1.0, 0.1])
        _, grad0 = target.log_density_and_grad(theta0)
        theta, r, grad, _ = leapfrog(target.log_density_and_grad, theta0, r0, grad0, 0.2, np.ones(2))
        back, r_back, _, _ = leapfrog(target.log_density_and_grad, theta, -r, grad, 0.2, np.ones(2))
        np.testing.assert_allclose(back, theta0, atol=1e-12)
        np.testing.assert_allclose(-r_back, r0, atol=1e-12)


class TestAdaptation(unittest.TestCase):
    def test_default_windows(self):
        self.assertEqual(adaptation_windows(1000),
                         [(75, 100), (100, 150), (150, 250), (250, 450), (450, 950)])

    def test_short_warmup(self):
        self.assertEqual(adaptation_windows(100), [(15, 90)])
        self.assertEqual(adaptation_windows(10), [])

    def test_regularized_variance(self):
        samples = np.random.default_rng(0).normal(0.0, 3.0, size=(95, 2))
        expected = (95 / 100) * samples.var(axis=0, ddof=1) + 1e-3 * (5 / 100)
        np.testing.assert_allclose(regularized_variance(samples), expected)


class TestSamplerConfig(unittest.TestCase):
    def test_invalid_values(self):
        for overrides in ({'n_chains': 0}, {'n_draws': 0}, {'target_acceptance': 1.0}, {'seed': -1}):
            with self.assertRaises(ConfigError):
                config(**overrides)

    def test_from_config(self):
        cfg = SamplerConfig.from_config({'chains': 2, 'warmup': 50, 'draws': 60, 'seed': 9})
        self.assertEqual((cfg.n_chains, cfg.n_warmup, cfg.n_draws, cfg.seed), (2, 50, 60, 9))
        self.assertEqual(cfg.target_acceptance, 0.9)


class TestPosteriorDraws(unittest.TestCase):
    def make(self, divergent_fraction=0.0):
        values = np.random.default_rng(1).normal(size=(2, 10, 3))
        divergent = np.zeros((2, 10), dtype=bool)
        divergent.flat[:int(divergent_fraction * 20)] = True
        return PosteriorDraws(param_names=['a', 'b', 'c'], values=values, chain_seeds=[1, 2], divergent=divergent)

    def test_failed_above_quarter_divergent(self):
        self.assertFalse(self.make(0.25).failed)
        self.assertTrue(self.make(0.3).failed)
        self.assertEqual(self.make(0.3).n_divergent, 6)

    def test_csv_round_trip(self):
        draws = self.make()
        with tempfile.TemporaryDirectory() as tmp:
            path = draws.to_csv(Path(tmp) / 'draws.csv')
            header = path.read_text(encoding='utf-8').splitlines()[0]
            self.assertEqual(header, 'chain,iteration,a,b,c')
            loaded = PosteriorDraws.from_csv(path, chain_seeds=[1, 2])
        np.testing.assert_allclose(loaded.values, draws.values, rtol=1e-12)
        self.assertEqual(loaded.param_names, ['a', 'b', 'c'])

    def test_unknown_parameter(self):
        with self.assertRaises(KeyError):
            self.make().get('z')


class TestRunChains(unittest.TestCase):
    def test_initialization_failure(self):
        with self.assertRaises(SamplerError):
            sample_target(BrokenTarget([[1.0]]), config(n_chains=1, n_warmup=10, n_draws=10))

    def test_glmm_draws_are_constrained(self):
        """Test a short ordinal fit reports positive sigma and ordered cutpoints"""
        rng = np.random.default_rng(2)
        rows = tuple(CoopRow(person_id=f"p{i}", village_id=f"v{i % 4}", overlap_i=float(rng.uniform()),
                             overlap_V=0.2 + 0.05 * (i % 4), dg_category=int(i % 4))
                     for i in range(40))
        spec = ModelSpec(family='ordinal', outcome='dg_category')
        draws = run_chains(spec, CoopDataset(rows=rows), config(n_chains=2, n_warmup=150, n_draws=100))
        self.assertEqual(draws.values.shape, (2, 100, len(draws.param_names)))
        self.assertTrue(np.all(draws.get('sigma_village') > 0))
        cuts = draws.values[:, :, :3]
        self.assertTrue(np.all(np.diff(cuts, axis=-1) > 0))
        self.assertEqual(draws.spec.n_categories, 4)


if __name__ == '__main__':
    unittest.main()
