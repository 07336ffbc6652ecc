import math
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy import stats

from src.errors import ConfigError, ModelError
from src.models.glmm import Family, PriorSet
from src.models.sampler import SamplerConfig, run_chains
from src.utils.postfit import loo_report
from src.utils.synthetic import (RecoveryReport, TrueParams, generate_dataset, icc_attenuation_experiment,
                                 inject_outlier, recovery_experiment, sbc_experiment)

SLOW = os.environ.get('COOPNET_SLOW_TESTS') == '1'
SLOW_REASON = 'set COOPNET_SLOW_TESTS=1 to run sampler-heavy experiments'


def fast_sampler(**overrides):
    settings = dict(n_chains=4, n_warmup=500, n_draws=500, seed=1)
    settings.update(overrides)
    return SamplerConfig(**settings)


# Stated prior for the recovery runs: betas ~ normal(0, 50)
WIDE_PRIORS = PriorSet(beta_scale=50.0)


def wide_prior_config(**overrides):
    settings = dict(chains=4, warmup=500, draws=500, prior_beta_scale=WIDE_PRIORS.beta_scale)
    settings.update(overrides)
    return settings


class TestTrueParams(unittest.TestCase):
    def test_mayu_preset(self):
        tp = TrueParams.preset('mayu')
        self.assertIs(tp.family, Family.NEGATIVE_BINOMIAL)
        self.assertEqual(tp.betas, {'overlap_i': 2.53, 'overlap_V': 24.35})
        self.assertEqual(tp.sigma_village, 0.49)
        self.assertAlmostEqual(tp.intercept, math.log(12) - (2.53 + 24.35) * 0.3)
        self.assertEqual((tp.n_villages, tp.n_per_village), (8, 28))

    def test_ordinal_preset(self):
        tp = TrueParams.preset('ug', villages=9)
        self.assertEqual(tp.n_categories, 6)
        self.assertEqual(tp.n_villages, 9)
        self.assertEqual(set(tp.truth()), {'cutpoint[1]', 'cutpoint[2]', 'cutpoint[3]', 'cutpoint[4]',
                                           'cutpoint[5]', 'b_overlap_i', 'b_overlap_V', 'sigma_village'})

    def test_unknown_preset(self):
        with self.assertRaises(ConfigError):
            TrueParams.preset('income')

    def test_invalid_truths(self):
        with self.assertRaises(ModelError):
            TrueParams.preset('dg', cutpoints=(1.0, 0.0, 2.0, 3.0, 4.0))
        with self.assertRaises(ModelError):
            TrueParams.preset('mayu', theta=0.0)
        with self.assertRaises(ModelError):
            TrueParams.preset('mayu', village_mean_low=0.6, village_mean_high=0.4)

    def test_json_round_trip(self):
        tp = TrueParams.preset('dg', n_per_village=10)
        with tempfile.TemporaryDirectory() as tmp:
            path = tp.to_json(Path(tmp) / 'truth.json')
            self.assertIn('stand-in', path.read_text(encoding='utf-8'))
            self.assertEqual(TrueParams.from_json(path), tp)

    def test_with_config(self):
        tp = TrueParams.preset('dg').with_config({'overlap_concentration': 50.0})
        self.assertEqual(tp.overlap_concentration, 50.0)
        self.assertEqual(tp.village_mean_low, 0.15)


class TestGenerateDataset(unittest.TestCase):
    def test_published_scale(self):
        dataset = generate_dataset(TrueParams.preset('dg'), seed=1)
        self.assertEqual(len(dataset), 224)
        self.assertEqual(len(dataset.village_ids), 8)
        self.assertTrue(all(0 <= row.dg_category <= 5 for row in dataset))
        self.assertTrue(all(row.mayu_yearly is None for row in dataset))

    def test_deterministic_per_seed(self):
        tp = TrueParams.preset('mayu')
        self.assertEqual(generate_dataset(tp, 3), generate_dataset(tp, 3))

    def test_distinct_seeds_distinct_data(self):
        tp = TrueParams.preset('mayu', n_per_village=5)
        fingerprints = {hash(generate_dataset(tp, seed).rows) for seed in range(20)}
        self.assertEqual(len(fingerprints), 20)

    def test_village_overlap_is_member_mean(self):
        dataset = generate_dataset(TrueParams.preset('ug'), seed=2)
        for village in dataset.village_ids:
            rows = [row for row in dataset if row.village_id == village]
            self.assertAlmostEqual(rows[0].overlap_V, np.mean([row.overlap_i for row in rows]))

    def test_null_truth_homogeneous(self):
        """Test villages share one outcome distribution when every effect is zero"""
        tp = TrueParams.preset('dg', betas={'overlap_i': 0.0, 'overlap_V': 0.0}, sigma_village=0.0,
                               n_per_village=200)
        dataset = generate_dataset(tp, seed=4)
        table = np.zeros((len(dataset.village_ids), 6))
        for row in dataset:
            table[dataset.village_ids.index(row.village_id), row.dg_category] += 1
        table = table[:, table.sum(axis=0) > 0]
        _, p_value, _, _ = stats.chi2_contingency(table)
        self.assertGreater(p_value, 0.01)

    def test_mayu_rises_with_village_overlap(self):
        dataset = generate_dataset(TrueParams.preset('mayu'), seed=5)
        overlap, mean_count = [], []
        for village in dataset.village_ids:
            rows = [row for row in dataset if row.village_id == village]
            overlap.append(rows[0].overlap_V)
            mean_count.append(np.mean([row.mayu_yearly for row in rows]))
        self.assertGreater(stats.spearmanr(overlap, mean_count)[0], 0.0)

    def test_inject_outlier(self):
        dataset = generate_dataset(TrueParams.preset('mayu'), seed=6)
        peak = max(row.mayu_yearly for row in dataset)
        spiked, person = inject_outlier(dataset, seed=1)
        row = next(row for row in spiked if row.person_id == person)
        self.assertEqual(row.mayu_yearly, 10 * peak)
        self.assertEqual(spiked.metadata['injected_outlier'], person)
        self.assertEqual(len(spiked), len(dataset))


class TestRecoveryReport(unittest.TestCase):
    def test_parameter_table(self):
        replicates = [
            {'index': 0, 'failed': False, 'estimates': {'b': {'mean': 1.2, 'lower': 0.5, 'upper': 2.0}}},
            {'index': 1, 'failed': False, 'estimates': {'b': {'mean': 0.2, 'lower': 0.1, 'upper': 0.4}}},
            {'index': 2, 'failed': True, 'estimates': {'b': {'mean': -9.0, 'lower': -10, 'upper': -8}}},
        ]
        report = RecoveryReport(truth={'b': 1.0}, n_replicates=3, level=0.89, replicates=replicates)
        row = report.parameter_table()['b']
        self.assertEqual(row['n_used'], 2)
        self.assertAlmostEqual(row['coverage'], 0.5)
        self.assertAlmostEqual(row['mean_bias'], -0.3)
        self.assertAlmostEqual(row['mean_ci_width'], 0.9)
        self.assertEqual(row['sign_agreement'], 2)
        self.assertEqual(report.to_dict()['failed_replicates'], [2])

    def test_too_few_replicates(self):
        with self.assertRaises(ConfigError):
            recovery_experiment(TrueParams.preset('mayu'), 5, fast_sampler())

    def test_sbc_ordinal_only(self):
        with self.assertRaises(ModelError):
            sbc_experiment(TrueParams.preset('mayu'), 10, fast_sampler())


@unittest.skipUnless(SLOW, SLOW_REASON)
class TestRecoveryExperiments(unittest.TestCase):
    def test_mayu_recovery_at_published_scale(self):
        report = recovery_experiment(TrueParams.preset('mayu'), 20, wide_prior_config(), seed=11)
        table = report.parameter_table()
        for name in ('b_overlap_i', 'b_overlap_V', 'sigma_village'):
            self.assertGreaterEqual(table[name]['coverage'], 0.70, name)
        for name in ('b_overlap_i', 'b_overlap_V'):
            self.assertGreaterEqual(table[name]['sign_agreement'], 18, name)

    def test_zero_sigma_concentrates(self):
        tp = TrueParams.preset('dg', sigma_village=0.0)
        draws = run_chains(tp.spec(WIDE_PRIORS), generate_dataset(tp, seed=12), fast_sampler())
        self.assertLess(float(np.median(draws.flat('sigma_village'))), 0.3)

    def test_more_villages_narrow_interval(self):
        small = recovery_experiment(TrueParams.preset('mayu'), 10, wide_prior_config(chains=2), seed=13)
        large = recovery_experiment(TrueParams.preset('mayu', n_villages=16), 10, wide_prior_config(chains=2),
                                    seed=13)
        self.assertLess(large.parameter_table()['b_overlap_V']['mean_ci_width'],
                        small.parameter_table()['b_overlap_V']['mean_ci_width'])

    def test_outlier_flagged(self):
        """Test a tenfold-maximum count is the observation flagged by Pareto k"""
        tp = TrueParams.preset('mayu')
        dataset, person = inject_outlier(generate_dataset(tp, seed=14), seed=2)
        draws = run_chains(tp.spec(WIDE_PRIORS), dataset, fast_sampler())
        report = loo_report(draws, dataset)
        ids = report.observation_ids
        self.assertGreater(report.k[ids.index(person)], 0.7)
        others = np.delete(report.k, ids.index(person))
        self.assertGreaterEqual(np.mean(others < 0.7), 0.95)

    def test_icc_attenuation(self):
        tp = TrueParams.preset('mayu', sigma_village=0.1)
        result = icc_attenuation_experiment(tp, 20, wide_prior_config(chains=2), seed=15)
        self.assertGreaterEqual(result['n_attenuated'], 18)

    def test_sbc_reduced_model(self):
        base = TrueParams.preset('dg', betas={'overlap_i': -2.0}, n_villages=4, n_per_village=28)
        result = sbc_experiment(base, 100, fast_sampler(n_chains=2, n_warmup=300, n_draws=300), seed=16)
        for name, row in result['parameters'].items():
            self.assertGreater(row['p_value'], 0.01, name)


if __name__ == '__main__':
    unittest.main()
