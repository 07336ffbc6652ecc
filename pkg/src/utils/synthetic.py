"""Synthetic village datasets drawn from known parameters, and the recovery experiments run on them.

Overlap values are drawn directly from per-village Beta distributions whose means are spread
evenly over a configurable range. This is a stand-in: no empirical overlap distribution is used.
"""
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
import json
import logging
import math

import numpy as np
from scipy import stats
from tqdm import tqdm

from ..errors import ConfigError, ModelError
from ..models.glmm import Family, ModelSpec, PriorSet, ordered_logistic_probs
from ..models.sampler import PosteriorDraws, SamplerConfig, chain_seed, run_chains
from .diagnostics import DEFAULT_LEVEL, interval
from .postfit import icc_from_draws
from .survey_processor import CoopDataset, CoopRow

logger = logging.getLogger(__name__)

OVERLAP_DISTRIBUTION_NOTE = ("stand-in: per-village Beta overlaps with means spread evenly over "
                             "[village_mean_low, village_mean_high]; not an empirical distribution")
REFERENCE_OVERLAP = 0.3
MIN_REPLICATES = 10

# (B1 individual overlap, B2 village overlap, sigma_village) per outcome and village count
_PRESET_EFFECTS = {
    8: {'dg': (-2.83, -23.10, 0.27), 'ug': (-1.16, -18.77, 0.49), 'mayu': (2.53, 24.35, 0.49)},
    9: {'dg': (-2.09, -0.25, 0.57), 'ug': (-1.47, -3.75, 0.59), 'mayu': (2.36, 23.72, 0.51)},
}
_BASELINE_CUTPOINTS = {
    'dg': (-1.5, -0.3, 0.8, 1.8, 2.6),
    'ug': (-2.2, -1.0, 0.0, 1.3, 2.2),
}
_PRESET_OUTCOMES = {'dg': 'dg_category', 'ug': 'ug_category', 'mayu': 'mayu_yearly'}
MAYU_REFERENCE_COUNT = 12.0
MAYU_THETA = 0.8


@dataclass(frozen=True)
class TrueParams:
    family: Family
    outcome: str
    betas: Dict[str, float]
    sigma_village: float
    cutpoints: Optional[Tuple[float, ...]] = None
    intercept: Optional[float] = None
    theta: Optional[float] = None
    n_villages: int = 8
    n_per_village: int = 28
    overlap_concentration: float = 20.0
    village_mean_low: float = 0.15
    village_mean_high: float = 0.45
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'family', Family.parse(self.family))
        if self.cutpoints is not None:
            object.__setattr__(self, 'cutpoints', tuple(float(c) for c in self.cutpoints))
        if self.sigma_village < 0:
            raise ModelError(f"sigma_village must be non-negative, got {self.sigma_village}",
                             parameter='sigma_village')
        if self.n_villages < 1 or self.n_per_village < 1:
            raise ModelError("Synthetic datasets need at least one village and one person per village")
        if not 0 < self.village_mean_low <= self.village_mean_high < 1:
            raise ModelError(f"Village overlap means must satisfy 0 < low <= high < 1, got "
                             f"[{self.village_mean_low}, {self.village_mean_high}]")
        if self.overlap_concentration <= 0:
            raise ModelError("overlap_concentration must be positive")
        if self.family is Family.ORDERED_LOGISTIC:
            if not self.cutpoints or np.any(np.diff(self.cutpoints) <= 0):
                raise ModelError(f"Ordered truths need strictly increasing cutpoints, got {self.cutpoints}",
                                 parameter='cutpoints')
        else:
            if self.intercept is None or self.theta is None or not self.theta > 0:
                raise ModelError("Negative binomial truths need an intercept and theta > 0")
        # validates outcome and covariate names
        self.spec()

    @property
    def n_categories(self) -> Optional[int]:
        return None if self.cutpoints is None else len(self.cutpoints) + 1

    def spec(self, priors: Optional[PriorSet] = None) -> ModelSpec:
        return ModelSpec(family=self.family, outcome=self.outcome, fixed_effects=tuple(self.betas),
                         n_categories=self.n_categories, priors=priors or PriorSet(), label=self.label)

    def truth(self) -> Dict[str, float]:
        """True values keyed by model parameter name"""
        values = {}
        if self.family is Family.ORDERED_LOGISTIC:
            values.update({f"cutpoint[{k}]": c for k, c in enumerate(self.cutpoints, start=1)})
        else:
            values['intercept'] = self.intercept
        values.update({f"b_{name}": beta for name, beta in self.betas.items()})
        values['sigma_village'] = self.sigma_village
        if self.family is Family.NEGATIVE_BINOMIAL:
            values['theta'] = self.theta
        return values

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload['family'] = self.family.value
        payload['cutpoints'] = None if self.cutpoints is None else list(self.cutpoints)
        payload['overlap_distribution'] = OVERLAP_DISTRIBUTION_NOTE
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> 'TrueParams':
        payload = {k: v for k, v in payload.items() if k != 'overlap_distribution'}
        return cls(**payload)

    def to_json(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    @classmethod
    def from_json(cls, path: Path) -> 'TrueParams':
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def preset(cls, name: str, villages: int = 8, **overrides) -> 'TrueParams':
        """Published-scale truths for 'dg', 'ug' or 'mayu' (8- or 9-village estimates).

        Cutpoints and the mayu intercept are chosen so that a person at overlap 0.3 in a
        village at overlap 0.3 sits at the baseline category distribution / 12 events a year.
        """
        name = name.lower()
        if villages not in _PRESET_EFFECTS or name not in _PRESET_EFFECTS[villages]:
            raise ConfigError(f"No preset {name!r} for {villages} villages")
        b1, b2, sigma = _PRESET_EFFECTS[villages][name]
        shift = (b1 + b2) * REFERENCE_OVERLAP
        base = dict(outcome=_PRESET_OUTCOMES[name], betas={'overlap_i': b1, 'overlap_V': b2},
                    sigma_village=sigma, n_villages=villages, label=f"{name}_{villages}v")
        if name == 'mayu':
            base.update(family=Family.NEGATIVE_BINOMIAL, intercept=math.log(MAYU_REFERENCE_COUNT) - shift,
                        theta=MAYU_THETA)
        else:
            base.update(family=Family.ORDERED_LOGISTIC,
                        cutpoints=tuple(c + shift for c in _BASELINE_CUTPOINTS[name]))
        base.update(overrides)
        return cls(**base)

    def with_config(self, config: Mapping[str, Any]) -> 'TrueParams':
        return replace(self, overlap_concentration=config.get('overlap_concentration', self.overlap_concentration),
                       village_mean_low=config.get('village_mean_low', self.village_mean_low),
                       village_mean_high=config.get('village_mean_high', self.village_mean_high))


def _village_means(tp: TrueParams) -> np.ndarray:
    if tp.n_villages == 1:
        return np.array([(tp.village_mean_low + tp.village_mean_high) / 2.0])
    return np.linspace(tp.village_mean_low, tp.village_mean_high, tp.n_villages)


def generate_dataset(true_params: TrueParams, seed: int) -> CoopDataset:
    """Simulate one dataset through the model likelihoods; deterministic per seed"""
    tp = true_params
    rng = np.random.default_rng(seed)
    village_ids = [f"v{j + 1:02d}" for j in range(tp.n_villages)]
    effects = rng.normal(0.0, tp.sigma_village, tp.n_villages) if tp.sigma_village > 0 \
        else np.zeros(tp.n_villages)
    sizes = rng.integers(100, 500, tp.n_villages)
    kappa = tp.overlap_concentration

    rows: List[CoopRow] = []
    for j, (village, mean) in enumerate(zip(village_ids, _village_means(tp))):
        overlaps = rng.beta(mean * kappa, (1.0 - mean) * kappa, tp.n_per_village)
        overlap_V = float(np.mean(overlaps))
        village_size = float(sizes[j])
        covariates = {'overlap_i': overlaps, 'overlap_V': np.full_like(overlaps, overlap_V),
                      'size_V': np.full_like(overlaps, village_size / 100.0)}
        eta = effects[j] + sum(beta * covariates[name] for name, beta in tp.betas.items())

        if tp.family is Family.ORDERED_LOGISTIC:
            probs = ordered_logistic_probs(eta, tp.cutpoints)
            u = rng.uniform(size=(tp.n_per_village, 1))
            outcomes = np.minimum(np.sum(u > np.cumsum(probs, axis=-1), axis=-1), probs.shape[-1] - 1)
        else:
            mu = np.exp(tp.intercept + eta)
            outcomes = rng.negative_binomial(tp.theta, tp.theta / (tp.theta + mu))

        for i in range(tp.n_per_village):
            rows.append(CoopRow(person_id=f"{village}-p{i + 1:03d}", village_id=village,
                                overlap_i=float(overlaps[i]), overlap_V=overlap_V,
                                village_size=village_size,
                                **{tp.outcome: int(outcomes[i])}))

    metadata = {
        'synthetic': True,
        'seed': int(seed),
        'truth_label': tp.label,
        'n_rows': len(rows),
        'n_villages': tp.n_villages,
        'overlap_distribution': OVERLAP_DISTRIBUTION_NOTE,
        'village_overlap_basis': 'mean over simulated individuals',
        'excluded_person_ids': [],
        'excluded_village_ids': [],
    }
    return CoopDataset(rows=tuple(rows), metadata=metadata)


def inject_outlier(dataset: CoopDataset, outcome: str = 'mayu_yearly', factor: int = 10,
                   seed: int = 0) -> Tuple[CoopDataset, str]:
    """Replace one randomly chosen count with ``factor`` times the maximum count"""
    values = [getattr(row, outcome) for row in dataset.rows]
    observed = [i for i, v in enumerate(values) if v is not None]
    if not observed:
        raise ModelError(f"Dataset has no {outcome} values")
    target = observed[int(np.random.default_rng(seed).integers(len(observed)))]
    peak = max(values[i] for i in observed)
    rows = list(dataset.rows)
    rows[target] = replace(rows[target], **{outcome: int(factor * max(peak, 1))})
    metadata = dict(dataset.metadata, injected_outlier=rows[target].person_id)
    return CoopDataset(rows=tuple(rows), metadata=metadata), rows[target].person_id


def _sampler_config(config: Union[SamplerConfig, Mapping[str, Any]], seed: int) -> SamplerConfig:
    if isinstance(config, SamplerConfig):
        base = config
    else:
        base = SamplerConfig.from_config(config)
    return replace(base, seed=seed, n_jobs=1, progress=False)


def _priors(config) -> PriorSet:
    return PriorSet() if isinstance(config, SamplerConfig) else PriorSet.from_config(config)


def _run_replicates(worker, n_replicates: int, n_jobs: int, progress: bool, desc: str) -> List[Dict[str, Any]]:
    with tqdm(total=n_replicates, desc=desc, disable=not progress) as pbar:
        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as executor:
                results = []
                for result in executor.map(worker, range(n_replicates)):
                    results.append(result)
                    pbar.update(1)
                return results
        results = []
        for index in range(n_replicates):
            results.append(worker(index))
            pbar.update(1)
        return results


def _jobs(config) -> Tuple[int, bool]:
    if isinstance(config, SamplerConfig):
        return config.n_jobs, config.progress
    return int(config.get('n_jobs', 1)), bool(config.get('progress', False))


@dataclass
class RecoveryReport:
    truth: Dict[str, float]
    n_replicates: int
    level: float
    replicates: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def used(self) -> List[Dict[str, Any]]:
        return [r for r in self.replicates if not r['failed']]

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.replicates if r['failed'])

    def parameter_table(self) -> Dict[str, Dict[str, Any]]:
        table = {}
        used = self.used
        for name, true_value in self.truth.items():
            estimates = [r['estimates'][name] for r in used if name in r['estimates']]
            if not estimates:
                continue
            means = np.array([e['mean'] for e in estimates])
            lowers = np.array([e['lower'] for e in estimates])
            uppers = np.array([e['upper'] for e in estimates])
            table[name] = {
                'truth': true_value,
                'n_used': len(estimates),
                'coverage': float(np.mean((lowers <= true_value) & (true_value <= uppers))),
                'mean_bias': float(np.mean(means - true_value)),
                'mean_ci_width': float(np.mean(uppers - lowers)),
                'median_estimate': float(np.median(means)),
                'sign_agreement': int(np.sum(np.sign(means) == np.sign(true_value))),
            }
        return table

    def to_dict(self) -> Dict[str, Any]:
        return {'n_replicates': self.n_replicates, 'n_failed': self.n_failed,
                'failed_replicates': [r['index'] for r in self.replicates if r['failed']],
                'level': self.level, 'parameters': self.parameter_table(),
                'replicates': self.replicates}

    def to_json(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')
        return path


def _estimates(draws: PosteriorDraws, names: Sequence[str], level: float) -> Dict[str, Dict[str, float]]:
    out = {}
    for name in names:
        if name not in draws.param_names:
            continue
        values = draws.flat(name)
        lower, upper = interval(values, level)
        out[name] = {'mean': float(np.mean(values)), 'median': float(np.median(values)),
                     'lower': lower, 'upper': upper}
    return out


def recovery_experiment(true_params: TrueParams, n_replicates: int,
                        config: Union[SamplerConfig, Mapping[str, Any]], seed: int = 0,
                        level: float = DEFAULT_LEVEL) -> RecoveryReport:
    """Simulate, refit and score interval coverage for ``n_replicates`` datasets.

    Replicates flagged failed by the sampler are kept in the report but excluded from the table.
    """
    if n_replicates < MIN_REPLICATES:
        raise ConfigError(f"Recovery needs at least {MIN_REPLICATES} replicates, got {n_replicates}")
    truth = true_params.truth()
    spec = true_params.spec(_priors(config))
    n_jobs, progress = _jobs(config)

    def replicate(index: int) -> Dict[str, Any]:
        replicate_seed = chain_seed(seed, index)
        dataset = generate_dataset(true_params, replicate_seed)
        draws = run_chains(spec, dataset, _sampler_config(config, replicate_seed))
        if draws.failed:
            logger.warning(f"Replicate {index} flagged failed ({draws.n_divergent} divergences)")
        return {'index': index, 'seed': replicate_seed, 'failed': bool(draws.failed),
                'n_divergent': draws.n_divergent, 'estimates': _estimates(draws, list(truth), level)}

    logger.info(f"Recovery experiment: {n_replicates} replicates of {spec.name}")
    results = _run_replicates(replicate, n_replicates, n_jobs, progress, 'recovery')
    report = RecoveryReport(truth=truth, n_replicates=n_replicates, level=level, replicates=results)
    if report.n_failed:
        logger.warning(f"{report.n_failed} of {n_replicates} replicates failed and were excluded")
    return report


def icc_attenuation_experiment(true_params: TrueParams, n_replicates: int,
                               config: Union[SamplerConfig, Mapping[str, Any]], seed: int = 0,
                               level: float = DEFAULT_LEVEL) -> Dict[str, Any]:
    """Fit the intercept-only and covariate-adjusted models to each replicate and compare ICCs"""
    if n_replicates < 1:
        raise ConfigError("n_replicates must be positive")
    priors = _priors(config)
    adjusted_spec = true_params.spec(priors)
    null_spec = replace(adjusted_spec, fixed_effects=(), label=None)
    n_jobs, progress = _jobs(config)

    def replicate(index: int) -> Dict[str, Any]:
        replicate_seed = chain_seed(seed, index)
        dataset = generate_dataset(true_params, replicate_seed)
        sampler = _sampler_config(config, replicate_seed)
        null_draws = run_chains(null_spec, dataset, sampler)
        adjusted_draws = run_chains(adjusted_spec, dataset, sampler)
        null_icc = icc_from_draws(null_draws, null_draws.spec, dataset, level).icc
        adjusted_icc = icc_from_draws(adjusted_draws, adjusted_draws.spec, dataset, level).icc
        return {'index': index, 'seed': replicate_seed, 'null_icc': null_icc,
                'adjusted_icc': adjusted_icc, 'attenuated': bool(adjusted_icc < null_icc),
                'failed': bool(null_draws.failed or adjusted_draws.failed)}

    results = _run_replicates(replicate, n_replicates, n_jobs, progress, 'icc attenuation')
    return {'n_replicates': n_replicates,
            'n_attenuated': sum(1 for r in results if r['attenuated']),
            'n_failed': sum(1 for r in results if r['failed']),
            'replicates': results}


def _prior_truth(base: TrueParams, priors: PriorSet, rng: np.random.Generator) -> TrueParams:
    n_cut = len(base.cutpoints)
    cutpoints = np.sort(stats.t.rvs(priors.intercept_df, scale=priors.intercept_scale,
                                    size=n_cut, random_state=rng))
    betas = {name: float(rng.normal(0.0, priors.beta_scale)) for name in base.betas}
    sigma = abs(float(stats.t.rvs(priors.sigma_df, scale=priors.sigma_scale, random_state=rng)))
    return replace(base, cutpoints=tuple(cutpoints.tolist()), betas=betas, sigma_village=sigma)


def sbc_experiment(base_params: TrueParams, n_replicates: int,
                   config: Union[SamplerConfig, Mapping[str, Any]], seed: int = 0,
                   n_rank_draws: int = 99, n_bins: int = 10) -> Dict[str, Any]:
    """Simulation-based calibration: truths drawn from the prior, rank of each truth among
    thinned posterior draws, chi-square test of rank uniformity per parameter.

    Only the ordered-logistic family is supported; its priors are proper and well scaled.
    """
    if base_params.family is not Family.ORDERED_LOGISTIC:
        raise ModelError("Simulation-based calibration runs on ordered-logistic models only")
    if (n_rank_draws + 1) % n_bins != 0:
        raise ConfigError(f"n_rank_draws + 1 ({n_rank_draws + 1}) must be divisible by n_bins ({n_bins})")
    priors = _priors(config)
    n_jobs, progress = _jobs(config)

    def replicate(index: int) -> Dict[str, Any]:
        replicate_seed = chain_seed(seed, index)
        truth_params = _prior_truth(base_params, priors, np.random.default_rng(replicate_seed))
        dataset = generate_dataset(truth_params, replicate_seed)
        draws = run_chains(truth_params.spec(priors), dataset, _sampler_config(config, replicate_seed))
        ranks = {}
        for name, true_value in truth_params.truth().items():
            values = draws.flat(name)
            thinned = values[np.linspace(0, values.size - 1, n_rank_draws).astype(int)]
            ranks[name] = int(np.sum(thinned < true_value))
        return {'index': index, 'seed': replicate_seed, 'ranks': ranks, 'failed': bool(draws.failed)}

    results = _run_replicates(replicate, n_replicates, n_jobs, progress, 'sbc')
    tests = {}
    for name in base_params.truth():
        ranks = np.array([r['ranks'][name] for r in results])
        counts = np.bincount(ranks * n_bins // (n_rank_draws + 1), minlength=n_bins)
        statistic, p_value = stats.chisquare(counts)
        tests[name] = {'counts': counts.tolist(), 'chi2': float(statistic), 'p_value': float(p_value)}
    return {'n_replicates': n_replicates, 'n_rank_draws': n_rank_draws, 'n_bins': n_bins,
            'parameters': tests, 'replicates': results}
