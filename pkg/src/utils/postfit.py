"""Quantities derived from posterior draws: ICCs, PSIS Pareto-k, marginal effects and predictions."""
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union
from dataclasses import dataclass, field
import logging
import math

import numpy as np
import pandas as pd
from scipy.special import polygamma

from ..errors import DiagnosticsError, ModelError
from ..models.glmm import ModelSpec, PosteriorModel, ordered_logistic_probs
from .diagnostics import DEFAULT_LEVEL, interval, interval_columns
from .survey_processor import CoopDataset, CoopRow

logger = logging.getLogger(__name__)

LOGISTIC_LEVEL1_VARIANCE = 3.29
PARETO_K_THRESHOLD = 0.7
PARETO_TAIL_FRACTION = 0.2
MIN_PSIS_DRAWS = 100
MIN_TAIL_SAMPLES = 5
ORDINAL_ICC_CAVEAT = ("The latent-scale ordinal ICC can be much lower than the true ICC; "
                      "no correction is applied.")


@dataclass
class ICCReport:
    label: str
    var_village: float
    var_level1: float
    icc: float
    icc_lower: Optional[float] = None
    icc_upper: Optional[float] = None
    level: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.icc < 1.0 and not math.isclose(self.icc, 1.0):
            raise DiagnosticsError(f"ICC outside [0, 1): {self.icc}")

    def to_dict(self) -> Dict[str, Any]:
        payload = {'label': self.label, 'var_village': self.var_village,
                   'var_level1': self.var_level1, 'icc': self.icc}
        if self.level is not None:
            lower_name, upper_name = interval_columns(self.level)
            payload.update({lower_name: self.icc_lower, upper_name: self.icc_upper,
                            'summary': 'posterior median'})
        payload['metadata'] = dict(self.metadata)
        return payload


def trigamma(x):
    return polygamma(1, x)


def _check_variance(var_village: float) -> float:
    if not var_village >= 0:
        raise DiagnosticsError(f"Village variance must be non-negative, got {var_village}")
    return float(var_village)


def icc_ordinal(var_village: float, label: str = 'ordered_logistic') -> ICCReport:
    """Latent-scale ICC with the logistic level-1 variance"""
    var_village = _check_variance(var_village)
    return ICCReport(label=label, var_village=var_village, var_level1=LOGISTIC_LEVEL1_VARIANCE,
                     icc=var_village / (var_village + LOGISTIC_LEVEL1_VARIANCE),
                     metadata={'caveat': ORDINAL_ICC_CAVEAT})


def negbin_level1_variance(lam, theta):
    """trigamma((1/lambda + 1/theta)^-1); zero in the limit lambda, theta -> inf"""
    lam = np.asarray(lam, dtype=float)
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide='ignore'):
        return trigamma(1.0 / (1.0 / lam + 1.0 / theta))


def icc_negbin(var_village: float, lam: float, theta: float, label: str = 'negative_binomial') -> ICCReport:
    var_village = _check_variance(var_village)
    if not lam > 0 or not theta > 0:
        raise DiagnosticsError(f"lambda and theta must be positive, got lambda={lam}, theta={theta}")
    var_level1 = float(negbin_level1_variance(lam, theta))
    total = var_village + var_level1
    return ICCReport(label=label, var_village=var_village, var_level1=var_level1,
                     icc=var_village / total if total > 0 else 0.0,
                     metadata={'lambda': float(lam), 'theta': float(theta)})


def _draw_matrix(draws) -> np.ndarray:
    if hasattr(draws, 'flat'):
        return draws.flat()
    return np.atleast_2d(np.asarray(draws, dtype=float))


def _param_names(draws, model: PosteriorModel) -> List[str]:
    return list(getattr(draws, 'param_names', model.param_names))


def _resolve_spec(draws, spec: Optional[ModelSpec]) -> ModelSpec:
    fitted = getattr(draws, 'spec', None)
    if spec is None and fitted is None:
        raise ModelError("A model spec is required")
    if spec is None:
        return fitted
    if fitted is not None and spec.n_categories is None:
        return fitted
    return spec


def icc_from_draws(draws, spec: Optional[ModelSpec], dataset: CoopDataset,
                   level: float = DEFAULT_LEVEL) -> ICCReport:
    """ICC computed per draw and summarized by the posterior median and central interval.

    For the negative binomial family lambda is the sample mean of the outcome.
    """
    spec = _resolve_spec(draws, spec)
    sigma = np.asarray(draws.flat('sigma_village'))
    var_village = sigma ** 2

    if spec.is_ordinal:
        var_level1 = np.full_like(var_village, LOGISTIC_LEVEL1_VARIANCE)
        metadata = {'caveat': ORDINAL_ICC_CAVEAT}
    else:
        outcome = dataset.complete_cases(spec.outcome).outcome_array(spec.outcome)
        lam = float(np.mean(outcome)) if outcome.size else float('nan')
        if not lam > 0:
            raise DiagnosticsError(f"Mean of {spec.outcome} must be positive for the ICC, got {lam}")
        theta = np.asarray(draws.flat('theta'))
        var_level1 = negbin_level1_variance(lam, theta)
        metadata = {'lambda': lam, 'lambda_source': 'sample mean of the outcome'}

    per_draw = var_village / (var_village + var_level1)
    lower, upper = interval(per_draw, level)
    metadata.update({'model': spec.name, 'n_draws': int(per_draw.size)})
    report = ICCReport(label=spec.name, var_village=float(np.median(var_village)),
                       var_level1=float(np.median(var_level1)), icc=float(np.median(per_draw)),
                       icc_lower=lower, icc_upper=upper, level=level, metadata=metadata)
    logger.info(f"ICC for {spec.name}: {report.icc:.4f} [{lower:.4f}, {upper:.4f}]")
    return report


def pointwise_loglik(draws, dataset: CoopDataset, spec: Optional[ModelSpec] = None) -> np.ndarray:
    """Draws x observations log-likelihood matrix over rows carrying the outcome"""
    spec = _resolve_spec(draws, spec)
    model = PosteriorModel(spec, dataset)
    names = _param_names(draws, model)
    if names != model.param_names:
        raise ModelError(f"Draws do not match model {spec.name}: parameters {names} "
                         f"vs {model.param_names}")
    return model.pointwise_loglik(_draw_matrix(draws))


# ---------------------------------------------------------------------------
# PSIS

def _gpdfit(x: np.ndarray):
    """Empirical-Bayes generalized Pareto fit to sorted positive exceedances; returns (k, sigma)"""
    prior_bs, prior_k = 3.0, 10.0
    n = x.size
    m_est = 30 + int(n ** 0.5)
    b_ary = 1.0 - np.sqrt(m_est / (np.arange(1, m_est + 1) - 0.5))
    b_ary /= prior_bs * x[int(n / 4 + 0.5) - 1]
    b_ary += 1.0 / x[-1]

    with np.errstate(over='ignore', divide='ignore', invalid='ignore'):
        k_ary = np.log1p(-b_ary[:, None] * x).mean(axis=1)
        len_scale = n * (np.log(-(b_ary / k_ary)) - k_ary - 1.0)
        weights = 1.0 / np.exp(len_scale - len_scale[:, None]).sum(axis=1)

    keep = weights >= 10 * np.finfo(float).eps
    weights, b_ary = weights[keep], b_ary[keep]
    weights /= weights.sum()
    b_post = float(np.sum(b_ary * weights))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return k_post, sigma


def _pareto_k_single(log_ratios: np.ndarray) -> float:
    log_ratios = log_ratios - np.max(log_ratios)
    if np.ptp(log_ratios) == 0.0:
        return 0.0
    n_tail = int(math.ceil(PARETO_TAIL_FRACTION * log_ratios.size))
    ordered = np.sort(log_ratios)
    cutoff = ordered[-n_tail - 1]
    exceedances = np.exp(ordered[-n_tail:]) - np.exp(cutoff)
    exceedances = exceedances[exceedances > 0]
    if exceedances.size < MIN_TAIL_SAMPLES:
        return float('nan')
    k, _ = _gpdfit(exceedances)
    return float(k)


@dataclass
class ParetoKReport:
    k: np.ndarray
    threshold: float = PARETO_K_THRESHOLD
    observation_ids: Optional[List[str]] = None

    @property
    def flagged(self) -> np.ndarray:
        with np.errstate(invalid='ignore'):
            return self.k > self.threshold

    @property
    def flagged_ids(self) -> List[str]:
        ids = self.observation_ids or [str(i) for i in range(self.k.size)]
        return [ids[i] for i in np.flatnonzero(self.flagged)]

    def to_dict(self) -> Dict[str, Any]:
        ids = self.observation_ids or [str(i) for i in range(self.k.size)]
        observations = [{'id': oid, 'k': None if np.isnan(k) else float(k), 'flagged': bool(flag)}
                        for oid, k, flag in zip(ids, self.k, self.flagged)]
        return {'threshold': self.threshold,
                'tail_fraction': PARETO_TAIL_FRACTION,
                'n_observations': int(self.k.size),
                'n_flagged': int(np.sum(self.flagged)),
                'n_missing': int(np.sum(np.isnan(self.k))),
                'flagged_ids': self.flagged_ids,
                'observations': observations}


def psis_pareto_k(loglik: np.ndarray, threshold: float = PARETO_K_THRESHOLD,
                  observation_ids: Optional[Sequence[str]] = None) -> ParetoKReport:
    """Tail shape of the leave-one-out importance ratios exp(-loglik), one per observation"""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.ndim != 2:
        raise DiagnosticsError(f"Expected a draws x observations matrix, got shape {loglik.shape}")
    if loglik.shape[0] < MIN_PSIS_DRAWS:
        raise DiagnosticsError(f"PSIS needs >= {MIN_PSIS_DRAWS} draws, got {loglik.shape[0]}")
    if observation_ids is not None and len(observation_ids) != loglik.shape[1]:
        raise DiagnosticsError("observation_ids length does not match the log-likelihood matrix")

    k = np.array([_pareto_k_single(-loglik[:, i]) for i in range(loglik.shape[1])])
    report = ParetoKReport(k=k, threshold=threshold,
                           observation_ids=None if observation_ids is None else list(observation_ids))
    if np.any(report.flagged):
        logger.warning(f"{int(np.sum(report.flagged))} observations with Pareto k > {threshold}: "
                       f"{', '.join(report.flagged_ids)}")
    return report


def loo_report(draws, dataset: CoopDataset, spec: Optional[ModelSpec] = None,
               threshold: float = PARETO_K_THRESHOLD) -> ParetoKReport:
    spec = _resolve_spec(draws, spec)
    loglik = pointwise_loglik(draws, dataset, spec)
    person_ids = [row.person_id for row in dataset.complete_cases(spec.outcome).rows]
    return psis_pareto_k(loglik, threshold=threshold, observation_ids=person_ids)


# ---------------------------------------------------------------------------
# population-level curves and prediction

class _DrawColumns:
    """Parameter blocks of a draw matrix looked up by name"""

    def __init__(self, draws, spec: ModelSpec):
        self.matrix = _draw_matrix(draws)
        self.names = list(draws.param_names)
        self.spec = spec

    def _col(self, name: str) -> np.ndarray:
        try:
            return self.matrix[:, self.names.index(name)]
        except ValueError:
            raise ModelError(f"Draws carry no parameter {name}", parameter=name)

    def betas(self) -> np.ndarray:
        if not self.spec.fixed_effects:
            return np.zeros((self.matrix.shape[0], 0))
        return np.column_stack([self._col(f"b_{name}") for name in self.spec.fixed_effects])

    def cutpoints(self) -> np.ndarray:
        names = sorted((n for n in self.names if n.startswith('cutpoint[')),
                       key=lambda n: int(n[len('cutpoint['):-1]))
        return np.column_stack([self._col(n) for n in names])

    def intercept(self) -> np.ndarray:
        return self._col('intercept')

    def theta(self) -> np.ndarray:
        return self._col('theta')

    def sigma(self) -> np.ndarray:
        return self._col('sigma_village')

    def village_effect(self, village_id: str) -> Optional[np.ndarray]:
        name = f"a_village[{village_id}]"
        return self._col(name) if name in self.names else None


def covariate_means(dataset: CoopDataset, spec: ModelSpec) -> Dict[str, float]:
    rows = dataset.complete_cases(spec.outcome).rows
    if not rows:
        raise ModelError(f"No rows with {spec.outcome} to average covariates over")
    return {name: float(np.mean([row.covariate(name) for row in rows])) for name in spec.fixed_effects}


def marginal_effect(draws, spec: Optional[ModelSpec], covariate: str, grid: Sequence[float],
                    dataset: Optional[CoopDataset] = None, held_at: Optional[Mapping[str, float]] = None,
                    level: float = DEFAULT_LEVEL) -> pd.DataFrame:
    """Population-level (a_V = 0) expected outcome over ``grid`` with other covariates held fixed.

    Negative binomial: expected count exp(eta). Ordered logistic: one row per (category, grid value)
    holding that category's probability.
    """
    spec = _resolve_spec(draws, spec)
    if covariate not in spec.fixed_effects:
        raise ModelError(f"Covariate {covariate} is not a fixed effect of {spec.name}", parameter=covariate)
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise DiagnosticsError("Marginal effect grid is empty")
    if held_at is None:
        if dataset is None:
            raise ModelError("Either a dataset or held_at values are required")
        held_at = covariate_means(dataset, spec)

    X = np.array([[value if name == covariate else held_at[name] for name in spec.fixed_effects]
                  for value in grid])
    columns = _DrawColumns(draws, spec)
    eta = columns.betas() @ X.T
    lower_name, upper_name = interval_columns(level)

    rows = []
    if spec.is_ordinal:
        probs = ordered_logistic_probs(eta, columns.cutpoints()[:, None, :])
        for category in range(probs.shape[2]):
            for g, value in enumerate(grid):
                lower, upper = interval(probs[:, g, category], level)
                rows.append({'category': category, 'grid_value': float(value),
                             'mean': float(np.mean(probs[:, g, category])),
                             lower_name: lower, upper_name: upper})
        return pd.DataFrame(rows, columns=['category', 'grid_value', 'mean', lower_name, upper_name])

    expected = np.exp(eta + columns.intercept()[:, None])
    for g, value in enumerate(grid):
        lower, upper = interval(expected[:, g], level)
        rows.append({'grid_value': float(value), 'mean': float(np.mean(expected[:, g])),
                     lower_name: lower, upper_name: upper})
    return pd.DataFrame(rows, columns=['grid_value', 'mean', lower_name, upper_name])


def default_grid(dataset: CoopDataset, spec: ModelSpec, covariate: str, n_points: int = 50) -> np.ndarray:
    """Evenly spaced grid over the observed range of a covariate"""
    values = [row.covariate(covariate) for row in dataset.complete_cases(spec.outcome).rows]
    if not values:
        raise ModelError(f"No observed values of {covariate}")
    return np.linspace(min(values), max(values), n_points)


def posterior_predict(draws, spec: Optional[ModelSpec], new_rows: Sequence[Union[CoopRow, Mapping[str, Any]]],
                      seed: int = 0) -> np.ndarray:
    """Predictive draws (draws x rows).

    Rows from a fitted village reuse that village's effect; rows from other villages
    draw a fresh effect from N(0, sigma_village).
    """
    spec = _resolve_spec(draws, spec)
    rng = np.random.default_rng(seed)
    columns = _DrawColumns(draws, spec)
    n_draws = columns.matrix.shape[0]
    betas = columns.betas()
    sigma = columns.sigma()

    X = np.zeros((len(new_rows), len(spec.fixed_effects)))
    effects = np.zeros((n_draws, len(new_rows)))
    for j, row in enumerate(new_rows):
        get = row.covariate if isinstance(row, CoopRow) else row.get
        for k, name in enumerate(spec.fixed_effects):
            value = get(name)
            if value is None:
                raise ModelError(f"New row {j} lacks covariate {name}", row=j, parameter=name)
            X[j, k] = value
        village = row.village_id if isinstance(row, CoopRow) else row.get('village_id')
        fitted = columns.village_effect(village) if village is not None else None
        effects[:, j] = fitted if fitted is not None else rng.normal(0.0, 1.0, n_draws) * sigma

    eta = betas @ X.T + effects
    if spec.is_ordinal:
        probs = ordered_logistic_probs(eta, columns.cutpoints()[:, None, :])
        cumulative = np.cumsum(probs, axis=-1)
        u = rng.uniform(size=eta.shape)[..., None]
        return np.minimum(np.sum(u > cumulative, axis=-1), probs.shape[-1] - 1)

    mu = np.exp(eta + columns.intercept()[:, None])
    theta = columns.theta()[:, None]
    return rng.negative_binomial(np.broadcast_to(theta, mu.shape), theta / (theta + mu))
