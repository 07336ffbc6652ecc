"""Model specifications, likelihoods, priors and exact gradients for the two outcome families.

Both families share a village random intercept ``a_V = sigma_village * z_V`` (non-centered).
The sampler works on an unconstrained vector:

* ordered logistic: ``[tau_1, log(tau_2 - tau_1), ..., betas, log sigma, z_1..z_J]``
* negative binomial: ``[intercept, betas, log sigma, log theta, z_1..z_J]``
"""
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
import json
import logging
import math

import numpy as np
from scipy import stats
from scipy.special import digamma, expit, gammaln, log_expit

from ..errors import ModelError
from ..utils.survey_processor import CoopDataset, CoopRow

logger = logging.getLogger(__name__)

COVARIATES = ('overlap_i', 'overlap_V', 'size_V')
ORDINAL_OUTCOMES = ('dg_category', 'ug_category')
COUNT_OUTCOMES = ('mayu_yearly',)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class Family(str, Enum):
    ORDERED_LOGISTIC = 'ordered_logistic'
    NEGATIVE_BINOMIAL = 'negative_binomial'

    @classmethod
    def parse(cls, value: Union[str, 'Family']) -> 'Family':
        aliases = {'ordinal': cls.ORDERED_LOGISTIC, 'negbin': cls.NEGATIVE_BINOMIAL,
                   'nb': cls.NEGATIVE_BINOMIAL}
        if isinstance(value, str) and value.lower() in aliases:
            return aliases[value.lower()]
        try:
            return cls(value)
        except ValueError:
            raise ModelError(f"Unknown family {value!r}")


@dataclass(frozen=True)
class PriorSet:
    """beta ~ normal(0, s_b); cutpoints/intercept ~ student_t(3, 0, s_0);
    sigma_village ~ half-student_t(3, 0, s_sigma); theta ~ gamma(shape, rate)"""
    beta_scale: float = 5.0
    intercept_df: float = 3.0
    intercept_scale: float = 10.0
    sigma_df: float = 3.0
    sigma_scale: float = 2.5
    theta_shape: float = 0.01
    theta_rate: float = 0.01

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ModelError(f"Prior parameter {name} must be positive, got {value}", parameter=name)

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> 'PriorSet':
        return cls(beta_scale=config.get('prior_beta_scale', cls.beta_scale),
                   intercept_scale=config.get('prior_intercept_scale', cls.intercept_scale),
                   sigma_scale=config.get('prior_sigma_scale', cls.sigma_scale),
                   theta_shape=config.get('prior_theta_shape', cls.theta_shape),
                   theta_rate=config.get('prior_theta_rate', cls.theta_rate))


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    outcome: str
    fixed_effects: Tuple[str, ...] = ('overlap_i', 'overlap_V')
    n_categories: Optional[int] = None
    priors: PriorSet = field(default_factory=PriorSet)
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'family', Family.parse(self.family))
        object.__setattr__(self, 'fixed_effects', tuple(self.fixed_effects))
        allowed = ORDINAL_OUTCOMES if self.is_ordinal else COUNT_OUTCOMES
        if self.outcome not in allowed:
            raise ModelError(f"Outcome {self.outcome} cannot be modelled as {self.family.value}; "
                             f"expected one of {allowed}")
        unknown = [name for name in self.fixed_effects if name not in COVARIATES]
        if unknown:
            raise ModelError(f"Unknown fixed effects {unknown}; expected names from {COVARIATES}")
        if len(set(self.fixed_effects)) != len(self.fixed_effects):
            raise ModelError(f"Duplicate fixed effects in {self.fixed_effects}")
        if self.is_ordinal and self.n_categories is not None and self.n_categories < 2:
            raise ModelError(f"Ordered logistic models need K >= 2 categories, got {self.n_categories}")

    @property
    def is_ordinal(self) -> bool:
        return self.family is Family.ORDERED_LOGISTIC

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        effects = '+'.join(self.fixed_effects) if self.fixed_effects else 'null'
        return f"{self.outcome}~{effects}"

    def validate_against(self, dataset: CoopDataset) -> None:
        if 'size_V' in self.fixed_effects and not dataset.has_village_size:
            raise ModelError("size_V requested but the dataset carries no village sizes",
                             parameter='size_V')

    def to_dict(self) -> Dict[str, Any]:
        return {'family': self.family.value, 'outcome': self.outcome,
                'fixed_effects': list(self.fixed_effects), 'n_categories': self.n_categories,
                'priors': asdict(self.priors), 'label': self.label}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> 'ModelSpec':
        return cls(family=payload['family'], outcome=payload['outcome'],
                   fixed_effects=tuple(payload.get('fixed_effects', ())),
                   n_categories=payload.get('n_categories'),
                   priors=PriorSet(**payload.get('priors', {})),
                   label=payload.get('label'))

    def to_json(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    @classmethod
    def from_json(cls, path: Path) -> 'ModelSpec':
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class OrderedLogisticParams:
    cutpoints: Tuple[float, ...]
    betas: Dict[str, float]
    village_effects: Dict[str, float]
    sigma_village: float

    def __post_init__(self):
        cuts = np.asarray(self.cutpoints, dtype=float)
        if cuts.size and np.any(np.diff(cuts) <= 0):
            raise ModelError(f"Cutpoints must be strictly increasing, got {tuple(cuts)}",
                             parameter='cutpoints')
        if not self.sigma_village > 0:
            raise ModelError(f"sigma_village must be positive, got {self.sigma_village}",
                             parameter='sigma_village')


@dataclass(frozen=True)
class NegBinParams:
    intercept: float
    betas: Dict[str, float]
    village_effects: Dict[str, float]
    sigma_village: float
    theta: float

    def __post_init__(self):
        if not self.sigma_village > 0:
            raise ModelError(f"sigma_village must be positive, got {self.sigma_village}",
                             parameter='sigma_village')
        if not self.theta > 0:
            raise ModelError(f"theta must be positive, got {self.theta}", parameter='theta')


Params = Union[OrderedLogisticParams, NegBinParams]


# ---------------------------------------------------------------------------
# likelihood kernels

def _log1mexp(x: np.ndarray) -> np.ndarray:
    """log(1 - exp(x)) for x <= 0"""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide='ignore'):
        return np.where(x > -math.log(2.0), np.log(-np.expm1(np.minimum(x, -1e-300))),
                        np.log1p(-np.exp(x)))


def _ordinal_interval_logp(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """log(F(upper) - F(lower)) for logistic F, lower < upper, either may be infinite"""
    log_f_up, log_f_lo = log_expit(upper), log_expit(lower)
    log_s_up, log_s_lo = log_expit(-upper), log_expit(-lower)
    with np.errstate(invalid='ignore'):
        upper_tail = log_s_lo + _log1mexp(log_s_up - log_s_lo)
        lower_tail = log_f_up + _log1mexp(log_f_lo - log_f_up)
    return np.where(lower > 0, upper_tail, lower_tail)


def _logistic_density_ratio(x: np.ndarray, logp: np.ndarray) -> np.ndarray:
    """f(x) / P with f the logistic density; zero at +-inf"""
    with np.errstate(invalid='ignore'):
        return np.exp(log_expit(x) + log_expit(-x) - logp)


def _check_cutpoints(cutpoints) -> np.ndarray:
    cuts = np.asarray(cutpoints, dtype=float)
    if cuts.ndim != 1 or cuts.size < 1:
        raise ModelError("At least one cutpoint is required", parameter='cutpoints')
    if np.any(np.diff(cuts) <= 0):
        raise ModelError(f"Cutpoints must be strictly increasing, got {tuple(cuts)}",
                         parameter='cutpoints')
    return cuts


def _padded_cutpoints(cuts: np.ndarray) -> np.ndarray:
    """Prepend -inf and append +inf along the last axis"""
    shape = cuts.shape[:-1] + (1,)
    return np.concatenate([np.full(shape, -np.inf), cuts, np.full(shape, np.inf)], axis=-1)


def ordered_logistic_logpmf(category, eta, cutpoints) -> Union[float, np.ndarray]:
    """log Pr(y = c) = log[F(tau_{c+1} - eta) - F(tau_c - eta)], tau_0 = -inf, tau_K = +inf"""
    cuts = _check_cutpoints(cutpoints)
    y = np.asarray(category)
    n_categories = cuts.size + 1
    if np.any(y != np.round(y)) or np.any(y < 0) or np.any(y >= n_categories):
        raise ModelError(f"Category must be an integer in 0..{n_categories - 1}, got {category}")
    y = y.astype(int)
    padded = _padded_cutpoints(cuts)
    eta = np.asarray(eta, dtype=float)
    logp = _ordinal_interval_logp(padded[y] - eta, padded[y + 1] - eta)
    return float(logp) if np.ndim(logp) == 0 else logp


def ordered_logistic_probs(eta, cutpoints) -> np.ndarray:
    """Category probabilities, shape eta.shape + (K,); cutpoints broadcast against eta"""
    eta = np.asarray(eta, dtype=float)
    cuts = np.asarray(cutpoints, dtype=float)
    cdf = expit(cuts - eta[..., None])
    shape = cdf.shape[:-1] + (1,)
    cdf = np.concatenate([np.zeros(shape), cdf, np.ones(shape)], axis=-1)
    return np.diff(cdf, axis=-1)


def negbin_logpmf(y, mu, theta) -> Union[float, np.ndarray]:
    """NB2 log-pmf with mean mu and variance mu + mu^2 / theta"""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(y != np.floor(y)) or np.any(y < 0):
        raise ModelError(f"Negative binomial outcome must be a non-negative integer, got {y}")
    if np.any(mu <= 0) or np.any(theta <= 0):
        raise ModelError("Negative binomial mu and theta must be positive")
    logp, _, _ = _negbin_terms(y, np.log(mu), np.log(theta), with_grad=False)
    return float(logp) if np.ndim(logp) == 0 else logp


def _negbin_terms(y: np.ndarray, eta: np.ndarray, log_theta, with_grad: bool = True):
    """Log-pmf on the log-mean scale with d/deta and d/dlog(theta)"""
    theta = np.exp(log_theta)
    log_denom = np.logaddexp(log_theta, eta)
    logp = (gammaln(y + theta) - gammaln(theta) - gammaln(y + 1.0)
            + theta * (log_theta - log_denom) + y * (eta - log_denom))
    if not with_grad:
        return logp, None, None
    d_eta = y - (y + theta) * np.exp(eta - log_denom)
    d_theta = (digamma(y + theta) - digamma(theta) + log_theta - log_denom + 1.0
               - (y + theta) * np.exp(-log_denom))
    return logp, d_eta, d_theta * theta


def linear_predictor(row: CoopRow, betas: Mapping[str, float], a_V: float,
                     intercept: float = 0.0) -> float:
    """eta = intercept + a_V + sum_k beta_k x_k"""
    eta = intercept + a_V
    for name, beta in betas.items():
        try:
            value = row.covariate(name)
        except KeyError:
            raise ModelError(f"Unknown covariate {name}", parameter=name)
        if value is None:
            raise ModelError(f"Missing covariate {name} for person {row.person_id}", parameter=name)
        eta += beta * value
    return eta


# ---------------------------------------------------------------------------
# priors: value and derivative

def _normal_lp(x, scale):
    x = np.asarray(x, dtype=float)
    return float(np.sum(-0.5 * (x / scale) ** 2 - math.log(scale) - LOG_SQRT_2PI)), -x / scale ** 2


def _student_t_lp(x, df, scale):
    x = np.asarray(x, dtype=float)
    value = float(np.sum(stats.t.logpdf(x, df, loc=0.0, scale=scale)))
    return value, -(df + 1.0) * x / (df * scale ** 2 + x ** 2)


def _half_t_lp(x, df, scale):
    value, grad = _student_t_lp(x, df, scale)
    return value + math.log(2.0), grad


def _gamma_lp(x, shape, rate):
    value = float(stats.gamma.logpdf(x, shape, scale=1.0 / rate))
    return value, (shape - 1.0) / x - rate


# ---------------------------------------------------------------------------

@dataclass
class ModelData:
    person_ids: List[str]
    village_ids: List[str]
    village_index: np.ndarray
    X: np.ndarray
    y: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.y)


def build_model_data(spec: ModelSpec, dataset: CoopDataset) -> ModelData:
    """Design matrix for rows carrying ``spec.outcome``; other rows are dropped"""
    spec.validate_against(dataset)
    rows = dataset.complete_cases(spec.outcome).rows
    village_ids = sorted({row.village_id for row in rows})
    lookup = {village: j for j, village in enumerate(village_ids)}

    X = np.zeros((len(rows), len(spec.fixed_effects)))
    for i, row in enumerate(rows):
        for k, name in enumerate(spec.fixed_effects):
            value = row.covariate(name)
            if value is None:
                raise ModelError(f"Missing covariate {name} for person {row.person_id}",
                                 row=i, parameter=name)
            X[i, k] = value

    return ModelData(person_ids=[row.person_id for row in rows],
                     village_ids=village_ids,
                     village_index=np.array([lookup[row.village_id] for row in rows], dtype=int),
                     X=X,
                     y=np.array([getattr(row, spec.outcome) for row in rows], dtype=float))


class PosteriorModel:
    """Log posterior of one model on one dataset, in constrained and unconstrained form"""

    def __init__(self, spec: ModelSpec, dataset: CoopDataset):
        self.logger = logging.getLogger(__name__)
        self.data = build_model_data(spec, dataset)
        if spec.is_ordinal:
            observed = int(self.data.y.max()) + 1 if self.data.n_rows else 2
            if spec.n_categories is None:
                spec = replace(spec, n_categories=max(observed, 2))
            elif observed > spec.n_categories:
                raise ModelError(f"Observed category {observed - 1} exceeds K={spec.n_categories}")
        self.spec = spec
        self._layout()
        self.logger.debug(f"Model {spec.name}: {self.data.n_rows} rows, "
                          f"{len(self.data.village_ids)} villages, {self.dim} parameters")

    def _layout(self):
        n_fixed = len(self.spec.fixed_effects)
        n_villages = len(self.data.village_ids)
        names: List[str] = []
        if self.spec.is_ordinal:
            n_head = self.spec.n_categories - 1
            names += [f"cutpoint[{k}]" for k in range(1, n_head + 1)]
        else:
            n_head = 1
            names.append('intercept')
        names += [f"b_{name}" for name in self.spec.fixed_effects]
        names.append('sigma_village')
        if not self.spec.is_ordinal:
            names.append('theta')
        names += [f"a_village[{village}]" for village in self.data.village_ids]

        self.param_names = names
        self.dim = len(names)
        self._head = slice(0, n_head)
        self._beta = slice(n_head, n_head + n_fixed)
        self._sigma = n_head + n_fixed
        self._theta = self._sigma + 1 if not self.spec.is_ordinal else None
        start = self._sigma + (1 if self.spec.is_ordinal else 2)
        self._z = slice(start, start + n_villages)

    # --- transforms ---------------------------------------------------------

    def _cutpoints_from(self, raw: np.ndarray) -> np.ndarray:
        return np.cumsum(np.concatenate([raw[:1], np.exp(raw[1:])]))

    def constrain(self, u: np.ndarray) -> Params:
        u = np.asarray(u, dtype=float)
        sigma = math.exp(u[self._sigma])
        betas = dict(zip(self.spec.fixed_effects, u[self._beta].tolist()))
        effects = dict(zip(self.data.village_ids, (sigma * u[self._z]).tolist()))
        if self.spec.is_ordinal:
            return OrderedLogisticParams(cutpoints=tuple(self._cutpoints_from(u[self._head]).tolist()),
                                         betas=betas, village_effects=effects, sigma_village=sigma)
        return NegBinParams(intercept=float(u[0]), betas=betas, village_effects=effects,
                            sigma_village=sigma, theta=math.exp(u[self._theta]))

    def unconstrain(self, params: Params) -> np.ndarray:
        u = np.zeros(self.dim)
        if self.spec.is_ordinal:
            cuts = _check_cutpoints(params.cutpoints)
            if cuts.size != self.spec.n_categories - 1:
                raise ModelError(f"Expected {self.spec.n_categories - 1} cutpoints, got {cuts.size}")
            u[self._head] = np.concatenate([cuts[:1], np.log(np.diff(cuts))])
        else:
            u[0] = params.intercept
            u[self._theta] = math.log(params.theta)
        u[self._beta] = [params.betas[name] for name in self.spec.fixed_effects]
        u[self._sigma] = math.log(params.sigma_village)
        u[self._z] = [params.village_effects[v] / params.sigma_village for v in self.data.village_ids]
        return u

    def constrained_vector(self, u: np.ndarray) -> np.ndarray:
        """Constrained values in ``param_names`` order"""
        u = np.asarray(u, dtype=float)
        out = u.copy()
        if self.spec.is_ordinal:
            out[self._head] = self._cutpoints_from(u[self._head])
        else:
            out[self._theta] = math.exp(u[self._theta])
        sigma = math.exp(u[self._sigma])
        out[self._sigma] = sigma
        out[self._z] = sigma * u[self._z]
        return out

    def params_from_vector(self, values: np.ndarray) -> Params:
        values = np.asarray(values, dtype=float)
        betas = dict(zip(self.spec.fixed_effects, values[self._beta].tolist()))
        effects = dict(zip(self.data.village_ids, values[self._z].tolist()))
        if self.spec.is_ordinal:
            return OrderedLogisticParams(cutpoints=tuple(values[self._head].tolist()), betas=betas,
                                         village_effects=effects,
                                         sigma_village=float(values[self._sigma]))
        return NegBinParams(intercept=float(values[0]), betas=betas, village_effects=effects,
                            sigma_village=float(values[self._sigma]),
                            theta=float(values[self._theta]))

    def log_abs_det_jacobian(self, u: np.ndarray) -> float:
        """log|d constrained / d u| for the map u -> (tau or intercept, beta, sigma, [theta], a_V)"""
        u = np.asarray(u, dtype=float)
        n_villages = len(self.data.village_ids)
        value = (1 + n_villages) * u[self._sigma]
        if self.spec.is_ordinal:
            value += float(np.sum(u[self._head][1:]))
        else:
            value += u[self._theta]
        return float(value)

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-2.0, 2.0, size=self.dim)

    # --- densities ----------------------------------------------------------

    def _eta(self, beta: np.ndarray, a: np.ndarray, intercept: float = 0.0) -> np.ndarray:
        return intercept + self.data.X @ beta + a[self.data.village_index]

    def _likelihood(self, head: np.ndarray, beta: np.ndarray, a: np.ndarray,
                    log_theta: Optional[float], with_grad: bool):
        """Pointwise log-likelihood plus gradients w.r.t. eta, head (cutpoints or intercept) and log theta"""
        y = self.data.y
        if self.spec.is_ordinal:
            eta = self._eta(beta, a)
            padded = _padded_cutpoints(head)
            yi = y.astype(int)
            lower, upper = padded[yi] - eta, padded[yi + 1] - eta
            ll = _ordinal_interval_logp(lower, upper)
            if not with_grad:
                return ll, None, None, None
            r_up = _logistic_density_ratio(upper, ll)
            r_lo = _logistic_density_ratio(lower, ll)
            g_head = np.zeros(head.size)
            top = yi < head.size
            np.add.at(g_head, yi[top], r_up[top])
            bottom = yi > 0
            np.add.at(g_head, yi[bottom] - 1, -r_lo[bottom])
            return ll, r_lo - r_up, g_head, None

        eta = self._eta(beta, a, head[0])
        ll, d_eta, d_log_theta = _negbin_terms(y, eta, log_theta, with_grad)
        if not with_grad:
            return ll, None, None, None
        return ll, d_eta, np.array([np.sum(d_eta)]), float(np.sum(d_log_theta))

    def _evaluate(self, u: np.ndarray, with_grad: bool):
        u = np.asarray(u, dtype=float)
        priors = self.spec.priors
        raw_head, beta = u[self._head], u[self._beta]
        log_sigma, z = u[self._sigma], u[self._z]
        sigma = math.exp(log_sigma)
        a = sigma * z
        head = self._cutpoints_from(raw_head) if self.spec.is_ordinal else raw_head
        log_theta = None if self.spec.is_ordinal else u[self._theta]

        ll, d_eta, g_head, g_log_theta = self._likelihood(head, beta, a, log_theta, with_grad)
        target = float(np.sum(ll))

        lp_beta, g_beta_prior = _normal_lp(beta, priors.beta_scale)
        lp_head, g_head_prior = _student_t_lp(head, priors.intercept_df, priors.intercept_scale)
        lp_sigma, g_sigma_prior = _half_t_lp(sigma, priors.sigma_df, priors.sigma_scale)
        target += lp_beta + lp_head + lp_sigma + log_sigma
        target += float(-0.5 * np.dot(z, z)) - z.size * LOG_SQRT_2PI
        if self.spec.is_ordinal:
            target += float(np.sum(raw_head[1:]))
        else:
            theta = math.exp(log_theta)
            lp_theta, g_theta_prior = _gamma_lp(theta, priors.theta_shape, priors.theta_rate)
            target += lp_theta + log_theta

        if not with_grad:
            return target, ll, None

        grad = np.zeros(self.dim)
        n_villages = len(self.data.village_ids)
        per_village = np.bincount(self.data.village_index, weights=d_eta, minlength=n_villages)
        grad[self._beta] = self.data.X.T @ d_eta + g_beta_prior
        grad[self._z] = sigma * per_village - z
        grad[self._sigma] = float(np.dot(a, per_village)) + float(g_sigma_prior) * sigma + 1.0

        g_head = g_head + g_head_prior
        if self.spec.is_ordinal:
            tail_sums = np.cumsum(g_head[::-1])[::-1]
            g_raw = np.empty_like(raw_head)
            g_raw[0] = tail_sums[0]
            g_raw[1:] = np.exp(raw_head[1:]) * tail_sums[1:] + 1.0
            grad[self._head] = g_raw
        else:
            grad[self._head] = g_head
            grad[self._theta] = g_log_theta + float(g_theta_prior) * theta + 1.0
        return target, ll, grad

    def log_density(self, u: np.ndarray) -> float:
        """Unconstrained target (Jacobian included); -inf where not finite"""
        with np.errstate(over='ignore', divide='ignore', invalid='ignore'):
            value, _, _ = self._evaluate(u, with_grad=False)
        return value if np.isfinite(value) else -np.inf

    def log_density_and_grad(self, u: np.ndarray) -> Tuple[float, np.ndarray]:
        with np.errstate(over='ignore', divide='ignore', invalid='ignore'):
            value, _, grad = self._evaluate(u, with_grad=True)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(self.dim)
        return value, grad

    def log_posterior(self, params: Params) -> float:
        """Constrained log posterior: log-lik + log priors + sum log N(a_V | 0, sigma_village)"""
        u = self.unconstrain(params)
        with np.errstate(over='ignore', divide='ignore', invalid='ignore'):
            target, ll, _ = self._evaluate(u, with_grad=False)
        bad = np.flatnonzero(~np.isfinite(ll))
        if bad.size:
            row = int(bad[0])
            raise ModelError(f"Non-finite log-likelihood at row {row} "
                             f"(person {self.data.person_ids[row]})", row=row)
        value = target - self.log_abs_det_jacobian(u)
        if not np.isfinite(value):
            raise ModelError("Non-finite log prior", parameter=self._first_bad_parameter(params))
        return float(value)

    def _first_bad_parameter(self, params: Params) -> Optional[str]:
        values = self.constrained_vector(self.unconstrain(params))
        for name, value in zip(self.param_names, values):
            if not np.isfinite(value) or abs(value) > 1e150:
                return name
        return None

    def pointwise_loglik(self, draws: np.ndarray) -> np.ndarray:
        """Log-likelihood matrix (draws x observations) from constrained draws in ``param_names`` order"""
        draws = np.atleast_2d(np.asarray(draws, dtype=float))
        head = draws[:, self._head]
        beta = draws[:, self._beta]
        a = draws[:, self._z]
        eta = beta @ self.data.X.T + a[:, self.data.village_index]
        y = self.data.y
        if self.spec.is_ordinal:
            padded = _padded_cutpoints(head)
            yi = y.astype(int)
            return _ordinal_interval_logp(padded[:, yi] - eta, padded[:, yi + 1] - eta)
        eta = eta + head
        log_theta = np.log(draws[:, self._theta])[:, None]
        ll, _, _ = _negbin_terms(y[None, :], eta, log_theta, with_grad=False)
        return ll

    def linear_predictors(self, draws: np.ndarray, X: np.ndarray,
                          village_effects: Optional[np.ndarray] = None) -> np.ndarray:
        """eta (draws x rows) for covariate rows X; village effects default to zero"""
        draws = np.atleast_2d(np.asarray(draws, dtype=float))
        eta = draws[:, self._beta] @ np.atleast_2d(X).T
        if village_effects is not None:
            eta = eta + village_effects
        if not self.spec.is_ordinal:
            eta = eta + draws[:, self._head]
        return eta

    def column(self, name: str) -> int:
        return self.param_names.index(name)

    @property
    def cutpoint_columns(self) -> slice:
        return self._head

    @property
    def village_columns(self) -> slice:
        return self._z


def log_posterior(params: Params, dataset: CoopDataset, spec: ModelSpec) -> float:
    return PosteriorModel(spec, dataset).log_posterior(params)


def grad_log_posterior(params: Params, dataset: CoopDataset, spec: ModelSpec) -> np.ndarray:
    """Gradient of the unconstrained target (log sigma, log theta, ordered-cutpoint transform)"""
    model = PosteriorModel(spec, dataset)
    u = model.unconstrain(params)
    value, grad = model.log_density_and_grad(u)
    if not np.isfinite(value):
        model.log_posterior(params)
        raise ModelError("Non-finite log posterior")
    return grad
