from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
import logging
import math

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..errors import ConfigError, SamplerError
from ..utils.survey_processor import CoopDataset
from .glmm import ModelSpec, PosteriorModel

logger = logging.getLogger(__name__)

MAX_INIT_ATTEMPTS = 100
MAX_DIVERGENT_FRACTION = 0.25
DELTA_MAX = 1000.0


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    n_warmup: int = 1000
    n_draws: int = 1000
    seed: int = 20190527
    target_acceptance: float = 0.9
    max_treedepth: int = 10
    n_jobs: int = 1
    progress: bool = False

    def __post_init__(self):
        for name in ('n_chains', 'n_warmup', 'n_draws', 'max_treedepth', 'n_jobs'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ConfigError(f"target_acceptance must lie in (0, 1), got {self.target_acceptance}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> 'SamplerConfig':
        defaults = cls()
        return cls(n_chains=config.get('chains', defaults.n_chains),
                   n_warmup=config.get('warmup', defaults.n_warmup),
                   n_draws=config.get('draws', defaults.n_draws),
                   seed=config.get('seed', defaults.seed),
                   target_acceptance=config.get('target_acceptance', defaults.target_acceptance),
                   max_treedepth=config.get('max_treedepth', defaults.max_treedepth),
                   n_jobs=config.get('n_jobs', defaults.n_jobs),
                   progress=config.get('progress', defaults.progress))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def chain_seed(seed: int, index: int) -> int:
    """Independent per-stream seed derived from (seed, index)"""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


@dataclass
class PosteriorDraws:
    param_names: List[str]
    values: np.ndarray                      # chains x iterations x parameters
    chain_seeds: List[int]
    divergent: np.ndarray                   # chains x iterations
    config: Optional[SamplerConfig] = None
    step_sizes: List[float] = field(default_factory=list)
    accept_stat: Optional[np.ndarray] = None
    spec: Optional[ModelSpec] = None

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_iterations(self) -> int:
        return self.values.shape[1]

    @property
    def n_divergent(self) -> int:
        return int(np.sum(self.divergent))

    @property
    def divergent_fraction(self) -> float:
        return float(np.mean(self.divergent)) if self.divergent.size else 0.0

    @property
    def failed(self) -> bool:
        return self.divergent_fraction > MAX_DIVERGENT_FRACTION

    def get(self, name: str) -> np.ndarray:
        """chains x iterations array for one parameter"""
        try:
            return self.values[:, :, self.param_names.index(name)]
        except ValueError:
            raise KeyError(f"No parameter named {name}")

    def flat(self, name: Optional[str] = None) -> np.ndarray:
        """Draws pooled over chains; all parameters when ``name`` is None"""
        if name is not None:
            return self.get(name).reshape(-1)
        return self.values.reshape(-1, self.values.shape[2])

    def to_frame(self) -> pd.DataFrame:
        chains, iterations, _ = self.values.shape
        frame = pd.DataFrame(self.flat(), columns=self.param_names)
        frame.insert(0, 'iteration', np.tile(np.arange(1, iterations + 1), chains))
        frame.insert(0, 'chain', np.repeat(np.arange(1, chains + 1), iterations))
        return frame

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    @classmethod
    def from_csv(cls, path: Path, spec: Optional[ModelSpec] = None,
                 chain_seeds: Sequence[int] = ()) -> 'PosteriorDraws':
        frame = pd.read_csv(path)
        if list(frame.columns[:2]) != ['chain', 'iteration']:
            raise SamplerError(f"{path}: header must start with chain,iteration")
        names = list(frame.columns[2:])
        chains = sorted(frame['chain'].unique())
        values = np.stack([frame.loc[frame['chain'] == c, names].to_numpy(dtype=float)
                           for c in chains])
        return cls(param_names=names, values=values, chain_seeds=list(chain_seeds),
                   divergent=np.zeros(values.shape[:2], dtype=bool), spec=spec)


# ---------------------------------------------------------------------------
# Hamiltonian dynamics

LogDensityGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def kinetic_energy(r: np.ndarray, inv_metric: np.ndarray) -> float:
    return 0.5 * float(np.dot(r, inv_metric * r))


def leapfrog(log_density_and_grad: LogDensityGrad, theta: np.ndarray, r: np.ndarray,
             grad: np.ndarray, step_size: float, inv_metric: np.ndarray):
    """One velocity-Verlet step; returns (theta, r, grad, log density)"""
    r_half = r + 0.5 * step_size * grad
    theta_new = theta + step_size * inv_metric * r_half
    logp, grad_new = log_density_and_grad(theta_new)
    r_new = r_half + 0.5 * step_size * grad_new
    return theta_new, r_new, grad_new, logp


@dataclass
class _Subtree:
    theta_minus: np.ndarray
    r_minus: np.ndarray
    grad_minus: np.ndarray
    theta_plus: np.ndarray
    r_plus: np.ndarray
    grad_plus: np.ndarray
    theta_prime: np.ndarray
    grad_prime: np.ndarray
    logp_prime: float
    n_valid: int
    keep_going: bool
    alpha_sum: float
    n_alpha: int
    divergent: bool


class NUTSChain:
    """No-U-Turn sampler (slice variant) with dual-averaging step size and a diagonal metric
    estimated over Stan-style doubling windows during warmup."""

    def __init__(self, target, config: SamplerConfig, chain_index: int):
        self.logger = logging.getLogger(__name__)
        self.target = target
        self.config = config
        self.chain_index = chain_index
        self.seed = chain_seed(config.seed, chain_index)
        self.rng = np.random.default_rng(self.seed)
        self.inv_metric = np.ones(target.dim)

    # --- helpers ------------------------------------------------------------

    def _initial_state(self) -> Tuple[np.ndarray, float, np.ndarray]:
        for attempt in range(MAX_INIT_ATTEMPTS):
            theta = self.target.initial_point(self.rng)
            logp, grad = self.target.log_density_and_grad(theta)
            if np.isfinite(logp) and np.all(np.isfinite(grad)):
                return theta, logp, grad
        raise SamplerError(f"Chain {self.chain_index}: non-finite initial log posterior after "
                           f"{MAX_INIT_ATTEMPTS} attempts")

    def _draw_momentum(self) -> np.ndarray:
        return self.rng.standard_normal(self.target.dim) / np.sqrt(self.inv_metric)

    def _find_reasonable_step_size(self, theta, logp, grad) -> float:
        step_size = 1.0
        r = self._draw_momentum()
        joint0 = logp - kinetic_energy(r, self.inv_metric)

        def log_ratio(eps):
            _, r_new, _, logp_new = leapfrog(self.target.log_density_and_grad, theta, r, grad,
                                             eps, self.inv_metric)
            value = logp_new - kinetic_energy(r_new, self.inv_metric) - joint0
            return value if np.isfinite(value) else -np.inf

        ratio = log_ratio(step_size)
        direction = 1.0 if ratio > math.log(0.5) else -1.0
        for _ in range(100):
            if direction * ratio <= -direction * math.log(2.0):
                break
            step_size *= 2.0 ** direction
            ratio = log_ratio(step_size)
        return step_size

    def _build_tree(self, theta, r, grad, log_u, direction, depth, step_size, joint0) -> _Subtree:
        if depth == 0:
            theta_new, r_new, grad_new, logp_new = leapfrog(
                self.target.log_density_and_grad, theta, r, grad, direction * step_size,
                self.inv_metric)
            joint = logp_new - kinetic_energy(r_new, self.inv_metric)
            if not np.isfinite(joint):
                joint = -np.inf
            keep_going = log_u < joint + DELTA_MAX
            alpha = 1.0 if joint >= joint0 else math.exp(joint - joint0) if np.isfinite(joint) else 0.0
            return _Subtree(theta_new, r_new, grad_new, theta_new, r_new, grad_new,
                            theta_new, grad_new, logp_new, int(log_u <= joint), keep_going,
                            alpha, 1, not keep_going)

        tree = self._build_tree(theta, r, grad, log_u, direction, depth - 1, step_size, joint0)
        if not tree.keep_going:
            return tree

        if direction < 0:
            other = self._build_tree(tree.theta_minus, tree.r_minus, tree.grad_minus, log_u,
                                     direction, depth - 1, step_size, joint0)
            tree.theta_minus, tree.r_minus, tree.grad_minus = other.theta_minus, other.r_minus, other.grad_minus
        else:
            other = self._build_tree(tree.theta_plus, tree.r_plus, tree.grad_plus, log_u,
                                     direction, depth - 1, step_size, joint0)
            tree.theta_plus, tree.r_plus, tree.grad_plus = other.theta_plus, other.r_plus, other.grad_plus

        total = tree.n_valid + other.n_valid
        if total > 0 and self.rng.uniform() < other.n_valid / total:
            tree.theta_prime, tree.grad_prime, tree.logp_prime = other.theta_prime, other.grad_prime, other.logp_prime
        tree.n_valid = total
        tree.keep_going = other.keep_going and self._no_u_turn(tree)
        tree.alpha_sum += other.alpha_sum
        tree.n_alpha += other.n_alpha
        tree.divergent = tree.divergent or other.divergent
        return tree

    def _no_u_turn(self, tree: _Subtree) -> bool:
        span = tree.theta_plus - tree.theta_minus
        return (float(np.dot(span, self.inv_metric * tree.r_minus)) >= 0.0
                and float(np.dot(span, self.inv_metric * tree.r_plus)) >= 0.0)

    def _transition(self, theta, logp, grad, step_size):
        r0 = self._draw_momentum()
        joint0 = logp - kinetic_energy(r0, self.inv_metric)
        log_u = joint0 + math.log(self.rng.uniform())

        tree = _Subtree(theta, r0, grad, theta, r0, grad, theta, grad, logp, 1, True, 0.0, 0, False)
        n_valid = 1
        depth = 0
        alpha_sum, n_alpha, divergent = 0.0, 0, False
        while depth < self.config.max_treedepth:
            direction = 1 if self.rng.uniform() < 0.5 else -1
            if direction < 0:
                sub = self._build_tree(tree.theta_minus, tree.r_minus, tree.grad_minus, log_u,
                                       direction, depth, step_size, joint0)
                tree.theta_minus, tree.r_minus, tree.grad_minus = sub.theta_minus, sub.r_minus, sub.grad_minus
            else:
                sub = self._build_tree(tree.theta_plus, tree.r_plus, tree.grad_plus, log_u,
                                       direction, depth, step_size, joint0)
                tree.theta_plus, tree.r_plus, tree.grad_plus = sub.theta_plus, sub.r_plus, sub.grad_plus

            alpha_sum += sub.alpha_sum
            n_alpha += sub.n_alpha
            divergent = divergent or sub.divergent
            if sub.keep_going and self.rng.uniform() < min(1.0, sub.n_valid / n_valid):
                theta, logp, grad = sub.theta_prime, sub.logp_prime, sub.grad_prime
            n_valid += sub.n_valid
            depth += 1
            if not (sub.keep_going and self._no_u_turn(tree)):
                break

        accept = alpha_sum / n_alpha if n_alpha else 0.0
        return theta, logp, grad, accept, divergent, depth

    # --- main loop ----------------------------------------------------------

    def run(self) -> Dict[str, Any]:
        config = self.config
        theta, logp, grad = self._initial_state()
        step_size = self._find_reasonable_step_size(theta, logp, grad)
        adapter = _DualAveraging(step_size, config.target_acceptance)
        windows = adaptation_windows(config.n_warmup)
        window_draws: List[np.ndarray] = []

        values = np.empty((config.n_draws, self.target.dim))
        divergent = np.zeros(config.n_draws, dtype=bool)
        accept_stat = np.zeros(config.n_draws)
        warmup_divergences = 0

        total = config.n_warmup + config.n_draws
        with tqdm(total=total, desc=f"chain {self.chain_index + 1}", position=self.chain_index,
                  disable=not config.progress, leave=False) as pbar:
            for i in range(total):
                theta, logp, grad, accept, is_divergent, _ = self._transition(theta, logp, grad, step_size)

                if i < config.n_warmup:
                    warmup_divergences += int(is_divergent)
                    step_size = adapter.update(accept)
                    window = _window_containing(windows, i)
                    if window is not None:
                        window_draws.append(theta.copy())
                        if i == window[1] - 1:
                            self.inv_metric = regularized_variance(np.array(window_draws))
                            window_draws = []
                            step_size = self._find_reasonable_step_size(theta, logp, grad)
                            adapter = _DualAveraging(step_size, config.target_acceptance)
                    if i == config.n_warmup - 1:
                        step_size = adapter.final_step_size()
                else:
                    k = i - config.n_warmup
                    values[k] = self.target.constrained_vector(theta)
                    divergent[k] = is_divergent
                    accept_stat[k] = accept
                pbar.update(1)

        if warmup_divergences:
            self.logger.debug(f"Chain {self.chain_index + 1}: {warmup_divergences} divergences during warmup")
        return {'values': values, 'divergent': divergent, 'accept_stat': accept_stat,
                'step_size': step_size, 'seed': self.seed}


class _DualAveraging:
    gamma = 0.05
    t0 = 10.0
    kappa = 0.75

    def __init__(self, step_size: float, target: float):
        self.mu = math.log(10.0 * step_size)
        self.target = target
        self.h_bar = 0.0
        self.log_step_bar = 0.0
        self.counter = 0

    def update(self, accept: float) -> float:
        self.counter += 1
        eta = 1.0 / (self.counter + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept)
        log_step = self.mu - math.sqrt(self.counter) / self.gamma * self.h_bar
        weight = self.counter ** (-self.kappa)
        self.log_step_bar = weight * log_step + (1.0 - weight) * self.log_step_bar
        return math.exp(log_step)

    def final_step_size(self) -> float:
        return math.exp(self.log_step_bar)


def adaptation_windows(n_warmup: int) -> List[Tuple[int, int]]:
    """Metric-estimation windows [start, end) inside warmup; each doubles the previous"""
    if n_warmup < 20:
        return []
    init_buffer, term_buffer, base_window = 75, 50, 25
    if init_buffer + term_buffer + base_window > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer

    windows = []
    start, size = init_buffer, base_window
    slow_end = n_warmup - term_buffer
    while start < slow_end:
        end = start + size
        if end + 2 * size > slow_end:
            end = slow_end
        windows.append((start, end))
        start, size = end, 2 * size
    return windows


def _window_containing(windows: Sequence[Tuple[int, int]], i: int) -> Optional[Tuple[int, int]]:
    for window in windows:
        if window[0] <= i < window[1]:
            return window
    return None


def regularized_variance(samples: np.ndarray) -> np.ndarray:
    n = samples.shape[0]
    variance = np.var(samples, axis=0, ddof=1) if n > 1 else np.ones(samples.shape[1])
    return (n / (n + 5.0)) * variance + 1e-3 * (5.0 / (n + 5.0))


def sample_target(target, config: SamplerConfig) -> PosteriorDraws:
    """Run ``config.n_chains`` independent chains on any target exposing ``dim``, ``param_names``,
    ``initial_point``, ``log_density_and_grad`` and ``constrained_vector``."""
    def run_chain(index: int) -> Dict[str, Any]:
        return NUTSChain(target, config, index).run()

    if config.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=config.n_jobs) as executor:
            results = list(executor.map(run_chain, range(config.n_chains)))
    else:
        results = [run_chain(index) for index in range(config.n_chains)]

    draws = PosteriorDraws(
        param_names=list(target.param_names),
        values=np.stack([result['values'] for result in results]),
        chain_seeds=[result['seed'] for result in results],
        divergent=np.stack([result['divergent'] for result in results]),
        config=config,
        step_sizes=[result['step_size'] for result in results],
        accept_stat=np.stack([result['accept_stat'] for result in results]),
    )
    if draws.n_divergent:
        logger.warning(f"{draws.n_divergent} divergent transitions "
                       f"({draws.divergent_fraction:.1%} of post-warmup iterations)")
    if draws.failed:
        logger.error(f"Fit flagged failed: more than {MAX_DIVERGENT_FRACTION:.0%} divergent iterations")
    return draws


def run_chains(spec: ModelSpec, dataset: CoopDataset, config: SamplerConfig) -> PosteriorDraws:
    model = PosteriorModel(spec, dataset)
    logger.info(f"Sampling {model.spec.name}: {config.n_chains} chains x "
                f"({config.n_warmup} warmup + {config.n_draws} draws), seed {config.seed}")
    draws = sample_target(model, config)
    draws.spec = model.spec
    return draws
