from typing import Any, Dict, Mapping, Optional, Tuple, Union
import logging
import math

import numpy as np
import pandas as pd

from ..errors import DiagnosticsError

logger = logging.getLogger(__name__)

DEFAULT_LEVEL = 0.89


def _as_chains(values) -> np.ndarray:
    """Coerce to chains x draws; a 1-D array is one chain"""
    ary = np.asarray(values, dtype=float)
    if ary.ndim == 1:
        ary = ary[None, :]
    if ary.ndim != 2:
        raise DiagnosticsError(f"Expected a chains x draws array, got shape {ary.shape}")
    return ary


def _split_chains(ary: np.ndarray) -> np.ndarray:
    half = ary.shape[1] // 2
    return np.vstack((ary[:, :half], ary[:, -half:]))


def rhat(values) -> float:
    """Split-chain potential scale reduction for one parameter (chains x draws)"""
    ary = _as_chains(values)
    n_chains, n_draws = ary.shape
    if n_chains < 2 or n_draws < 4:
        raise DiagnosticsError(f"R-hat needs >= 2 chains of >= 4 draws, got {n_chains} x {n_draws}")
    if not np.all(np.isfinite(ary)):
        raise DiagnosticsError("R-hat undefined for non-finite draws")

    ary = _split_chains(ary)
    n = ary.shape[1]
    within = np.mean(np.var(ary, axis=1, ddof=1))
    if within == 0.0:
        raise DiagnosticsError("degenerate chains: zero within-chain variance")
    between = n * np.var(np.mean(ary, axis=1), ddof=1)
    var_plus = (n - 1) / n * within + between / n
    return float(math.sqrt(var_plus / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance at every lag via FFT"""
    n = x.size
    size = 2 ** int(np.ceil(np.log2(2 * n - 1)))
    centered = x - x.mean()
    spectrum = np.fft.rfft(centered, n=size)
    acov = np.fft.irfft(spectrum * np.conjugate(spectrum), n=size)[:n]
    return acov / n


def ess(values) -> float:
    """Effective sample size from split chains with Geyer's initial monotone sequence"""
    ary = _as_chains(values)
    if ary.shape[1] < 4:
        raise DiagnosticsError(f"ESS needs >= 4 draws per chain, got {ary.shape[1]}")
    if not np.all(np.isfinite(ary)):
        raise DiagnosticsError("ESS undefined for non-finite draws")

    ary = _split_chains(ary)
    n_chains, n_draws = ary.shape
    acov = np.asarray([_autocov(chain) for chain in ary])
    mean_var = np.mean(acov[:, 0]) * n_draws / (n_draws - 1.0)
    if mean_var == 0.0:
        raise DiagnosticsError("degenerate chains: constant draws have no effective sample size")
    var_plus = mean_var * (n_draws - 1.0) / n_draws
    if n_chains > 1:
        var_plus += np.var(np.mean(ary, axis=1), ddof=1)

    rho = np.zeros(n_draws)
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[0], rho[1] = rho_even, rho_odd

    t = 1
    while t < n_draws - 2 and rho_even + rho_odd >= 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        rho[t + 1] = rho_even
        if rho_even + rho_odd >= 0.0:
            rho[t + 2] = rho_odd
        t += 2
    max_t = t

    # monotone
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2

    tau = -1.0 + 2.0 * np.sum(rho[:max_t]) + np.sum(rho[max_t + 1:max_t + 2])
    tau = max(tau, 1.0 / np.log10(n_chains * n_draws))
    return float(n_chains * n_draws / tau)


def interval(values, level: float = DEFAULT_LEVEL) -> Tuple[float, float]:
    """Central credible interval using the linear-interpolation quantile rule"""
    if not 0.0 < level < 1.0:
        raise DiagnosticsError(f"Interval level must lie in (0, 1), got {level}")
    flat = np.asarray(values, dtype=float).reshape(-1)
    if flat.size == 0:
        raise DiagnosticsError("Cannot summarize empty draws")
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(flat, [tail, 1.0 - tail], method='linear')
    return float(lower), float(upper)


def interval_columns(level: float = DEFAULT_LEVEL) -> Tuple[str, str]:
    tag = f"ci{int(round(level * 100))}"
    return f"{tag}_lower", f"{tag}_upper"


def summarize(draws: Union[Mapping[str, Any], np.ndarray, Any], level: float = DEFAULT_LEVEL) -> pd.DataFrame:
    """Per-parameter mean and central interval.

    ``draws`` may be a PosteriorDraws, a mapping of name -> draws, or a bare array
    (summarized as a single parameter named ``x``).
    """
    if hasattr(draws, 'param_names') and hasattr(draws, 'get'):
        columns = {name: draws.get(name) for name in draws.param_names}
    elif isinstance(draws, Mapping):
        columns = dict(draws)
    else:
        columns = {'x': draws}
    if not columns:
        raise DiagnosticsError("Cannot summarize empty draws")

    lower_name, upper_name = interval_columns(level)
    rows = []
    for name, values in columns.items():
        lower, upper = interval(values, level)
        rows.append({'parameter': name, 'mean': float(np.mean(values)),
                     lower_name: lower, upper_name: upper})
    return pd.DataFrame(rows, columns=['parameter', 'mean', lower_name, upper_name]).set_index('parameter')


def _safe(fn, values) -> Optional[float]:
    try:
        return fn(values)
    except DiagnosticsError as e:
        logger.debug(f"Diagnostic unavailable: {str(e)}")
        return None


def fit_summary(draws, level: float = DEFAULT_LEVEL, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Content of fit.json: per-parameter summaries plus sampler metadata"""
    lower_name, upper_name = interval_columns(level)
    table = summarize(draws, level)
    n_divergent = draws.n_divergent

    parameters = {}
    for name in draws.param_names:
        values = draws.get(name)
        parameters[name] = {
            'mean': float(table.at[name, 'mean']),
            lower_name: float(table.at[name, lower_name]),
            upper_name: float(table.at[name, upper_name]),
            'rhat': _safe(rhat, values),
            'ess': _safe(ess, values),
            'n_divergent': n_divergent,
        }

    rhats = [p['rhat'] for p in parameters.values() if p['rhat'] is not None]
    if rhats and max(rhats) > 1.01:
        logger.warning(f"Max R-hat {max(rhats):.3f} exceeds 1.01; chains may not have mixed")

    summary = {
        'parameters': parameters,
        'parameter_order': list(draws.param_names),
        'level': level,
        'n_divergent': n_divergent,
        'failed': bool(draws.failed),
        'chain_seeds': list(draws.chain_seeds),
        'config': draws.config.to_dict() if draws.config is not None else None,
        'spec': draws.spec.to_dict() if getattr(draws, 'spec', None) is not None else None,
    }
    if extra:
        summary.update(extra)
    return summary
