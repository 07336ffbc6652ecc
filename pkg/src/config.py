from typing import Any, Dict, Optional
from pathlib import Path
import json
import logging
import os

from dotenv import load_dotenv

from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG: Dict[str, Any] = {
    # sampler
    'seed': 20190527,
    'chains': 4,
    'warmup': 1000,
    'draws': 1000,
    'target_acceptance': 0.9,
    'max_treedepth': 10,
    'n_jobs': 1,
    'progress': False,
    # summaries
    'level': 0.89,
    'pareto_k_threshold': 0.7,
    'grid_points': 50,
    # ingestion
    'annualization_factor': 12,
    # priors
    'prior_beta_scale': 5.0,
    'prior_intercept_scale': 10.0,
    'prior_sigma_scale': 2.5,
    'prior_theta_shape': 0.01,
    'prior_theta_rate': 0.01,
    # synthetic data
    'overlap_concentration': 20.0,
    'village_mean_low': 0.15,
    'village_mean_high': 0.45,
}

CONFIG_SCHEMA: Dict[str, Any] = {
    '$schema': 'https://json-schema.org/draft/2020-12/schema',
    'title': 'coopnet configuration',
    'type': 'object',
    'additionalProperties': False,
    'properties': {
        'seed': {'type': 'integer', 'minimum': 0},
        'chains': {'type': 'integer', 'minimum': 1},
        'warmup': {'type': 'integer', 'minimum': 1},
        'draws': {'type': 'integer', 'minimum': 1},
        'target_acceptance': {'type': 'number', 'exclusiveMinimum': 0, 'exclusiveMaximum': 1},
        'max_treedepth': {'type': 'integer', 'minimum': 1},
        'n_jobs': {'type': 'integer', 'minimum': 1},
        'progress': {'type': 'boolean'},
        'level': {'type': 'number', 'exclusiveMinimum': 0, 'exclusiveMaximum': 1},
        'pareto_k_threshold': {'type': 'number'},
        'grid_points': {'type': 'integer', 'minimum': 2},
        'annualization_factor': {'type': 'integer', 'minimum': 1},
        'prior_beta_scale': {'type': 'number', 'exclusiveMinimum': 0},
        'prior_intercept_scale': {'type': 'number', 'exclusiveMinimum': 0},
        'prior_sigma_scale': {'type': 'number', 'exclusiveMinimum': 0},
        'prior_theta_shape': {'type': 'number', 'exclusiveMinimum': 0},
        'prior_theta_rate': {'type': 'number', 'exclusiveMinimum': 0},
        'overlap_concentration': {'type': 'number', 'exclusiveMinimum': 0},
        'village_mean_low': {'type': 'number', 'exclusiveMinimum': 0, 'exclusiveMaximum': 1},
        'village_mean_high': {'type': 'number', 'exclusiveMinimum': 0, 'exclusiveMaximum': 1},
    },
}

# environment variable -> config key
ENV_VARS = {
    'COOPNET_SEED': 'seed',
    'COOPNET_CHAINS': 'chains',
    'COOPNET_WARMUP': 'warmup',
    'COOPNET_DRAWS': 'draws',
    'COOPNET_N_JOBS': 'n_jobs',
}


def _coerce(key: str, value: Any) -> Any:
    rule = CONFIG_SCHEMA['properties'].get(key)
    if rule is None:
        raise ConfigError(f"Unknown configuration key: {key}")

    kind = rule['type']
    if kind == 'boolean':
        if isinstance(value, str):
            value = value.strip().lower() in ('1', 'true', 'yes')
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        return value

    try:
        if kind == 'integer':
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            value = int(value)
        else:
            value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be of type {kind}, got {value!r}")

    if 'minimum' in rule and value < rule['minimum']:
        raise ConfigError(f"{key} must be >= {rule['minimum']}, got {value}")
    if 'exclusiveMinimum' in rule and value <= rule['exclusiveMinimum']:
        raise ConfigError(f"{key} must be > {rule['exclusiveMinimum']}, got {value}")
    if 'exclusiveMaximum' in rule and value >= rule['exclusiveMaximum']:
        raise ConfigError(f"{key} must be < {rule['exclusiveMaximum']}, got {value}")
    return value


def validate_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """Coerce and range-check every key; return a new dict"""
    checked = {key: _coerce(key, value) for key, value in config.items()}
    low = checked.get('village_mean_low', DEFAULT_CONFIG['village_mean_low'])
    high = checked.get('village_mean_high', DEFAULT_CONFIG['village_mean_high'])
    if low > high:
        raise ConfigError(f"village_mean_low ({low}) exceeds village_mean_high ({high})")
    return checked


def load_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Merge defaults, environment, an optional JSON config file and explicit overrides.

    Later sources win. ``None`` values in ``overrides`` are ignored so unset CLI flags
    do not mask file or environment values.
    """
    load_dotenv()
    config = dict(DEFAULT_CONFIG)

    for env_name, key in ENV_VARS.items():
        value = os.getenv(env_name)
        if value:
            config[key] = _coerce(key, value)

    if path is not None:
        try:
            with open(path, encoding='utf-8') as f:
                file_config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {str(e)}")
        if not isinstance(file_config, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        config.update(validate_config(file_config))
        logger.debug(f"Loaded configuration from {path}")

    if overrides:
        config.update(validate_config({k: v for k, v in overrides.items() if v is not None}))

    return validate_config(config)


def write_schema(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(CONFIG_SCHEMA, f, indent=2, sort_keys=True)
        f.write('\n')
    return path
