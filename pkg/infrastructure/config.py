import os
from typing import Dict, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from infrastructure.errors import ConfigurationError
from models.schemas import RunConfig

load_dotenv()

def get_env_variable(var_name: str, default: str = None) -> str:
    """Get environment variable with error handling"""
    value = os.getenv(var_name, default)
    if value is None:
        raise ValueError(f"Environment variable {var_name} is not set")
    return value


def parse_flag(value: str) -> bool:
    """Parse 1/true/yes/on as True"""
    return value.strip().lower() in {"1", "true", "yes", "on"}


# Logging
LOG_LEVEL: str = get_env_variable('NLS_LOG_LEVEL', 'INFO').upper()

# Run output
OUTPUT_DIR: str = get_env_variable('NLS_OUTPUT_DIR', 'runs')
DEFAULT_SEED: int = int(get_env_variable('NLS_DEFAULT_SEED', '0'))

# Serving
MODEL_PATH: str = get_env_variable('NLS_MODEL_PATH', os.path.join(OUTPUT_DIR, 'model.json'))

# Penalization at or above this value is treated as lambda = infinity
LAMBDA_INFINITY: float = float(get_env_variable('NLS_LAMBDA_INFINITY', '1e8'))

# Acceptance runs (minutes each) are opt-in
ACCEPTANCE: bool = parse_flag(get_env_variable('NLS_ACCEPTANCE', '0'))
BOSTON_CSV: str = os.getenv('BOSTON_CSV', '')


# Config-file keys, routed to the part of RunConfig that owns them
TRAINING_KEYS = {
    'hidden_layers': 'hidden_layers',
    'lambda': 'lambda',
    'learning_rate': 'learning_rate',
    'batch_size': 'batch_size',
    'patience': 'patience',
    'validation_fraction': 'validation_fraction',
    'max_epochs': 'max_epochs',
    'seed': 'seed',
    'batch_norm': 'batch_norm',
    'dropout': 'dropout',
    'lr_reduce_patience': 'lr_reduce_patience',
    'lr_reduce_factor': 'lr_reduce_factor',
}
GRID_KEYS = {
    'grid_layers': 'layers',
    'grid_widths': 'widths',
    'grid_sigmas': 'sigmas',
    'sigma_grid': 'sigmas',
    'lambdas': 'lambdas',
}
RUN_KEYS = {'model', 'target', 'test_fraction', 'folds', 'sigma', 'ridge'}


def run_config_from_mapping(values: Dict[str, Optional[str]], source: str = "<config>") -> RunConfig:
    """Validate flat key=value pairs into a RunConfig"""
    run, training, grid = {}, {}, {}
    for key, value in values.items():
        key = key.strip().lower()
        if value is None or value.strip() == '':
            raise ConfigurationError(f"{source}: key '{key}' has no value")
        value = value.strip()
        if key in TRAINING_KEYS:
            training[TRAINING_KEYS[key]] = value
        elif key in GRID_KEYS:
            grid[GRID_KEYS[key]] = value
        elif key in RUN_KEYS:
            run[key] = value
        else:
            raise ConfigurationError(f"{source}: unknown key '{key}'")
    try:
        return RunConfig.model_validate({**run, 'nls': training, 'grid': grid})
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first['loc'])
        raise ConfigurationError(f"{source}: invalid value for '{field}': {first['msg']}")


def load_run_config(path: Optional[str]) -> RunConfig:
    """Read a key=value config file; no path means all defaults"""
    if not path:
        return RunConfig()
    if not os.path.isfile(path):
        raise ConfigurationError(f"config file not found: {path}")
    return run_config_from_mapping(dotenv_values(path), source=path)
