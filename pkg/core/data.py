"""
Dataset ingestion, standardization, deterministic splits and the synthetic
generators used by the experiments.
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from infrastructure.errors import ConfigurationError, IngestionError, InputError

logger = logging.getLogger(__name__)

# Example 2 noise variance, matched to the irreducible error floor of the quadratic benchmark
QUADRATIC_NOISE_VARIANCE = 8.6


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray                 # (n, d)
    target: np.ndarray                   # (n,)
    feature_names: Tuple[str, ...]
    target_name: str = "y"
    means: Optional[np.ndarray] = None   # statistics of the fitting rows
    stds: Optional[np.ndarray] = None
    source: str = ""

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return replace(self, features=self.features[rows], target=self.target[rows])

    def inverse_transform(self, standardized: np.ndarray) -> np.ndarray:
        if self.means is None:
            raise ConfigurationError("dataset has no standardization statistics")
        return standardized * self.stds + self.means


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    fractions: Optional[Tuple[float, ...]] = None
    folds: Optional[int] = None


def column_statistics(features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column mean and std; constant columns get the std sentinel 1"""
    if features.shape[0] == 0:
        raise InputError("cannot compute statistics of zero rows")
    means = features.mean(axis=0)
    stds = features.std(axis=0)
    constant = (np.ptp(features, axis=0) == 0) | (stds == 0)
    stds = np.where(constant, 1.0, stds)
    return means, stds


def standardize(data: Dataset, fit_rows: Sequence[int]) -> Dataset:
    fit_rows = np.asarray(fit_rows, dtype=int)
    if fit_rows.size == 0:
        raise InputError("fit_rows is empty")
    means, stds = column_statistics(data.features[fit_rows])
    return replace(
        data,
        features=(data.features - means) / stds,
        means=means,
        stds=stds,
    )


def largest_remainder(n: int, fractions: Sequence[float]) -> List[int]:
    """Integer counts summing to n, leftovers to the largest remainders (earlier wins ties)"""
    quotas = [f * n for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def make_split(n: int, plan: SplitPlan) -> np.ndarray:
    """Role index per row: fraction position for holdout plans, fold number for k-fold plans"""
    if plan.folds is not None:
        if plan.folds < 2:
            raise ConfigurationError(f"fold count must be >= 2, got {plan.folds}")
        if n < plan.folds:
            raise ConfigurationError(f"cannot split {n} rows into {plan.folds} folds")
        fractions = [1.0 / plan.folds] * plan.folds
    elif plan.fractions:
        fractions = list(plan.fractions)
        if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must be nonnegative and sum to 1, got {fractions}")
    else:
        raise ConfigurationError("split plan needs fractions or a fold count")

    counts = largest_remainder(n, fractions)
    order = np.random.default_rng(plan.seed).permutation(n)
    roles = np.empty(n, dtype=int)
    start = 0
    for role, count in enumerate(counts):
        roles[order[start:start + count]] = role
        start += count
    return roles


def role_rows(roles: np.ndarray, role: int) -> np.ndarray:
    return np.flatnonzero(roles == role)


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return np.nan


def _read_numeric_frame(path: str) -> pd.DataFrame:
    """All-numeric frame, or an error locating the first unusable cell"""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise IngestionError(f"file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise IngestionError(f"cannot parse {path}: {e}")

    frame.columns = [str(c).strip() for c in frame.columns]
    cells = frame.apply(lambda col: col.str.strip())
    missing = cells == ""
    if missing.to_numpy().any():
        # data rows start on line 2, after the header
        lines = [int(i) + 2 for i in np.flatnonzero(missing.to_numpy().any(axis=1))]
        raise IngestionError(f"rows with missing values in {path}: lines {lines}", row=lines[0])

    # exact inverse of the repr() formatting used by write_csv
    numeric = cells.apply(lambda col: col.map(_to_float))
    bad = ~np.isfinite(numeric.to_numpy(dtype=np.float64))
    if bad.any():
        row, col = map(int, np.argwhere(bad)[0])
        column = frame.columns[col]
        raise IngestionError(
            f"non-numeric value '{cells.iat[row, col]}' at line {row + 2}, column '{column}' of {path}",
            row=row + 2,
            column=column,
        )
    return numeric


def load_csv(path: str, target_column: str) -> Dataset:
    """Read a numeric CSV; any unusable cell is reported with its row and column"""
    numeric = _read_numeric_frame(path)
    if target_column not in numeric.columns:
        raise ConfigurationError(f"target column '{target_column}' not in {path} (columns: {list(numeric.columns)})")

    feature_names = tuple(c for c in numeric.columns if c != target_column)
    logger.info(f"Loaded {len(numeric)} rows x {len(feature_names)} features from {path}")
    return Dataset(
        features=numeric[list(feature_names)].to_numpy(dtype=np.float64),
        target=numeric[target_column].to_numpy(dtype=np.float64),
        feature_names=feature_names,
        target_name=target_column,
        source=str(path),
    )


def load_features(path: str, feature_names: Sequence[str]) -> np.ndarray:
    """Instance matrix with the named columns; other columns (such as a target) are ignored"""
    numeric = _read_numeric_frame(path)
    absent = [name for name in feature_names if name not in numeric.columns]
    if absent:
        raise InputError(f"{path} lacks feature columns {absent}")
    return numeric[list(feature_names)].to_numpy(dtype=np.float64)


def write_csv(data: Dataset, path: str) -> None:
    """Shortest round-trip float formatting, so a reload is bit-identical"""
    columns: Dict[str, List[str]] = {
        name: [repr(float(v)) for v in data.features[:, j]]
        for j, name in enumerate(data.feature_names)
    }
    columns[data.target_name] = [repr(float(v)) for v in data.target]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(columns).to_csv(path, index=False, encoding="utf-8")


def gen_sin(n: int, seed: int = 0) -> Dataset:
    """y = sin(x), x uniform on [0, 2π], no noise"""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return Dataset(features=x[:, None], target=np.sin(x), feature_names=("x",), source=f"sin:n={n},seed={seed}")


def gen_quadratic(
    n: int,
    n_irrelevant: int = 0,
    seed: int = 0,
    noise_variance: float = QUADRATIC_NOISE_VARIANCE,
) -> Dataset:
    """y = x² + Gaussian noise; irrelevant columns uniform on the same [-5, 5] range"""
    if n < 1 or n_irrelevant < 0:
        raise ConfigurationError("n must be >= 1 and n_irrelevant >= 0")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-5.0, 5.0, size=n)
    y = x ** 2 + rng.normal(0.0, np.sqrt(noise_variance), size=n)
    irrelevant = rng.uniform(-5.0, 5.0, size=(n, n_irrelevant))
    names = ("x",) + tuple(f"irrelevant_{i + 1}" for i in range(n_irrelevant))
    return Dataset(
        features=np.column_stack([x, irrelevant]),
        target=y,
        feature_names=names,
        source=f"quadratic:n={n},irrelevant={n_irrelevant},seed={seed}",
    )


def gen_linear(n: int, d: int = 3, noise: float = 0.1, seed: int = 0) -> Dataset:
    """y = 1 + x·β + noise with β = (1, -2, 3, ...), x uniform on [-2, 2]^d"""
    if n < 1 or d < 1:
        raise ConfigurationError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, size=(n, d))
    beta = np.array([(i + 1) * (-1) ** i for i in range(d)], dtype=np.float64)
    y = 1.0 + x @ beta + rng.normal(0.0, noise, size=n)
    return Dataset(
        features=x,
        target=y,
        feature_names=tuple(f"x{i + 1}" for i in range(d)),
        source=f"linear:n={n},d={d},noise={noise},seed={seed}",
    )


_GENERATORS = {
    "sin": (gen_sin, {"n": int, "seed": int}),
    "quadratic": (gen_quadratic, {"n": int, "irrelevant": int, "seed": int, "noise_variance": float}),
    "linear": (gen_linear, {"n": int, "d": int, "noise": float, "seed": int}),
}


def resolve_data(spec: str, target_column: str = "y") -> Dataset:
    """Either a CSV path or a synthetic spec such as 'quadratic:n=2000,irrelevant=5,seed=0'"""
    name, _, params = spec.partition(":")
    if name not in _GENERATORS or Path(spec).exists():
        return load_csv(spec, target_column)

    generator, types = _GENERATORS[name]
    kwargs = {}
    for item in filter(None, (p.strip() for p in params.split(","))):
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigurationError(f"unknown parameter '{key}' for generator '{name}'")
        try:
            kwargs["n_irrelevant" if key == "irrelevant" else key] = types[key](value.strip())
        except ValueError:
            raise ConfigurationError(f"bad value '{value}' for '{key}' in data spec '{spec}'")
    if "n" not in kwargs:
        raise ConfigurationError(f"data spec '{spec}' needs n=<rows>")
    return generator(**kwargs)
