"""Input validation helpers shared by the functional API and the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_sample(sample, min_size: int = 1) -> np.ndarray:
    """Return ``sample`` as a finite 1-D float array with at least ``min_size`` points."""
    if isinstance(sample, np.ndarray) and sample.ndim == 1 and sample.dtype == np.float64:
        # Fast path for the inner loops of the Monte Carlo experiments.
        if sample.size < min_size:
            raise ValueError(f"sample needs at least {min_size} points, got {sample.size}")
        if not np.isfinite(sample.sum()) and not np.all(np.isfinite(sample)):
            raise ValueError("sample contains NaN or infinity")
        return sample
    x = check_array(sample, ensure_2d=False, dtype=np.float64, ensure_min_samples=0, input_name="sample")
    if x.ndim == 2 and 1 in x.shape:
        x = x.ravel()
    if x.ndim != 1:
        raise ValueError(f"sample must be one-dimensional, got shape {x.shape}")
    if x.size < min_size:
        raise ValueError(f"sample needs at least {min_size} points, got {x.size}")
    return x


def check_square(a, name: str = "A") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def check_even_budget(c: int, name: str = "c") -> int:
    if int(c) != c or c < 2 or int(c) % 2:
        raise ValueError(f"{name} must be an even integer >= 2, got {c}")
    return int(c)
