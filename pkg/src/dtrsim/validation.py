"""Input validation helpers shared by agents, the harness and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .core import Env


def check_env(env) -> Env:
    if not isinstance(env, Env):
        raise TypeError(f"expected an Env instance, got {type(env).__name__}")
    return env


def check_observations(obs, width: int) -> np.ndarray:
    """2-D float array of observations with ``width`` columns; a 1-D vector becomes one row."""
    arr = np.asarray(obs, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    arr = check_array(arr, dtype=np.float64, ensure_all_finite=True)
    if arr.shape[1] != width:
        raise ValueError(f"observations have {arr.shape[1]} columns, expected {width}")
    return arr


def check_probability(value: float, name: str, *, closed_right: bool = True) -> float:
    value = float(value)
    ok = 0.0 <= value <= 1.0 if closed_right else 0.0 <= value < 1.0
    if not ok:
        bound = "]" if closed_right else ")"
        raise ValueError(f"{name} must lie in [0, 1{bound}, got {value}")
    return value


def check_positive_int(value, name: str) -> int:
    if int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_seeds(seeds) -> list[int]:
    seeds = [int(s) for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    return seeds
