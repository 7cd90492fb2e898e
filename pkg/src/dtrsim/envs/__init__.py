"""Registered treatment environments."""
from __future__ import annotations

from ..core import Env
from .ahn import AhnChemoEnv
from .ghaffari import GhaffariCancerEnv
from .glucose import SimGlucoseEnv
from .sepsis import OberstSepsisEnv

ENVIRONMENTS = {
    "AhnChemoEnv": AhnChemoEnv,
    "GhaffariCancerEnv": GhaffariCancerEnv,
    "OberstSepsisEnv": OberstSepsisEnv,
    "SimGlucoseEnv": SimGlucoseEnv,
}

ALIASES = {
    "ahn": "AhnChemoEnv",
    "chemo": "AhnChemoEnv",
    "ghaffari": "GhaffariCancerEnv",
    "sepsis": "OberstSepsisEnv",
    "glucose": "SimGlucoseEnv",
}


def resolve_env_name(name: str) -> str:
    key = ALIASES.get(name.lower(), name)
    if key not in ENVIRONMENTS:
        known = ", ".join(sorted(ENVIRONMENTS))
        raise KeyError(f"unknown environment {name!r}; known: {known}")
    return key


def make_env(name: str, **kwargs) -> Env:
    return ENVIRONMENTS[resolve_env_name(name)](**kwargs)


__all__ = [
    "ENVIRONMENTS", "AhnChemoEnv", "GhaffariCancerEnv", "OberstSepsisEnv", "SimGlucoseEnv",
    "make_env", "resolve_env_name",
]
