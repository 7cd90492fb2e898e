"""Simulated dynamic-treatment-regime environments with value-based RL agents."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("dtrsim")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .agents import ALGORITHMS, load_agent, make_agent, save_agent
from .core import DISCOUNT, Env, EnvSpec, StepResult, Trajectory, derive_seed, rng_stream
from .envs import ENVIRONMENTS, AhnChemoEnv, GhaffariCancerEnv, OberstSepsisEnv, SimGlucoseEnv, make_env
from .realism import SETTINGS, RealismConfig, RealismEnv, make_setting

__all__ = [
    "ALGORITHMS", "DISCOUNT", "ENVIRONMENTS", "SETTINGS", "AhnChemoEnv", "Env", "EnvSpec",
    "GhaffariCancerEnv", "OberstSepsisEnv", "RealismConfig", "RealismEnv", "SimGlucoseEnv",
    "StepResult", "Trajectory", "__version__", "derive_seed", "load_agent", "make_agent",
    "make_env", "make_setting", "rng_stream", "save_agent",
]
