"""Shared agent machinery: estimator base, replay buffer, exploration schedule."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..core import EnvSpec
from ..validation import check_observations, check_probability


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.terminated = np.zeros(capacity, dtype=bool)
        self.truncated = np.zeros(capacity, dtype=bool)
        self._head = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, terminated, truncated) -> None:
        i = self._head
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminated[i] = terminated
        self.truncated[i] = truncated
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Distinct indices within a batch; with fewer stored items the whole buffer."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        n = min(batch_size, self.size)
        idx = rng.choice(self.size, size=n, replace=False)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "terminated": self.terminated[idx],
            "truncated": self.truncated[idx],
        }


class EpsilonSchedule:
    """Linear decay from ``start`` to ``end`` over ``horizon`` steps, then flat."""

    def __init__(self, start: float = 1.0, end: float = 0.005, horizon: int = 10_000):
        self.start = check_probability(start, "start")
        self.end = check_probability(end, "end")
        if self.end > self.start:
            raise ValueError("end must not exceed start")
        self.horizon = max(int(horizon), 1)

    def __call__(self, step: int) -> float:
        frac = min(max(step, 0) / self.horizon, 1.0)
        return self.start + frac * (self.end - self.start)


class ObservationScaler:
    """Maps observations onto roughly [0, 1] using the declared component ranges."""

    def __init__(self, spec: EnvSpec):
        self.lo = np.asarray(spec.observation_low, dtype=np.float64)
        self.hi = np.asarray(spec.observation_high, dtype=np.float64)
        self.log = np.asarray(spec.log_scaled, dtype=bool)
        span = self.hi - self.lo
        self.span = np.where(span > 0, span, 1.0)
        self.log_hi = np.log10(1.0 + np.maximum(self.hi, 0.0))

    def __call__(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        lin = (obs - self.lo) / self.span
        if not self.log.any():
            return lin
        logv = np.log10(1.0 + np.maximum(obs, 0.0)) / np.where(self.log_hi > 0, self.log_hi, 1.0)
        return np.where(self.log, logv, lin)


def greedy(q: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(q, axis=-1)


class Agent(BaseEstimator):
    """Common estimator surface for every policy.

    ``fit(env)`` learns from interaction, ``decision_function(obs)`` returns
    per-action values, ``predict(obs)`` the greedy action per row and
    ``act(obs, eps, rng)`` the epsilon-greedy action for a single observation.
    """

    name = "agent"
    eps_test = 0.005

    def _setup(self, spec: EnvSpec) -> None:
        self.obs_dim_ = spec.observation_dim
        self.n_actions_ = spec.action_count
        self.env_name_ = spec.name

    def decision_function(self, obs) -> np.ndarray:
        raise NotImplementedError

    def predict(self, obs) -> np.ndarray:
        check_is_fitted(self, "n_actions_")
        return greedy(self.decision_function(obs))

    def act(self, obs, eps: float, rng: np.random.Generator) -> int:
        check_is_fitted(self, "n_actions_")
        if rng.random() < eps:
            return int(rng.integers(self.n_actions_))
        return int(self.predict(obs)[0])

    def _check_obs(self, obs) -> np.ndarray:
        check_is_fitted(self, "n_actions_")
        return check_observations(obs, self.obs_dim_)

    # checkpoint hooks
    def _restore(self, spec: EnvSpec) -> None:
        """Recreate fitted structure for ``spec`` before loading arrays."""
        self._setup(spec)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        pass

    def __sklearn_is_fitted__(self):
        return hasattr(self, "n_actions_")
