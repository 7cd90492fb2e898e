"""Fixed reference policies: uniform random, no treatment, maximum treatment."""
from __future__ import annotations

import numpy as np

from .base import Agent

BASELINES = ("random", "zero-drug", "max-drug")


class BaselinePolicy(Agent):
    """``kind`` is one of ``random``, ``zero-drug`` or ``max-drug``.

    Zero-drug always picks the environment's no-treatment index and max-drug
    its maximum-treatment index. The random policy ignores ``eps`` and is
    uniform at every step.
    """

    def __init__(self, kind: str = "random"):
        self.kind = kind

    @property
    def name(self):
        return self.kind

    def fit(self, env, **_):
        if self.kind not in BASELINES:
            raise ValueError(f"unknown baseline {self.kind!r}; expected one of {BASELINES}")
        self._setup(env.spec)
        self.zero_action_ = int(env.zero_action)
        self.max_action_ = int(env.max_action)
        return self

    def _choice(self) -> int:
        return self.zero_action_ if self.kind == "zero-drug" else self.max_action_

    def decision_function(self, obs) -> np.ndarray:
        obs = self._check_obs(obs)
        q = np.zeros((obs.shape[0], self.n_actions_))
        if self.kind != "random":
            q[:, self._choice()] = 1.0
        return q

    def act(self, obs, eps: float, rng: np.random.Generator) -> int:
        if self.kind == "random":
            return int(rng.integers(self.n_actions_))
        return self._choice()

    def state_arrays(self):
        return {"fixed_actions": np.array([self.zero_action_, self.max_action_], dtype=np.float64)}

    def load_state_arrays(self, arrays):
        self.zero_action_, self.max_action_ = (int(v) for v in arrays["fixed_actions"])


class RandomPolicy(BaselinePolicy):
    def __init__(self, kind: str = "random"):
        super().__init__(kind)


class ZeroDrugPolicy(BaselinePolicy):
    def __init__(self, kind: str = "zero-drug"):
        super().__init__(kind)


class MaxDrugPolicy(BaselinePolicy):
    def __init__(self, kind: str = "max-drug"):
        super().__init__(kind)
