"""Tabular Q-learning for environments with finitely many observations."""
from __future__ import annotations

import numpy as np

from ..core import DISCOUNT, STREAM_POLICY, derive_seed, rng_stream
from ..validation import check_env, check_positive_int, check_probability
from .base import Agent, EpsilonSchedule

_TRAIN_KEY = 0x7A1B


def tabular_q_update(table: dict, key, action: int, reward: float, next_key,
                     terminated: bool, alpha: float, gamma: float, n_actions: int) -> dict:
    """One Q-learning backup in place; unseen keys start at zero."""
    q = table.setdefault(key, np.zeros(n_actions))
    if terminated:
        target = reward
    else:
        nxt = table.get(next_key)
        target = reward + gamma * (0.0 if nxt is None else float(nxt.max()))
    q[action] += alpha * (target - q[action])
    return table


class TabularQAgent(Agent):
    """Epsilon-greedy Q-learning over exact observation vectors."""

    name = "tabular-q"

    def __init__(self, alpha: float = 0.05, gamma: float = DISCOUNT, total_steps: int = 1_000_000,
                 eps_start: float = 1.0, eps_end: float = 0.005, eps_decay_fraction: float = 0.5,
                 random_state: int = 0):
        self.alpha = alpha
        self.gamma = gamma
        self.total_steps = total_steps
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_decay_fraction = eps_decay_fraction
        self.random_state = random_state

    @staticmethod
    def key(obs) -> bytes:
        return np.round(np.asarray(obs, dtype=np.float64), 9).tobytes()

    def fit(self, env, total_steps: int | None = None):
        env = check_env(env)
        alpha = check_probability(self.alpha, "alpha")
        steps = check_positive_int(total_steps or self.total_steps, "total_steps")
        self._setup(env.spec)
        self.table_ = {}
        sched = EpsilonSchedule(self.eps_start, self.eps_end, int(steps * self.eps_decay_fraction))
        rng = rng_stream(derive_seed(self.random_state, _TRAIN_KEY), STREAM_POLICY)
        n_act = self.n_actions_
        step = 0
        episode = 0
        self.episode_returns_ = []
        while step < steps:
            obs, _ = env.reset(seed=derive_seed(self.random_state, _TRAIN_KEY, episode))
            episode += 1
            k = self.key(obs)
            done = False
            total = 0.0
            while not done and step < steps:
                eps = sched(step)
                if rng.random() < eps:
                    a = int(rng.integers(n_act))
                else:
                    q = self.table_.get(k)
                    a = 0 if q is None else int(np.argmax(q))
                obs, r, term, trunc, _ = env.step(a)
                k2 = self.key(obs)
                tabular_q_update(self.table_, k, a, r, k2, term, alpha, self.gamma, n_act)
                k = k2
                total += r
                done = term or trunc
                step += 1
            self.episode_returns_.append(total)
        self.steps_ = step
        return self

    def decision_function(self, obs) -> np.ndarray:
        obs = self._check_obs(obs)
        out = np.zeros((obs.shape[0], self.n_actions_))
        for i, row in enumerate(obs):
            q = self.table_.get(self.key(row))
            if q is not None:
                out[i] = q
        return out

    def state_arrays(self):
        keys = sorted(self.table_)
        if keys:
            k = np.stack([np.frombuffer(key, dtype=np.float64) for key in keys])
            q = np.stack([self.table_[key] for key in keys])
        else:
            k = np.zeros((0, self.obs_dim_))
            q = np.zeros((0, self.n_actions_))
        return {"keys": k, "values": q}

    def load_state_arrays(self, arrays):
        self.table_ = {self.key(k): np.array(v) for k, v in zip(arrays["keys"], arrays["values"])}
