"""Value-based deep learners: DQN, double DQN, dueling double DQN and C51."""
from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_is_fitted

from ..core import DISCOUNT, STREAM_POLICY, derive_seed, rng_stream
from ..nn import Adam, Mlp, clip_by_global_norm, load_net_arrays, net_arrays, polyak_update
from ..validation import check_env, check_positive_int
from .base import Agent, EpsilonSchedule, ObservationScaler, ReplayBuffer, greedy

VARIANTS = ("dqn", "ddqn", "ddqn-duel", "c51")
_TRAIN_KEY = 0xD0D0
_INIT_KEY = 0x1417


# ------------------------------------------------------------ target rules
def _bootstrap(rewards, terminated, gamma, next_values):
    """``r + gamma * v'`` with the bootstrap dropped on termination only."""
    return np.asarray(rewards, dtype=np.float64) + gamma * (1.0 - np.asarray(terminated, dtype=np.float64)) * next_values


def dqn_target(rewards, terminated, next_q_target, gamma: float = DISCOUNT) -> np.ndarray:
    """``y = r + gamma * max_a' Q(s', a'; target)``."""
    return _bootstrap(rewards, terminated, gamma, np.max(next_q_target, axis=1))


def ddqn_target(rewards, terminated, next_q_online, next_q_target, gamma: float = DISCOUNT) -> np.ndarray:
    """Online network picks the next action, target network evaluates it."""
    a = greedy(next_q_online)
    v = np.take_along_axis(np.asarray(next_q_target), a[:, None], axis=1)[:, 0]
    return _bootstrap(rewards, terminated, gamma, v)


def dueling_combine(value, advantages) -> np.ndarray:
    """``Q = V + A - mean(A)``; works on a single row or a batch."""
    a = np.asarray(advantages, dtype=np.float64)
    v = np.asarray(value, dtype=np.float64)
    if a.ndim == 1:
        return v + a - a.mean()
    return v.reshape(-1, 1) + a - a.mean(axis=1, keepdims=True)


def dueling_backward(grad_q) -> np.ndarray:
    """Gradient w.r.t. the stacked head outputs ``[V, A_1..A_n]`` given dL/dQ."""
    g = np.asarray(grad_q, dtype=np.float64)
    gv = g.sum(axis=1, keepdims=True)
    ga = g - g.mean(axis=1, keepdims=True)
    return np.concatenate([gv, ga], axis=1)


def c51_project(next_dist, rewards, gammas, support) -> np.ndarray:
    """Project ``r + gamma * z`` back onto ``support``.

    ``next_dist`` has shape (batch, atoms) or (atoms,); ``gammas`` already
    carries the termination mask. Mass landing between two atoms is split
    linearly between them; anything beyond the ends is clamped.
    """
    z = np.asarray(support, dtype=np.float64)
    p = np.asarray(next_dist, dtype=np.float64)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    n_atoms = z.shape[0]
    b_size = p.shape[0]
    r = np.broadcast_to(np.asarray(rewards, dtype=np.float64), (b_size,))
    g = np.broadcast_to(np.asarray(gammas, dtype=np.float64), (b_size,))
    v_min, v_max = z[0], z[-1]
    dz = (v_max - v_min) / (n_atoms - 1)
    tz = np.clip(r[:, None] + g[:, None] * z[None, :], v_min, v_max)
    b = (tz - v_min) / dz
    lower = np.floor(b).astype(np.int64)
    upper = np.ceil(b).astype(np.int64)
    lower = np.clip(lower, 0, n_atoms - 1)
    upper = np.clip(upper, 0, n_atoms - 1)
    # on-grid targets: give all mass to that atom
    same = lower == upper
    w_upper = np.where(same, 0.0, b - lower)
    w_lower = np.where(same, 1.0, upper - b)
    out = np.zeros_like(p)
    rows = np.repeat(np.arange(b_size), n_atoms).reshape(b_size, n_atoms)
    np.add.at(out, (rows, lower), p * w_lower)
    np.add.at(out, (rows, upper), p * w_upper)
    return out[0] if single else out


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class DQNAgent(Agent):
    """Deep Q-learning family trained with replay and a target network.

    ``variant`` selects the target rule and head: ``dqn`` (max over the
    target network), ``ddqn`` (online argmax, target evaluation),
    ``ddqn-duel`` (double targets with a value/advantage head) and ``c51``
    (51-atom categorical return distribution).

    Training alternates between collecting ``step_per_collect`` transitions
    and running ``ceil(update_per_step * step_per_collect)`` gradient steps.
    With ``target_update_freq == 1`` the target network follows the online
    one by Polyak averaging with rate ``tau`` after every gradient step;
    otherwise it is hard-copied every ``target_update_freq`` gradient steps.
    """

    def __init__(self, variant: str = "dqn", hidden: tuple = (128, 128), lr: float = 1e-3,
                 batch_size: int = 128, batch_norm: bool = False, dropout: float = 0.0,
                 target_update_freq: int = 1, tau: float = 0.001, update_per_step: float = 0.1,
                 step_per_collect: int = 50, gamma: float = DISCOUNT, total_steps: int = 200_000,
                 buffer_size: int = 100_000, eps_start: float = 1.0, eps_end: float = 0.005,
                 eps_decay_fraction: float = 0.5, eps_test: float = 0.005, loss: str = "huber",
                 grad_clip: float = 10.0, v_min: float = -10.0, v_max: float = 10.0,
                 n_atoms: int = 51, learning_starts: int | None = None, random_state: int = 0):
        self.variant = variant
        self.hidden = hidden
        self.lr = lr
        self.batch_size = batch_size
        self.batch_norm = batch_norm
        self.dropout = dropout
        self.target_update_freq = target_update_freq
        self.tau = tau
        self.update_per_step = update_per_step
        self.step_per_collect = step_per_collect
        self.gamma = gamma
        self.total_steps = total_steps
        self.buffer_size = buffer_size
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_decay_fraction = eps_decay_fraction
        self.eps_test = eps_test
        self.loss = loss
        self.grad_clip = grad_clip
        self.v_min = v_min
        self.v_max = v_max
        self.n_atoms = n_atoms
        self.learning_starts = learning_starts
        self.random_state = random_state

    @property
    def name(self):
        return self.variant

    # ------------------------------------------------------------ building
    def _validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.loss not in ("huber", "squared"):
            raise ValueError("loss must be 'huber' or 'squared'")
        if self.variant == "c51" and not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.step_per_collect, "step_per_collect")
        check_positive_int(self.target_update_freq, "target_update_freq")

    def _out_width(self) -> int:
        a = self.n_actions_
        if self.variant == "ddqn-duel":
            return a + 1
        if self.variant == "c51":
            return a * self.n_atoms
        return a

    def _build(self, spec):
        self._setup(spec)
        self.scaler_ = ObservationScaler(spec)
        init = rng_stream(derive_seed(self.random_state, _INIT_KEY), STREAM_POLICY)
        sizes = [spec.observation_dim, *self.hidden, self._out_width()]
        self.q_net_ = Mlp(sizes, batch_norm=self.batch_norm, dropout=self.dropout, rng=init)
        self.target_net_ = self.q_net_.copy()
        self.support_ = np.linspace(self.v_min, self.v_max, self.n_atoms)

    def _values(self, net: Mlp, x: np.ndarray, train=False, rng=None) -> np.ndarray:
        out = net.forward(x, train=train, rng=rng)
        if self.variant == "ddqn-duel":
            return dueling_combine(out[:, 0], out[:, 1:])
        if self.variant == "c51":
            p = _softmax(out.reshape(len(x), self.n_actions_, self.n_atoms))
            return p @ self.support_
        return out

    def _dist(self, net: Mlp, x, train=False, rng=None) -> np.ndarray:
        out = net.forward(x, train=train, rng=rng)
        return _softmax(out.reshape(len(x), self.n_actions_, self.n_atoms))

    # ------------------------------------------------------------ learning
    def _loss_and_grads(self, batch, rng) -> tuple[float, list[np.ndarray]]:
        """Training loss on ``batch`` and its gradient for every online parameter."""
        x, a = batch["obs"], batch["actions"]
        r, term = batch["rewards"], batch["terminated"]
        x2 = batch["next_obs"]
        n = len(a)
        rows = np.arange(n)
        gamma = self.gamma
        # targets first: the training forward pass must be the last one before backward
        if self.variant == "c51":
            pnext = self._dist(self.target_net_, x2)
            a_star = greedy(pnext @ self.support_)
            m = c51_project(pnext[rows, a_star], r, gamma * (1.0 - term), self.support_)
            p = self._dist(self.q_net_, x, train=True, rng=rng)
            pa = p[rows, a]
            loss = float(-(m * np.log(pa + 1e-12)).sum(axis=1).mean())
            g = np.zeros_like(p)
            g[rows, a] = (pa - m) / n
            grad_out = g.reshape(n, -1)
        else:
            q_next_t = self._values(self.target_net_, x2)
            if self.variant == "dqn":
                y = dqn_target(r, term, q_next_t, gamma)
            else:
                y = ddqn_target(r, term, self._values(self.q_net_, x2), q_next_t, gamma)
            q = self._values(self.q_net_, x, train=True, rng=rng)
            diff = q[rows, a] - y
            gq = np.zeros_like(q)
            if self.loss == "huber":
                loss = float(np.where(np.abs(diff) <= 1, 0.5 * diff ** 2, np.abs(diff) - 0.5).mean())
                gq[rows, a] = np.clip(diff, -1.0, 1.0) / n
            else:
                loss = float((diff ** 2).mean())
                gq[rows, a] = 2.0 * diff / n
            grad_out = dueling_backward(gq) if self.variant == "ddqn-duel" else gq
        return loss, self.q_net_.backward(grad_out)

    def _update(self, batch, rng) -> float:
        loss, grads = self._loss_and_grads(batch, rng)
        self.optim_.step(clip_by_global_norm(grads, self.grad_clip))
        self.n_updates_ += 1
        if self.target_update_freq == 1:
            polyak_update(self.target_net_, self.q_net_, self.tau)
        elif self.n_updates_ % self.target_update_freq == 0:
            polyak_update(self.target_net_, self.q_net_, 1.0)
        return loss

    def fit(self, env, total_steps: int | None = None, callback=None):
        """Train on ``env`` for ``total_steps`` environment steps.

        ``callback(agent, step)``, if given, runs after every collect round
        and may return ``True`` to stop early.
        """
        env = check_env(env)
        self._validate()
        steps = check_positive_int(total_steps or self.total_steps, "total_steps")
        self._build(env.spec)
        self.optim_ = Adam(self.q_net_.params, lr=self.lr)
        self.n_updates_ = 0
        buf = ReplayBuffer(min(self.buffer_size, steps), self.obs_dim_)
        rng = rng_stream(derive_seed(self.random_state, _TRAIN_KEY), STREAM_POLICY)
        sched = EpsilonSchedule(self.eps_start, self.eps_end, int(steps * self.eps_decay_fraction))
        start = self.learning_starts if self.learning_starts is not None else self.batch_size
        n_upd = math.ceil(self.update_per_step * self.step_per_collect)
        episode = 0
        obs, _ = env.reset(seed=derive_seed(self.random_state, _TRAIN_KEY, episode))
        x = self.scaler_(obs)
        total = 0.0
        self.episode_returns_ = []
        self.losses_ = []
        step = 0
        while step < steps:
            for _ in range(self.step_per_collect):
                if step >= steps:
                    break
                if rng.random() < sched(step):
                    a = int(rng.integers(self.n_actions_))
                else:
                    a = int(greedy(self._values(self.q_net_, x[None, :]))[0])
                obs, r, term, trunc, _ = env.step(a)
                x2 = self.scaler_(obs)
                buf.add(x, a, r, x2, term, trunc)
                total += r
                step += 1
                if term or trunc:
                    self.episode_returns_.append(total)
                    total = 0.0
                    episode += 1
                    obs, _ = env.reset(seed=derive_seed(self.random_state, _TRAIN_KEY, episode))
                    x2 = self.scaler_(obs)
                x = x2
            if len(buf) >= start:
                for _ in range(n_upd):
                    self.losses_.append(self._update(buf.sample(self.batch_size, rng), rng))
            if callback is not None and callback(self, step):
                break
        self.steps_ = step
        return self

    # ----------------------------------------------------------- inference
    def decision_function(self, obs) -> np.ndarray:
        obs = self._check_obs(obs)
        return self._values(self.q_net_, self.scaler_(obs))

    def act(self, obs, eps: float, rng: np.random.Generator) -> int:
        check_is_fitted(self, "q_net_")
        if rng.random() < eps:
            return int(rng.integers(self.n_actions_))
        x = self.scaler_(np.asarray(obs, dtype=np.float64))[None, :]
        return int(greedy(self._values(self.q_net_, x))[0])

    def _restore(self, spec):
        self._validate()
        self._build(spec)

    def state_arrays(self):
        out = net_arrays(self.q_net_, "online.")
        out.update(net_arrays(self.target_net_, "target."))
        return out

    def load_state_arrays(self, arrays):
        load_net_arrays(self.q_net_, arrays, "online.")
        load_net_arrays(self.target_net_, arrays, "target.")
