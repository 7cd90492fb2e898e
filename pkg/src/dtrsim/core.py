"""POMDP environment contract, seeded random streams and episode records."""
from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np

DISCOUNT = 0.95

# stream ids; each consumer of randomness gets its own stream so that
# switching one source off never shifts the draws of another
STREAM_DYNAMICS = 0
STREAM_PKPD = 1
STREAM_NOISE = 2
STREAM_MASK = 3
STREAM_SCENARIO = 4
STREAM_POLICY = 5
STREAM_RESET = 6


class InvalidActionError(ValueError):
    pass


class EpisodeFinishedError(RuntimeError):
    pass


def discount() -> float:
    return DISCOUNT


def discounted_return(rewards: Sequence[float], gamma: float = DISCOUNT) -> float:
    """Sum of ``gamma**k * r_k`` with the first reward undiscounted."""
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + gamma * total
    return total


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream)``.

    Identical pairs always produce identical draw sequences.
    """
    ss = np.random.SeedSequence(entropy=int(seed) % (1 << 64), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(*keys: int) -> int:
    """Deterministic 63-bit seed from a tuple of integers."""
    ss = np.random.SeedSequence([int(k) % (1 << 64) for k in keys])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment's interface.

    ``observation_low``/``observation_high`` are the declared component
    ranges; noise scales and agent input scaling are derived from them.
    ``categorical`` holds the number of levels of each categorical component
    (0 for continuous ones) and ``measured`` marks components subject to
    measurement noise and missingness.
    """

    name: str
    observation_dim: int
    action_count: int
    max_steps: int
    step_interval: float
    observation_names: tuple[str, ...]
    observation_low: tuple[float, ...]
    observation_high: tuple[float, ...]
    categorical: tuple[int, ...] = ()
    measured: tuple[bool, ...] = ()
    log_scaled: tuple[bool, ...] = ()
    state_names: tuple[str, ...] = ()
    action_names: tuple[str, ...] = ()
    time_unit: str = "day"

    def __post_init__(self):
        if self.observation_dim < 1:
            raise ValueError("observation_dim must be >= 1")
        if self.action_count < 2:
            raise ValueError("action_count must be >= 2")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        n = self.observation_dim
        for name in ("observation_names", "observation_low", "observation_high"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have length {n}")
        if not self.categorical:
            object.__setattr__(self, "categorical", (0,) * n)
        if not self.measured:
            object.__setattr__(self, "measured", (True,) * n)
        if not self.log_scaled:
            object.__setattr__(self, "log_scaled", (False,) * n)


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    info: dict


@dataclass
class TrajectoryStep:
    time: float
    observation: np.ndarray
    action: int
    raw_action: np.ndarray
    reward: float
    state: np.ndarray


@dataclass
class Trajectory:
    episode_id: int
    observation_names: tuple[str, ...]
    action_names: tuple[str, ...]
    state_names: tuple[str, ...]
    steps: list[TrajectoryStep] = field(default_factory=list)
    terminated: bool = False
    truncated: bool = False

    @property
    def total_return(self) -> float:
        return float(sum(s.reward for s in self.steps))

    def __len__(self):
        return len(self.steps)


class Env(abc.ABC):
    """Base class for the simulated treatment environments.

    Subclasses declare ``spec`` and implement the hooks ``_reset_state``,
    ``_advance``, ``observe`` and ``action_map``. Action validation, the step
    counter, truncation and the finished-episode guard live here.
    """

    spec: EnvSpec

    def __init__(self):
        self.t = 0
        self._done = True
        self._seed = None
        self._episode = 0
        self.rng = rng_stream(0, STREAM_DYNAMICS)

    # hooks -----------------------------------------------------------
    @abc.abstractmethod
    def _reset_state(self) -> None: ...

    @abc.abstractmethod
    def _advance(self, raw_action) -> tuple[float, bool]:
        """Move the hidden state forward one interval; return (reward, terminated)."""

    @abc.abstractmethod
    def observe(self) -> np.ndarray:
        """Noise-free observation of the current hidden state."""

    @abc.abstractmethod
    def action_map(self, index: int) -> np.ndarray: ...

    @property
    @abc.abstractmethod
    def state(self) -> np.ndarray: ...

    zero_action: int = 0

    @property
    def max_action(self) -> int:
        return self.spec.action_count - 1

    # public API --------------------------------------------------------
    def reset(self, seed: int | None = None, options: dict | None = None):
        if seed is None:
            seed = derive_seed(self._seed or 0, self._episode + 1, STREAM_RESET)
        self._seed = int(seed)
        self._episode += 1
        self.rng = rng_stream(self._seed, STREAM_DYNAMICS)
        self.t = 0
        self._done = False
        self._reset_state()
        return self.observe(), self._info()

    def step(self, action) -> StepResult:
        if self._done:
            raise EpisodeFinishedError("episode has finished; call reset() first")
        index = self.check_action(action)
        raw = self.action_map(index)
        reward, terminated = self._advance(raw)
        self.t += 1
        truncated = (not terminated) and self.t >= self.spec.max_steps
        self._done = terminated or truncated
        info = self._info()
        info["raw_action"] = raw
        return StepResult(self.observe(), float(reward), bool(terminated), bool(truncated), info)

    def check_action(self, action) -> int:
        try:
            index = int(action)
        except (TypeError, ValueError):
            raise InvalidActionError(f"action must be an integer index, got {action!r}") from None
        if index != action or not 0 <= index < self.spec.action_count:
            raise InvalidActionError(
                f"action {action!r} outside [0, {self.spec.action_count}) for {self.spec.name}"
            )
        return index

    @property
    def time(self) -> float:
        return self.t * self.spec.step_interval

    def _info(self) -> dict[str, Any]:
        return {"state": self.state.copy(), "t": self.t, "time": self.time}

    def default_observation(self) -> np.ndarray:
        """Population-typical observation, used to fill values missing before the first measurement."""
        lo = np.asarray(self.spec.observation_low, dtype=np.float64)
        hi = np.asarray(self.spec.observation_high, dtype=np.float64)
        return (lo + hi) / 2

    def sample_params(self, rng: np.random.Generator, spread: float):
        """Draw a virtual patient; see :func:`dtrsim.realism.sample_pkpd`."""
        from .realism import sample_pkpd

        return sample_pkpd(self.default_params, spread, rng)
