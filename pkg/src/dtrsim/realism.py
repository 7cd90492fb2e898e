"""Benchmark settings: PK/PD variance, observation noise and missing values.

Settings are cumulative: ``p`` is the original environment, ``p1`` adds a
fresh virtual patient per episode, ``p2`` adds measurement noise and ``p3``
adds missing values with presence flags. Each source of randomness draws
from its own stream, so zeroing the noise and missingness of ``p3`` leaves
the ``p1`` trajectory bit-identical.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .core import (
    STREAM_MASK, STREAM_NOISE, STREAM_PKPD, STREAM_RESET, STREAM_SCENARIO, Env, EnvSpec,
    StepResult, derive_seed, rng_stream,
)

SETTINGS = ("p", "p1", "p2", "p3")
FILL_POLICIES = ("locf", "default")


@dataclass(frozen=True)
class RealismConfig:
    setting: str = "p"
    pkpd_spread: float = 0.2
    noise_scale: float = 0.05
    flip_prob: float = 0.05
    missing_ratio: float = 0.2
    fill: str = "locf"

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if not 0.0 <= self.pkpd_spread < 1.0:
            raise ValueError("pkpd_spread must lie in [0, 1)")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        if not 0.0 <= self.missing_ratio < 1.0:
            raise ValueError("missing_ratio must lie in [0, 1)")
        if self.fill not in FILL_POLICIES:
            raise ValueError(f"fill must be one of {FILL_POLICIES}")

    @property
    def level(self) -> int:
        return SETTINGS.index(self.setting)

    @property
    def pkpd(self) -> bool:
        return self.level >= 1

    @property
    def noise(self) -> bool:
        return self.level >= 2

    @property
    def missing(self) -> bool:
        return self.level >= 3


def sample_pkpd(params, spread: float, rng: np.random.Generator):
    """Scale every parameter by an independent U(1 - spread, 1 + spread) factor.

    ``params`` is a parameter array or a frozen dataclass. Dataclass fields
    flagged ``pkpd=False`` are left alone and fields flagged as probabilities
    are clamped to [0, 1].
    """
    if not 0.0 <= spread < 1.0:
        raise ValueError("spread must lie in [0, 1)")
    if not dataclasses.is_dataclass(params):
        theta = np.asarray(params, dtype=np.float64)
        return theta * rng.uniform(1.0 - spread, 1.0 + spread, size=theta.shape)
    fields = dataclasses.fields(params)
    factors = rng.uniform(1.0 - spread, 1.0 + spread, size=len(fields))
    changes = {}
    for f, s in zip(fields, factors):
        if not f.metadata.get("pkpd", True):
            continue
        value = getattr(params, f.name) * s
        if f.metadata.get("probability"):
            value = min(max(value, 0.0), 1.0)
        changes[f.name] = value
    return dataclasses.replace(params, **changes)


def _ranges(spec: EnvSpec):
    lo = np.asarray(spec.observation_low, dtype=np.float64)
    hi = np.asarray(spec.observation_high, dtype=np.float64)
    return lo, hi


def apply_noise(obs, noise_scale: float, rng: np.random.Generator, spec: EnvSpec,
                flip_prob: float = 0.05) -> np.ndarray:
    """Measurement noise on the measured components of ``obs``.

    Continuous components get Gaussian noise with standard deviation
    ``noise_scale`` times the declared range and are clipped back into it.
    Log-scaled components are noised the same way in log10(1 + x) space.
    Categorical components (stored as level / (levels - 1)) move one level
    up or down with probability ``flip_prob``. Draws are made for every
    component so the stream position never depends on the values.
    """
    obs = np.asarray(obs, dtype=np.float64)
    out = obs.copy()
    n = obs.shape[0]
    z = rng.standard_normal(n)
    u = rng.random(n)
    lo, hi = _ranges(spec)
    for i in range(n):
        if not spec.measured[i]:
            continue
        levels = spec.categorical[i]
        if levels:
            if u[i] < flip_prob:
                k = round(obs[i] * (levels - 1))
                k += -1 if u[i] < flip_prob / 2 else 1
                out[i] = min(max(k, 0), levels - 1) / (levels - 1)
        elif noise_scale > 0:
            if spec.log_scaled[i]:
                a, b = np.log10(1.0 + lo[i]), np.log10(1.0 + hi[i])
                v = np.log10(1.0 + obs[i]) + z[i] * noise_scale * (b - a)
                out[i] = 10.0 ** min(max(v, a), b) - 1.0
            else:
                v = obs[i] + z[i] * noise_scale * (hi[i] - lo[i])
                out[i] = min(max(v, lo[i]), hi[i])
    return out


def apply_mask(obs, missing_ratio: float, rng: np.random.Generator, fill_values,
               measured=None) -> tuple[np.ndarray, np.ndarray]:
    """Hide each measured component independently with probability ``missing_ratio``.

    Returns the filled observation and the presence flags (1 observed, 0
    masked). Masked components take the matching entry of ``fill_values``.
    """
    obs = np.asarray(obs, dtype=np.float64)
    u = rng.random(obs.shape[0])
    present = u >= missing_ratio
    if measured is not None:
        present |= ~np.asarray(measured, dtype=bool)
    out = np.where(present, obs, np.asarray(fill_values, dtype=np.float64))
    return out, present.astype(np.float64)


class RealismEnv(Env):
    """Wraps an environment to produce one of the benchmark settings.

    ``info["clean_observation"]`` holds the unperturbed observation so the
    observation error can be measured. Under ``p3`` the presence flags are
    appended after the observation components.
    """

    def __init__(self, env: Env, config: RealismConfig | None = None):
        super().__init__()
        self.env = env
        self.config = config or RealismConfig()
        base = env.spec
        if self.config.missing:
            n = base.observation_dim
            self.spec = dataclasses.replace(
                base,
                observation_dim=2 * n,
                observation_names=base.observation_names
                + tuple(f"{name}_present" for name in base.observation_names),
                observation_low=base.observation_low + (0.0,) * n,
                observation_high=base.observation_high + (1.0,) * n,
                categorical=base.categorical + (2,) * n,
                measured=base.measured + (False,) * n,
                log_scaled=base.log_scaled + (False,) * n,
            )
        else:
            self.spec = base
        self._last = None

    # the wrapped environment owns the state and step counter
    @property
    def state(self):
        return self.env.state

    @property
    def t(self):
        return self.env.t

    @t.setter
    def t(self, value):
        pass

    @property
    def zero_action(self):
        return self.env.zero_action

    def observe(self):
        return self._last

    def action_map(self, index):
        return self.env.action_map(index)

    def _reset_state(self):
        raise NotImplementedError

    def _advance(self, raw):
        raise NotImplementedError

    def default_observation(self):
        return self.env.default_observation()

    def reset(self, seed: int | None = None, options: dict | None = None):
        if seed is None:
            seed = derive_seed(self._seed or 0, self._episode + 1, STREAM_RESET)
        self._seed = int(seed)
        self._episode += 1
        cfg = self.config
        env = self.env
        if cfg.pkpd:
            env.params = env.sample_params(rng_stream(seed, STREAM_PKPD), cfg.pkpd_spread)
            if hasattr(env, "sample_scenario"):
                env.meals = env.sample_scenario(rng_stream(seed, STREAM_SCENARIO), cfg.pkpd_spread)
        else:
            env.params = env.default_params
            if hasattr(env, "default_meals"):
                env.meals = env.default_meals
        self._noise_rng = rng_stream(seed, STREAM_NOISE)
        self._mask_rng = rng_stream(seed, STREAM_MASK)
        self._carry = env.default_observation()
        clean, info = env.reset(seed=seed, options=options)
        self._last = self._perceive(clean)
        info["clean_observation"] = clean
        return self._last.copy(), info

    def _perceive(self, clean):
        cfg = self.config
        base = self.env.spec
        obs = clean
        if cfg.noise:
            obs = apply_noise(obs, cfg.noise_scale, self._noise_rng, base, cfg.flip_prob)
        if cfg.missing:
            fill = self._carry if cfg.fill == "locf" else self.env.default_observation()
            obs, present = apply_mask(obs, cfg.missing_ratio, self._mask_rng, fill, base.measured)
            self._carry = obs
            obs = np.concatenate([obs, present])
        return obs

    def step(self, action) -> StepResult:
        res = self.env.step(action)
        self._last = self._perceive(res.observation)
        res.info["clean_observation"] = res.observation
        return StepResult(self._last.copy(), res.reward, res.terminated, res.truncated, res.info)

    def check_action(self, action):
        return self.env.check_action(action)


def make_setting(env: Env, config: RealismConfig | str | None = None) -> RealismEnv:
    if isinstance(config, str):
        config = RealismConfig(setting=config)
    return RealismEnv(env, config)
