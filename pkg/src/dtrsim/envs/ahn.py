"""Chemotherapy environment: normal, tumour and immune cells plus drug concentration.

Cell counts are in units of 1e11 cells, time in days, one step is 6 hours.
The normal-cell population is hidden from the agent.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, field

import numpy as np
from numba import njit

from ..core import Env, EnvSpec, InvalidActionError
from ..ode import OdeSystem, rk4_step

_FIXED = {"pkpd": False}


@dataclass(frozen=True)
class AhnParams:
    a1: float = 0.2
    a2: float = 0.3
    a3: float = 0.1
    b1: float = 1.0
    b2: float = 1.0
    c1: float = 1.0
    c2: float = 0.5
    c3: float = 1.0
    c4: float = 1.0
    d1: float = 0.2
    d2: float = 1.0
    r1: float = 1.5
    r2: float = 1.0
    s: float = 0.33
    rho: float = 0.01
    # not in the published parameter table
    alpha: float = 0.3
    q: float = field(default=1.0, metadata=_FIXED)

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


@njit(cache=True)
def _ahn_deriv(t, y, u, p, out):
    a1, a2, a3, b1, b2, c1, c2, c3, c4, d1, d2, r1, r2, s, rho, alpha, q = (
        p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8],
        p[9], p[10], p[11], p[12], p[13], p[14], p[15], p[16],
    )
    N = y[0]
    T = y[1]
    I = y[2]
    B = y[3]
    kill = 1.0 - math.exp(-B)
    out[0] = r2 * N * (1.0 - b2 * N) - c4 * T * N - a3 * (q - math.exp(-B)) * N
    out[1] = r1 * T * (1.0 - b1 * T) - c2 * I * T - c3 * T * N - a2 * kill * T
    # printed form: the last two terms act on T and N, not on I
    out[2] = s + rho * I * T / (alpha + T) - c1 * I * T - c3 * T * N - a1 * kill * T
    out[3] = -d2 * B + u[0]


AHN_SYSTEM = OdeSystem(
    dim=4,
    derivative=_ahn_deriv,
    lower=np.zeros(4),
    upper=np.array([2.0, 2.0, 2.0, 1.0]),
    names=("N", "T", "I", "B"),
)

INITIAL_STATE = (1.0, 0.1, 0.15, 0.0)


def ahn_derivatives(state, u: float, params: AhnParams | None = None) -> np.ndarray:
    """dN, dT, dI, dB at ``state = (N, T, I, B)`` under dose rate ``u``."""
    params = params or AhnParams()
    out = np.empty(4)
    _ahn_deriv(0.0, np.asarray(state, dtype=np.float64), np.array([float(u)]), params.as_array(), out)
    return out


def ahn_reward(N, T, I, u, N0, T0) -> float:
    return N / N0 - T / T0 + I - u


def ahn_action_map(index: int, bins: int = 5) -> float:
    if not 0 <= index < bins:
        raise InvalidActionError(f"dose index {index} outside [0, {bins})")
    return index / (bins - 1)


class AhnChemoEnv(Env):
    """Single-drug chemotherapy dosing with the tumour/immune/normal cell model.

    Terminates when the tumour is eliminated (T < 1e-4) or normal cells
    collapse (N < 1e-2); otherwise truncates after ``max_steps``.
    """

    tumour_eliminated = 1e-4
    normal_collapse = 1e-2

    def __init__(self, bins: int = 5, max_steps: int = 120, substeps: int = 10,
                 params: AhnParams | None = None, initial_state=INITIAL_STATE):
        super().__init__()
        self.bins = bins
        self.substeps = substeps
        self.default_params = params or AhnParams()
        self.params = self.default_params
        self.initial_state = tuple(float(v) for v in initial_state)
        self.spec = EnvSpec(
            name="AhnChemoEnv",
            observation_dim=3,
            action_count=bins,
            max_steps=max_steps,
            step_interval=0.25,
            observation_names=("T", "I", "B"),
            observation_low=(0.0, 0.0, 0.0),
            observation_high=(2.0, 2.0, 1.0),
            state_names=("N", "T", "I", "B"),
            action_names=("u",),
        )
        self._y = np.array(self.initial_state)
        self.N0, self.T0 = self._y[0], self._y[1]

    @property
    def state(self) -> np.ndarray:
        return self._y

    def observe(self) -> np.ndarray:
        return self._y[1:4].copy()

    def default_observation(self) -> np.ndarray:
        return np.array(self.initial_state[1:4])

    def action_map(self, index: int) -> np.ndarray:
        return np.array([ahn_action_map(index, self.bins)])

    def _reset_state(self) -> None:
        self._y = np.array(self.initial_state, dtype=np.float64)
        self.N0, self.T0 = self._y[0], self._y[1]
        self._p = self.params.as_array()

    def _advance(self, raw):
        self._y = rk4_step(AHN_SYSTEM, self._y, raw, self.spec.step_interval,
                           self.substeps, self._p, t0=self.time)
        N, T, I, _ = self._y
        reward = ahn_reward(N, T, I, float(raw[0]), self.N0, self.T0)
        terminated = T < self.tumour_eliminated or N < self.normal_collapse
        return reward, bool(terminated)
