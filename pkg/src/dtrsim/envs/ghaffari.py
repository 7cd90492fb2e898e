"""Mixed radiotherapy and chemotherapy environment with metastatic spread.

Thirteen state variables: tumour, NK and CD8+ T cells at a primary and a
secondary site, circulating lymphocytes, two chemotherapy accumulators, the
drug concentration and three irradiated-cell pools. Metastatic influx at the
secondary site depends on the primary tumour ``tau`` days earlier.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, field

import numpy as np
from numba import njit

from ..core import Env, EnvSpec, InvalidActionError
from ..ode import DelayBuffer, OdeSystem, split_euler_step

_FIXED = {"pkpd": False}

TP, NP, LP, C, TS, NS, LS, C1, C2, M, U, V, X = range(13)
STATE_NAMES = ("Tp", "Np", "Lp", "C", "Ts", "Ns", "Ls", "c1", "c2", "M", "u", "v", "x")


@dataclass(frozen=True)
class GhaffariParams:
    # primary site
    a1: float = 4.31e-1
    b1: float = 1.02e-9
    c1: float = 6.41e-11
    d1: float = 2.34
    l: float = 2.09
    s: float = 8.39e-2
    e1: float = 2.08e-1
    f1: float = 4.12e-3
    p1: float = 3.42e-4
    m1: float = 2.04e-2
    j1: float = 2.49e-2
    k1: float = 3.66e7
    q1: float = 1.42e-4
    r11: float = 1.1e-7
    r12: float = 6.5e-11
    u1: float = 3e-10
    K1T: float = 100.0
    K1L: float = 10.0
    K1N: float = 10.0
    K1C: float = 10.0
    alpha: float = 7.5e8
    beta: float = 1.2e2
    mu: float = 9e-1
    # secondary site
    a2: float = 5.0
    b2: float = 1e-7
    c2: float = 6.41e-12
    d2: float = 5.0
    e2: float = 2.08e-1
    f2: float = 3.5e-2
    p2: float = 1e-1
    m2: float = 1.8e-1
    j2: float = 1.6e-2
    k2: float = 3.66e7
    q2: float = 1e-1
    r21: float = 2e-1
    r22: float = 7.5e11
    u2: float = 3e-10
    K2T: float = 100.0
    K2L: float = 10.0
    K2N: float = 10.0
    K2C: float = 10.0
    # radiation
    gamma1: float = 0.04
    gamma2: float = 0.1
    gamma3: float = 0.1
    eps: float = 0.05
    # metastasis; alpha1 is tabulated but no printed equation uses it
    alpha1: float = 1e-4
    alpha2: float = 1e-5
    W1T: float = 0.01
    W1N: float = 1.0
    W1L: float = 1.0
    W1C: float = 1.0
    W2T: float = 1.0
    W2N: float = 1.0
    W2L: float = 1.0
    # not tabulated
    mu_c1: float = 1e-4
    mu_c2: float = 1e-4
    k_c1: float = 1.0
    k_c2: float = 1.0
    delta: float = 1e-2
    tau: float = field(default=10.0, metadata=_FIXED)

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


_NAMES = tuple(GhaffariParams.__dataclass_fields__)
_IDX = {n: i for i, n in enumerate(_NAMES)}


@njit(cache=True)
def _lysis(d, L, T, s, l):
    den = s * T ** l + L ** l
    if den < 1e-30:
        return 0.0
    return d * L ** l / den


def _make_split():
    i = _IDX
    a1, b1, c1, d1, l, s = i["a1"], i["b1"], i["c1"], i["d1"], i["l"], i["s"]
    e1, f1, p1, m1, j1, k1 = i["e1"], i["f1"], i["p1"], i["m1"], i["j1"], i["k1"]
    q1, r11, r12, u1 = i["q1"], i["r11"], i["r12"], i["u1"]
    K1T, K1L, K1N, K1C = i["K1T"], i["K1L"], i["K1N"], i["K1C"]
    alpha, beta, mu = i["alpha"], i["beta"], i["mu"]
    a2, b2, c2, d2, e2, f2, p2 = i["a2"], i["b2"], i["c2"], i["d2"], i["e2"], i["f2"], i["p2"]
    m2, j2, k2, q2, r21, r22, u2 = i["m2"], i["j2"], i["k2"], i["q2"], i["r21"], i["r22"], i["u2"]
    K2T, K2L, K2N = i["K2T"], i["K2L"], i["K2N"]
    g1, g2, g3, eps, alpha2 = i["gamma1"], i["gamma2"], i["gamma3"], i["eps"], i["alpha2"]
    W1T, W1N, W1L, W1C = i["W1T"], i["W1N"], i["W1L"], i["W1C"]
    W2T, W2N, W2L = i["W2T"], i["W2N"], i["W2L"]
    mc1, mc2, kc1, kc2, delta = i["mu_c1"], i["mu_c2"], i["k_c1"], i["k_c2"], i["delta"]

    @njit(cache=False)
    def split(t, y, ctrl, p, prod, loss):
        # dy/dt = prod - loss * y, term by term as printed; ctrl = (D, vM, delayed Tp)
        D = ctrl[0]
        vM = ctrl[1]
        Tp_lag = ctrl[2]
        Tp, Np, Lp, Cc, Ts, Ns, Ls = y[0], y[1], y[2], y[3], y[4], y[5], y[6]
        Mm, uu, vv, xx = y[9], y[10], y[11], y[12]
        Dp = _lysis(p[d1], Lp, Tp, p[s], p[l])
        Ds = _lysis(p[d2], Ls, Ts, p[s], p[l])
        prod[0] = p[a1] * Tp + p[g1] * uu
        loss[0] = (p[a1] * p[b1] * Tp + p[c1] * Np + Dp + D + p[K1T] * Mm / (p[W1T] + Tp))
        prod[1] = p[e1] * Cc + p[g2] * vv
        loss[1] = p[p1] * Tp + p[f1] + p[eps] * D + p[K1N] * Mm / (p[W1N] + Np)
        prod[2] = p[j1] * Tp / (p[k1] + Tp) + p[r11] * Np * Tp + p[r12] * Cc * Tp + p[g3] * xx
        loss[2] = (p[m1] + p[q1] * Tp + p[u1] * Np * Lp + p[eps] * D
                   + p[K1L] * Mm / (p[W1L] + Lp))
        prod[3] = p[alpha]
        loss[3] = p[beta] + p[K1C] * Mm / (p[W1C] + Cc)
        prod[4] = p[a2] * Ts + p[alpha2] * Tp_lag
        loss[4] = p[a2] * p[b2] * Ts + p[c2] * Ns + Ds + p[K2T] * Mm / (p[W2T] + Ts)
        prod[5] = p[e2] * Cc
        loss[5] = p[p2] * Ts + p[f2] + p[K2N] * Mm / (p[W2N] + Ns)
        prod[6] = p[j2] * Ts / (p[k2] + Ts) + p[r21] * Ns * Ts + p[r22] * Cc * Ts
        loss[6] = p[m2] + p[q2] * Ts + p[u2] * Ns * Ls + p[K2L] * Mm / (p[W2L] + Ls)
        prod[7] = p[mc1] * vM
        loss[7] = p[mc1] * vM / p[kc1]
        prod[8] = p[mc2] * vM
        loss[8] = p[mc2] * vM / p[kc2]
        prod[9] = vM
        loss[9] = p[mu]
        prod[10] = D * Tp
        loss[10] = p[g1] + p[delta]
        prod[11] = p[eps] * D * Np
        loss[11] = p[g2] + p[delta]
        prod[12] = p[eps] * D * Lp
        loss[12] = p[g3] + p[delta]

    return split


_ghaffari_split = _make_split()


@njit(cache=False)
def _ghaffari_deriv(t, y, ctrl, p, out):
    n = y.shape[0]
    prod = np.empty(n)
    loss = np.empty(n)
    _ghaffari_split(t, y, ctrl, p, prod, loss)
    for i in range(n):
        out[i] = prod[i] - loss[i] * y[i]

CAP_T = 1e11
_UPPER = np.array([1e11, 1e10, 1e10, 1e11, 1e11, 1e10, 1e10, 1e10, 1e10, 1e10, 1e11, 1e11, 1e11])

GHAFFARI_SYSTEM = OdeSystem(
    dim=13, derivative=_ghaffari_split, lower=np.zeros(13), upper=_UPPER, names=STATE_NAMES,
)

_DEFAULT = GhaffariParams()
INITIAL_STATE = (1e7, 1e5, 1e2, _DEFAULT.alpha / _DEFAULT.beta, 0.0, 1e4, 10.0,
                 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

RADIATION_LEVELS = (0.0, 5.0, 10.0)
CHEMO_LEVELS = (0.0, 4.0, 8.0)


def ghaffari_derivatives(state, action, params: GhaffariParams | None = None,
                         delayed_Tp: float = 0.0) -> np.ndarray:
    """The 13 derivatives at ``state`` under ``action = (D, vM)``."""
    params = params or GhaffariParams()
    out = np.empty(13)
    ctrl = np.array([float(action[0]), float(action[1]), float(delayed_Tp)])
    _ghaffari_deriv(0.0, np.asarray(state, dtype=np.float64), ctrl, params.as_array(), out)
    return out


def ghaffari_reward(Tp: float, Ts: float, initial_total: float) -> tuple[float, bool]:
    """Per-step reward and whether an outcome (terminal) fired.

    Because states are projected onto the declared ranges, "above 1e11" is
    read as reaching the cap.
    """
    r = 1.0 - (Tp + Ts) / initial_total
    if Tp >= CAP_T or Ts >= CAP_T:
        return r - 100.0, True
    if Tp < 1.0 and Ts < 1.0:
        return r + 100.0, True
    return r, False


def ghaffari_action_map(index: int) -> tuple[float, float]:
    if not 0 <= index < 9:
        raise InvalidActionError(f"action {index} outside [0, 9)")
    return RADIATION_LEVELS[index // 3], CHEMO_LEVELS[index % 3]


class GhaffariCancerEnv(Env):
    """Radiation dose D and chemotherapy dosage vM chosen from a 3x3 grid.

    Observation is (Tp, Np, Lp, C, Ts, Ns, Ls); drug and irradiated pools are
    hidden. One step is one day. The published rates make the system very
    stiff (loss rates of 1e2 to 1e7 per day), so the sub-steps use the
    positivity-preserving split Euler scheme rather than RK4.
    """

    def __init__(self, max_steps: int = 60, substeps: int = 24,
                 params: GhaffariParams | None = None, initial_state=INITIAL_STATE):
        super().__init__()
        self.substeps = substeps
        self.default_params = params or GhaffariParams()
        self.params = self.default_params
        self.initial_state = tuple(float(v) for v in initial_state)
        hi = tuple(float(v) for v in _UPPER[:7])
        self.spec = EnvSpec(
            name="GhaffariCancerEnv",
            observation_dim=7,
            action_count=9,
            max_steps=max_steps,
            step_interval=1.0,
            observation_names=STATE_NAMES[:7],
            observation_low=(0.0,) * 7,
            observation_high=hi,
            log_scaled=(True,) * 7,
            state_names=STATE_NAMES,
            action_names=("D", "vM"),
        )
        self._y = np.array(self.initial_state)

    @property
    def state(self) -> np.ndarray:
        return self._y

    def observe(self) -> np.ndarray:
        return self._y[:7].copy()

    def default_observation(self) -> np.ndarray:
        return np.array(self.initial_state[:7])

    def action_map(self, index: int) -> np.ndarray:
        return np.array(ghaffari_action_map(index))

    def _reset_state(self) -> None:
        self._y = np.array(self.initial_state, dtype=np.float64)
        self._p = self.params.as_array()
        self.total0 = self._y[TP] + self._y[TS]
        h = self.spec.step_interval / self.substeps
        self._lag = DelayBuffer(self.params.tau, h, fill=self._y[TP])
        self._lag.push(0.0, self._y[TP])

    def _advance(self, raw):
        h = self.spec.step_interval / self.substeps
        ctrl = np.array([raw[0], raw[1], 0.0])
        t = self.time
        for _ in range(self.substeps):
            # the lag is held constant over one sub-step
            ctrl[2] = self._lag.lookup(t)[0]
            self._y = split_euler_step(GHAFFARI_SYSTEM, self._y, ctrl, h, 1, self._p, t0=t)
            t += h
            self._lag.push(t, self._y[TP])
        return ghaffari_reward(self._y[TP], self._y[TS], self.total0)
