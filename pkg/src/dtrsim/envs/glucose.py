"""Glucose-insulin meal-response environment with a subcutaneous insulin pump.

State: plasma and tissue glucose, plasma insulin, insulin action (peripheral
and liver), the three-compartment carbohydrate chain and two subcutaneous
insulin depots. Rates are per minute; one step is 5 minutes.
"""
from __future__ import annotations

import functools
import math
from dataclasses import astuple, dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from ..core import STREAM_SCENARIO, Env, EnvSpec, InvalidActionError, rng_stream
from ..ode import OdeSystem, rk4_step

GP, GT, I, X, XL, SSTO, QSTO, QGUT, ISC1, ISC2 = range(10)
STATE_NAMES = ("Gp", "Gt", "I", "X", "XL", "Ssto", "Qsto", "Qgut", "Isc1", "Isc2")

_FIXED = {"pkpd": False}


@dataclass(frozen=True)
class GlucoseParams:
    kp1: float = 11.5048
    kp2: float = 0.0233
    kp3: float = 0.0233
    ke1: float = 0.0005
    ke2: float = 339.0
    Vm0: float = 5.9285
    Vmx: float = 0.0747
    Km0: float = 260.89
    k1: float = 0.0573
    k2: float = 0.0677
    p2u: float = 0.0213
    ki: float = 0.0089
    ksto: float = 0.0159
    kgut: float = 0.0159
    kabs: float = 0.0910
    f: float = 0.9
    BW: float = 68.7060
    # closures for terms the published model leaves open
    Ib: float = field(default=0.0, metadata=_FIXED)
    Uii: float = 1.0
    kd: float = 0.0164
    ka: float = 0.0164
    insulin_gain: float = 1000.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


@njit(cache=True)
def _glucose_deriv(t, y, ctrl, p, out):
    kp1, kp2, kp3, ke1, ke2 = p[0], p[1], p[2], p[3], p[4]
    Vm0, Vmx, Km0, k1, k2 = p[5], p[6], p[7], p[8], p[9]
    p2u, ki, ksto, kgut, kabs = p[10], p[11], p[12], p[13], p[14]
    f, BW, Ib, Uii, kd, ka, gain = p[15], p[16], p[17], p[18], p[19], p[20], p[21]
    insulin = ctrl[0] / 60.0  # U/h -> U/min
    cho = ctrl[1]  # mg/min
    Gp, Gt, Ip, Xa, XLa = y[0], y[1], y[2], y[3], y[4]
    Ssto, Qsto, Qgut, Isc1, Isc2 = y[5], y[6], y[7], y[8], y[9]
    Ra = f * kabs * Qgut / BW
    E = ke1 * (Gp - ke2) if Gp > ke2 else 0.0
    Uid = (Vm0 + Vmx * Xa) * Gt / (Km0 + Gt)
    EGP = kp1 - kp2 * Gp - kp3 * XLa
    source = gain * ka * Isc2
    out[0] = EGP + Ra - Uii - E - k1 * Gp + k2 * Gt
    out[1] = -Uid + k1 * Gp - k2 * Gt
    out[2] = ki * (source - Ip)
    out[3] = -p2u * Xa + p2u * (Ip - Ib)
    out[4] = -ki * (XLa - source)
    out[5] = cho - ksto * Ssto
    out[6] = ksto * Ssto - kgut * Qsto
    out[7] = kgut * Qsto - kabs * Qgut
    out[8] = insulin - kd * Isc1
    out[9] = kd * Isc1 - ka * Isc2


GP_LOW, GP_HIGH = 10.0, 600.0
_LOWER = np.zeros(10)
_LOWER[GP] = GP_LOW
_UPPER = np.full(10, 1e9)
_UPPER[GP] = GP_HIGH
GLUCOSE_SYSTEM = OdeSystem(dim=10, derivative=_glucose_deriv, lower=_LOWER, upper=_UPPER,
                           names=STATE_NAMES)

PUMP_MAX = 30.0


def glucose_derivatives(state, insulin_rate: float, cho_rate: float,
                        params: GlucoseParams | None = None) -> np.ndarray:
    """Derivatives with pump rate in U/h and carbohydrate intake in mg/min."""
    params = params or GlucoseParams()
    out = np.empty(10)
    ctrl = np.array([float(insulin_rate), float(cho_rate)])
    _glucose_deriv(0.0, np.asarray(state, dtype=np.float64), ctrl, params.as_array(), out)
    return out


def appearance_rate(Qgut: float, params: GlucoseParams | None = None) -> float:
    p = params or GlucoseParams()
    return p.f * p.kabs * Qgut / p.BW


def risk_reward(Gp: float) -> float:
    x = 1.509 * (math.log(Gp) ** 1.084 - 5.381)
    return -math.log10(max(x * x, 1e-10))


def fluctuation_reward(delta: float) -> float:
    if delta < 30.0:
        return 0.0
    if delta < 60.0:
        return -(delta - 30.0) / 30.0
    return -1.0


def glucose_reward(Gp_now: float, Gp_prev: float, status: str = "running") -> float:
    """Risk + fluctuation + outcome terms.

    ``status`` is ``"running"``, ``"truncated"`` (episode completed inside
    the range) or ``"violated"``.
    """
    outcome = {"running": 0.0, "truncated": 100.0, "violated": -100.0}[status]
    return risk_reward(Gp_now) + fluctuation_reward(Gp_now - Gp_prev) + outcome


def glucose_action_map(index: int, bins: int = 5) -> float:
    if not 0 <= index < bins:
        raise InvalidActionError(f"insulin index {index} outside [0, {bins})")
    return PUMP_MAX * index / (bins - 1)


def initial_state(params: GlucoseParams | None = None, Gp0: float = 140.0) -> np.ndarray:
    """Start at ``Gp0`` with tissue glucose chosen so that dGp/dt = 0 at zero input."""
    p = params or GlucoseParams()
    y = np.zeros(10)
    y[GP] = Gp0
    y[GT] = max((p.k1 * Gp0 - (p.kp1 - p.kp2 * Gp0 - p.Uii)) / p.k2, 0.0)
    return y


# ----------------------------------------------------------------- meals
@dataclass(frozen=True)
class MealScenario:
    """Meals as (minutes after midnight, grams of carbohydrate)."""

    meals: tuple[tuple[float, float], ...] = ((420.0, 45.0), (720.0, 70.0), (1080.0, 80.0))

    def __post_init__(self):
        for t, g in self.meals:
            if not 0 <= g <= 200:
                raise ValueError(f"meal of {g} g outside [0, 200]")
            if t < 0:
                raise ValueError("meal time must be >= 0")

    def with_snack(self, time: float = 900.0, grams: float = 15.0) -> "MealScenario":
        return MealScenario(tuple(sorted(self.meals + ((time, grams),))))

    def jittered(self, rng: np.random.Generator, minutes: float = 30.0,
                 fraction: float = 0.2) -> "MealScenario":
        out = []
        for t, g in self.meals:
            dt = rng.uniform(-minutes, minutes)
            scale = rng.uniform(1 - fraction, 1 + fraction)
            out.append((max(t + dt, 0.0), min(g * scale, 200.0)))
        return MealScenario(tuple(out))

    def intake(self, t0: float, dt: float) -> float:
        """Carbohydrate rate in mg/min over [t0, t0+dt): each meal is eaten within one step."""
        grams = sum(g for t, g in self.meals if t0 <= t < t0 + dt)
        return grams * 1000.0 / dt


def load_meals(path) -> MealScenario:
    """Read ``time grams`` pairs, one per line; time is HH:MM or minutes."""
    meals = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'time grams'")
        t, g = parts
        if ":" in t:
            hh, mm = t.split(":")
            minutes = int(hh) * 60 + int(mm)
        else:
            minutes = float(t)
        meals.append((float(minutes), float(g)))
    return MealScenario(tuple(meals))


# -------------------------------------------------------------- patients
PROFILE_GROUPS = ("adolescent", "adult", "child")
_GROUP_BW = {"adolescent": 1.0, "adult": 1.15, "child": 0.5}
_PROFILE_SEED = 20140101


@functools.lru_cache(maxsize=1)
def patient_profiles() -> tuple[tuple[str, GlucoseParams], ...]:
    """Thirty synthetic virtual patients, ten per group.

    Patient 0 is the canonical adolescent. The others scale each kinetic
    parameter by an independent factor in [0.85, 1.15] drawn from a fixed
    seed, and body weight by a group factor.
    """
    base = GlucoseParams()
    rng = rng_stream(_PROFILE_SEED, STREAM_SCENARIO)
    kinetic = [n for n, f in base.__dataclass_fields__.items()
               if f.metadata.get("pkpd", True) and n not in ("BW", "insulin_gain")]
    out = []
    for g in PROFILE_GROUPS:
        for k in range(10):
            factors = rng.uniform(0.85, 1.15, size=len(kinetic))
            if g == "adolescent" and k == 0:
                out.append((f"{g}#{k:03d}", base))
                continue
            changes = {n: getattr(base, n) * s for n, s in zip(kinetic, factors)}
            changes["ke2"] = base.ke2  # threshold, not a rate
            changes["BW"] = base.BW * _GROUP_BW[g] * rng.uniform(0.9, 1.1)
            out.append((f"{g}#{k:03d}", replace(base, **changes)))
    return tuple(out)


class SimGlucoseEnv(Env):
    """Insulin pump control over one day.

    The only observation is plasma glucose. An episode starts at midnight,
    steps are 5 minutes and it truncates after 288 steps unless glucose
    reaches the bounds of [10, 600] first.
    """

    def __init__(self, bins: int = 5, max_steps: int = 288, substeps: int = 5,
                 params: GlucoseParams | None = None, meals: MealScenario | None = None,
                 Gp0: float = 140.0):
        super().__init__()
        self.bins = bins
        self.substeps = substeps
        self.default_params = params or GlucoseParams()
        self.params = self.default_params
        self.default_meals = meals or MealScenario()
        self.meals = self.default_meals
        self.Gp0 = Gp0
        self.spec = EnvSpec(
            name="SimGlucoseEnv",
            observation_dim=1,
            action_count=bins,
            max_steps=max_steps,
            step_interval=5.0,
            observation_names=("Gp",),
            observation_low=(GP_LOW,),
            observation_high=(GP_HIGH,),
            state_names=STATE_NAMES,
            action_names=("insulin",),
            time_unit="min",
        )
        self._y = initial_state(self.params, Gp0)
        self.prev_Gp = Gp0

    @property
    def state(self) -> np.ndarray:
        return self._y

    def observe(self) -> np.ndarray:
        return self._y[GP:GP + 1].copy()

    def default_observation(self) -> np.ndarray:
        return np.array([self.Gp0])

    def action_map(self, index: int) -> np.ndarray:
        return np.array([glucose_action_map(index, self.bins)])

    def sample_params(self, rng: np.random.Generator, spread: float):
        """A virtual patient drawn uniformly from the thirty profiles."""
        profiles = patient_profiles()
        return profiles[int(rng.integers(len(profiles)))][1]

    def sample_scenario(self, rng: np.random.Generator, spread: float) -> MealScenario:
        return self.default_meals.jittered(rng, 30.0, spread)

    def _reset_state(self) -> None:
        self._y = initial_state(self.params, self.Gp0)
        self._p = self.params.as_array()
        self.prev_Gp = self._y[GP]

    def _advance(self, raw):
        dt = self.spec.step_interval
        cho = self.meals.intake(self.time, dt)
        self.prev_Gp = self._y[GP]
        self._y = rk4_step(GLUCOSE_SYSTEM, self._y, np.array([raw[0], cho]), dt,
                           self.substeps, self._p, t0=self.time)
        Gp = self._y[GP]
        violated = Gp <= GP_LOW or Gp >= GP_HIGH
        if violated:
            status = "violated"
        elif self.t + 1 >= self.spec.max_steps:
            status = "truncated"
        else:
            status = "running"
        return glucose_reward(Gp, self.prev_Gp, status), violated
