"""Fixed-step RK4 integration with range projection and delayed-state lookup.

Derivative functions are numba-compiled with the signature
``deriv(t, y, u, p, out)``: time, state, control vector, parameter vector and
an output buffer that receives dy/dt.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numba import njit


class IntegrationError(FloatingPointError):
    """Raised when a derivative evaluates to a non-finite value."""

    def __init__(self, component: int, name: str | None = None):
        self.component = component
        label = f"{component} ({name})" if name else str(component)
        super().__init__(f"non-finite derivative in component {label}")


@dataclass(frozen=True)
class OdeSystem:
    dim: int
    derivative: Callable
    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != (self.dim,) or hi.shape != (self.dim,):
            raise ValueError("range bounds must have shape (dim,)")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


@njit(cache=True)
def _clip_into(src, lo, hi, dst):
    for i in range(src.shape[0]):
        v = src[i]
        if v < lo[i]:
            v = lo[i]
        elif v > hi[i]:
            v = hi[i]
        dst[i] = v


@njit(cache=True)
def _first_nonfinite(k):
    for i in range(k.shape[0]):
        if not math.isfinite(k[i]):
            return i
    return -1


@njit(cache=True)
def _rk4_kernel(deriv, y0, u, p, t0, dt, substeps, lo, hi):
    d = y0.shape[0]
    h = dt / substeps
    y = y0.copy()
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    t = t0
    for _ in range(substeps):
        deriv(t, y, u, p, k1)
        bad = _first_nonfinite(k1)
        if bad >= 0:
            return y, bad
        for i in range(d):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        _clip_into(tmp, lo, hi, tmp)
        deriv(t + 0.5 * h, tmp, u, p, k2)
        bad = _first_nonfinite(k2)
        if bad >= 0:
            return y, bad
        for i in range(d):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        _clip_into(tmp, lo, hi, tmp)
        deriv(t + 0.5 * h, tmp, u, p, k3)
        bad = _first_nonfinite(k3)
        if bad >= 0:
            return y, bad
        for i in range(d):
            tmp[i] = y[i] + h * k3[i]
        _clip_into(tmp, lo, hi, tmp)
        deriv(t + h, tmp, u, p, k4)
        bad = _first_nonfinite(k4)
        if bad >= 0:
            return y, bad
        for i in range(d):
            y[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        _clip_into(y, lo, hi, y)
        t += h
    return y, -1


def rk4_step(
    system: OdeSystem,
    state,
    control,
    dt: float,
    substeps: int = 1,
    params=None,
    t0: float = 0.0,
) -> np.ndarray:
    """Advance ``state`` by ``dt`` using ``substeps`` classic RK4 steps.

    After every sub-step each component is projected onto its declared range.
    Intermediate stage states are projected as well so the derivative is only
    ever evaluated inside the ranges.

    Raises
    ------
    IntegrationError
        If any stage derivative is non-finite.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    y = np.ascontiguousarray(state, dtype=np.float64)
    if y.shape != (system.dim,):
        raise ValueError(f"state must have shape ({system.dim},)")
    u = np.atleast_1d(np.asarray(control, dtype=np.float64))
    p = np.zeros(1) if params is None else np.asarray(params, dtype=np.float64)
    out, bad = _rk4_kernel(
        system.derivative, y, u, p, float(t0), float(dt), int(substeps), system.lower, system.upper
    )
    if bad >= 0:
        name = system.names[bad] if system.names else None
        raise IntegrationError(int(bad), name)
    return out


class DelayBuffer:
    """Ring buffer of past states at sub-step resolution.

    ``lookup(t)`` answers "what was the state at ``t - delay``": the fill
    value while ``t < delay``, otherwise the stored snapshot nearest in time.
    """

    def __init__(self, delay: float, resolution: float, fill: Sequence[float] | float):
        if delay < 0 or resolution <= 0:
            raise ValueError("delay must be >= 0 and resolution > 0")
        self.delay = float(delay)
        self.resolution = float(resolution)
        self.fill = np.atleast_1d(np.asarray(fill, dtype=np.float64)).copy()
        self.capacity = int(math.ceil(self.delay / self.resolution)) + 2
        self._times = np.full(self.capacity, -np.inf)
        self._values = np.tile(self.fill, (self.capacity, 1))
        self._head = 0
        self._count = 0

    def push(self, t: float, value) -> None:
        self._times[self._head] = t
        self._values[self._head] = value
        self._head = (self._head + 1) % self.capacity
        self._count = min(self._count + 1, self.capacity)

    def lookup(self, t: float) -> np.ndarray:
        target = t - self.delay
        if target < 0 or self._count == 0:
            return self.fill.copy()
        i = int(np.argmin(np.abs(self._times - target)))
        return self._values[i].copy()


def delayed_lookup(buffer: DelayBuffer, t: float) -> np.ndarray:
    return buffer.lookup(t)


@njit(cache=True)
def _split_kernel(split, y0, u, p, t0, dt, substeps, lo, hi):
    d = y0.shape[0]
    h = dt / substeps
    y = y0.copy()
    prod = np.empty(d)
    loss = np.empty(d)
    t = t0
    for _ in range(substeps):
        split(t, y, u, p, prod, loss)
        bad = _first_nonfinite(prod)
        if bad < 0:
            bad = _first_nonfinite(loss)
        if bad >= 0:
            return y, bad
        for i in range(d):
            y[i] = (y[i] + h * prod[i]) / (1.0 + h * loss[i])
        _clip_into(y, lo, hi, y)
        t += h
    return y, -1


def split_euler_step(
    system: OdeSystem,
    state,
    control,
    dt: float,
    substeps: int = 1,
    params=None,
    t0: float = 0.0,
) -> np.ndarray:
    """Positivity-preserving linearly implicit Euler step for stiff systems.

    ``system.derivative`` must have the split signature
    ``split(t, y, u, p, prod, loss)`` with ``prod >= 0`` and ``loss >= 0`` such
    that ``dy/dt = prod - loss * y``. Each sub-step sets
    ``y <- (y + h*prod) / (1 + h*loss)``, which stays non-negative for any
    ``h``. First order only.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    y = np.ascontiguousarray(state, dtype=np.float64)
    if y.shape != (system.dim,):
        raise ValueError(f"state must have shape ({system.dim},)")
    u = np.atleast_1d(np.asarray(control, dtype=np.float64))
    p = np.zeros(1) if params is None else np.asarray(params, dtype=np.float64)
    out, bad = _split_kernel(
        system.derivative, y, u, p, float(t0), float(dt), int(substeps), system.lower, system.upper
    )
    if bad >= 0:
        name = system.names[bad] if system.names else None
        raise IntegrationError(int(bad), name)
    return out
