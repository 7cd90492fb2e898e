import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numba import njit

from dtrsim.ode import (
    DelayBuffer, IntegrationError, OdeSystem, delayed_lookup, rk4_step, split_euler_step,
)


@njit
def _decay(t, y, u, p, out):
    out[0] = -y[0]


@njit
def _zero(t, y, u, p, out):
    for i in range(y.shape[0]):
        out[i] = 0.0


@njit
def _growth(t, y, u, p, out):
    out[0] = 5.0


@njit
def _blowup(t, y, u, p, out):
    out[0] = 0.0
    out[1] = math.log(y[1] - 1.0)


@njit
def _decay_split(t, y, u, p, prod, loss):
    prod[0] = 0.0
    loss[0] = 1.0


DECAY = OdeSystem(1, _decay, np.array([0.0]), np.array([10.0]))
ZERO = OdeSystem(3, _zero, np.zeros(3), np.full(3, 10.0))
GROWTH = OdeSystem(1, _growth, np.array([0.0]), np.array([2.0]))
BLOWUP = OdeSystem(2, _blowup, np.zeros(2), np.full(2, 10.0), names=("a", "b"))
DECAY_SPLIT = OdeSystem(1, _decay_split, np.array([0.0]), np.array([10.0]))


def test_decay_matches_exp():
    y = rk4_step(DECAY, [1.0], [0.0], 1.0, 100)
    assert y[0] == pytest.approx(math.exp(-1), abs=1e-6)


def test_zero_derivative_keeps_state():
    y0 = np.array([0.3, 1.0, 7.0])
    assert np.array_equal(rk4_step(ZERO, y0, [0.0], 2.0, 7), y0)


def test_fourth_order_convergence():
    errs = [abs(rk4_step(DECAY, [1.0], [0.0], 1.0, n)[0] - math.exp(-1)) for n in (4, 8)]
    assert 12 <= errs[0] / errs[1] <= 20


def test_range_projection_caps():
    assert rk4_step(GROWTH, [1.0], [0.0], 1.0, 4)[0] == 2.0


def test_nonfinite_derivative_names_component():
    with pytest.raises(IntegrationError) as err:
        rk4_step(BLOWUP, [1.0, 0.5], [0.0], 0.1, 1)
    assert err.value.component == 1


@pytest.mark.parametrize("dt,sub", [(0.0, 1), (-1.0, 1), (1.0, 0)])
def test_bad_step_arguments(dt, sub):
    with pytest.raises(ValueError):
        rk4_step(DECAY, [1.0], [0.0], dt, sub)


def test_rk4_deterministic():
    a = rk4_step(DECAY, [0.7], [0.0], 0.3, 3)
    assert np.array_equal(a, rk4_step(DECAY, [0.7], [0.0], 0.3, 3))


@settings(max_examples=30, deadline=None)
@given(y0=st.floats(0, 10), dt=st.floats(0.01, 5), sub=st.integers(1, 20))
def test_states_stay_in_range(y0, dt, sub):
    y = rk4_step(GROWTH, [min(y0, 2.0)], [0.0], dt, sub)
    assert 0.0 <= y[0] <= 2.0


def test_split_euler_first_order_and_positive():
    errs = [abs(split_euler_step(DECAY_SPLIT, [1.0], [0.0], 1.0, n)[0] - math.exp(-1)) for n in (50, 100)]
    assert 1.8 < errs[0] / errs[1] < 2.2
    big = split_euler_step(DECAY_SPLIT, [1.0], [0.0], 1e6, 1)
    assert 0.0 <= big[0] < 1e-5


def test_delay_prehistory_is_fill():
    buf = DelayBuffer(10.0, 0.5, fill=[3.0])
    assert delayed_lookup(buf, 0.0)[0] == 3.0


def test_delay_constant_history():
    buf = DelayBuffer(2.0, 0.25, fill=[1.0])
    for k in range(40):
        buf.push(k * 0.25, [4.0])
    for t in (2.0, 5.3, 9.75):
        assert buf.lookup(t)[0] == 4.0


@settings(max_examples=30, deadline=None)
@given(t=st.floats(10.0, 19.0))
def test_delay_linear_history_within_one_substep(t):
    h = 0.1
    buf = DelayBuffer(10.0, h, fill=[0.0])
    k = 0
    while k * h <= t:
        buf.push(k * h, [k * h])
        k += 1
    assert abs(buf.lookup(t)[0] - (t - 10.0)) <= h + 1e-12
