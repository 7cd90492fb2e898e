import dataclasses

import numpy as np
import pytest

from dtrsim.core import InvalidActionError
from dtrsim.envs.ghaffari import (
    INITIAL_STATE, GhaffariCancerEnv, GhaffariParams, ghaffari_action_map, ghaffari_derivatives,
    ghaffari_reward,
)


def _oracle(y, D, vM, Tp_lag, P):
    """Plain transcription of the printed system, written independently of the split form."""
    Tp, Np, Lp, C, Ts, Ns, Ls, c1, c2, M, u, v, x = y
    Dp = P.d1 * Lp ** P.l / (P.s * Tp ** P.l + Lp ** P.l)
    Ds = P.d2 * Ls ** P.l / (P.s * Ts ** P.l + Ls ** P.l) if Ts + Ls > 0 else 0.0
    return np.array([
        P.a1 * Tp * (1 - P.b1 * Tp) - P.c1 * Np * Tp - Dp * Tp - D * Tp + P.gamma1 * u
        - P.K1T * Tp * M / (P.W1T + Tp),
        P.e1 * C - P.p1 * Np * Tp - P.f1 * Np - P.eps * D * Np + P.gamma2 * v
        - P.K1N * Np * M / (P.W1N + Np),
        -P.m1 * Lp + P.j1 * Tp / (P.k1 + Tp) - P.q1 * Lp * Tp + P.r11 * Np * Tp + P.r12 * C * Tp
        - P.u1 * Np * Lp ** 2 - P.eps * D * Lp + P.gamma3 * x - P.K1L * Lp * M / (P.W1L + Lp),
        P.alpha - P.beta * C - P.K1C * C * M / (P.W1C + C),
        P.a2 * Ts * (1 - P.b2 * Ts) - P.c2 * Ns * Ts - Ds * Ts + P.alpha2 * Tp_lag
        - P.K2T * Ts * M / (P.W2T + Ts),
        P.e2 * C - P.p2 * Ns * Ts - P.f2 * Ns - P.K2N * Ns * M / (P.W2N + Ns),
        -P.m2 * Ls + P.j2 * Ts / (P.k2 + Ts) - P.q2 * Ls * Ts + P.r21 * Ns * Ts + P.r22 * C * Ts
        - P.u2 * Ns * Ls ** 2 - P.K2L * Ls * M / (P.W2L + Ls),
        P.mu_c1 * vM * (1 - c1 / P.k_c1),
        P.mu_c2 * vM * (1 - c2 / P.k_c2),
        -P.mu * M + vM,
        D * Tp - P.gamma1 * u - P.delta * u,
        P.eps * D * Np - P.gamma2 * v - P.delta * v,
        P.eps * D * Lp - P.gamma3 * x - P.delta * x,
    ])


def test_zero_cells_only_lymphocyte_source():
    d = ghaffari_derivatives(np.zeros(13), (0, 0))
    assert d[3] == GhaffariParams().alpha
    assert np.all(np.delete(d, 3) == 0)


def test_lymphocyte_steady_state():
    y = np.array(INITIAL_STATE)
    P = GhaffariParams()
    y[3] = P.alpha / P.beta
    assert ghaffari_derivatives(y, (0, 0))[3] == pytest.approx(0.0, abs=1e-6)


def test_initial_state_matches_oracle():
    y = np.array(INITIAL_STATE)
    P = GhaffariParams()
    got = ghaffari_derivatives(y, (0, 0), P, delayed_Tp=y[0])
    assert got == pytest.approx(_oracle(y, 0, 0, y[0], P), rel=1e-12, abs=1e-9)


def test_treated_state_matches_oracle():
    rng = np.random.default_rng(3)
    P = GhaffariParams()
    y = np.array([5e6, 2e5, 3e3, 6e6, 1e3, 1e4, 20.0, 0.1, 0.2, 3.0, 1e4, 50.0, 5.0])
    for D, vM in [(5.0, 4.0), (10.0, 8.0), (0.0, 8.0)]:
        lag = float(rng.uniform(1e6, 1e7))
        got = ghaffari_derivatives(y, (D, vM), P, delayed_Tp=lag)
        assert got == pytest.approx(_oracle(y, D, vM, lag, P), rel=1e-10, abs=1e-6)


def test_reward_examples():
    assert ghaffari_reward(6e6, 4e6, 1e7) == (0.0, False)
    assert ghaffari_reward(3e6, 2e6, 1e7) == (pytest.approx(0.5), False)
    r, done = ghaffari_reward(0.5, 0.3, 1e7)
    assert done and r == pytest.approx(1 - 0.8 / 1e7 + 100)
    r, done = ghaffari_reward(1e11, 0.0, 1e7)
    assert done and r == pytest.approx(1 - 1e4 - 100)


@pytest.mark.parametrize("i,a", [(0, (0, 0)), (8, (10, 8)), (5, (5, 8))])
def test_action_map(i, a):
    assert ghaffari_action_map(i) == a


def test_action_map_range():
    with pytest.raises(InvalidActionError):
        ghaffari_action_map(9)


def test_observation_hides_drug_and_irradiated_pools():
    env = GhaffariCancerEnv()
    assert env.spec.observation_names == ("Tp", "Np", "Lp", "C", "Ts", "Ns", "Ls")


def test_no_metastatic_influx_keeps_secondary_empty():
    P = dataclasses.replace(GhaffariParams(), alpha2=0.0)
    env = GhaffariCancerEnv(params=P, max_steps=15)
    env.reset(seed=0)
    for a in (0, 4, 8) * 5:
        res = env.step(a)
        assert res.info["state"][4] == 0.0


def test_reward_lower_bound_and_single_outcome():
    env = GhaffariCancerEnv()
    env.reset(seed=0)
    bound = 1 - 2e11 / env.total0 - 100
    outcomes = []
    done = False
    while not done:
        res = env.step(0)
        assert res.reward >= bound
        st = res.info["state"]
        outcomes.append(res.reward - (1 - (st[0] + st[4]) / env.total0))
        done = res.terminated or res.truncated
    assert all(o == pytest.approx(0.0, abs=1e-9) for o in outcomes[:-1])
    assert res.terminated == (abs(outcomes[-1]) > 99)


def test_max_drug_policy_doses_corner():
    from dtrsim.agents import make_agent

    env = GhaffariCancerEnv(max_steps=3)
    agent = make_agent("max-drug").fit(env)
    obs, _ = env.reset(seed=0)
    for _ in range(3):
        res = env.step(agent.act(obs, 0.0, np.random.default_rng(0)))
        assert tuple(res.info["raw_action"]) == (10.0, 8.0)
        obs = res.observation


def test_radiation_beats_no_treatment():
    def ret(a):
        env = GhaffariCancerEnv()
        env.reset(seed=0)
        total, done = 0.0, False
        while not done:
            res = env.step(a)
            total += res.reward
            done = res.terminated or res.truncated
        return total

    assert ret(8) > ret(0)
