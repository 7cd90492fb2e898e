"""End-to-end acceptance checks, one group per criterion.

A summary line per criterion (PASS/FAIL) is printed at the end of the
pytest run. The learnability and benchmark groups are marked ``slow``;
they still run by default.
"""
import dataclasses
import itertools
import math
import zlib
from pathlib import Path

import numpy as np
import pytest

from dtrsim import cli, harness
from dtrsim.agents.dqn import c51_project
from dtrsim.envs import make_env
from dtrsim.envs.ahn import AHN_SYSTEM, INITIAL_STATE, AhnParams, ahn_reward
from dtrsim.envs.ghaffari import ghaffari_reward
from dtrsim.envs.glucose import fluctuation_reward, patient_profiles, risk_reward
from dtrsim.envs.sepsis import (
    LEVELS, NORMAL, SepsisState, encode_action, sepsis_reward_and_terminal, sepsis_transition,
)
from dtrsim.nn import Mlp
from dtrsim.ode import rk4_step
from dtrsim.realism import RealismConfig, apply_mask, make_setting

L, N, H = 0, 1, 2
LL_, L_, N_, H_, HH_ = range(5)


def criterion(n, title):
    return pytest.mark.criterion(n, title)


# ---------------------------------------------------------------- 1
def _state(hr=N, bp=N, o2=N, glu=N_, diabetic=False, abx=False, vaso=False, vent=False):
    return SepsisState(hr, bp, o2, glu, diabetic, abx, vaso, vent)


ABX, VASO, VENT = encode_action(1, 0, 0), encode_action(0, 1, 0), encode_action(0, 0, 1)

# (label, state, action, event, printed probability)
TABLE_ROWS = [
    ("abx on: hr H->N", _state(hr=H), ABX, lambda s: s.hr == N, 0.5),
    ("abx on: bp H->N", _state(bp=H), ABX, lambda s: s.bp == N, 0.5),
    ("abx withdrawn: hr N->H", _state(abx=True), 0, lambda s: s.hr == H, 0.1),
    ("abx withdrawn: bp N->H", _state(abx=True), 0, lambda s: s.bp == H, 0.5),
    ("vent on: o2 L->N", _state(o2=L), VENT, lambda s: s.o2 == N, 0.7),
    ("vent withdrawn: o2 N->L", _state(vent=True), 0, lambda s: s.o2 == L, 0.1),
    ("vaso on: bp L->N", _state(bp=L), VASO, lambda s: s.bp == N, 0.7),
    ("vaso on: bp N->H", _state(), VASO, lambda s: s.bp == H, 0.7),
    ("vaso on, diabetic: bp L->N", _state(bp=L, diabetic=True), VASO, lambda s: s.bp == N, 0.5),
    ("vaso on, diabetic: bp L->H", _state(bp=L, diabetic=True), VASO, lambda s: s.bp == H, 0.4),
    ("vaso on, diabetic: bp N->H", _state(diabetic=True), VASO, lambda s: s.bp == H, 0.9),
    ("vaso on, diabetic: glu LL->L", _state(glu=LL_, diabetic=True), VASO, lambda s: s.glu == L_, 0.5),
    ("vaso on, diabetic: glu L->N", _state(glu=L_, diabetic=True), VASO, lambda s: s.glu == N_, 0.5),
    ("vaso on, diabetic: glu N->H", _state(diabetic=True), VASO, lambda s: s.glu == H_, 0.5),
    ("vaso on, diabetic: glu H->HH", _state(glu=H_, diabetic=True), VASO, lambda s: s.glu == HH_, 0.5),
    ("vaso withdrawn: bp N->L", _state(vaso=True), 0, lambda s: s.bp == L, 0.1),
    ("vaso withdrawn: bp H->N", _state(bp=H, vaso=True), 0, lambda s: s.bp == N, 0.1),
    ("vaso withdrawn, diabetic: bp N->L", _state(vaso=True, diabetic=True), 0, lambda s: s.bp == L, 0.05),
    ("vaso withdrawn, diabetic: bp H->N", _state(bp=H, vaso=True, diabetic=True), 0, lambda s: s.bp == N, 0.05),
    ("fluctuate: hr +-1", _state(), 0, lambda s: s.hr != N, 0.1),
    ("fluctuate: bp +-1", _state(), 0, lambda s: s.bp != N, 0.1),
    ("fluctuate: o2 +-1", _state(), 0, lambda s: s.o2 != N, 0.1),
    ("fluctuate: glu +-1", _state(), 0, lambda s: s.glu != N_, 0.1),
    ("fluctuate, diabetic: glu +-1", _state(diabetic=True), 0, lambda s: s.glu != N_, 0.3),
]


@criterion(1, "sepsis transition rows match printed probabilities (1e5 draws, +-0.01)")
@pytest.mark.parametrize("label,state,action,event,prob", TABLE_ROWS, ids=[r[0] for r in TABLE_ROWS])
def test_c1_sepsis_transition_rows(label, state, action, event, prob):
    rng = np.random.default_rng(zlib.crc32(label.encode()))
    n = 100_000
    hits = sum(event(sepsis_transition(state, action, rng)) for _ in range(n))
    assert abs(hits / n - prob) <= 0.01, f"{label}: {hits / n:.4f} vs {prob}"


# ---------------------------------------------------------------- 2
@criterion(2, "sepsis death/discharge logic over every vital state")
def test_c2_sepsis_terminal_logic_exhaustive():
    vital_states = [(v, d) for v in itertools.product(*(range(k) for k in LEVELS)) for d in (False, True)]
    assert len(vital_states) == 270
    for vitals, diabetic in vital_states:
        abnormal = sum(v != n for v, n in zip(vitals, NORMAL))
        for treat in itertools.product((False, True), repeat=3):
            r, done = sepsis_reward_and_terminal(SepsisState(*vitals, diabetic, *treat))
            death = abnormal >= 3
            discharge = abnormal == 0 and not any(treat)
            assert (r == -1.0) == death and (r == 1.0) == discharge
            assert done == (death or discharge)
            if not done:
                assert r == 0.0


# ---------------------------------------------------------------- 3
def _b_error(dt, substeps, B0=0.8):
    p = AhnParams(d2=1.0).as_array()
    y = np.array([1.0, 0.1, 0.15, B0])
    got = rk4_step(AHN_SYSTEM, y, [0.0], dt, substeps, params=p)[3]
    exact = B0 * math.exp(-dt)
    return abs(got - exact), exact


@criterion(3, "RK4 on the drug-decay equation: accuracy and fourth-order convergence")
def test_c3_rk4_accuracy():
    err, exact = _b_error(0.25, 10)
    assert err / exact <= 1e-6


@criterion(3, "RK4 on the drug-decay equation: accuracy and fourth-order convergence")
def test_c3_rk4_order():
    e1, _ = _b_error(0.25, 1)
    e2, _ = _b_error(0.25, 2)
    assert 12 <= e1 / e2 <= 20


# ---------------------------------------------------------------- 4
@criterion(4, "reward formula oracles")
def test_c4_ahn_initial_reward_is_immune_level():
    env = make_env("ahn")
    _, info = env.reset(seed=0)
    Nc, T, I, _ = info["state"]
    assert (Nc, T, I) == INITIAL_STATE[:3]
    assert ahn_reward(Nc, T, I, 0.0, Nc, T) == pytest.approx(I, abs=1e-15)


@criterion(4, "reward formula oracles")
def test_c4_ghaffari_half_tumour():
    r, done = ghaffari_reward(0.3e7, 0.2e7, 1e7)
    assert r == pytest.approx(0.5) and not done


@criterion(4, "reward formula oracles")
@pytest.mark.xfail(strict=True, reason="direct evaluation gives 0.39628; the reference 0.398 +- 0.001 "
                                       "is off by 0.0017")
def test_c4_glucose_risk_at_80():
    x = 1.509 * (math.log(80.0) ** 1.084 - 5.381)
    direct = -math.log10(x * x)
    assert risk_reward(80.0) == pytest.approx(direct, rel=1e-12)
    assert abs(risk_reward(80.0) - 0.398) <= 0.001


@criterion(4, "reward formula oracles")
def test_c4_glucose_fluctuation_at_45():
    direct = -(45.0 - 30.0) / 30.0
    assert fluctuation_reward(45.0) == direct == -0.5


# ---------------------------------------------------------------- 5
@criterion(5, "realism layer statistics")
def test_c5_mask_fraction():
    _, present = apply_mask(np.zeros(100_000), 0.2, np.random.default_rng(11), np.zeros(100_000))
    assert abs((1 - present.mean()) - 0.2) <= 0.01


@criterion(5, "realism layer statistics")
@pytest.mark.parametrize("name", ["ahn", "ghaffari", "sepsis"])
def test_c5_pkpd_bounds(name):
    delta = 0.2
    env = make_setting(make_env(name), RealismConfig(setting="p1", pkpd_spread=delta))
    base = env.env.default_params
    lo_seen = hi_seen = False
    for seed in range(2000):
        env.reset(seed=seed)
        for f in dataclasses.fields(base):
            theta, got = getattr(base, f.name), getattr(env.env.params, f.name)
            if not f.metadata.get("pkpd", True):
                assert got == theta
                continue
            lo, hi = sorted((theta * (1 - delta), theta * (1 + delta)))
            if f.metadata.get("probability"):
                lo, hi = min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0)
            assert lo - 1e-12 <= got <= hi + 1e-12, f.name
            if theta:
                lo_seen |= got < theta * (1 - 0.95 * delta)
                hi_seen |= got > theta * (1 + 0.95 * delta)
    assert lo_seen and hi_seen


@criterion(5, "realism layer statistics")
def test_c5_glucose_patients_from_profiles():
    env = make_setting(make_env("glucose"), "p1")
    profiles = [p for _, p in patient_profiles()]
    for seed in range(200):
        env.reset(seed=seed)
        assert env.env.params in profiles


def _trajectory(cfg, name, seed, steps=40):
    env = make_setting(make_env(name), cfg)
    obs, info = env.reset(seed=seed)
    n = env.env.spec.observation_dim
    out = [obs[:n].tobytes(), info["state"].tobytes()]
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        res = env.step(int(rng.integers(env.spec.action_count)))
        out += [res.observation[:n].tobytes(), res.info["state"].tobytes(), np.float64(res.reward).tobytes()]
        if res.terminated or res.truncated:
            break
    return out


@criterion(5, "realism layer statistics")
@pytest.mark.parametrize("name", ["ahn", "ghaffari", "sepsis", "glucose"])
def test_c5_zeroed_p3_reproduces_p1(name):
    zeroed = RealismConfig(setting="p3", noise_scale=0.0, flip_prob=0.0, missing_ratio=0.0)
    for seed in (1, 2, 3):
        assert _trajectory(zeroed, name, seed) == _trajectory(RealismConfig(setting="p1"), name, seed)


# ---------------------------------------------------------------- 6
@criterion(6, "backward pass agrees with central finite differences")
@pytest.mark.parametrize("seed", range(10))
def test_c6_gradient_check(seed):
    rng = np.random.default_rng(seed)
    net = Mlp([4, 7, 6, 3], batch_norm=bool(seed % 2), rng=rng)
    for k in range(3):
        net.param(f"b{k}")[...] = rng.normal(0, 0.3, net.sizes[k + 1])
    x, w = rng.normal(size=(9, 4)), rng.normal(size=(9, 3))

    def loss():
        return float((w * net.forward(x, train=True)).sum())

    worst = 0.0
    loss()
    grads = net.backward(w)
    for p, g in zip(net.params, grads):
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + 1e-6
            up = loss()
            p[i] = old - 1e-6
            down = loss()
            p[i] = old
            num = (up - down) / 2e-6
            # floor: exactly-zero gradients (bias ahead of batch norm) vs FD round-off
            worst = max(worst, abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-3))
    assert worst < 1e-4


# ---------------------------------------------------------------- 7
@criterion(7, "categorical projection conserves mass and shifts on-grid")
def test_c7_c51_projection():
    rng = np.random.default_rng(7)
    support = np.linspace(-10, 10, 51)
    dz = support[1] - support[0]
    for _ in range(500):
        p = rng.dirichlet(np.full(51, 0.3), size=4)
        r = rng.uniform(-25, 25, size=4)
        g = rng.uniform(0, 1, size=4)
        out = c51_project(p, r, g, support)
        assert np.all(out >= 0) and np.max(np.abs(out.sum(axis=1) - 1)) <= 1e-6
        assert np.allclose(c51_project(p, 0.0, 1.0, support), p, atol=1e-15)
        k = int(rng.integers(1, 10))
        q = np.zeros(51)
        q[: 51 - k] = rng.dirichlet(np.ones(51 - k))
        shifted = c51_project(q, k * dz, 1.0, support)
        np.testing.assert_allclose(shifted[k:], q[: 51 - k], atol=1e-12)
        assert np.all(shifted[:k] == 0)


# ---------------------------------------------------------------- 8
@criterion(8, "tabular Q-learning on sepsis: mean >= 0 and above the best baseline")
@pytest.mark.slow
def test_c8_tabular_sepsis():
    agents = [harness.train("tabular-q", "sepsis", "p", seed=s) for s in harness.EVAL_SEEDS]
    rep = harness.evaluate(agents, "sepsis", "p", harness.EVAL_SEEDS, 5000, with_baselines=True)
    name, pib, pib_std = rep.pi_b
    print(f"\ntabular-q {rep.mean:.4f} +- {rep.std:.4f} over {rep.n_episodes}; "
          f"pi_b ({name}) {pib:.4f} +- {pib_std:.4f}; per seed {np.round(rep.per_seed_mean, 4)}")
    assert rep.n_episodes == 25_000
    assert rep.mean >= 0.0
    assert rep.mean > pib


# ---------------------------------------------------------------- 9, 10
@pytest.fixture(scope="module")
def ahn_benchmark():
    episodes, steps = harness.scale_profile(desk_scale=True)
    return harness.run_benchmark(["dqn"], ["ahn"], ["p", "p1", "p2", "p3"], seeds=harness.EVAL_SEEDS,
                                 episodes_per_seed=episodes, total_steps=steps)


@criterion(9, "DQN on AhnChemo beats the best baseline by >= 3 standard errors")
@pytest.mark.slow
def test_c9_dqn_ahn(ahn_benchmark):
    rep = next(r for r in ahn_benchmark if r.setting == "p")
    assert rep.error is None, rep.error
    name, pib, pib_std = rep.pi_b
    se = pib_std / math.sqrt(rep.baselines[name]["episodes"])
    print(f"\ndqn {rep.mean:.3f} +- {rep.std:.3f}; pi_b ({name}) {pib:.3f} +- {pib_std:.3f} "
          f"(se {se:.4f}); per seed {np.round(rep.per_seed_mean, 2)}")
    assert harness.scale_profile(True)[1] <= 200_000
    assert rep.mean >= pib + 3 * se


@criterion(10, "benchmark report over four settings; observation error grows from p1 to p2")
@pytest.mark.slow
def test_c10_degradation_report(ahn_benchmark):
    table = harness.format_table(ahn_benchmark)
    print("\n" + table)
    lines = table.splitlines()
    assert lines[1].split("\t") == ["algorithm", "p", "p1", "p2", "p3"]
    assert any(line.startswith("pi_b (") for line in lines) and any(line.startswith("dqn\t") for line in lines)
    mse = {r.setting: r.obs_mse for r in ahn_benchmark}
    assert mse["p"] == 0.0 and mse["p1"] == 0.0
    assert mse["p2"] > mse["p1"]


# ---------------------------------------------------------------- 11
def _run_pipeline(root: Path, monkeypatch) -> dict[str, bytes]:
    root.mkdir()
    monkeypatch.chdir(root)
    tune = ["tune", "--set", "env=sepsis", "--set", "algorithm=tabular-q", "--set", "n_random=2",
            "--set", "n_tpe=2", "--set", "total_steps=2000", "--set", "trial_episodes=20", "--out", "tune"]
    assert cli.main(tune) == 0
    common = ["--config", "tune/tuned_config.json", "--set", "seeds=[1, 2]", "--set", "episodes_per_seed=20",
              "--set", "record_trajectories=2", "--out", "tab"]
    assert cli.main(["train", *common]) == 0
    assert cli.main(["evaluate", *common]) == 0
    dqn = ["--set", "env=ahn", "--set", "algorithm=c51", "--set", "seeds=[3]", "--set", "total_steps=600",
           "--set", "episodes_per_seed=3", "--set", "realism.setting=p3", "--set", "hyperparameters.hidden=[16]",
           "--set", "hyperparameters.dropout=0.25", "--set", "hyperparameters.batch_norm=true",
           "--set", "hyperparameters.batch_size=32", "--out", "c51"]
    assert cli.main(["train", *dqn]) == 0
    assert cli.main(["evaluate", *dqn]) == 0
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@criterion(11, "repeated tune/train/evaluate runs reproduce every output byte for byte")
def test_c11_determinism(tmp_path, monkeypatch):
    first = _run_pipeline(tmp_path / "a", monkeypatch)
    second = _run_pipeline(tmp_path / "b", monkeypatch)
    assert len(first) > 10
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], name
