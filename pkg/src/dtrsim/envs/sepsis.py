"""Discrete sepsis MDP with four categorical vitals and three binary treatments.

Levels are stored as integers: hr, bp and o2 use 0=L, 1=N, 2=H; glucose uses
0=LL, 1=L, 2=N, 3=H, 4=HH. Treatment flags are (abx, vaso, vent) and an action
index encodes them as ``abx*4 + vaso*2 + vent``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..core import Env, EnvSpec, InvalidActionError

HR, BP, O2, GLU = range(4)
VITALS = ("hr", "bp", "o2", "glu")
LEVELS = (3, 3, 3, 5)
NORMAL = (1, 1, 1, 2)
LEVEL_NAMES = (("L", "N", "H"), ("L", "N", "H"), ("L", "N", "H"), ("LL", "L", "N", "H", "HH"))

_PROB = {"probability": True}


def _p(value):
    return field(default=value, metadata=_PROB)


@dataclass(frozen=True)
class SepsisParams:
    """Transition probabilities, one field per probability row."""

    abx_on_hr_h2n: float = _p(0.5)
    abx_on_bp_h2n: float = _p(0.5)
    abx_off_hr_n2h: float = _p(0.1)
    abx_off_bp_n2h: float = _p(0.5)
    vent_on_o2_l2n: float = _p(0.7)
    vent_off_o2_n2l: float = _p(0.1)
    vaso_on_bp_l2n: float = _p(0.7)
    vaso_on_bp_n2h: float = _p(0.7)
    vaso_on_bp_l2n_diab: float = _p(0.5)
    vaso_on_bp_l2h_diab: float = _p(0.4)
    vaso_on_bp_n2h_diab: float = _p(0.9)
    vaso_on_glu_up_diab: float = _p(0.5)
    vaso_off_bp_n2l: float = _p(0.1)
    vaso_off_bp_h2n: float = _p(0.1)
    vaso_off_bp_n2l_diab: float = _p(0.05)
    vaso_off_bp_h2n_diab: float = _p(0.05)
    fluctuate: float = _p(0.1)
    fluctuate_glu_diab: float = _p(0.3)
    # reset distribution, not part of the transition model
    diabetic_rate: float = field(default=0.2, metadata={"pkpd": False})


class SepsisState(NamedTuple):
    hr: int
    bp: int
    o2: int
    glu: int
    diabetic: bool
    abx: bool
    vaso: bool
    vent: bool

    @property
    def vitals(self) -> tuple[int, int, int, int]:
        return (self.hr, self.bp, self.o2, self.glu)

    @property
    def treatments(self) -> tuple[bool, bool, bool]:
        return (self.abx, self.vaso, self.vent)

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


def decode_action(index: int) -> tuple[bool, bool, bool]:
    if not 0 <= index < 8:
        raise InvalidActionError(f"sepsis action {index} outside [0, 8)")
    return bool(index & 4), bool(index & 2), bool(index & 1)


def encode_action(abx: bool, vaso: bool, vent: bool) -> int:
    return int(abx) * 4 + int(vaso) * 2 + int(vent)


def _move(level: int, u: float, rows) -> int:
    """Apply mutually exclusive rows ``(from, to, p)`` with one uniform draw."""
    acc = 0.0
    for src, dst, p in rows:
        if level == src:
            acc += p
            if u < acc:
                return dst
    return level


def _fluctuate(level: int, top: int, u: float, p: float) -> int:
    if u >= p:
        return level
    step = -1 if u < p / 2 else 1
    return min(max(level + step, 0), top)


def sepsis_transition(state: SepsisState, action: int, rng, params: SepsisParams | None = None) -> SepsisState:
    """Sample the next state.

    ``rng`` only needs a ``random()`` method returning floats in [0, 1); one
    draw is consumed per (step, vital) in a fixed order so the number of draws
    does not depend on the state.
    """
    p = params or SepsisParams()
    abx, vaso, vent = decode_action(action)
    hr, bp, o2, glu = state.vitals
    diab = state.diabetic
    abx_off = state.abx and not abx
    vaso_off = state.vaso and not vaso
    vent_off = state.vent and not vent

    # step 1: antibiotics
    u_hr, u_bp = rng.random(), rng.random()
    if abx:
        hr = _move(hr, u_hr, ((2, 1, p.abx_on_hr_h2n),))
        bp = _move(bp, u_bp, ((2, 1, p.abx_on_bp_h2n),))
    elif abx_off:
        hr = _move(hr, u_hr, ((1, 2, p.abx_off_hr_n2h),))
        bp = _move(bp, u_bp, ((1, 2, p.abx_off_bp_n2h),))

    # step 2: ventilation
    u = rng.random()
    if vent:
        o2 = _move(o2, u, ((0, 1, p.vent_on_o2_l2n),))
    elif vent_off:
        o2 = _move(o2, u, ((1, 0, p.vent_off_o2_n2l),))

    # step 3: vasopressors
    u_bp, u_glu = rng.random(), rng.random()
    if vaso:
        if diab:
            rows = ((0, 1, p.vaso_on_bp_l2n_diab), (0, 2, p.vaso_on_bp_l2h_diab),
                    (1, 2, p.vaso_on_bp_n2h_diab))
            if u_glu < p.vaso_on_glu_up_diab:
                glu = min(glu + 1, LEVELS[GLU] - 1)
        else:
            rows = ((0, 1, p.vaso_on_bp_l2n), (1, 2, p.vaso_on_bp_n2h))
        bp = _move(bp, u_bp, rows)
    elif vaso_off:
        if diab:
            rows = ((1, 0, p.vaso_off_bp_n2l_diab), (2, 1, p.vaso_off_bp_h2n_diab))
        else:
            rows = ((1, 0, p.vaso_off_bp_n2l), (2, 1, p.vaso_off_bp_h2n))
        bp = _move(bp, u_bp, rows)

    # steps 4-7: spontaneous fluctuation of vitals no treatment touched
    affected = (
        abx or abx_off,
        abx or abx_off or vaso or vaso_off,
        vent or vent_off,
        vaso and diab,
    )
    levels = [hr, bp, o2, glu]
    for i in range(4):
        u = rng.random()
        if affected[i]:
            continue
        prob = p.fluctuate_glu_diab if (i == GLU and diab) else p.fluctuate
        levels[i] = _fluctuate(levels[i], LEVELS[i] - 1, u, prob)
    return SepsisState(*levels, diab, abx, vaso, vent)


def abnormal_count(state: SepsisState) -> int:
    return sum(v != n for v, n in zip(state.vitals, NORMAL))


def sepsis_reward_and_terminal(state: SepsisState) -> tuple[float, bool]:
    if abnormal_count(state) >= 3:
        return -1.0, True
    if abnormal_count(state) == 0 and not any(state.treatments):
        return 1.0, True
    return 0.0, False


def sepsis_initial_state(rng: np.random.Generator, diabetic_rate: float = 0.2) -> SepsisState:
    diabetic = bool(rng.random() < diabetic_rate)
    while True:
        vitals = [int(rng.integers(n)) for n in LEVELS]
        k = sum(v != n for v, n in zip(vitals, NORMAL))
        if 1 <= k <= 2:
            return SepsisState(*vitals, diabetic, False, False, False)


class OberstSepsisEnv(Env):
    """Sepsis treatment MDP.

    The observation holds the four vitals as ordinals scaled to [0, 1]
    followed by the three current treatment flags. The diabetic flag is
    hidden. Death (three or more abnormal vitals) gives -1 and discharge
    (all vitals normal, no treatment) gives +1; both end the episode.
    """

    def __init__(self, max_steps: int = 20, params: SepsisParams | None = None):
        super().__init__()
        self.default_params = params or SepsisParams()
        self.params = self.default_params
        self.spec = EnvSpec(
            name="OberstSepsisEnv",
            observation_dim=7,
            action_count=8,
            max_steps=max_steps,
            step_interval=1.0,
            observation_names=("hr", "bp", "o2", "glu", "abx", "vaso", "vent"),
            observation_low=(0.0,) * 7,
            observation_high=(1.0,) * 7,
            categorical=LEVELS + (2, 2, 2),
            measured=(True,) * 4 + (False,) * 3,
            state_names=tuple(SepsisState._fields),
            action_names=("abx", "vaso", "vent"),
            time_unit="step",
        )
        self._s = SepsisState(1, 1, 1, 2, False, False, False, False)

    zero_action = 0

    @property
    def state(self) -> np.ndarray:
        return self._s.as_array()

    @property
    def sepsis_state(self) -> SepsisState:
        return self._s

    def observe(self) -> np.ndarray:
        s = self._s
        vit = [v / (n - 1) for v, n in zip(s.vitals, LEVELS)]
        return np.array(vit + [float(f) for f in s.treatments])

    def default_observation(self) -> np.ndarray:
        vit = [n / (k - 1) for n, k in zip(NORMAL, LEVELS)]
        return np.array(vit + [0.0, 0.0, 0.0])

    def action_map(self, index: int) -> np.ndarray:
        return np.array(decode_action(index), dtype=np.float64)

    def _reset_state(self) -> None:
        self._s = sepsis_initial_state(self.rng, self.params.diabetic_rate)

    def _advance(self, raw):
        self._s = sepsis_transition(self._s, encode_action(*raw.astype(bool)), self.rng, self.params)
        return sepsis_reward_and_terminal(self._s)
