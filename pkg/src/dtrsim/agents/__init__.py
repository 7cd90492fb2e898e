"""Agent registry and checkpoint persistence."""
from __future__ import annotations

import json
from pathlib import Path

from ..core import EnvSpec
from ..nn import load_checkpoint, save_checkpoint
from .base import Agent, EpsilonSchedule, ObservationScaler, ReplayBuffer, greedy
from .baselines import BASELINES, BaselinePolicy, MaxDrugPolicy, RandomPolicy, ZeroDrugPolicy
from .dqn import VARIANTS, DQNAgent, c51_project, ddqn_target, dqn_target, dueling_combine
from .tabular import TabularQAgent, tabular_q_update

ALGORITHMS = {
    "dqn": (DQNAgent, {"variant": "dqn"}),
    "ddqn": (DQNAgent, {"variant": "ddqn"}),
    "ddqn-duel": (DQNAgent, {"variant": "ddqn-duel"}),
    "c51": (DQNAgent, {"variant": "c51"}),
    "tabular-q": (TabularQAgent, {}),
    "random": (BaselinePolicy, {"kind": "random"}),
    "zero-drug": (BaselinePolicy, {"kind": "zero-drug"}),
    "max-drug": (BaselinePolicy, {"kind": "max-drug"}),
}

CHECKPOINT_NAME = "agent.dtrnn"


def make_agent(name: str, **params) -> Agent:
    """Instantiate a registered algorithm; ``params`` override its defaults."""
    if name not in ALGORITHMS:
        raise KeyError(f"unknown algorithm {name!r}; known: {', '.join(ALGORITHMS)}")
    cls, fixed = ALGORITHMS[name]
    kwargs = {**fixed, **params}
    if isinstance(kwargs.get("hidden"), list):
        kwargs["hidden"] = tuple(kwargs["hidden"])
    return cls(**kwargs)


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def save_agent(agent: Agent, path, spec: EnvSpec, extra: dict | None = None) -> Path:
    """Write the agent's arrays and a manifest of how to rebuild it.

    ``path`` may be a directory (the file is named ``agent.dtrnn``) or a file.
    """
    path = Path(path)
    if path.suffix != ".dtrnn":
        path.mkdir(parents=True, exist_ok=True)
        path = path / CHECKPOINT_NAME
    meta = {
        "algorithm": agent.name,
        "params": {k: _jsonable(v) for k, v in agent.get_params().items()},
        "env": spec.name,
        "observation_dim": spec.observation_dim,
        "action_count": spec.action_count,
        **(extra or {}),
    }
    save_checkpoint(path, agent.state_arrays(), meta)
    return path


def load_agent(path, spec: EnvSpec) -> tuple[Agent, dict]:
    """Rebuild an agent saved by :func:`save_agent` for an environment with ``spec``."""
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_NAME
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    arrays, meta = load_checkpoint(path)
    if (meta.get("observation_dim"), meta.get("action_count")) != (spec.observation_dim, spec.action_count):
        raise ValueError(
            f"checkpoint {path} was trained for {meta.get('env')} with "
            f"{meta.get('observation_dim')} observations and {meta.get('action_count')} actions"
        )
    cls, _ = ALGORITHMS[meta["algorithm"]]
    params = dict(meta["params"])
    if isinstance(params.get("hidden"), list):
        params["hidden"] = tuple(params["hidden"])
    agent = cls(**params)
    agent._restore(spec)
    agent.load_state_arrays(arrays)
    return agent, meta


def manifest_json(meta: dict) -> str:
    return json.dumps(meta, indent=2, sort_keys=True)


__all__ = [
    "ALGORITHMS", "BASELINES", "VARIANTS", "Agent", "BaselinePolicy", "DQNAgent", "EpsilonSchedule",
    "MaxDrugPolicy", "ObservationScaler", "RandomPolicy", "ReplayBuffer", "TabularQAgent",
    "ZeroDrugPolicy", "c51_project", "ddqn_target", "dqn_target", "dueling_combine", "greedy",
    "load_agent", "make_agent", "save_agent", "tabular_q_update",
]
