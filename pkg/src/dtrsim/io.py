"""Run configuration, trajectory files, result tables and plot data.

Configs and manifests are JSON. Trajectories and results are
comma-separated with a header row; floats are written with ``repr`` so
they read back to the identical value.
"""
from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import ALGORITHMS
from .core import Trajectory, TrajectoryStep
from .envs import resolve_env_name
from .realism import SETTINGS, RealismConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Malformed run configuration or override."""


@dataclass
class RunConfig:
    """Everything needed to rerun one CLI invocation.

    ``episodes_per_seed`` and ``total_steps`` left as ``None`` follow the
    full or desk-scale protocol. ``algorithms``/``envs``/``settings`` are
    only read by ``benchmark``; the other subcommands use ``algorithm``,
    ``env`` and ``realism.setting``.
    """

    env: str = "AhnChemoEnv"
    algorithm: str = "dqn"
    realism: RealismConfig = field(default_factory=RealismConfig)
    hyperparameters: dict = field(default_factory=dict)
    tune: bool = False
    tuning_seed: int = 0
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    episodes_per_seed: int | None = None
    total_steps: int | None = None
    desk_scale: bool = False
    n_random: int = 50
    n_tpe: int = 50
    trial_episodes: int = 100
    record_trajectories: int = 10
    checkpoint: str | None = None
    algorithms: list = field(default_factory=lambda: ["dqn"])
    envs: list = field(default_factory=lambda: ["AhnChemoEnv"])
    settings: list = field(default_factory=lambda: list(SETTINGS))
    out: str = "runs"

    def validate(self) -> "RunConfig":
        try:
            self.env = resolve_env_name(self.env)
            self.envs = [resolve_env_name(e) for e in self.envs]
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        for a in [self.algorithm, *self.algorithms]:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; known: {', '.join(ALGORITHMS)}")
        for s in self.settings:
            if s not in SETTINGS:
                raise ConfigError(f"unknown setting {s!r}; known: {', '.join(SETTINGS)}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        if self.tuning_seed in self.seeds:
            raise ConfigError("evaluation seeds must not include the tuning seed")
        for name in ("episodes_per_seed", "total_steps"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < 1):
                raise ConfigError(f"{name} must be a positive integer or null")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["version"] = CONFIG_VERSION
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        version = data.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
        realism = data.pop("realism", {})
        if isinstance(realism, dict):
            try:
                realism = RealismConfig(**realism)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"realism: {exc}") from None
        return cls(realism=realism, **data).validate()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return RunConfig.from_json(text)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(config.to_json())


def parse_value(text: str):
    """JSON literal if it parses (numbers, booleans, lists, null), else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: RunConfig, overrides) -> RunConfig:
    """Apply ``key=value`` pairs; dotted keys reach into ``realism`` and ``hyperparameters``."""
    data = config.to_dict()
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        value = parse_value(raw)
        head, _, rest = key.partition(".")
        if rest:
            if head not in ("realism", "hyperparameters"):
                raise ConfigError(f"cannot set nested key {key!r}")
            data[head] = {**data[head], rest: value}
        else:
            if head not in data:
                raise ConfigError(f"unknown config key {head!r}")
            data[head] = value
    return RunConfig.from_dict(data)


# ------------------------------------------------------------ trajectories
def _fmt(v) -> str:
    return repr(float(v))


def trajectory_columns(traj: Trajectory) -> list[str]:
    return (["episode", "time", "action", "reward", "terminated", "truncated"]
            + [f"obs:{n}" for n in traj.observation_names]
            + [f"act:{n}" for n in traj.action_names]
            + [f"state:{n}" for n in traj.state_names])


def write_trajectory(traj: Trajectory, path) -> Path:
    """One line per step with a header naming every column.

    The first row of a recorded episode is the reset observation with
    action ``-1`` and reward 0.
    """
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(trajectory_columns(traj))
            for s in traj.steps:
                w.writerow([traj.episode_id, _fmt(s.time), s.action, _fmt(s.reward),
                            int(traj.terminated), int(traj.truncated)]
                           + [_fmt(v) for v in s.observation]
                           + [_fmt(v) for v in np.atleast_1d(s.raw_action)]
                           + [_fmt(v) for v in s.state])
    except OSError as exc:
        raise OSError(f"cannot write trajectory {path}: {exc}") from exc
    return path


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read trajectory {path}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: empty file, expected a header row")
    header = rows[0]

    def names(prefix):
        return tuple(h[len(prefix):] for h in header if h.startswith(prefix))

    obs_n, act_n, st_n = names("obs:"), names("act:"), names("state:")
    traj = Trajectory(0, obs_n, act_n, st_n)
    i0 = 6
    i1 = i0 + len(obs_n)
    i2 = i1 + len(act_n)
    for row in rows[1:]:
        if len(row) != len(header):
            raise ValueError(f"{path}: row has {len(row)} fields, header has {len(header)}")
        traj.episode_id = int(row[0])
        traj.terminated, traj.truncated = bool(int(row[4])), bool(int(row[5]))
        vals = np.array([float(v) for v in row[i0:]])
        traj.steps.append(TrajectoryStep(float(row[1]), vals[: i1 - i0], int(row[2]),
                                         vals[i1 - i0: i2 - i0], float(row[3]), vals[i2 - i0:]))
    return traj


def write_episodes(report, path) -> Path:
    """One summary row per evaluation episode."""
    path = Path(path)
    n = len(report.returns) // max(len(report.seeds), 1)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "episode", "return", "length"])
        for k, (ret, length) in enumerate(zip(report.returns, report.lengths)):
            w.writerow([report.seeds[k // n], k % n, _fmt(ret), int(length)])
    return path


def write_rows(rows: list[dict], path) -> Path:
    path = Path(path)
    cols = list(rows[0]) if rows else []
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in (r[c] for c in cols)])
    return path


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def manifest(config: RunConfig, command: str, **extra) -> dict:
    """Metadata sufficient to rerun the command: config, seeds and code version."""
    from . import __version__

    return {"command": command, "dtrsim_version": __version__, "config": config.to_dict(), **extra}


# ---------------------------------------------------------- visualisation
def plot_columns(traj: Trajectory) -> list[str]:
    """``t``, observations, raw action components, ``r``, then hidden state as ``<name>_hidden``."""
    hidden = [n for n in traj.state_names if n not in traj.observation_names]
    return (["t", *traj.observation_names, *traj.action_names, "r"]
            + [f"{n}_hidden" for n in hidden])


def plot_series(traj: Trajectory) -> np.ndarray:
    """The trajectory as a (steps, columns) array in :func:`plot_columns` order."""
    hidden = [i for i, n in enumerate(traj.state_names) if n not in traj.observation_names]
    out = []
    for s in traj.steps:
        out.append([s.time, *s.observation, *np.atleast_1d(s.raw_action), s.reward,
                    *np.asarray(s.state)[hidden]])
    width = len(plot_columns(traj))
    return np.asarray(out, dtype=np.float64).reshape(-1, width)


def cohort_mean(trajectories: list[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Step-indexed pointwise mean over episodes and the number of episodes at each step.

    Episodes that ended earlier drop out of later steps; NaN entries (the
    reset row's action) are ignored.
    """
    series = [plot_series(t) for t in trajectories]
    if not series:
        raise ValueError("no trajectories to average")
    width = series[0].shape[1]
    if any(s.shape[1] != width for s in series):
        raise ValueError("trajectories have different columns")
    length = max(len(s) for s in series)
    stack = np.full((len(series), length, width), np.nan)
    for i, s in enumerate(series):
        stack[i, : len(s)] = s
    counts = np.sum(~np.isnan(stack[:, :, 0]), axis=0)
    with np.errstate(invalid="ignore"):
        valid = ~np.isnan(stack)
        total = np.where(valid, stack, 0.0).sum(axis=0)
        n = valid.sum(axis=0)
        mean = np.where(n > 0, total / np.maximum(n, 1), np.nan)
    return mean, counts


def write_series(columns, data, path, extra: dict | None = None) -> Path:
    path = Path(path)
    extra = extra or {}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*columns, *extra])
        for i, row in enumerate(data):
            w.writerow([_fmt(v) for v in row] + [int(v[i]) for v in extra.values()])
    return path


def visualize(trajectory_paths, out_dir) -> list[Path]:
    """Write per-episode and cohort-averaged time-series tables for plotting."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trajs = [read_trajectory(p) for p in trajectory_paths]
    written = []
    for p, t in zip(trajectory_paths, trajs):
        written.append(write_series(plot_columns(t), plot_series(t), out_dir / f"series_{Path(p).stem}.csv"))
    mean, counts = cohort_mean(trajs)
    written.append(write_series(plot_columns(trajs[0]), mean, out_dir / "cohort_mean.csv",
                                {"n_episodes": counts}))
    return written
