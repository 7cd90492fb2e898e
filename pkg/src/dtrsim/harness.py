"""Tuning, multi-seed retraining and evaluation.

The workflow mirrors the benchmark protocol: hyperparameters are searched
on one fixed tuning seed (random trials followed by a categorical TPE),
the chosen configuration is retrained on five evaluation seeds, and each
trained policy is evaluated on a large batch of episodes with results
pooled as mean and standard deviation.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .agents import ALGORITHMS, BASELINES, Agent, make_agent
from .core import STREAM_POLICY, Env, Trajectory, TrajectoryStep, derive_seed, rng_stream
from .envs import make_env, resolve_env_name
from .realism import SETTINGS, RealismConfig, make_setting
from .validation import check_positive_int, check_seeds

TUNING_SEED = 0
EVAL_SEEDS = (1, 2, 3, 4, 5)
FULL_EPISODES = 5000
FULL_TRAIN_STEPS = 2_000_000
DESK_FACTOR = 10
TRIAL_EPISODES = 100
PRUNE_AFTER = 50

_COMMON = {
    "lr": (1e-3, 1e-4, 1e-5, 1e-6),
    "batch_size": (128, 256, 512, 1024),
    "batch_norm": (True, False),
    "dropout": (0.0, 0.25, 0.5),
    "target_update_freq": (1, 1000, 5000),
    "update_per_step": (0.1, 0.5),
    "step_per_collect": (50, 100),
}
_C51 = {"v_min": (-20.0, -10.0, -5.0), "v_max": (5.0, 10.0, 20.0)}
# not part of the published grid; a small learning-rate sweep for the oracle learner
_TABULAR = {"alpha": (0.05, 0.1, 0.2, 0.5)}


# ------------------------------------------------------------ search space
class SearchSpace:
    """A finite grid: each dimension has an ordered tuple of candidates."""

    def __init__(self, dims: dict[str, tuple]):
        if not dims or any(len(v) == 0 for v in dims.values()):
            raise ValueError("search space is empty")
        self.dims = {k: tuple(v) for k, v in dims.items()}
        self.names = tuple(self.dims)

    @classmethod
    def for_algorithm(cls, algorithm: str) -> "SearchSpace":
        if algorithm in ("dqn", "ddqn", "ddqn-duel"):
            return cls(_COMMON)
        if algorithm == "c51":
            return cls({**_COMMON, **_C51})
        if algorithm == "tabular-q":
            return cls(_TABULAR)
        raise ValueError(f"no search space defined for {algorithm!r}")

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.dims.values())

    def sample(self, rng: np.random.Generator) -> dict:
        return {k: v[int(rng.integers(len(v)))] for k, v in self.dims.items()}

    def indices(self, config: dict) -> tuple[int, ...]:
        return tuple(self.dims[k].index(config[k]) for k in self.names)

    def contains(self, config: dict) -> bool:
        try:
            self.indices(config)
        except (KeyError, ValueError):
            return False
        return set(config) == set(self.names)

    def __iter__(self):
        for combo in itertools.product(*self.dims.values()):
            yield dict(zip(self.names, combo))


class CategoricalTPE:
    """Tree-structured Parzen estimator specialised to categorical grids.

    After ``n_startup`` uniform draws, observed trials are split at the
    ``gamma`` quantile of their values (higher is better). Each dimension
    gets smoothed category weights for the good set ``l`` and the rest
    ``g``; ``n_candidates`` configurations are sampled from ``l`` and the one
    maximising ``log l - log g`` is proposed. Configurations already
    evaluated are skipped while unseen candidates exist.
    """

    def __init__(self, space: SearchSpace, n_startup: int = 50, gamma: float = 0.25,
                 n_candidates: int = 24, seed: int = 0):
        self.space = space
        self.n_startup = n_startup
        self.gamma = gamma
        self.n_candidates = n_candidates
        self.rng = np.random.default_rng(derive_seed(seed, 0x79E))
        self.history: list[tuple[tuple[int, ...], float]] = []

    def tell(self, config: dict, value: float) -> None:
        self.history.append((self.space.indices(config), float(value)))

    def _weights(self, rows: list[tuple[int, ...]], d: int, n_levels: int) -> np.ndarray:
        w = np.ones(n_levels)
        for r in rows:
            w[r[d]] += 1.0
        return w / w.sum()

    def ask(self) -> dict:
        space = self.space
        seen = {idx for idx, _ in self.history}
        if len(self.history) < self.n_startup:
            for _ in range(100):
                cfg = space.sample(self.rng)
                if space.indices(cfg) not in seen:
                    return cfg
            return cfg
        order = sorted(self.history, key=lambda h: -h[1])
        n_good = max(1, math.ceil(self.gamma * len(order)))
        good = [h[0] for h in order[:n_good]]
        bad = [h[0] for h in order[n_good:]]
        levels = [len(space.dims[k]) for k in space.names]
        lw = [self._weights(good, d, n) for d, n in enumerate(levels)]
        gw = [self._weights(bad, d, n) for d, n in enumerate(levels)]
        best, best_score, fallback = None, -np.inf, None
        for _ in range(self.n_candidates):
            idx = tuple(int(self.rng.choice(n, p=lw[d])) for d, n in enumerate(levels))
            score = sum(np.log(lw[d][i]) - np.log(gw[d][i]) for d, i in enumerate(idx))
            if fallback is None:
                fallback = idx
            if idx not in seen and score > best_score:
                best, best_score = idx, score
        idx = best if best is not None else fallback
        return {k: space.dims[k][i] for k, i in zip(space.names, idx)}


@dataclass
class TrialResult:
    number: int
    config: dict
    value: float
    status: str  # "complete" or "pruned"
    episodes: int


@dataclass
class TuneResult:
    best_config: dict
    best_value: float
    trials: list[TrialResult]
    exhausted: bool


def optimize(space: SearchSpace, objective, n_random: int = 50, n_tpe: int = 50, seed: int = 0,
             gamma: float = 0.25, n_candidates: int = 24) -> TuneResult:
    """Maximise ``objective(config, should_prune) -> (value, status, episodes)``.

    ``should_prune(interim)`` tells the objective whether an interim mean
    falls below the median of completed trials. Search stops early once
    every grid cell has been evaluated.
    """
    tpe = CategoricalTPE(space, n_startup=n_random, gamma=gamma, n_candidates=n_candidates, seed=seed)
    trials: list[TrialResult] = []
    seen: set = set()
    completed: list[float] = []

    def should_prune(interim: float) -> bool:
        return bool(completed) and interim < float(np.median(completed))

    for number in range(n_random + n_tpe):
        if len(seen) >= space.size:
            break
        cfg = tpe.ask()
        seen.add(space.indices(cfg))
        value, status, episodes = objective(cfg, should_prune)
        trials.append(TrialResult(number, cfg, float(value), status, episodes))
        tpe.tell(cfg, value)
        if status == "complete":
            completed.append(float(value))
    done = [t for t in trials if t.status == "complete"] or trials
    best = max(done, key=lambda t: t.value)
    return TuneResult(best.config, best.value, trials, len(seen) >= space.size)


# ------------------------------------------------------------- episodes
def build_env(env_name: str, realism: RealismConfig | str | None = None) -> Env:
    return make_setting(make_env(env_name), realism)


def _scaled_sq_error(obs, clean, lo, span) -> float:
    d = (np.asarray(obs[: len(clean)], dtype=np.float64) - clean) / span
    return float(np.dot(d, d))


def run_episode(agent: Agent, env: Env, seed: int, eps: float, record: bool = False,
                episode_id: int = 0) -> dict:
    """One evaluation episode with policy noise from the seed's own stream.

    Returns the total reward, the number of steps, the summed squared
    observation error (each component divided by its declared range) with
    its component count, and optionally the full trajectory.
    """
    rng = rng_stream(seed, STREAM_POLICY)
    obs, info = env.reset(seed=seed)
    base = getattr(env, "env", env).spec
    lo = np.asarray(base.observation_low, dtype=np.float64)
    span = np.asarray(base.observation_high, dtype=np.float64) - lo
    span = np.where(span > 0, span, 1.0)
    clean = info.get("clean_observation", obs)
    sq, count = _scaled_sq_error(obs, clean, lo, span), len(clean)
    traj = None
    if record:
        spec = env.spec
        traj = Trajectory(episode_id, spec.observation_names, spec.action_names, spec.state_names)
        traj.steps.append(TrajectoryStep(0.0, obs.copy(), -1, np.full(len(spec.action_names), np.nan),
                                         0.0, info["state"]))
    total, steps, done = 0.0, 0, False
    while not done:
        a = agent.act(obs, eps, rng)
        obs, r, term, trunc, info = env.step(a)
        clean = info.get("clean_observation", obs)
        sq += _scaled_sq_error(obs, clean, lo, span)
        count += len(clean)
        total += r
        steps += 1
        done = term or trunc
        if record:
            traj.steps.append(TrajectoryStep(info["time"], obs.copy(), a,
                                             np.atleast_1d(info["raw_action"]).astype(float), r,
                                             info["state"]))
    if record:
        traj.terminated, traj.truncated = bool(term), bool(trunc)
    return {"return": total, "length": steps, "sq_error": sq, "count": count, "trajectory": traj}


def episode_seed(seed: int, episode: int) -> int:
    return derive_seed(seed, episode)


def _eval_seed(args) -> dict:
    agent, env, seed, n, eps, record = args
    returns = np.empty(n)
    lengths = np.empty(n, dtype=np.int64)
    sq = 0.0
    cnt = 0
    trajs = []
    for ep in range(n):
        out = run_episode(agent, env, episode_seed(seed, ep), eps, record=ep < record, episode_id=ep)
        returns[ep] = out["return"]
        lengths[ep] = out["length"]
        sq += out["sq_error"]
        cnt += out["count"]
        if out["trajectory"] is not None:
            trajs.append(out["trajectory"])
    return {"returns": returns, "lengths": lengths, "sq": sq, "count": cnt, "trajectories": trajs}


@dataclass
class EvalReport:
    env: str
    setting: str
    algorithm: str
    seeds: list[int]
    per_seed_mean: list[float]
    returns: np.ndarray
    lengths: np.ndarray
    obs_mse: float
    trajectories: list = field(default_factory=list, repr=False)
    baselines: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.returns)) if len(self.returns) else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.returns)) if len(self.returns) else float("nan")

    @property
    def n_episodes(self) -> int:
        return int(len(self.returns))

    @property
    def sem(self) -> float:
        return self.std / math.sqrt(self.n_episodes) if self.n_episodes else float("nan")

    @property
    def pi_b(self) -> tuple[str, float, float] | None:
        """Best baseline as (name, mean, std), if baselines were evaluated."""
        if not self.baselines:
            return None
        name = max(self.baselines, key=lambda k: self.baselines[k]["mean"])
        b = self.baselines[name]
        return name, b["mean"], b["std"]

    def summary(self) -> dict:
        out = {
            "env": self.env, "setting": self.setting, "algorithm": self.algorithm,
            "seeds": list(self.seeds), "per_seed_mean": list(self.per_seed_mean),
            "mean": self.mean, "std": self.std, "episodes": self.n_episodes, "obs_mse": self.obs_mse,
        }
        if self.error:
            out["error"] = self.error
        if self.pi_b:
            out["pi_b"] = {"name": self.pi_b[0], "mean": self.pi_b[1], "std": self.pi_b[2]}
        return out


def evaluate(agents, env_name: str, realism: RealismConfig | str | None = None,
             seeds=EVAL_SEEDS, episodes_per_seed: int = FULL_EPISODES, eps: float | None = None,
             record: int = 0, n_jobs: int = 1, with_baselines: bool = False) -> EvalReport:
    """Evaluate one policy per seed (or a single policy for every seed).

    ``agents`` is either a fitted agent or a sequence with one agent per
    seed. Episode ``k`` of seed ``s`` resets with ``derive_seed(s, k)``, so
    results do not depend on ``n_jobs``.
    """
    seeds = check_seeds(seeds)
    n = check_positive_int(episodes_per_seed, "episodes_per_seed")
    realism = realism if isinstance(realism, RealismConfig) else RealismConfig(setting=realism or "p")
    if isinstance(agents, Agent):
        agents = [agents] * len(seeds)
    if len(agents) != len(seeds):
        raise ValueError("need one agent per seed")
    name = resolve_env_name(env_name)
    jobs = []
    for agent, seed in zip(agents, seeds):
        e = agent.eps_test if eps is None else eps
        jobs.append((agent, build_env(name, realism), seed, n, e, record))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(_eval_seed, jobs))
    else:
        parts = [_eval_seed(j) for j in jobs]
    report = EvalReport(
        env=name, setting=realism.setting, algorithm=agents[0].name, seeds=seeds,
        per_seed_mean=[float(p["returns"].mean()) for p in parts],
        returns=np.concatenate([p["returns"] for p in parts]),
        lengths=np.concatenate([p["lengths"] for p in parts]),
        obs_mse=sum(p["sq"] for p in parts) / max(sum(p["count"] for p in parts), 1),
        trajectories=[t for p in parts for t in p["trajectories"]],
    )
    if with_baselines:
        report.baselines = evaluate_baselines(name, realism, seeds, n)
    return report


def evaluate_baselines(env_name: str, realism, seeds=EVAL_SEEDS,
                       episodes_per_seed: int = FULL_EPISODES) -> dict:
    env = make_env(env_name)
    out = {}
    for kind in BASELINES:
        agent = make_agent(kind).fit(env)
        r = evaluate(agent, env_name, realism, seeds, episodes_per_seed)
        out[kind] = {"mean": r.mean, "std": r.std, "episodes": r.n_episodes}
    return out


# --------------------------------------------------------------- training
def scale_profile(desk_scale: bool) -> tuple[int, int]:
    """(episodes per seed, training steps) for the full or desk-scale protocol."""
    if desk_scale:
        return FULL_EPISODES // DESK_FACTOR, FULL_TRAIN_STEPS // DESK_FACTOR
    return FULL_EPISODES, FULL_TRAIN_STEPS


def train(algorithm: str, env_name: str, realism: RealismConfig | str | None = None,
          config: dict | None = None, seed: int = TUNING_SEED, total_steps: int | None = None) -> Agent:
    """Fit ``algorithm`` with hyperparameters ``config`` on one seed."""
    params = dict(config or {})
    if algorithm not in BASELINES:
        params["random_state"] = seed
        if total_steps is not None:
            params["total_steps"] = total_steps
    agent = make_agent(algorithm, **params)
    return agent.fit(build_env(env_name, realism))


def tune(algorithm: str, env_name: str, realism: RealismConfig | str | None = None,
         n_random: int = 50, n_tpe: int = 50, total_steps: int | None = None,
         episodes: int = TRIAL_EPISODES, prune_after: int = PRUNE_AFTER,
         space: SearchSpace | None = None, seed: int = TUNING_SEED) -> TuneResult:
    """Search the algorithm's grid on the single tuning seed."""
    if algorithm not in ALGORITHMS:
        raise KeyError(f"unknown algorithm {algorithm!r}")
    space = space or SearchSpace.for_algorithm(algorithm)
    realism = realism if isinstance(realism, RealismConfig) else RealismConfig(setting=realism or "p")
    name = resolve_env_name(env_name)

    def objective(cfg, should_prune):
        agent = train(algorithm, name, realism, cfg, seed=seed, total_steps=total_steps)
        env = build_env(name, realism)
        rets = []
        for ep in range(episodes):
            rets.append(run_episode(agent, env, episode_seed(seed, ep), agent.eps_test)["return"])
            if ep + 1 == prune_after and prune_after < episodes and should_prune(float(np.mean(rets))):
                return float(np.mean(rets)), "pruned", len(rets)
        return float(np.mean(rets)), "complete", len(rets)

    return optimize(space, objective, n_random=n_random, n_tpe=n_tpe, seed=seed)


# -------------------------------------------------------------- benchmark
def run_benchmark(algorithms, envs, settings=SETTINGS, configs: dict | None = None,
                  seeds=EVAL_SEEDS, episodes_per_seed: int = FULL_EPISODES,
                  total_steps: int | None = None, realism: dict | None = None) -> list[EvalReport]:
    """Retrain each algorithm on every seed and evaluate it, per env and setting.

    ``configs`` maps algorithm names to tuned hyperparameters. Baselines in
    ``algorithms`` are evaluated without training. A failing cell is kept
    as a report with ``error`` set and the matrix continues.
    """
    seeds = check_seeds(seeds)
    if TUNING_SEED in seeds:
        raise ValueError("evaluation seeds must not include the tuning seed")
    configs = configs or {}
    reports = []
    for env_name in envs:
        name = resolve_env_name(env_name)
        for setting in settings:
            rc = RealismConfig(setting=setting, **(realism or {}))
            baselines = evaluate_baselines(name, rc, seeds, episodes_per_seed)
            for algo in algorithms:
                try:
                    agents = [train(algo, name, rc, configs.get(algo), seed=s, total_steps=total_steps)
                              for s in seeds]
                    rep = evaluate(agents, name, rc, seeds, episodes_per_seed)
                except Exception as exc:  # recorded, matrix continues
                    rep = EvalReport(name, setting, algo, seeds, [], np.zeros(0), np.zeros(0, dtype=int),
                                     float("nan"), error=f"{type(exc).__name__}: {exc}")
                rep.baselines = baselines
                reports.append(rep)
    return reports


def benchmark_table(reports: list[EvalReport]) -> list[dict]:
    """Rows of a results table: one per (algorithm, env, setting).

    Includes a ``pi_b`` row per (env, setting) and ranks each column, so
    ``rank`` is 1 for the best and 2 for the second-best mean return.
    """
    rows = []
    cols: dict = {}
    for r in reports:
        key = (r.env, r.setting)
        if key not in cols and r.pi_b:
            name, m, s = r.pi_b
            n = r.baselines[name]["episodes"]
            cols[key] = []
            rows.append({"algorithm": f"pi_b ({name})", "env": r.env, "setting": r.setting,
                         "mean": m, "std": s, "episodes": n, "obs_mse": float("nan"), "error": ""})
        rows.append({"algorithm": r.algorithm, "env": r.env, "setting": r.setting, "mean": r.mean,
                     "std": r.std, "episodes": r.n_episodes, "obs_mse": r.obs_mse, "error": r.error or ""})
    by_col: dict = {}
    for row in rows:
        by_col.setdefault((row["env"], row["setting"]), []).append(row)
    for col in by_col.values():
        ok = sorted((r for r in col if not r["error"] and np.isfinite(r["mean"])), key=lambda r: -r["mean"])
        for row in col:
            row["rank"] = ok.index(row) + 1 if row in ok else 0
    return rows


def format_table(reports: list[EvalReport]) -> str:
    """Algorithms as rows, settings as columns, ``mean ± std`` cells; ``*`` best, ``+`` second."""
    rows = benchmark_table(reports)
    lines = []
    for env in dict.fromkeys(r["env"] for r in rows):
        env_rows = [r for r in rows if r["env"] == env]
        settings = list(dict.fromkeys(r["setting"] for r in env_rows))
        algos = list(dict.fromkeys(r["algorithm"] for r in env_rows))
        lines.append(f"# {env}")
        lines.append("\t".join(["algorithm", *settings]))
        for algo in algos:
            cells = [algo]
            for s in settings:
                hit = [r for r in env_rows if r["algorithm"] == algo and r["setting"] == s]
                if not hit:
                    cells.append("-")
                    continue
                r = hit[0]
                if r["error"]:
                    cells.append("failed")
                    continue
                mark = {1: "*", 2: "+"}.get(r["rank"], "")
                cells.append(f"{r['mean']:.2f} ± {r['std']:.2f}{mark}")
            lines.append("\t".join(cells))
        mse = []
        for s in settings:
            vals = [r["obs_mse"] for r in env_rows if r["setting"] == s and np.isfinite(r["obs_mse"])]
            mse.append(f"{vals[0]:.6g}" if vals else "-")
        lines.append("\t".join(["obs_mse", *mse]))
    return "\n".join(lines) + "\n"


def report_dict(result: TuneResult) -> dict:
    return {"best_config": result.best_config, "best_value": result.best_value,
            "exhausted": result.exhausted, "trials": [asdict(t) for t in result.trials]}
