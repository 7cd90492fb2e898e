"""Command-line entry point: ``dtrsim {list,tune,train,evaluate,benchmark,visualize}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .agents import ALGORITHMS, BASELINES, load_agent, save_agent
from .envs import ENVIRONMENTS, make_env
from .io import (
    ConfigError, RunConfig, apply_overrides, load_config, manifest, save_config, visualize,
    write_episodes, write_json, write_rows, write_trajectory,
)
from .realism import SETTINGS


def _profile(cfg: RunConfig) -> tuple[int, int | None]:
    episodes, steps = harness.scale_profile(cfg.desk_scale)
    episodes = cfg.episodes_per_seed or episodes
    steps = cfg.total_steps or steps
    return episodes, steps


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = list(args.set or [])
    if args.out:
        overrides.append(f"out={args.out}")
    if args.desk_scale:
        overrides.append("desk_scale=true")
    cfg = apply_overrides(cfg, overrides)
    if args.seed is not None:
        if args.command == "tune":
            cfg = apply_overrides(cfg, [f"tuning_seed={args.seed}"])
        else:
            cfg = apply_overrides(cfg, [f"seeds=[{args.seed}]"])
    return cfg


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed_dir(out: Path, seed: int) -> Path:
    return out / "checkpoints" / f"seed_{seed}"


def cmd_list(cfg, out=None) -> int:
    out = out or sys.stdout
    print("environments:", file=out)
    for name in ENVIRONMENTS:
        print(f"  {name}", file=out)
    print("algorithms:", file=out)
    for name in ALGORITHMS:
        print(f"  {name}", file=out)
    print("settings:", file=out)
    for name in SETTINGS:
        print(f"  {name}", file=out)
    return 0


def _do_tune(cfg: RunConfig, out: Path) -> RunConfig:
    _, steps = _profile(cfg)
    result = harness.tune(cfg.algorithm, cfg.env, cfg.realism, n_random=cfg.n_random, n_tpe=cfg.n_tpe,
                          total_steps=steps, episodes=cfg.trial_episodes,
                          prune_after=min(harness.PRUNE_AFTER, cfg.trial_episodes),
                          seed=cfg.tuning_seed)
    write_json(harness.report_dict(result), out / "trials.json")
    tuned = apply_overrides(cfg, [])
    tuned.hyperparameters = {**cfg.hyperparameters, **result.best_config}
    tuned.tune = False
    save_config(tuned, out / "tuned_config.json")
    print(f"best value {result.best_value!r} after {len(result.trials)} trials: {result.best_config}")
    return tuned


def cmd_tune(cfg: RunConfig) -> int:
    out = _out(cfg)
    _do_tune(cfg, out)
    write_json(manifest(cfg, "tune"), out / "manifest.json")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = _out(cfg)
    if cfg.tune:
        cfg = _do_tune(cfg, out)
    _, steps = _profile(cfg)
    rows = []
    for seed in cfg.seeds:
        agent = harness.train(cfg.algorithm, cfg.env, cfg.realism, cfg.hyperparameters, seed=seed,
                              total_steps=None if cfg.algorithm in BASELINES else steps)
        env = harness.build_env(cfg.env, cfg.realism)
        extra = {"setting": cfg.realism.setting, "seed": seed}
        path = save_agent(agent, _seed_dir(out, seed), env.spec, extra)
        returns = getattr(agent, "episode_returns_", [])
        tail = returns[-100:]
        rows.append({"seed": seed, "checkpoint": str(path.relative_to(out)),
                     "train_episodes": len(returns),
                     "train_tail_mean": float(sum(tail) / len(tail)) if tail else float("nan")})
        print(f"seed {seed}: saved {path}")
    write_rows(rows, out / "training.csv")
    save_config(cfg, out / "config.json")
    write_json(manifest(cfg, "train"), out / "manifest.json")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    out = _out(cfg)
    episodes, _ = _profile(cfg)
    ckpt_root = Path(cfg.checkpoint) if cfg.checkpoint else out
    env = harness.build_env(cfg.env, cfg.realism)
    agents = []
    for seed in cfg.seeds:
        d = _seed_dir(ckpt_root, seed)
        if not (d / "agent.dtrnn").exists():
            if cfg.algorithm in BASELINES and cfg.checkpoint is None:
                agents.append(harness.make_agent(cfg.algorithm).fit(make_env(cfg.env)))
                continue
            raise FileNotFoundError(f"missing checkpoint for seed {seed}: {d / 'agent.dtrnn'}")
        agent, meta = load_agent(d, env.spec)
        if meta.get("algorithm") != cfg.algorithm:
            raise ConfigError(f"checkpoint {d} holds {meta.get('algorithm')!r}, config asks for {cfg.algorithm!r}")
        agents.append(agent)
    report = harness.evaluate(agents, cfg.env, cfg.realism, cfg.seeds, episodes,
                              record=cfg.record_trajectories, with_baselines=True)
    write_json(report.summary(), out / "report.json")
    write_episodes(report, out / "episodes.csv")
    write_rows(harness.benchmark_table([report]), out / "results.csv")
    traj_dir = out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    per_seed = cfg.record_trajectories
    for k, t in enumerate(report.trajectories):
        seed = cfg.seeds[k // per_seed] if per_seed else cfg.seeds[0]
        write_trajectory(t, traj_dir / f"seed{seed}_ep{t.episode_id:05d}.csv")
    write_json(manifest(cfg, "evaluate"), out / "manifest.json")
    name, m, s = report.pi_b
    print(f"{cfg.algorithm} on {cfg.env} [{cfg.realism.setting}]: {report.mean:.4f} ± {report.std:.4f} "
          f"over {report.n_episodes} episodes; pi_b {name} {m:.4f} ± {s:.4f}")
    return 0


def cmd_benchmark(cfg: RunConfig) -> int:
    out = _out(cfg)
    episodes, steps = _profile(cfg)
    configs = {a: cfg.hyperparameters for a in cfg.algorithms if a not in BASELINES}
    realism = {k: v for k, v in vars(cfg.realism).items() if k != "setting"}
    reports = harness.run_benchmark(cfg.algorithms, cfg.envs, cfg.settings, configs, cfg.seeds,
                                    episodes, steps, realism)
    write_rows(harness.benchmark_table(reports), out / "results.csv")
    table = harness.format_table(reports)
    (out / "table.tsv").write_text(table)
    write_json([r.summary() for r in reports], out / "report.json")
    write_json(manifest(cfg, "benchmark"), out / "manifest.json")
    print(table, end="")
    return 0


def cmd_visualize(cfg: RunConfig, inputs) -> int:
    out = _out(cfg)
    paths = []
    for item in inputs or [str(Path(cfg.out) / "trajectories")]:
        p = Path(item)
        paths.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    if not paths:
        raise FileNotFoundError("no trajectory files found")
    written = visualize(paths, out / "plots")
    print(f"wrote {len(written)} tables to {out / 'plots'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtrsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("list", "show registered environments, algorithms and settings"),
        ("tune", "random + TPE hyperparameter search on the tuning seed"),
        ("train", "train one agent per evaluation seed and save checkpoints"),
        ("evaluate", "evaluate saved agents (or a baseline) and write reports"),
        ("benchmark", "retrain and evaluate an algorithms x envs x settings matrix"),
        ("visualize", "per-episode and cohort-averaged time series from trajectory files"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry (repeatable); dotted keys for realism.* and hyperparameters.*")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="tuning seed for tune, the single evaluation seed otherwise")
        sp.add_argument("--desk-scale", action="store_true", help="10x fewer episodes and training steps")
        if name == "visualize":
            sp.add_argument("inputs", nargs="*", help="trajectory files or directories")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "list":
            return cmd_list(cfg)
        if args.command == "visualize":
            return cmd_visualize(cfg, args.inputs)
        return {"tune": cmd_tune, "train": cmd_train, "evaluate": cmd_evaluate,
                "benchmark": cmd_benchmark}[args.command](cfg)
    except ConfigError as exc:
        print(f"dtrsim: config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, KeyError, ValueError, OSError) as exc:
        print(f"dtrsim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
