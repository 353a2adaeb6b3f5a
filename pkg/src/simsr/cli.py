"""Command line entry point: ``simsr {solve-metric,train,eval-metric-quality,transfer}``.

Every command takes ``--config <json>``, ``--out <dir>`` and an optional
``--seed`` that overrides the seeds in the config. Exit codes: 0 success,
2 validation error, 3 convergence failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from simsr import runner
from simsr.envs import ground_truth_bundle
from simsr.mdp import (
    MDPValidationError,
    Policy,
    load_mdp,
    optimal_policy,
    random_mdp,
    random_policy,
)
from simsr.metrics import ConvergenceError, OperatorKind, solve_fixed_point, write_distance_csv
from simsr.runner import ConfigError, ExperimentConfig

log = logging.getLogger("simsr")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


# -- solve-metric ----------------------------------------------------------------

SOLVE_SECTIONS = {"mdp", "policy", "solver"}
SOLVER_KEYS = {"kind", "tol", "max_iter"}


def _resolve_solve_config(data: dict, seed: int | None) -> dict:
    unknown = sorted(set(data) - SOLVE_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    mdp_cfg = dict(data.get("mdp") or {})
    if len(mdp_cfg) != 1 or next(iter(mdp_cfg)) not in ("file", "gridworld", "random"):
        raise ConfigError("[mdp] needs exactly one of 'file', 'gridworld', 'random'")
    if "random" in mdp_cfg:
        rnd = {"n_states": 5, "n_actions": 2, "gamma": 0.9, "seed": 0, **mdp_cfg["random"]}
        if seed is not None:
            rnd["seed"] = seed
        mdp_cfg["random"] = rnd
    if "gridworld" in mdp_cfg:
        grid = {"gamma": 0.9, **mdp_cfg["gridworld"]}
        runner._from_dict(runner.EnvConfig, {k: v for k, v in grid.items() if k != "gamma"}, "mdp.gridworld")
        mdp_cfg["gridworld"] = grid
    solver = {"kind": "independent", "tol": 1e-8, "max_iter": None, **(data.get("solver") or {})}
    extra = sorted(set(solver) - SOLVER_KEYS)
    if extra:
        raise ConfigError(f"unknown keys in [solver]: {', '.join(extra)}")
    try:
        OperatorKind(solver["kind"])
    except ValueError:
        raise ConfigError(f"unknown solver kind {solver['kind']!r}") from None
    return {"mdp": mdp_cfg, "policy": data.get("policy", "uniform"), "solver": solver}


def _build_mdp(mdp_cfg: dict, base: Path):
    if "file" in mdp_cfg:
        return load_mdp((base / mdp_cfg["file"]) if not Path(mdp_cfg["file"]).is_absolute() else mdp_cfg["file"])
    if "gridworld" in mdp_cfg:
        grid = dict(mdp_cfg["gridworld"])
        gamma = grid.pop("gamma")
        env = runner.EnvConfig(**grid).make(gamma)
        return ground_truth_bundle(env).mdp
    rnd = mdp_cfg["random"]
    return random_mdp(rnd["n_states"], rnd["n_actions"], rnd["gamma"], rnd["seed"])


def _build_policy(spec, mdp) -> Policy:
    if spec == "uniform":
        return Policy.uniform(mdp.n_states, mdp.n_actions)
    if spec == "optimal":
        return optimal_policy(mdp)
    if isinstance(spec, dict) and set(spec) == {"probs"}:
        return Policy(np.array(spec["probs"], dtype=float))
    if isinstance(spec, dict) and set(spec) == {"random"}:
        return random_policy(mdp.n_states, mdp.n_actions, int(spec["random"]))
    raise ConfigError(f"unsupported policy spec {spec!r}")


def cmd_solve_metric(args) -> int:
    resolved = _resolve_solve_config(read_config(args.config), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "resolved_config.json", resolved)
    mdp = _build_mdp(resolved["mdp"], Path(args.config).parent)
    policy = _build_policy(resolved["policy"], mdp)
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ConfigError("policy shape does not match the MDP")
    solver = resolved["solver"]
    kind = OperatorKind(solver["kind"])
    header = ("kind", "n_states", "iterations", "final_residual", "converged")
    try:
        report = solve_fixed_point(mdp, policy, kind, float(solver["tol"]), solver["max_iter"])
    except ConvergenceError as exc:
        write_csv(out / "summary.csv", header, [(kind.value, mdp.n_states, exc.iterations, exc.residual, 0)])
        log.error("%s", exc)
        return EXIT_CONVERGENCE
    write_distance_csv(report.distances, out / "distances.csv")
    write_csv(
        out / "summary.csv", header,
        [(kind.value, mdp.n_states, report.iterations, report.final_residual, 1)],
    )
    return EXIT_OK


# -- train / eval / transfer -----------------------------------------------------


def _experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(read_config(args.config))
    if args.seed is not None:
        cfg.run.seeds = [args.seed]
    return cfg


def _write_run(result: runner.RunResult, run_dir: Path) -> None:
    write_csv(run_dir / "steps.csv", runner.STEP_COLUMNS, result.step_rows)
    write_csv(run_dir / "episodes.csv", runner.EPISODE_COLUMNS, result.episode_rows)
    if result.eval_rows:
        write_csv(run_dir / "eval.csv", runner.EVAL_COLUMNS, result.eval_rows)


def cmd_train(args) -> int:
    cfg = _experiment(args)
    if cfg.run.encoder == "frozen":
        raise ConfigError("train builds its own encoder; use the transfer command for frozen encoders")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "resolved_config.json", cfg.to_dict())
    for seed in cfg.run.seeds:
        run_dir = out / f"seed_{seed}"
        ckpt_dir = run_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        log.info("training seed %d for %d steps", seed, cfg.run.steps)
        result = runner.train(cfg, seed, checkpoint_dir=ckpt_dir)
        _write_run(result, run_dir)
        summary = {"seed": seed, "steps": cfg.run.steps, "checkpoints": [p.name for p in result.checkpoints]}
        if result.eval_rows:
            summary["final_eval_return"] = result.eval_rows[-1][1]
            summary["final_greedy_value_ratio"] = result.eval_rows[-1][2]
            summary["auc"] = runner.area_under_curve(result.eval_rows)
        if result.learner is not None:
            env = cfg.env.make(cfg.train.gamma)
            summary["metric_quality"] = runner.metric_quality(result.learner.pair.online, env)
        write_json(run_dir / "summary.json", summary)
    return EXIT_OK


def cmd_eval_metric_quality(args) -> int:
    cfg = _experiment(args)
    pair = runner.load_encoder_checkpoint(args.checkpoint)
    env = cfg.env.make(cfg.train.gamma)
    if pair.online.obs_dim != env.obs_dim:
        raise ConfigError(
            f"checkpoint expects observations of size {pair.online.obs_dim}, env emits {env.obs_dim}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "resolved_config.json", cfg.to_dict())
    report = runner.metric_quality(pair.online, env)
    write_json(out / "metric_quality.json", report)
    write_distance_csv(runner.exact_metric(env), out / "exact_distances.csv")
    write_distance_csv(runner.learned_distances(pair.online, env), out / "learned_distances.csv")
    rows = []
    for t, ep in runner._distractor_clocks(env):
        Z = pair.online(runner.state_observations(env, t, ep))
        rows += [(s, t, ep, *Z[s]) for s in range(env.n_states)]
    header = ("state", "t", "episode", *(f"z{i}" for i in range(pair.online.latent_dim)))
    write_csv(out / "embeddings.csv", header, rows)
    return EXIT_OK


def cmd_transfer(args) -> int:
    cfg = _experiment(args)
    if cfg.run.mode != "agent":
        raise ConfigError("transfer needs run.mode = 'agent'")
    frozen = runner.load_encoder_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "resolved_config.json", cfg.to_dict())
    summary_rows = []
    for seed in cfg.run.seeds:
        frozen_run, scratch_run = runner.transfer(cfg, frozen, seed)
        rows = [
            (f[0], f[1], s[1], f[2], s[2])
            for f, s in zip(frozen_run.eval_rows, scratch_run.eval_rows)
        ]
        write_csv(
            out / f"transfer_seed_{seed}.csv",
            ("step", "frozen_return", "scratch_return", "frozen_value_ratio", "scratch_value_ratio"),
            rows,
        )
        fa, sa = runner.area_under_curve(frozen_run.eval_rows), runner.area_under_curve(scratch_run.eval_rows)
        summary_rows.append((seed, fa, sa, fa - sa))
    write_csv(out / "transfer_summary.csv", ("seed", "frozen_auc", "scratch_auc", "frozen_minus_scratch"), summary_rows)
    return EXIT_OK


COMMANDS = {
    "solve-metric": cmd_solve_metric,
    "train": cmd_train,
    "eval-metric-quality": cmd_eval_metric_quality,
    "transfer": cmd_transfer,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simsr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        if name in ("eval-metric-quality", "transfer"):
            p.add_argument("--checkpoint", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MDPValidationError, ValueError) as exc:
        log.error("validation error: %s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
