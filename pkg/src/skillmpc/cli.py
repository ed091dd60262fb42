"""Command-line entry points.

Four subcommands cover the full pipeline: `train` fits a skill checkpoint
from a run config, `compose` solves an unseen waypoint task with the MPC
loop, `eval` measures the embedding criteria on a checkpoint, and `plot`
renders a composition log to SVG. Exit codes: 0 success, 1 usage, 2
validation (bad configs, malformed or mismatched checkpoints), 3 runtime
(including a composition that ran out of budget). Output directories
resolve as --out, then $SKILLMPC_OUT, then the config's out_dir.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .checkpoint import atomic_write_text, load_checkpoint, save_checkpoint
from .composer import ComposeResult, compose
from .config import load_run_config, load_task_spec
from .embedding import evaluate_policy, identifiability, entropy_floor, train
from .envs import TaskSet, make_env, wrap_perturbed
from .errors import ValidationError
from .numerics import mlp_forward_batch, entropy_batch
from .plotting import render_trajectory_svg

OUT_ENV_VAR = "SKILLMPC_OUT"


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _resolve_out(args, config_out=None) -> str:
    out = args.out or os.environ.get(OUT_ENV_VAR) or config_out
    if not out:
        raise ValidationError(
            "no output directory: pass --out, set SKILLMPC_OUT, or set run.out_dir")
    return out


def _resolve_seed(args, config_seed: int) -> int:
    return config_seed if args.seed is None else args.seed


def _float_cell(v: float) -> str:
    return repr(float(v))


def _trajectory_csv(result: ComposeResult, family: str, latent_dim: int) -> str:
    columns = ["round", "step", "gripper_x", "gripper_y"]
    if family == "push":
        columns += ["box_x", "box_y"]
    columns += ["latent_index"] + [f"z{i}" for i in range(latent_dim)] + ["reward"]
    lines = [",".join(columns)]
    for row in result.rows:
        cells = [str(row.round_index), str(row.step_index),
                 _float_cell(row.gripper[0]), _float_cell(row.gripper[1])]
        if family == "push":
            cells += [_float_cell(row.box[0]), _float_cell(row.box[1])]
        cells.append(str(row.latent_index))
        cells += [_float_cell(z) for z in row.latent]
        cells.append(_float_cell(row.reward))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _candidates_csv(result: ComposeResult, latent_dim: int) -> str:
    columns = (["round", "candidate"] + [f"z{i}" for i in range(latent_dim)]
               + ["return", "chosen"])
    lines = [",".join(columns)]
    for rec in result.rounds:
        for i in range(rec.latents.shape[0]):
            cells = [str(rec.round_index), str(i)]
            cells += [_float_cell(z) for z in rec.latents[i]]
            cells.append(_float_cell(rec.returns[i]))
            cells.append("1" if i == rec.chosen else "0")
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _summary_text(result: ComposeResult, n_waypoints: int) -> str:
    lines = [
        f"completed={'true' if result.completed else 'false'}",
        f"latent_choices={result.latent_choices}",
        f"total_steps={result.total_steps}",
        f"final_progress={result.final_progress}",
        f"waypoints={n_waypoints}",
        f"wall_time_s={result.wall_time_s!r}",
    ]
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    seed = _resolve_seed(args, run.seed)
    out = _resolve_out(args, run.out_dir)
    total = run.embed.iterations
    stride = max(1, total // 10)
    metrics_lines = []

    def on_metrics(record):
        metrics_lines.append(json.dumps(record, sort_keys=True))
        if record["iteration"] % stride == 0:
            mean_dist = float(np.mean(record["task_final_distance"]))
            print(f"[train] iteration {record['iteration']}/{total} "
                  f"mean final distance {mean_dist:.4f}", file=sys.stderr)

    ckpt = train(run.embed, lambda: make_env(run.family, run.tasks), seed,
                 metrics_hook=on_metrics)
    ckpt_path = os.path.join(out, "checkpoint.txt")
    save_checkpoint(ckpt_path, ckpt)
    atomic_write_text(os.path.join(out, "metrics.ndjson"),
                      "\n".join(metrics_lines) + "\n" if metrics_lines else "")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_compose(args) -> int:
    run = load_run_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.env_family != run.family:
        raise ValidationError(
            f"checkpoint env '{ckpt.env_family}' mismatches config env '{run.family}'")
    spec = load_task_spec(args.spec)
    seed = _resolve_seed(args, run.seed)
    out = _resolve_out(args, run.out_dir)

    tasks = TaskSet(ckpt.goals)
    real_env = wrap_perturbed(make_env(run.family, tasks), run.perturb)
    sim_env = make_env(run.family, tasks)
    real_env.reset()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    result = compose(real_env, sim_env, ckpt, spec, run.mpc, rng)

    atomic_write_text(os.path.join(out, "trajectory.csv"),
                      _trajectory_csv(result, run.family, ckpt.cfg.latent_dim))
    atomic_write_text(os.path.join(out, "candidates.csv"),
                      _candidates_csv(result, ckpt.cfg.latent_dim))
    atomic_write_text(os.path.join(out, "summary.txt"),
                      _summary_text(result, spec.n_waypoints))
    state = "completed" if result.completed else "incomplete"
    print(f"{state}: {result.final_progress}/{spec.n_waypoints} waypoints in "
          f"{result.latent_choices} latent choices ({result.total_steps} steps)")
    return 0 if result.completed else 3


def cmd_eval(args) -> int:
    run = load_run_config(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.env_family != run.family:
        raise ValidationError(
            f"checkpoint env '{ckpt.env_family}' mismatches config env '{run.family}'")
    seed = _resolve_seed(args, run.seed)
    out = _resolve_out(args, run.out_dir)
    env = make_env(run.family, TaskSet(ckpt.goals))
    rollout_ss, ident_ss = np.random.SeedSequence(seed).spawn(2)

    returns, dists = evaluate_policy(ckpt, env, run.eval_rollouts,
                                     np.random.default_rng(rollout_ss))
    _, log_stds, _ = mlp_forward_batch(ckpt.embedding, np.eye(ckpt.cfg.n_tasks))
    entropies = entropy_batch(log_stds)
    nway, pairwise = identifiability(ckpt, env, run.eval_windows,
                                     np.random.default_rng(ident_ss))

    lines = [
        f"env={ckpt.env_family}",
        f"tasks={ckpt.cfg.n_tasks}",
        f"rollouts_per_task={run.eval_rollouts}",
        f"windows_per_task={run.eval_windows}",
    ]
    for t in range(ckpt.cfg.n_tasks):
        lines.append(f"task{t}_return={float(returns[t])!r}")
        lines.append(f"task{t}_final_distance={float(dists[t])!r}")
        lines.append(f"task{t}_embed_entropy={float(entropies[t])!r}")
    lines += [
        f"embed_entropy_floor={entropy_floor(ckpt.cfg.latent_dim)!r}",
        f"identifiability_pairwise={float(pairwise)!r}",
        f"identifiability_nway={float(nway)!r}",
        f"chance_pairwise=0.5",
        f"chance_nway={1.0 / ckpt.cfg.n_tasks!r}",
    ]
    report = "\n".join(lines) + "\n"
    atomic_write_text(os.path.join(out, "report.txt"), report)
    sys.stdout.write(report)
    return 0


def read_trajectory_csv(path):
    """Parse a trajectory CSV back into plotting rows."""
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError("empty composition log")
        has_box = "box_x" in reader.fieldnames
        rows = []
        for rec in reader:
            rows.append({
                "round": int(rec["round"]),
                "step": int(rec["step"]),
                "gripper": (float(rec["gripper_x"]), float(rec["gripper_y"])),
                "box": (float(rec["box_x"]), float(rec["box_y"])) if has_box else None,
            })
    if not rows:
        raise ValueError("empty composition log")
    return rows


def cmd_plot(args) -> int:
    rows = read_trajectory_csv(args.log)
    waypoints = load_task_spec(args.spec).waypoints if args.spec else None
    out_dir = args.out or os.environ.get(OUT_ENV_VAR) or os.path.dirname(args.log) or "."
    stem = os.path.splitext(os.path.basename(args.log))[0]
    svg_path = os.path.join(out_dir, f"{stem}.svg")
    atomic_write_text(svg_path, render_trajectory_svg(rows, waypoints))
    print(f"plot: {svg_path}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="skillmpc",
                     description="latent-skill training and MPC composition")
    commands = parser.add_subparsers(dest="command", required=True,
                                     parser_class=_Parser)

    p_train = commands.add_parser("train", help="train a skill checkpoint")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out")
    p_train.add_argument("--seed", type=int)
    p_train.set_defaults(handler=cmd_train)

    p_compose = commands.add_parser("compose", help="solve a waypoint task by MPC")
    p_compose.add_argument("--config", required=True)
    p_compose.add_argument("--checkpoint", required=True)
    p_compose.add_argument("--spec", required=True)
    p_compose.add_argument("--out")
    p_compose.add_argument("--seed", type=int)
    p_compose.set_defaults(handler=cmd_compose)

    p_eval = commands.add_parser("eval", help="measure embedding criteria")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--out")
    p_eval.add_argument("--seed", type=int)
    p_eval.set_defaults(handler=cmd_eval)

    p_plot = commands.add_parser("plot", help="render a composition log to SVG")
    p_plot.add_argument("log")
    p_plot.add_argument("--spec")
    p_plot.add_argument("--out")
    p_plot.set_defaults(handler=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
