"""Run configuration and task-spec files.

Flat INI files with a fixed section vocabulary: [run] names the env family,
seed, and output directory; [embed], [mpc], [perturb], and [eval] override
per-stage defaults. Unknown sections or keys are rejected so typos fail
loudly instead of silently running defaults. Task specs live in their own
files with a single [task] section.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np

from .composer import MpcConfig, SequenceTaskSpec
from .embedding import EmbedConfig
from .envs import PerturbationSpec, TaskSet, default_goals
from .errors import ValidationError


def _parse_int(text: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ValidationError(f"{where} must be an integer, got {text!r}") from None


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"{where} must be a number, got {text!r}") from None


def _parse_bool(text: str, where: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValidationError(f"{where} must be a boolean, got {text!r}")


def _parse_widths(text: str, where: str) -> tuple:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValidationError(f"{where} must list at least one layer width")
    return tuple(_parse_int(p, where) for p in parts)


def _parse_pair(text: str, where: str) -> tuple:
    parts = text.split()
    if len(parts) != 2:
        raise ValidationError(f"{where} must be two numbers, got {text!r}")
    return tuple(_parse_float(p, where) for p in parts)


def parse_points(text: str, where: str) -> np.ndarray:
    """Semicolon-separated 2-D points: 'x0 y0; x1 y1; ...'."""
    points = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        points.append(_parse_pair(chunk, where))
    if not points:
        raise ValidationError(f"{where} must contain at least one point")
    return np.array(points, dtype=np.float64)


# section key -> (EmbedConfig field, caster); n_tasks is derived from the
# goal table rather than configured, so the two can never disagree.
_EMBED_KEYS = {
    "latent_dim": _parse_int,
    "window_len": _parse_int,
    "alpha1": _parse_float,
    "alpha2": _parse_float,
    "alpha3": _parse_float,
    "gamma": _parse_float,
    "episode_horizon": _parse_int,
    "episodes_per_iter": _parse_int,
    "iterations": _parse_int,
    "clip_ratio": _parse_float,
    "epochs": _parse_int,
    "policy_lr": _parse_float,
    "embed_lr": _parse_float,
    "inference_lr": _parse_float,
    "policy_hidden": _parse_widths,
    "embed_hidden": _parse_widths,
    "inference_hidden": _parse_widths,
}

_MPC_KEYS = {
    "n_candidates": _parse_int,
    "sim_horizon": _parse_int,
    "exec_horizon": _parse_int,
    "gamma": _parse_float,
    "max_latent_choices": _parse_int,
    "enforce_horizon_rule": _parse_bool,
    "use_mean_actions": _parse_bool,
    "advance_during_eval": _parse_bool,
}

_PERTURB_KEYS = {
    "action_gain": _parse_float,
    "action_rotation": _parse_float,
    "action_bias": _parse_pair,
    "friction_scale": _parse_float,
}

_EVAL_KEYS = {
    "rollouts_per_task": _parse_int,
    "windows_per_task": _parse_int,
}

_RUN_KEYS = ("env", "seed", "out_dir", "goals")


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs: env family, goals, stage configs, seed."""

    family: str
    tasks: TaskSet
    embed: EmbedConfig
    mpc: MpcConfig
    perturb: PerturbationSpec
    seed: int
    out_dir: str | None = None
    eval_rollouts: int = 20
    eval_windows: int = 100

    def validate(self):
        if self.family not in ("reach", "push"):
            raise ValidationError("env must be 'reach' or 'push'")
        if self.embed.n_tasks != self.tasks.n_tasks:
            raise ValidationError("n_tasks mismatches the goal table")
        self.embed.validate()
        self.mpc.validate()
        self.perturb.validate()
        if self.eval_rollouts < 1:
            raise ValidationError("rollouts_per_task must be >= 1")
        if self.eval_windows < 1:
            raise ValidationError("windows_per_task must be >= 1")
        return self


def _read_ini(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, "r") as fh:
        parser.read_file(fh)
    return parser


def _section_values(parser, section: str, allowed: dict) -> dict:
    values = {}
    if not parser.has_section(section):
        return values
    for key, raw in parser.items(section):
        if key not in allowed:
            raise ValidationError(f"unknown key '{key}' in [{section}]")
        values[key] = allowed[key](raw, f"{section}.{key}")
    return values


def load_run_config(path: str) -> RunConfig:
    """Parse and validate a full run configuration file."""
    parser = _read_ini(path)
    known_sections = ("run", "embed", "mpc", "perturb", "eval")
    for section in parser.sections():
        if section not in known_sections:
            raise ValidationError(f"unknown section [{section}]")
    if not parser.has_section("run"):
        raise ValidationError("missing [run] section")
    run_raw = dict(parser.items("run"))
    for key in run_raw:
        if key not in _RUN_KEYS:
            raise ValidationError(f"unknown key '{key}' in [run]")
    if "env" not in run_raw:
        raise ValidationError("run.env is required")
    if "seed" not in run_raw:
        raise ValidationError("run.seed is required (no wall-clock seeding)")
    family = run_raw["env"].strip()
    if family not in ("reach", "push"):
        raise ValidationError("env must be 'reach' or 'push'")
    seed = _parse_int(run_raw["seed"], "run.seed")
    if "goals" in run_raw:
        goals = parse_points(run_raw["goals"], "run.goals")
    else:
        goals = default_goals(family)
    tasks = TaskSet(goals)

    embed_kwargs = _section_values(parser, "embed", _EMBED_KEYS)
    embed = EmbedConfig(n_tasks=tasks.n_tasks, **embed_kwargs)
    mpc = MpcConfig(**_section_values(parser, "mpc", _MPC_KEYS))
    perturb = PerturbationSpec(**_section_values(parser, "perturb", _PERTURB_KEYS))
    eval_kwargs = _section_values(parser, "eval", _EVAL_KEYS)

    return RunConfig(
        family=family, tasks=tasks, embed=embed, mpc=mpc, perturb=perturb,
        seed=seed, out_dir=run_raw.get("out_dir"),
        eval_rollouts=eval_kwargs.get("rollouts_per_task", 20),
        eval_windows=eval_kwargs.get("windows_per_task", 100),
    ).validate()


_TASK_KEYS = ("waypoints", "tolerance", "target_entity")


def load_task_spec(path: str) -> SequenceTaskSpec:
    """Parse a sequencing-task file: [task] with waypoints and tolerance."""
    parser = _read_ini(path)
    for section in parser.sections():
        if section != "task":
            raise ValidationError(f"unknown section [{section}]")
    if not parser.has_section("task"):
        raise ValidationError("missing [task] section")
    raw = dict(parser.items("task"))
    for key in raw:
        if key not in _TASK_KEYS:
            raise ValidationError(f"unknown key '{key}' in [task]")
    if "waypoints" not in raw:
        raise ValidationError("task.waypoints is required")
    kwargs = {"waypoints": parse_points(raw["waypoints"], "task.waypoints")}
    if "tolerance" in raw:
        kwargs["tolerance"] = _parse_float(raw["tolerance"], "task.tolerance")
    if "target_entity" in raw:
        kwargs["target_entity"] = raw["target_entity"].strip()
    return SequenceTaskSpec(**kwargs)
