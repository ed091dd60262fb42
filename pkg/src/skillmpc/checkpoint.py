"""Text checkpoints: versioned, diff-able, and bit-exact on round-trip.

Layout: a version line, scalar header fields ('key: value'), the training
config echoed as 'config.*' keys, then named arrays. Every float is written
with repr(), whose shortest-round-trip decimal form parses back to the
identical IEEE-754 double, so load(save(x)) == x bitwise. All writes go
through a temp file and os.replace, so a crash never leaves a partial file.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import fields

import numpy as np

from .embedding import CHECKPOINT_VERSION, EmbedConfig, SkillCheckpoint
from .errors import ValidationError
from .numerics import MlpParams

_HEADER = "skill-checkpoint-v{version}"

_CONFIG_CASTS = {
    "n_tasks": int, "latent_dim": int, "window_len": int,
    "alpha1": float, "alpha2": float, "alpha3": float, "gamma": float,
    "episode_horizon": int, "episodes_per_iter": int, "iterations": int,
    "clip_ratio": float, "epochs": int,
    "policy_lr": float, "embed_lr": float, "inference_lr": float,
    "policy_hidden": lambda s: tuple(int(p) for p in s.split(",") if p.strip()),
    "embed_hidden": lambda s: tuple(int(p) for p in s.split(",") if p.strip()),
    "inference_hidden": lambda s: tuple(int(p) for p in s.split(",") if p.strip()),
}


def atomic_write_text(path, text: str):
    """Write text to path via a same-directory temp file and atomic rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp.", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(int(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _array_lines(name: str, array: np.ndarray) -> list:
    mat = np.atleast_2d(np.asarray(array, dtype=np.float64))
    lines = [f"array {name} {mat.shape[0]} {mat.shape[1]}"]
    for row in mat:
        lines.append(" ".join(repr(float(v)) for v in row))
    return lines


def _net_lines(name: str, params: MlpParams) -> list:
    lines = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.extend(_array_lines(f"{name}.layer{i}.weight", w))
        lines.extend(_array_lines(f"{name}.layer{i}.bias", b))
    return lines


def render_checkpoint(ckpt: SkillCheckpoint) -> str:
    lines = [_HEADER.format(version=ckpt.format_version)]
    lines.append(f"env_family: {ckpt.env_family}")
    lines.append(f"iteration: {ckpt.iteration}")
    lines.append(f"seed: {ckpt.seed}")
    lines.append(f"rng_lineage: {ckpt.rng_lineage}")
    for f in fields(EmbedConfig):
        lines.append(f"config.{f.name}: {_format_value(getattr(ckpt.cfg, f.name))}")
    lines.extend(_array_lines("goals", ckpt.goals))
    lines.extend(_net_lines("policy", ckpt.policy))
    lines.extend(_net_lines("embedding", ckpt.embedding))
    lines.extend(_net_lines("inference", ckpt.inference))
    return "\n".join(lines) + "\n"


def save_checkpoint(path, ckpt: SkillCheckpoint):
    atomic_write_text(path, render_checkpoint(ckpt))


def _parse_header_line(line: str, lineno: int):
    if ": " not in line:
        raise ValidationError(f"malformed checkpoint line {lineno}: {line!r}")
    key, value = line.split(": ", 1)
    return key, value


def parse_checkpoint(text: str) -> SkillCheckpoint:
    lines = text.splitlines()
    if not lines or lines[0] != _HEADER.format(version=CHECKPOINT_VERSION):
        found = lines[0] if lines else "<empty>"
        raise ValidationError(f"unrecognized checkpoint version: {found!r}")

    scalars = {}
    config_raw = {}
    arrays = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        if line.startswith("array "):
            try:
                _, name, n_rows, n_cols = line.split()
                n_rows, n_cols = int(n_rows), int(n_cols)
            except ValueError:
                raise ValidationError(f"malformed array header: {line!r}") from None
            block = lines[i + 1:i + 1 + n_rows]
            if len(block) < n_rows:
                raise ValidationError(f"array {name} is truncated")
            try:
                mat = np.array([[float(v) for v in row.split()] for row in block])
            except ValueError:
                raise ValidationError(f"array {name} contains a malformed number") from None
            if mat.shape != (n_rows, n_cols):
                raise ValidationError(f"array {name} shape mismatches its header")
            arrays[name] = mat
            i += 1 + n_rows
        else:
            key, value = _parse_header_line(line, i + 1)
            if key.startswith("config."):
                config_raw[key[len("config."):]] = value
            else:
                scalars[key] = value
            i += 1

    for key in ("env_family", "iteration", "seed", "rng_lineage"):
        if key not in scalars:
            raise ValidationError(f"checkpoint missing field '{key}'")
    cfg_kwargs = {}
    for f in fields(EmbedConfig):
        if f.name not in config_raw:
            raise ValidationError(f"checkpoint missing field 'config.{f.name}'")
        try:
            cfg_kwargs[f.name] = _CONFIG_CASTS[f.name](config_raw[f.name])
        except ValueError:
            raise ValidationError(f"malformed config.{f.name} in checkpoint") from None
    cfg = EmbedConfig(**cfg_kwargs).validate()

    if "goals" not in arrays:
        raise ValidationError("checkpoint missing its goal table")
    nets = {}
    for net in ("policy", "embedding", "inference"):
        weights, biases = [], []
        layer = 0
        while f"{net}.layer{layer}.weight" in arrays:
            weights.append(arrays[f"{net}.layer{layer}.weight"])
            bias_name = f"{net}.layer{layer}.bias"
            if bias_name not in arrays:
                raise ValidationError(f"checkpoint missing array '{bias_name}'")
            biases.append(arrays[bias_name].reshape(-1))
            layer += 1
        if not weights:
            raise ValidationError(f"checkpoint missing the {net} network")
        layer_sizes = (weights[0].shape[0], *(w.shape[1] for w in weights))
        nets[net] = MlpParams(layer_sizes=layer_sizes, weights=tuple(weights),
                              biases=tuple(biases))

    return SkillCheckpoint(
        env_family=scalars["env_family"], goals=arrays["goals"], cfg=cfg,
        policy=nets["policy"], embedding=nets["embedding"], inference=nets["inference"],
        iteration=int(scalars["iteration"]), seed=int(scalars["seed"]),
        rng_lineage=scalars["rng_lineage"])


def load_checkpoint(path) -> SkillCheckpoint:
    with open(path, "r") as fh:
        return parse_checkpoint(fh.read())
