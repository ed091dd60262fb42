"""End-to-end reach experiment: train, evaluate, compose a square, plot.

Reproduces the zero-shot sequencing demo: four reach skills are trained once,
then the MPC composer traces an unseen square from those skills alone. All
artifacts (checkpoint, metrics, report, trajectory CSV/SVG) land in --out.

Usage: python scripts/reach_pipeline.py [--out runs/reach] [--seed N]
"""

from __future__ import annotations

import argparse
import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(_ROOT, "src"))

from skillmpc.cli import main as cli  # noqa: E402


def run(argv, step: str) -> None:
    print(f"==> {step}: skillmpc {' '.join(argv)}", flush=True)
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"{step} failed with exit code {code}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.path.join(_ROOT, "runs", "reach"))
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--reuse-checkpoint", action="store_true",
                        help="skip training if --out already has a checkpoint")
    args = parser.parse_args()

    config = os.path.join(_ROOT, "configs", "reach.ini")
    spec = os.path.join(_ROOT, "configs", "square_spec.ini")
    seed = [] if args.seed is None else ["--seed", str(args.seed)]
    checkpoint = os.path.join(args.out, "checkpoint.txt")

    if not (args.reuse_checkpoint and os.path.exists(checkpoint)):
        run(["train", "--config", config, "--out", args.out] + seed, "train")
    run(["eval", "--config", config, "--checkpoint", checkpoint,
         "--out", args.out] + seed, "eval")
    run(["compose", "--config", config, "--checkpoint", checkpoint,
         "--spec", spec, "--out", args.out] + seed, "compose")
    run(["plot", os.path.join(args.out, "trajectory.csv"), "--spec", spec],
        "plot")
    print(f"done; artifacts in {args.out}")


if __name__ == "__main__":
    main()
