"""Command-line entry points.

Exit codes: 0 success, 2 parse error, 3 geometry error, 4 config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io, policy
from .errors import ConfigError, GeoGrpoError
from .grpo import GrpoConfig
from .metrics import EvalReport, evaluate_clip
from .pluecker import pluecker_trajectory, write_pluecker
from .reward import MODES, RewardConfig, compute_reward

DATASET_SUFFIXES = {".traj": "native", ".txt": "native", ".tum": "tum"}


def _add_reward_flags(p):
    p.add_argument("--segment-length", type=int, default=None, help="frames per segment (default: (N-1)//8)")
    p.add_argument("--lambda-t", type=float, default=1.0)
    p.add_argument("--lambda-r", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.1, help="segment confidence threshold")
    p.add_argument("--mode", choices=MODES, default="relative-relative")


def _reward_config(args) -> RewardConfig:
    return RewardConfig(args.segment_length, args.lambda_t, args.lambda_r, args.tau, args.mode)


def cmd_reward(args) -> int:
    cfg = _reward_config(args)
    gen = io.parse_trajectory(args.gen, args.format)
    ref = io.parse_trajectory(args.ref, args.format)
    report = compute_reward(gen, ref, cfg)
    sys.stdout.write(report.to_json() + "\n" if args.json else report.to_text())
    return 0


def cmd_eval(args) -> int:
    gen = io.parse_trajectory(args.gen, args.format)
    ref = io.parse_trajectory(args.ref, args.format)
    conf = io.read_confidence_maps(args.conf) if args.conf else None
    report = EvalReport([evaluate_clip(Path(args.gen).stem, gen, ref, conf, args.tau)])
    sys.stdout.write(report.to_json() + "\n" if args.json else report.to_table())
    return 0


def load_dataset(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"dataset directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix in DATASET_SUFFIXES)
    return [io.parse_trajectory(p, DATASET_SUFFIXES[p.suffix]) for p in files]


def cmd_train_toy(args) -> int:
    dataset = load_dataset(args.dataset_dir)
    if not dataset:
        raise ConfigError(f"no trajectory files (*.traj, *.txt, *.tum) in {args.dataset_dir}")
    grpo_cfg = GrpoConfig(
        group_size=args.group_size,
        top_count=args.top,
        bottom_count=args.bottom,
        clip_range=args.clip,
        kl_weight=args.kl_weight,
        total_steps=args.total_steps,
        sde_steps=args.sde_steps,
        sde_noise_level=args.noise_level,
    )
    if args.init:
        params = policy.load_checkpoint(args.init)
    else:
        params = policy.init_params(args.total_steps, args.state_gain, args.yaw_bias, args.shift)
    params, log = policy.train(
        params, dataset, _reward_config(args), grpo_cfg, args.iters, args.lr, args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    policy.save_checkpoint(out / "checkpoint.tpl", params)
    (out / "train_log.jsonl").write_text(policy.format_log(log))
    if log and "mean_reward" in log[-1]:
        print(json.dumps(log[-1]))
    return 0


def cmd_pluecker(args) -> int:
    traj = io.parse_trajectory(args.traj, "native")
    write_pluecker(args.out, pluecker_trajectory(traj, args.height, args.width))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geogrpo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reward", help="segment-level geometry reward of a generated trajectory")
    p.add_argument("gen")
    p.add_argument("ref")
    p.add_argument("--format", choices=("native", "tum"), default="native")
    p.add_argument("--json", action="store_true")
    _add_reward_flags(p)
    p.set_defaults(func=cmd_reward)

    p = sub.add_parser("eval", help="Trans. Err. / Rot. Err. / Geo. Con. for one clip")
    p.add_argument("gen")
    p.add_argument("ref")
    p.add_argument("conf", nargs="?", default=None, help="CNF1 confidence maps of the generated clip")
    p.add_argument("--format", choices=("native", "tum"), default="native")
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train-toy", help="GRPO-train the toy trajectory policy")
    p.add_argument("dataset_dir")
    p.add_argument("--out", default="toy_run")
    p.add_argument("--group-size", type=int, default=16)
    p.add_argument("--top", type=int, default=4)
    p.add_argument("--bottom", type=int, default=4)
    p.add_argument("--sde-steps", type=int, default=3)
    p.add_argument("--total-steps", type=int, default=14)
    p.add_argument("--noise-level", type=float, default=0.7)
    p.add_argument("--kl-weight", type=float, default=1e-4)
    p.add_argument("--clip", type=float, default=0.2)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--state-gain", type=float, default=0.7)
    p.add_argument("--yaw-bias", type=float, default=0.0)
    p.add_argument("--shift", type=float, default=1.0, help="noise-schedule skew exponent")
    p.add_argument("--init", default=None, help="start from a TPL1 checkpoint")
    _add_reward_flags(p)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("pluecker", help="export per-frame Plücker maps as PLK1")
    p.add_argument("traj")
    p.add_argument("out")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.set_defaults(func=cmd_pluecker)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GeoGrpoError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
