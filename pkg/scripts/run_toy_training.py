"""Train the toy policy on the straight-line task and report before/after metrics.

    python3 scripts/run_toy_training.py --iters 500 --out runs/toy
"""

import argparse
import json
from pathlib import Path

from geogrpo import policy
from geogrpo.grpo import GrpoConfig
from geogrpo.metrics import rotation_error, translation_error
from geogrpo.reward import MODES, RewardConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--yaw-bias", type=float, default=1.0)
    ap.add_argument("--state-gain", type=float, default=0.7)
    ap.add_argument("--segment-length", type=int, default=4)
    ap.add_argument("--mode", choices=MODES, default="relative-relative")
    ap.add_argument("--kl-weight", type=float, default=1e-4)
    ap.add_argument("--out", default=None, help="directory for checkpoint and log")
    args = ap.parse_args()

    ref = policy.straight_line_reference()
    grpo_cfg = GrpoConfig(kl_weight=args.kl_weight)
    reward_cfg = RewardConfig(segment_length=args.segment_length, mode=args.mode)
    p0 = policy.init_params(grpo_cfg.total_steps, args.state_gain, args.yaw_bias)

    def progress(it, _, rec):
        if it % 50 == 0:
            print(f"iter {it:4d}  mean reward {rec['mean_reward']:+.4f}  kl {rec['mean_kl']:.2e}")

    p, log = policy.train(p0, [ref], reward_cfg, grpo_cfg, args.iters, args.lr, args.seed, callback=progress)

    # evaluation always uses the dense relative reward so modes are comparable
    eval_cfg = RewardConfig(segment_length=args.segment_length)
    summary = {}
    for name, params in (("init", p0), ("trained", p)):
        det = policy.deterministic_rollout(params, ref, grpo_cfg)
        summary[name] = {
            "mean_group_reward": policy.mean_group_reward(params, ref, eval_cfg, grpo_cfg, 256, seed=123),
            "Trans. Err.": translation_error(det, ref),
            "Rot. Err.": rotation_error(det, ref),
        }
    print(json.dumps(summary, indent=2))

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        policy.save_checkpoint(out / "checkpoint.tpl", p)
        (out / "train_log.jsonl").write_text(policy.format_log(log))
        (out / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
