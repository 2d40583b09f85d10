"""Reward-variant ablation on the toy task: relative vs absolute, segment vs clip.

For each mode and seed, trains from the same biased init and records the
iterations needed for the 10-iteration moving average of the logged reward
to reach a threshold, plus the final translation / rotation error of the
deterministic rollout. Note that absolute and relative modes log rewards on
different scales, so thresholds are only comparable within a scale.

    python3 scripts/ablation_reward_modes.py --seeds 5 --iters 400
"""

import argparse
import json

import numpy as np

from geogrpo import policy
from geogrpo.grpo import GrpoConfig
from geogrpo.metrics import rotation_error, translation_error
from geogrpo.reward import MODES, RewardConfig


def first_hit(rewards, threshold, window):
    avg = np.convolve(rewards, np.ones(window) / window, mode="valid")
    hit = np.flatnonzero(avg >= threshold)
    return int(hit[0]) + window if hit.size else None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--iters", type=int, default=400)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--threshold", type=float, default=-0.2)
    ap.add_argument("--window", type=int, default=10)
    ap.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    args = ap.parse_args()

    ref = policy.straight_line_reference()
    grpo_cfg = GrpoConfig()
    p0 = policy.init_params(grpo_cfg.total_steps, yaw_bias=1.0)
    rows = {}
    for mode in args.modes:
        hits, te, re = [], [], []
        for seed in range(args.seeds):
            p, log = policy.train(p0, [ref], RewardConfig(segment_length=4, mode=mode), grpo_cfg, args.iters, args.lr, seed)
            rewards = np.array([r.get("mean_reward", np.nan) for r in log], float)
            hits.append(first_hit(rewards, args.threshold, args.window))
            det = policy.deterministic_rollout(p, ref, grpo_cfg)
            te.append(translation_error(det, ref))
            re.append(rotation_error(det, ref))
        reached = [h for h in hits if h is not None]
        rows[mode] = {
            "iters_to_threshold": hits,
            "median_iters": float(np.median([h if h is not None else args.iters + 1 for h in hits])),
            "reached": f"{len(reached)}/{len(hits)}",
            "Trans. Err.": float(np.mean(te)),
            "Rot. Err.": float(np.mean(re)),
        }
        print(f"{mode:<18} median iters {rows[mode]['median_iters']:>6g}  "
              f"trans {rows[mode]['Trans. Err.']:.4f}  rot {rows[mode]['Rot. Err.']:.3f} deg  {hits}")
    print(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
