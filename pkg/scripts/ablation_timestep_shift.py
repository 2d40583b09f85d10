"""Noise-schedule shift ablation: how skewing the schedule affects training.

    python3 scripts/ablation_timestep_shift.py --shifts 0.5 1 2 4
"""

import argparse

import numpy as np

from geogrpo import policy
from geogrpo.grpo import GrpoConfig
from geogrpo.metrics import translation_error
from geogrpo.reward import RewardConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shifts", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--iters", type=int, default=300)
    ap.add_argument("--lr", type=float, default=2e-3)
    args = ap.parse_args()

    ref = policy.straight_line_reference()
    cfg = GrpoConfig()
    reward_cfg = RewardConfig(segment_length=4)
    print(f"{'shift':>6}  {'final reward':>12}  {'Trans. Err.':>11}")
    for shift in args.shifts:
        p0 = policy.init_params(cfg.total_steps, yaw_bias=1.0, shift=shift)
        finals, errs = [], []
        for seed in range(args.seeds):
            p, log = policy.train(p0, [ref], reward_cfg, cfg, args.iters, args.lr, seed)
            finals.append(np.mean([r["mean_reward"] for r in log[-20:] if "mean_reward" in r]))
            errs.append(translation_error(policy.deterministic_rollout(p, ref, cfg), ref))
        print(f"{shift:>6g}  {np.mean(finals):>12.4f}  {np.mean(errs):>11.4f}")


if __name__ == "__main__":
    main()
