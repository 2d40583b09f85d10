"""Dense (segment-level) vs clip-level reward: iterations to a reward threshold.

Also prints, for one group, the ratio between the two surrogate gradients.
With one importance ratio per denoising step shared by all segments, the
segment-level gradient is the clip-level one scaled by std_clip / std_seg,
so under a fixed learning rate the dense run takes shorter steps.

    python3 scripts/ablation_dense_vs_clip.py --seeds 5
"""

import argparse

import numpy as np

from geogrpo import policy
from geogrpo.grpo import GrpoConfig, Rollout, RolloutGroup, group_advantages, select_best_of_n
from geogrpo.reward import RewardConfig, compute_reward


def iterations_to(mode, seed, args, ref, p0, cfg):
    _, log = policy.train(p0, [ref], RewardConfig(segment_length=4, mode=mode), cfg, args.iters, args.lr, seed)
    r = np.array([rec.get("mean_reward", np.nan) for rec in log], float)
    avg = np.convolve(r, np.ones(args.window) / args.window, mode="valid")
    hit = np.flatnonzero(avg >= args.threshold)
    return int(hit[0]) + args.window if hit.size else args.iters + 1


def gradient_ratio(ref, p0, cfg, seed=0):
    cond = policy.encode(ref)
    results = [policy.rollout(p0, ref, cfg, s, init_seed=seed, cond=cond) for s in range(cfg.group_size)]
    grads = {}
    for mode in ("relative-relative", "clip-level"):
        reports = [compute_reward(r.trajectory, ref, RewardConfig(segment_length=4, mode=mode)) for r in results]
        group = group_advantages(RolloutGroup([Rollout.from_report(rep, r.logps) for rep, r in zip(reports, results)]),
                                 cfg.stability)
        group = select_best_of_n(group, cfg.top_count, cfg.bottom_count)
        group = policy.populate(group, results, cond, p0, p0)
        grads[mode] = (policy.surrogate_gradient(group, results, cond, p0, p0, cfg), group.std)
    gd, sd = grads["relative-relative"]
    gc, sc = grads["clip-level"]
    cos = gd @ gc / (np.linalg.norm(gd) * np.linalg.norm(gc))
    return np.linalg.norm(gd) / np.linalg.norm(gc), sc / sd, cos


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--iters", type=int, default=400)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--threshold", type=float, default=-0.2)
    ap.add_argument("--window", type=int, default=10)
    args = ap.parse_args()

    ref = policy.straight_line_reference()
    cfg = GrpoConfig()
    p0 = policy.init_params(cfg.total_steps, yaw_bias=1.0)

    norm_ratio, std_ratio, cos = gradient_ratio(ref, p0, cfg)
    print(f"|g_dense| / |g_clip| = {norm_ratio:.4f}, std_clip / std_seg = {std_ratio:.4f}, cosine = {cos:.6f}")

    dense = [iterations_to("relative-relative", s, args, ref, p0, cfg) for s in range(args.seeds)]
    clip = [iterations_to("clip-level", s, args, ref, p0, cfg) for s in range(args.seeds)]
    print(f"dense: {dense}  median {np.median(dense):g}")
    print(f"clip:  {clip}  median {np.median(clip):g}")


if __name__ == "__main__":
    main()
