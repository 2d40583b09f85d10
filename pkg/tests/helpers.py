import numpy as np
from scipy.spatial.transform import Rotation as R

from geogrpo.align import SimilarityTransform, apply_similarity
from geogrpo.se3 import Pose, Rotation, Trajectory


def random_rotation(rng) -> Rotation:
    return Rotation(R.random(random_state=rng).as_matrix())


def random_pose(rng, scale=3.0) -> Pose:
    return Pose(random_rotation(rng), rng.normal(scale=scale, size=3))


def random_trajectory(rng, n=None, conf=None) -> Trajectory:
    """A smooth-ish random camera path with random orientations."""
    n = int(rng.integers(10, 60)) if n is None else n
    rot = R.random(n, random_state=rng).as_matrix()
    pos = np.cumsum(rng.normal(scale=0.3, size=(n, 3)), axis=0)
    if conf is None:
        conf = rng.uniform(0.2, 1.0, size=n)
    return Trajectory(rot, pos, conf)


def random_similarity(rng, log_scale=(np.log(0.1), np.log(10.0))) -> SimilarityTransform:
    s = float(np.exp(rng.uniform(*log_scale)))
    return SimilarityTransform(s, random_rotation(rng), rng.normal(scale=5.0, size=3))


def perturb(traj: Trajectory, sim: SimilarityTransform) -> Trajectory:
    return apply_similarity(sim, traj)


def tiny_policy_instance(seed, n_frames=5, total_steps=2, sde_steps=2, group_size=2, kl_weight=0.5, jitter=2e-4):
    """A populated two-rollout group plus everything needed to re-evaluate it.

    The new params are a small random perturbation of the sampling params so
    that ratios differ from 1 but stay inside the clip range.
    """
    from geogrpo.grpo import GrpoConfig, Rollout, RolloutGroup, group_advantages, select_best_of_n
    from geogrpo.policy import encode, init_params, rollout
    from geogrpo.reward import RewardConfig, compute_reward

    rng = np.random.default_rng(seed)
    cfg = GrpoConfig(group_size=group_size, top_count=1, bottom_count=1, total_steps=total_steps,
                     sde_steps=sde_steps, kl_weight=kl_weight)
    old = init_params(total_steps, yaw_bias=0.5)
    old = old.with_theta(old.theta + rng.normal(scale=0.05, size=old.n_theta))
    ref = random_trajectory(rng, n=n_frames, conf=np.ones(n_frames))
    cond = encode(ref)
    results, rollouts = [], []
    for s in rng.integers(2**32, size=group_size):
        res = rollout(old, ref, cfg, int(s), init_seed=int(seed), cond=cond)
        rep = compute_reward(res.trajectory, ref, RewardConfig(segment_length=2))
        results.append(res)
        rollouts.append(Rollout.from_report(rep, res.logps))
    group = group_advantages(RolloutGroup(rollouts), cfg.stability)
    group = select_best_of_n(group, 1, 1)
    new = old.with_theta(old.theta + rng.normal(scale=jitter, size=old.n_theta))
    ref_params = init_params(total_steps)
    return group, results, cond, new, ref_params, cfg
