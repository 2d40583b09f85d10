"""A small stochastic trajectory generator trained with GRPO.

The latent of an N-frame trajectory is the (N-1, 6) array of per-frame
twist increments (axis-angle rotation, then translation) between
consecutive camera-to-world poses. The generator refines a Gaussian latent
over ``total_steps`` steps; every step predicts, per frame j,

    mean_j = A c_j + B x_j + b_t

where c is the encoded reference trajectory, x the current latent and b_t
a per-step bias. The first ``sde_steps`` steps sample around that mean,
the rest take it as is. A and B are shared across frames, so the model
stays tiny and A = I, B = 0 copies the reference exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, EmptyGroupError, NonFiniteError, ParseError, RolloutFailedError
from .grpo import (
    GrpoConfig,
    Rollout,
    RolloutGroup,
    gaussian_step_logdensity,
    group_advantages,
    grpo_objective,
    kl_gaussian,
    objective_sensitivities,
    select_best_of_n,
)
from .reward import RewardConfig, compute_reward
from .se3 import Pose, Trajectory, matrix_to_rotvec, rotvec_to_matrix

CHECKPOINT_MAGIC = b"TPL1"
TWIST = 6


def noise_schedule(total_steps: int, sigma_max: float = 1.0, sigma_min: float = 0.05, shift: float = 1.0) -> np.ndarray:
    """Geometric decay from sigma_max to sigma_min.

    ``shift`` > 1 keeps the noise high for longer before decaying, the
    analog of a shifted timestep scheduler.
    """
    if total_steps == 1:
        return np.array([sigma_max])
    u = (np.arange(total_steps) / (total_steps - 1)) ** shift
    return sigma_max * (sigma_min / sigma_max) ** u


@dataclass(frozen=True, eq=False)
class PolicyParams:
    cond_weight: np.ndarray  # (6, 6), A
    state_weight: np.ndarray  # (6, 6), B
    step_bias: np.ndarray  # (T, 6)
    sigmas: np.ndarray  # (T,)
    trainable: Optional[np.ndarray] = None  # bool mask over theta; None = all

    def __post_init__(self):
        t = self.step_bias.shape[0]
        if self.cond_weight.shape != (TWIST, TWIST) or self.state_weight.shape != (TWIST, TWIST):
            raise ConfigError("weights must be 6x6")
        if self.step_bias.shape != (t, TWIST) or self.sigmas.shape != (t,):
            raise ConfigError("step_bias must be (T, 6) and sigmas (T,)")
        if not np.all(self.sigmas > 0):
            raise ConfigError("noise scales must be positive")
        if self.trainable is not None and self.trainable.shape != (self.n_theta,):
            raise ConfigError(f"trainable mask must have length {self.n_theta}")
        for a in (self.cond_weight, self.state_weight, self.step_bias):
            if not np.all(np.isfinite(a)):
                raise NonFiniteError("policy parameters are not finite")

    @property
    def total_steps(self) -> int:
        return self.step_bias.shape[0]

    @property
    def n_theta(self) -> int:
        return 2 * TWIST * TWIST + self.step_bias.size

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.cond_weight.ravel(), self.state_weight.ravel(), self.step_bias.ravel()])

    def with_theta(self, theta: np.ndarray) -> "PolicyParams":
        theta = np.asarray(theta, dtype=float)
        n = TWIST * TWIST
        return replace(
            self,
            cond_weight=theta[:n].reshape(TWIST, TWIST).copy(),
            state_weight=theta[n : 2 * n].reshape(TWIST, TWIST).copy(),
            step_bias=theta[2 * n :].reshape(-1, TWIST).copy(),
        )

    def trainable_mask(self) -> np.ndarray:
        return np.ones(self.n_theta, bool) if self.trainable is None else self.trainable

    def flat(self) -> np.ndarray:
        """Checkpoint vector: theta followed by the noise schedule."""
        return np.concatenate([self.theta, self.sigmas])

    @classmethod
    def from_flat(cls, vec: np.ndarray, trainable=None) -> "PolicyParams":
        vec = np.asarray(vec, dtype=float)
        rest = vec.size - 2 * TWIST * TWIST
        if rest <= 0 or rest % (TWIST + 1):
            raise ParseError(f"checkpoint of {vec.size} values does not match any step count")
        t = rest // (TWIST + 1)
        n = TWIST * TWIST
        return cls(
            vec[:n].reshape(TWIST, TWIST).copy(),
            vec[n : 2 * n].reshape(TWIST, TWIST).copy(),
            vec[2 * n : 2 * n + TWIST * t].reshape(t, TWIST).copy(),
            vec[2 * n + TWIST * t :].copy(),
            trainable,
        )


def straight_line_reference(n_frames: int = 17, step: float = 0.1) -> Trajectory:
    """Camera moving forward along +z with fixed orientation."""
    pos = np.zeros((n_frames, 3))
    pos[:, 2] = step * np.arange(n_frames)
    return Trajectory(np.tile(np.eye(3), (n_frames, 1, 1)), pos)


def init_params(
    total_steps: int = 14,
    state_gain: float = 0.7,
    yaw_bias: float = 0.0,
    shift: float = 1.0,
    trainable: Optional[np.ndarray] = None,
) -> PolicyParams:
    """Params whose deterministic fixed point is the reference latent.

    ``yaw_bias`` couples forward (z) translation into yaw (rotation about
    y), so a straight reference comes out as an arc until training removes
    the coupling.
    """
    a = (1.0 - state_gain) * np.eye(TWIST)
    a[1, 5] += (1.0 - state_gain) * yaw_bias
    return PolicyParams(
        a,
        state_gain * np.eye(TWIST),
        np.zeros((total_steps, TWIST)),
        noise_schedule(total_steps, shift=shift),
        trainable,
    )


def encode(traj: Trajectory) -> np.ndarray:
    """(N-1, 6) increments: rotvec and translation of pose_i^-1 ∘ pose_{i+1}."""
    if len(traj) < 2:
        raise ValueError("need at least two frames to encode")
    r0 = traj.rotations[:-1]
    rel_r = np.einsum("nki,nkj->nij", r0, traj.rotations[1:])
    rel_t = np.einsum("nki,nk->ni", r0, traj.positions[1:] - traj.positions[:-1])
    return np.concatenate([matrix_to_rotvec(rel_r), rel_t], axis=1)


def decode(latent: np.ndarray, anchor: Pose) -> Trajectory:
    """Integrate increments from ``anchor``; confidence is 1 everywhere."""
    latent = np.asarray(latent, dtype=float).reshape(-1, TWIST)
    if not np.all(np.isfinite(latent)):
        raise NonFiniteError("latent contains non-finite values")
    steps = rotvec_to_matrix(latent[:, :3])
    n = latent.shape[0] + 1
    rot = np.empty((n, 3, 3))
    pos = np.empty((n, 3))
    rot[0] = anchor.rotation.matrix
    pos[0] = anchor.position
    for i in range(n - 1):
        pos[i + 1] = rot[i] @ latent[i, 3:] + pos[i]
        rot[i + 1] = rot[i] @ steps[i]
    return Trajectory(rot, pos, np.ones(n), validate=False)


def step_mean(params: PolicyParams, cond: np.ndarray, state: np.ndarray, step: int) -> np.ndarray:
    return cond @ params.cond_weight.T + state @ params.state_weight.T + params.step_bias[step]


@dataclass(frozen=True, eq=False)
class RolloutResult:
    trajectory: Trajectory
    latent: np.ndarray
    states: np.ndarray  # (T_sde, N-1, 6) latent fed into each stochastic step
    means: np.ndarray  # (T_sde, N-1, 6)
    samples: np.ndarray  # (T_sde, N-1, 6)
    sigmas: np.ndarray  # (T_sde,) effective noise scale
    logps: np.ndarray  # (T_sde,)


def initial_latent(n_frames: int, init_seed: int) -> np.ndarray:
    return np.random.default_rng(init_seed).standard_normal((n_frames - 1, TWIST))


def rollout(
    params: PolicyParams,
    ref: Trajectory,
    cfg: GrpoConfig,
    seed: int,
    *,
    init_seed: int = 0,
    cond: Optional[np.ndarray] = None,
) -> RolloutResult:
    """Sample one trajectory conditioned on ``ref``.

    The starting latent comes from ``init_seed`` (shared across a group);
    ``seed`` drives only the stochastic-step noise, so with no stochastic
    steps all seeds give the same output.
    """
    if params.total_steps != cfg.total_steps:
        raise ConfigError(f"params have {params.total_steps} steps, config {cfg.total_steps}")
    if cfg.sde_steps > 0 and cfg.sde_noise_level <= 0:
        raise ConfigError("stochastic steps need a positive sde_noise_level")
    if cond is None:
        cond = encode(ref)
    rng = np.random.default_rng(seed)
    x = initial_latent(len(ref), init_seed)
    t_sde = cfg.sde_steps
    states = np.empty((t_sde,) + x.shape)
    means = np.empty_like(states)
    samples = np.empty_like(states)
    sig = params.sigmas[:t_sde] * cfg.sde_noise_level
    logps = np.empty(t_sde)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(cfg.total_steps):
            mean = step_mean(params, cond, x, i)
            if i < t_sde:
                states[i] = x
                means[i] = mean
                x = mean + sig[i] * rng.standard_normal(x.shape)
                samples[i] = x
                logps[i] = gaussian_step_logdensity(x, mean, sig[i])
            else:
                x = mean
            if not np.all(np.isfinite(x)):
                raise RolloutFailedError(f"latent diverged at step {i}")
    return RolloutResult(decode(x, ref.pose(0)), x, states, means, samples, sig, logps)


def deterministic_rollout(params: PolicyParams, ref: Trajectory, cfg: GrpoConfig, init_seed: int = 0) -> Trajectory:
    return rollout(params, ref, replace(cfg, sde_steps=0), 0, init_seed=init_seed).trajectory


def replay(params: PolicyParams, ref_params: PolicyParams, cond: np.ndarray, result: RolloutResult):
    """Log-densities and KL to the reference under ``params`` for stored samples.

    Returns (logp, kl, mean, ref_mean), the per-step arrays and the means.
    """
    t_sde = result.states.shape[0]
    logp = np.empty(t_sde)
    kl = np.empty(t_sde)
    means = np.empty_like(result.states)
    ref_means = np.empty_like(result.states)
    for i in range(t_sde):
        means[i] = step_mean(params, cond, result.states[i], i)
        ref_means[i] = step_mean(ref_params, cond, result.states[i], i)
        logp[i] = gaussian_step_logdensity(result.samples[i], means[i], result.sigmas[i])
        kl[i] = kl_gaussian(means[i], ref_means[i], result.sigmas[i])
    return logp, kl, means, ref_means


def populate(group: RolloutGroup, results: Sequence[RolloutResult], cond, params, ref_params) -> RolloutGroup:
    """Fill new-policy log-densities and KL for every rollout of the group."""
    out = []
    for r, res in zip(group.rollouts, results):
        logp, kl, _, _ = replay(params, ref_params, cond, res)
        out.append(replace(r, new_logp=logp, kl=kl))
    return replace(group, rollouts=out)


def surrogate_gradient(
    group: RolloutGroup,
    results: Sequence[RolloutResult],
    cond: np.ndarray,
    params: PolicyParams,
    ref_params: PolicyParams,
    cfg: GrpoConfig,
) -> np.ndarray:
    """Analytic d grpo_objective / d theta, zeroed outside the trainable mask.

    Chains the objective's sensitivities to per-step log-density and KL
    through the Gaussian means, which are linear in theta.
    """
    sens = objective_sensitivities(group, cfg)
    grad_a = np.zeros((TWIST, TWIST))
    grad_b = np.zeros((TWIST, TWIST))
    grad_bias = np.zeros_like(params.step_bias)
    for idx, (d_logp, d_kl) in zip(group.selected_indices, sens):
        res = results[idx]
        _, _, means, ref_means = replay(params, ref_params, cond, res)
        for i in range(res.states.shape[0]):
            inv_var = 1.0 / res.sigmas[i] ** 2
            g_mean = (d_logp[i] * (res.samples[i] - means[i]) + d_kl[i] * (means[i] - ref_means[i])) * inv_var
            grad_a += g_mean.T @ cond
            grad_b += g_mean.T @ res.states[i]
            grad_bias[i] += g_mean.sum(axis=0)
    grad = np.concatenate([grad_a.ravel(), grad_b.ravel(), grad_bias.ravel()])
    return grad * params.trainable_mask()


def surrogate_value(group, results, cond, params, ref_params, cfg) -> float:
    return grpo_objective(populate(group, results, cond, params, ref_params), cfg)


def _log_float(x: float) -> float:
    return float(x) if np.isfinite(x) else None


def train(
    params: PolicyParams,
    dataset: Sequence[Trajectory],
    reward_cfg: RewardConfig,
    grpo_cfg: GrpoConfig,
    iterations: int,
    learning_rate: float,
    seed: int,
    *,
    ref_params: Optional[PolicyParams] = None,
    callback=None,
) -> tuple[PolicyParams, list[dict]]:
    """Run GRPO with plain gradient ascent; returns final params and the log.

    Each iteration samples one reference, collects a group of rollouts
    sharing a starting latent, scores them, and takes one ascent step on
    the surrogate with KL towards ``ref_params`` (default: the initial
    params).
    """
    if not dataset:
        raise ConfigError("dataset is empty")
    if ref_params is None:
        ref_params = params
    rng = np.random.default_rng(seed)
    log = []
    for it in range(iterations):
        ref = dataset[int(rng.integers(len(dataset)))]
        cond = encode(ref)
        init_seed = int(rng.integers(2**63))
        seeds = rng.integers(2**63, size=grpo_cfg.group_size)

        results, rollouts = [], []
        for s in seeds:
            try:
                res = rollout(params, ref, grpo_cfg, int(s), init_seed=init_seed, cond=cond)
            except (RolloutFailedError, NonFiniteError):
                continue
            report = compute_reward(res.trajectory, ref, reward_cfg)
            results.append(res)
            rollouts.append(Rollout.from_report(report, res.logps))

        record = {"iteration": it, "n_rollouts": len(rollouts)}
        try:
            if not rollouts:
                raise EmptyGroupError("every rollout failed")
            group = group_advantages(RolloutGroup(rollouts), grpo_cfg.stability)
        except EmptyGroupError as err:
            record["skipped"] = str(err)
            log.append(record)
            continue

        if len(group) >= grpo_cfg.top_count + grpo_cfg.bottom_count:
            group = select_best_of_n(group, grpo_cfg.top_count, grpo_cfg.bottom_count)
        else:
            group = replace(group, rollouts=[replace(r, selected=r.mask.any()) for r in group.rollouts])
        group = populate(group, results, cond, params, ref_params)

        objective = grpo_objective(group, grpo_cfg) if grpo_cfg.sde_steps else 0.0
        means = [r.mean_score() for r in group.rollouts if r.mask.any()]
        sel = [r for r in group.rollouts if r.selected]
        sel_adv = np.concatenate([r.advantages[r.mask] for r in sel]) if sel else np.zeros(0)
        kl = np.concatenate([r.kl for r in sel]) if sel else np.zeros(0)
        record.update(
            mean_reward=_log_float(np.mean(means)),
            mean_selected_advantage=_log_float(sel_adv.mean()) if sel_adv.size else 0.0,
            objective=_log_float(objective),
            mean_kl=_log_float(kl.mean()) if kl.size else 0.0,
        )
        log.append(record)
        if callback is not None:
            callback(it, params, record)

        if learning_rate != 0 and grpo_cfg.sde_steps:
            grad = surrogate_gradient(group, results, cond, params, ref_params, grpo_cfg)
            params = params.with_theta(params.theta + learning_rate * grad)
    return params, log


def mean_group_reward(
    params: PolicyParams,
    ref: Trajectory,
    reward_cfg: RewardConfig,
    grpo_cfg: GrpoConfig,
    n_rollouts: int = 64,
    seed: int = 0,
) -> float:
    """Monte-Carlo estimate of the expected mean segment score of ``params``."""
    rng = np.random.default_rng(seed)
    cond = encode(ref)
    scores = []
    for _ in range(n_rollouts):
        init_seed, s = (int(v) for v in rng.integers(2**63, size=2))
        res = rollout(params, ref, grpo_cfg, s, init_seed=init_seed, cond=cond)
        scores.append(compute_reward(res.trajectory, ref, reward_cfg).mean_score())
    return float(np.nanmean(scores))


def format_log(log: Sequence[dict]) -> str:
    return "".join(json.dumps(rec) + "\n" for rec in log)


def save_checkpoint(path, params: PolicyParams) -> None:
    """TPL1 layout: magic, u32 value count, then little-endian float64 values."""
    vec = params.flat().astype("<f8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<I", vec.size) + vec.tobytes())


def load_checkpoint(path, trainable=None) -> PolicyParams:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC or len(raw) < 8:
        raise ParseError("not a TPL1 checkpoint", path=path)
    (dims,) = struct.unpack("<I", raw[4:8])
    if len(raw) != 8 + 8 * dims:
        raise ParseError(f"expected {8 + 8 * dims} bytes, found {len(raw)}", path=path)
    return PolicyParams.from_flat(np.frombuffer(raw[8:], dtype="<f8"), trainable)
