"""Group-relative policy optimization over dense segment rewards.

A group holds G rollouts sampled for one condition. Every unmasked segment
score in the group is z-scored against the pooled group statistics, the
best and worst rollouts are kept, and the clipped importance-ratio
surrogate is averaged over (rollout, stochastic step, segment) with a
Gaussian KL penalty towards a frozen reference policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, EmptyGroupError
from .reward import SegmentRewardReport

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 16
    top_count: int = 4
    bottom_count: int = 4
    clip_range: float = 0.2
    kl_weight: float = 1e-4
    stability: float = 1e-8
    total_steps: int = 14
    sde_steps: int = 3
    sde_noise_level: float = 0.7

    def __post_init__(self):
        if self.group_size < 2:
            raise ConfigError(f"group_size must be >= 2, got {self.group_size}")
        if self.top_count < 1 or self.bottom_count < 1:
            raise ConfigError("top_count and bottom_count must be >= 1")
        if self.top_count + self.bottom_count > self.group_size:
            raise ConfigError(
                f"top_count + bottom_count ({self.top_count + self.bottom_count}) exceeds group_size ({self.group_size})"
            )
        if not self.clip_range > 0:
            raise ConfigError("clip_range must be positive")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be non-negative")
        if not self.stability > 0:
            raise ConfigError("stability must be positive")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if not 0 <= self.sde_steps <= self.total_steps:
            raise ConfigError(f"sde_steps must lie in [0, {self.total_steps}], got {self.sde_steps}")
        if not 0.0 <= self.sde_noise_level <= 1.0:
            raise ConfigError("sde_noise_level must lie in [0, 1]")


@dataclass
class Rollout:
    """One sample of a group.

    ``old_logp``/``new_logp``/``kl`` are per stochastic step; ``advantages``
    is per segment with NaN at masked segments.
    """

    scores: np.ndarray
    mask: np.ndarray
    old_logp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    new_logp: Optional[np.ndarray] = None
    kl: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None
    selected: bool = False

    @classmethod
    def from_report(cls, report: SegmentRewardReport, old_logp=()) -> "Rollout":
        return cls(np.asarray(report.scores, float), np.asarray(report.mask, bool), np.asarray(old_logp, float))

    def mean_score(self) -> float:
        if not self.mask.any():
            return float("nan")
        return float(self.scores[self.mask].mean())


@dataclass
class RolloutGroup:
    rollouts: list[Rollout]
    mean: Optional[float] = None
    std: Optional[float] = None

    def __len__(self):
        return len(self.rollouts)

    @property
    def selected_indices(self) -> list[int]:
        return [i for i, r in enumerate(self.rollouts) if r.selected]


def group_advantages(group: RolloutGroup, stability: float) -> RolloutGroup:
    """Z-score every unmasked segment score against the pooled group stats."""
    pooled = [r.scores[r.mask] for r in group.rollouts if r.mask.any()]
    if not pooled:
        raise EmptyGroupError("every segment of every rollout is masked")
    values = np.concatenate(pooled)
    # Centre on a pivot score first: differences of scores do not depend on a
    # common offset, so a constant shift cannot leak in through mean rounding.
    pivot = values[0]
    centred = values - pivot
    m = centred.mean()
    delta = float(centred.std())
    out = []
    for r in group.rollouts:
        adv = np.full(r.scores.shape, np.nan)
        adv[r.mask] = ((r.scores[r.mask] - pivot) - m) / (delta + stability)
        out.append(replace(r, advantages=adv))
    return replace(group, rollouts=out, mean=float(pivot + m), std=delta)


def select_best_of_n(group: RolloutGroup, top: int, bottom: int) -> RolloutGroup:
    """Flag the ``top`` highest and ``bottom`` lowest rollouts by mean score.

    Rollouts with no unmasked segment cannot be ranked and are never
    selected; if fewer than top + bottom remain, all of them are kept.
    Ties are broken by rollout index, lowest first.
    """
    if len(group) < top + bottom:
        raise ConfigError(f"group of {len(group)} cannot supply {top} top and {bottom} bottom rollouts")
    ranked = [(r.mean_score(), i) for i, r in enumerate(group.rollouts) if r.mask.any()]
    if len(ranked) <= top + bottom:
        chosen = {i for _, i in ranked}
    else:
        best = sorted(ranked, key=lambda si: (-si[0], si[1]))[:top]
        chosen = {i for _, i in best}
        rest = [si for si in ranked if si[1] not in chosen]
        worst = sorted(rest, key=lambda si: (si[0], si[1]))[:bottom]
        chosen |= {i for _, i in worst}
    out = [replace(r, selected=i in chosen) for i, r in enumerate(group.rollouts)]
    return replace(group, rollouts=out)


def clipped_term(ratio: float, advantage: float, clip_range: float) -> float:
    """min(r A, clip(r, 1 - Δ, 1 + Δ) A)."""
    clipped = min(max(ratio, 1.0 - clip_range), 1.0 + clip_range)
    return min(ratio * advantage, clipped * advantage)


def clipped_term_grad(ratio, advantage, clip_range):
    """d/d(ratio) of :func:`clipped_term`, vectorized; 0 where the clip is active."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    active = np.where(advantage >= 0, ratio <= 1.0 + clip_range, ratio >= 1.0 - clip_range)
    return np.where(active, advantage, 0.0)


def gaussian_step_logdensity(x_next, mean, sigma: float) -> float:
    """log N(x_next; mean, sigma^2 I)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    diff = np.asarray(x_next, dtype=float) - np.asarray(mean, dtype=float)
    d = diff.size
    return float(-0.5 * d * (LOG_2PI + 2.0 * math.log(sigma)) - 0.5 * np.sum(diff * diff) / sigma**2)


def kl_gaussian(mean_a, mean_b, sigma: float) -> float:
    """KL(N(mean_a, s^2 I) || N(mean_b, s^2 I)) = |mean_a - mean_b|^2 / (2 s^2)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    diff = np.asarray(mean_a, dtype=float) - np.asarray(mean_b, dtype=float)
    return float(np.sum(diff * diff) / (2.0 * sigma**2))


def _require_populated(group: RolloutGroup) -> list[Rollout]:
    chosen = [r for r in group.rollouts if r.selected]
    if not chosen:
        raise EmptyGroupError("no selected rollouts")
    for r in chosen:
        if r.advantages is None:
            raise ValueError("advantages not computed; call group_advantages first")
        if r.new_logp is None or r.kl is None:
            raise ValueError("new-policy log-densities and KL must be populated")
        if not (len(r.old_logp) == len(r.new_logp) == len(r.kl)):
            raise ValueError("per-step arrays disagree in length")
    return chosen


def grpo_objective(group: RolloutGroup, cfg: GrpoConfig) -> float:
    """Clipped surrogate minus weighted KL, averaged over selected rollouts.

    The surrogate mean runs over every (rollout, stochastic step, unmasked
    segment) triple; the KL mean over every (rollout, stochastic step) pair.
    """
    chosen = _require_populated(group)
    surrogate, n_terms = 0.0, 0
    kl_total, n_kl = 0.0, 0
    for r in chosen:
        ratios = np.exp(r.new_logp - r.old_logp)
        adv = r.advantages[r.mask]
        for ratio in ratios:
            for a in adv:
                surrogate += clipped_term(float(ratio), float(a), cfg.clip_range)
            n_terms += adv.size
        kl_total += float(np.sum(r.kl))
        n_kl += r.kl.size
    value = surrogate / n_terms if n_terms else 0.0
    if n_kl:
        value -= cfg.kl_weight * kl_total / n_kl
    return value


def objective_sensitivities(group: RolloutGroup, cfg: GrpoConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per selected rollout, d objective / d new_logp and d objective / d kl.

    Returned in the order of ``group.selected_indices``; these chain with
    the policy's own d logp / d theta and d kl / d theta.
    """
    chosen = _require_populated(group)
    n_terms = sum(r.new_logp.size * int(r.mask.sum()) for r in chosen)
    n_kl = sum(r.kl.size for r in chosen)
    out = []
    for r in chosen:
        ratios = np.exp(r.new_logp - r.old_logp)
        adv = r.advantages[r.mask]
        if n_terms:
            df_dr = clipped_term_grad(ratios[:, None], adv[None, :], cfg.clip_range).sum(axis=1)
            d_logp = df_dr * ratios / n_terms
        else:
            d_logp = np.zeros_like(ratios)
        d_kl = np.full(r.kl.shape, -cfg.kl_weight / n_kl if n_kl else 0.0)
        out.append((d_logp, d_kl))
    return out
