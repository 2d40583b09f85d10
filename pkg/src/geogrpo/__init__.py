"""Verifiable geometry reward and GRPO machinery for camera-controlled generation."""

from .align import SimilarityTransform, align, apply_similarity, umeyama
from .grpo import (
    GrpoConfig,
    Rollout,
    RolloutGroup,
    clipped_term,
    gaussian_step_logdensity,
    group_advantages,
    grpo_objective,
    kl_gaussian,
    select_best_of_n,
)
from .reward import (
    RewardConfig,
    SegmentRewardReport,
    aggregate_confidence,
    compute_reward,
    segment_errors,
    segment_relative_transforms,
)
from .se3 import Intrinsics, Pose, Rotation, Trajectory, compose, geodesic_angle, inverse

__version__ = "0.1.0"
