"""Dense segment-level geometry reward between generated and reference paths.

Pipeline: similarity-align the generated trajectory onto the reference,
cut both into non-overlapping segments of ``L`` frames, compare the
end-to-start relative transforms of each segment pair, turn clipped
translation / rotation errors into non-positive scores, and mask segments
whose mean generated-frame confidence falls below the threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .align import align_with_fallback
from .errors import ConfigError, LengthMismatchError, TrajectoryTooShortError
from .se3 import Pose, Rotation, Trajectory, geodesic_angles

MODES = ("relative-relative", "relative-absolute", "absolute-relative", "clip-level")


def default_segment_length(n_frames: int) -> int:
    """Largest L that still leaves about 8 segments."""
    return max(1, (n_frames - 1) // 8)


@dataclass(frozen=True)
class RewardConfig:
    segment_length: Optional[int] = None  # None -> default_segment_length(N)
    lambda_t: float = 1.0
    lambda_r: float = 1.0
    confidence_threshold: float = 0.1
    mode: str = "relative-relative"

    def __post_init__(self):
        if self.segment_length is not None and self.segment_length < 1:
            raise ConfigError(f"segment_length must be >= 1, got {self.segment_length}")
        if self.lambda_t < 0 or self.lambda_r < 0:
            raise ConfigError("reward weights must be non-negative")
        if not self.lambda_t + self.lambda_r > 0:
            raise ConfigError("lambda_t + lambda_r must be positive")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ConfigError(f"confidence_threshold must lie in [0, 1], got {self.confidence_threshold}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")

    def resolve_length(self, n_frames: int) -> int:
        return self.segment_length if self.segment_length is not None else default_segment_length(n_frames)


@dataclass
class SegmentRewardReport:
    """Per-segment errors and scores for one generated/reference pair.

    ``segments`` holds 0-based inclusive frame ranges ``(start, end)``.
    Scores of masked segments are reported but must not enter any sum.
    """

    mode: str
    segment_length: int
    translation_errors: np.ndarray
    rotation_errors: np.ndarray
    scores: np.ndarray
    mask: np.ndarray
    segments: list[tuple[int, int]]
    dropped_frames: int
    degenerate_alignment: bool = False
    lambda_t: float = 1.0
    lambda_r: float = 1.0

    @property
    def n_segments(self) -> int:
        return len(self.scores)

    def mean_score(self) -> float:
        """Mean over unmasked segments; NaN when everything is masked."""
        if not self.mask.any():
            return float("nan")
        return float(self.scores[self.mask].mean())

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "segment_length": self.segment_length,
            "translation_errors": self.translation_errors.tolist(),
            "rotation_errors": self.rotation_errors.tolist(),
            "scores": self.scores.tolist(),
            "mask": [bool(m) for m in self.mask],
            "segments": [list(s) for s in self.segments],
            "dropped_frames": self.dropped_frames,
            "degenerate_alignment": self.degenerate_alignment,
            "lambda_t": self.lambda_t,
            "lambda_r": self.lambda_r,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "SegmentRewardReport":
        return cls(
            mode=d["mode"],
            segment_length=int(d["segment_length"]),
            translation_errors=np.asarray(d["translation_errors"], dtype=float),
            rotation_errors=np.asarray(d["rotation_errors"], dtype=float),
            scores=np.asarray(d["scores"], dtype=float),
            mask=np.asarray(d["mask"], dtype=bool),
            segments=[tuple(s) for s in d["segments"]],
            dropped_frames=int(d["dropped_frames"]),
            degenerate_alignment=bool(d["degenerate_alignment"]),
            lambda_t=float(d.get("lambda_t", 1.0)),
            lambda_r=float(d.get("lambda_r", 1.0)),
        )

    def to_text(self) -> str:
        lines = [
            f"# mode={self.mode} L={self.segment_length} K={self.n_segments} "
            f"dropped={self.dropped_frames} degenerate={int(self.degenerate_alignment)} "
            f"lambda_t={self.lambda_t!r} lambda_r={self.lambda_r!r}",
            "# k start end e_t e_R score mask",
        ]
        for k, (start, end) in enumerate(self.segments):
            lines.append(
                f"{k} {start} {end} {float(self.translation_errors[k])!r} {float(self.rotation_errors[k])!r} "
                f"{float(self.scores[k])!r} {int(self.mask[k])}"
            )
        return "\n".join(lines) + "\n"


def aggregate_confidence(per_pixel) -> float:
    """Mean-pool a per-pixel confidence map into one frame confidence."""
    a = np.asarray(per_pixel, dtype=float)
    if a.size == 0:
        raise ValueError("confidence map is empty")
    if np.any((a < 0) | (a > 1)) or not np.all(np.isfinite(a)):
        raise ValueError("confidence values must lie in [0, 1]")
    return float(a.mean())


def _segment_bounds(n_frames: int, length: int) -> tuple[np.ndarray, np.ndarray, int]:
    if n_frames < length + 1:
        raise TrajectoryTooShortError(
            f"trajectory of {n_frames} frames is too short for segments of length {length}"
        )
    k = (n_frames - 1) // length
    starts = np.arange(k) * length
    ends = starts + length
    dropped = n_frames - 1 - int(ends[-1])
    return starts, ends, dropped


def _relative_arrays(traj: Trajectory, starts, ends) -> tuple[np.ndarray, np.ndarray]:
    ra = traj.rotations[starts]
    rb = traj.rotations[ends]
    rel_r = np.einsum("nki,nkj->nij", ra, rb)
    rel_t = np.einsum("nki,nk->ni", ra, traj.positions[ends] - traj.positions[starts])
    return rel_r, rel_t


def segment_relative_transforms(traj: Trajectory, length: int) -> list[Pose]:
    """End-to-start relative transform E_start^-1 E_end for each full segment."""
    starts, ends, _ = _segment_bounds(len(traj), length)
    rel_r, rel_t = _relative_arrays(traj, starts, ends)
    return [Pose(Rotation._trusted(r), t) for r, t in zip(rel_r, rel_t)]


def _relative_errors(gen_r, gen_t, ref_r, ref_t) -> tuple[np.ndarray, np.ndarray]:
    # Translation of ref^-1 ∘ gen is ref_R^T (gen_t - ref_t).
    terr = np.einsum("nki,nk->ni", ref_r, gen_t) - np.einsum("nki,nk->ni", ref_r, ref_t)
    e_t = np.minimum(np.linalg.norm(terr, axis=-1), 1.0)
    e_r = geodesic_angles(ref_r, gen_r)
    return e_t, e_r


def segment_errors(gen_T: Pose, ref_T: Pose) -> tuple[float, float]:
    """Clipped translation error and geodesic rotation error of ref_T^-1 gen_T."""
    e_t, e_r = _relative_errors(
        gen_T.rotation.matrix[None], gen_T.position[None], ref_T.rotation.matrix[None], ref_T.position[None]
    )
    return float(e_t[0]), float(e_r[0])


def _absolute_errors(gen: Trajectory, ref: Trajectory, starts, ends) -> tuple[np.ndarray, np.ndarray]:
    dist = np.minimum(np.linalg.norm(gen.positions - ref.positions, axis=-1), 1.0)
    ang = geodesic_angles(ref.rotations, gen.rotations)
    e_t = np.array([dist[a : b + 1].mean() for a, b in zip(starts, ends)])
    e_r = np.array([ang[a : b + 1].mean() for a, b in zip(starts, ends)])
    return e_t, e_r


def _scores(e_t, e_r, cfg: RewardConfig) -> np.ndarray:
    # 0.0 - x keeps a perfect segment at +0.0 rather than -0.0.
    return 0.0 - (cfg.lambda_t * e_t + cfg.lambda_r * e_r)


def compute_reward(gen: Trajectory, ref: Trajectory, cfg: RewardConfig = RewardConfig()) -> SegmentRewardReport:
    if len(gen) != len(ref):
        raise LengthMismatchError(f"trajectory lengths differ: {len(gen)} vs {len(ref)}")
    n = len(gen)
    length = cfg.resolve_length(n)
    if n < max(3, length + 1):
        raise TrajectoryTooShortError(
            f"need at least {max(3, length + 1)} frames for L={length}, got {n}"
        )
    aligned, _, degenerate = align_with_fallback(gen, ref)
    starts, ends, dropped = _segment_bounds(n, length)

    gen_r, gen_t = _relative_arrays(aligned, starts, ends)
    ref_r, ref_t = _relative_arrays(ref, starts, ends)
    e_t, e_r = _relative_errors(gen_r, gen_t, ref_r, ref_t)
    if cfg.mode in ("absolute-relative", "relative-absolute"):
        abs_t, abs_r = _absolute_errors(aligned, ref, starts, ends)
        if cfg.mode == "absolute-relative":
            e_t = abs_t
        else:
            e_r = abs_r

    conf = aligned.confidence
    seg_conf = np.array([conf[a : b + 1].mean() for a, b in zip(starts, ends)])
    mask = seg_conf >= cfg.confidence_threshold
    segments = [(int(a), int(b)) for a, b in zip(starts, ends)]

    if cfg.mode == "clip-level":
        use = mask if mask.any() else np.ones_like(mask)
        e_t = np.array([e_t[use].mean()])
        e_r = np.array([e_r[use].mean()])
        mask = np.array([bool(mask.any())])
        segments = [(segments[0][0], segments[-1][1])]

    return SegmentRewardReport(
        mode=cfg.mode,
        segment_length=length,
        translation_errors=e_t,
        rotation_errors=e_r,
        scores=_scores(e_t, e_r, cfg),
        mask=mask,
        segments=segments,
        dropped_frames=dropped,
        degenerate_alignment=degenerate,
        lambda_t=cfg.lambda_t,
        lambda_r=cfg.lambda_r,
    )
