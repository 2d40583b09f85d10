"""Camera-control accuracy and geometric-consistency metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .align import align
from .errors import LengthMismatchError
from .se3 import Trajectory, geodesic_angles

COLUMNS = ("Trans. Err.", "Rot. Err.", "Geo. Con.")


def translation_error(gen: Trajectory, ref: Trajectory) -> float:
    """RMSE between camera positions after similarity alignment."""
    aligned, _ = align(gen, ref)
    sq = np.sum((aligned.positions - ref.positions) ** 2, axis=1)
    return float(np.sqrt(sq.mean()))


def rotation_error(gen: Trajectory, ref: Trajectory) -> float:
    """Mean geodesic angle, in degrees, between aligned and reference orientations."""
    if len(gen) != len(ref):
        raise LengthMismatchError(f"trajectory lengths differ: {len(gen)} vs {len(ref)}")
    aligned, _ = align(gen, ref)
    return float(np.degrees(geodesic_angles(ref.rotations, aligned.rotations).mean()))


def geometric_consistency(conf_maps: Sequence[np.ndarray], tau: float = 0.1) -> float:
    """Fraction of pixels, over all frames, with confidence >= tau."""
    if len(conf_maps) == 0:
        raise ValueError("no confidence maps given")
    valid = total = 0
    for m in conf_maps:
        m = np.asarray(m)
        if m.size == 0:
            raise ValueError("empty confidence map")
        valid += int(np.count_nonzero(m >= tau))
        total += m.size
    return valid / total


@dataclass
class ClipResult:
    name: str
    translation_error: float
    rotation_error: float
    geometric_consistency: Optional[float] = None


@dataclass
class EvalReport:
    """Mean metrics over clips; Geo. Con. is averaged over clips that have it."""

    clips: list[ClipResult] = field(default_factory=list)

    @property
    def translation_error(self) -> float:
        return float(np.mean([c.translation_error for c in self.clips]))

    @property
    def rotation_error(self) -> float:
        return float(np.mean([c.rotation_error for c in self.clips]))

    @property
    def geometric_consistency(self) -> Optional[float]:
        vals = [c.geometric_consistency for c in self.clips if c.geometric_consistency is not None]
        return float(np.mean(vals)) if vals else None

    def to_dict(self) -> dict:
        return {
            COLUMNS[0]: self.translation_error,
            COLUMNS[1]: self.rotation_error,
            COLUMNS[2]: self.geometric_consistency,
            "clips": [c.__dict__ for c in self.clips],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        rows = [("mean", self.translation_error, self.rotation_error, self.geometric_consistency)]
        if len(self.clips) > 1:
            rows = [
                (c.name, c.translation_error, c.rotation_error, c.geometric_consistency) for c in self.clips
            ] + rows
        width = max(12, *(len(r[0]) for r in rows))
        lines = [f"{'clip':<{width}}  " + "  ".join(f"{c:>12}" for c in COLUMNS)]
        for name, te, re, gc in rows:
            gc_s = "-" if gc is None else f"{gc:.4f}"
            lines.append(f"{name:<{width}}  {te:>12.4f}  {re:>12.4f}  {gc_s:>12}")
        return "\n".join(lines) + "\n"


def evaluate_clip(name: str, gen: Trajectory, ref: Trajectory, conf_maps=None, tau: float = 0.1) -> ClipResult:
    gc = None if conf_maps is None else geometric_consistency(conf_maps, tau)
    return ClipResult(name, translation_error(gen, ref), rotation_error(gen, ref), gc)
