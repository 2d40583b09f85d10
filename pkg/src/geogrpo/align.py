"""Similarity alignment of generated camera centers onto reference ones."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGeometryError,
    InsufficientPointsError,
    LengthMismatchError,
)
from .se3 import Rotation, Trajectory

# Relative singular-value floor below which the centered source is treated
# as rank-deficient (static or collinear camera).
RANK_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float
    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        t = np.array(self.translation, dtype=float).reshape(3)
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, Rotation.identity(), np.zeros(3))

    def apply_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return self.scale * pts @ self.rotation.matrix.T + self.translation

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.matrix.T
        return SimilarityTransform(
            1.0 / self.scale, Rotation._trusted(rt), -(rt @ self.translation) / self.scale
        )

    def __repr__(self):
        return (
            f"SimilarityTransform(scale={self.scale:.6g}, rotation={self.rotation!r}, "
            f"translation={np.round(self.translation, 6).tolist()})"
        )


def umeyama(src_points, dst_points) -> SimilarityTransform:
    """Least-squares similarity (s, R, t) with s R src + t ≈ dst.

    Closed form: SVD of the cross-covariance with the determinant-sign
    correction so R is always proper, scale from the variance ratio.

    Raises DegenerateGeometryError when the source is static or collinear;
    its ``fallback`` has s = 1, R = I and t matching the centroids.
    """
    src = np.asarray(src_points, dtype=float)
    dst = np.asarray(dst_points, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise LengthMismatchError(f"point sets must be matching (n, 3), got {src.shape} and {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise InsufficientPointsError(f"need at least 3 point pairs, got {n}")
    if np.array_equal(src, dst):
        return SimilarityTransform.identity()

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    xs = src - mu_src
    ys = dst - mu_dst

    sv = np.linalg.svd(xs, compute_uv=False)
    static = sv[0] <= 1e-12 * max(1.0, float(np.abs(src).max()))
    if static or sv[1] <= RANK_TOL * sv[0]:
        # Rotation about (or of) a degenerate source is undetermined, so the
        # fallback keeps the raw orientation and scale.
        kind = "static" if static else "collinear"
        fallback = SimilarityTransform(1.0, Rotation.identity(), mu_dst - mu_src)
        raise DegenerateGeometryError(f"source trajectory is {kind}", fallback)

    var_src = np.sum(xs * xs) / n
    cov = ys.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    signs = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        signs[2] = -1.0
    r = (u * signs) @ vt
    s = float(np.dot(d, signs) / var_src)
    t = mu_dst - s * r @ mu_src
    return SimilarityTransform(s, Rotation._trusted(r), t)


def apply_similarity(sim: SimilarityTransform, traj: Trajectory) -> Trajectory:
    r = sim.rotation.matrix
    return Trajectory(
        np.einsum("ij,njk->nik", r, traj.rotations),
        sim.scale * traj.positions @ r.T + sim.translation,
        traj.confidence,
        traj.intrinsics,
        validate=False,
    )


def align(gen: Trajectory, ref: Trajectory) -> tuple[Trajectory, SimilarityTransform]:
    """Map ``gen`` into the reference frame and scale using camera centers."""
    if len(gen) != len(ref):
        raise LengthMismatchError(f"trajectory lengths differ: {len(gen)} vs {len(ref)}")
    sim = umeyama(gen.positions, ref.positions)
    return apply_similarity(sim, gen), sim


def align_with_fallback(gen: Trajectory, ref: Trajectory) -> tuple[Trajectory, SimilarityTransform, bool]:
    """Like :func:`align`, but degrades to the fallback transform and flags it."""
    try:
        aligned, sim = align(gen, ref)
        return aligned, sim, False
    except DegenerateGeometryError as err:
        return apply_similarity(err.fallback, gen), err.fallback, True
