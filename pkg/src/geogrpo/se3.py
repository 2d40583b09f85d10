"""Rigid-transform algebra: rotations, camera-to-world poses, trajectories.

Rotations are stored as 3x3 matrices; quaternions only appear at I/O
boundaries. Poses are camera-to-world, so a pose's position is the camera
center.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import InvalidIntrinsicsError, InvalidRotationError

# Orthonormality deviation (max abs entry of R^T R - I) above which inputs
# are projected onto SO(3), and above which they are rejected outright.
PROJECT_TOL = 1e-6
REJECT_TOL = 1e-2


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Polar projection of one or more 3x3 matrices onto SO(3)."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    return u @ vt


def validate_rotations(mats: np.ndarray) -> np.ndarray:
    """Check a stack of (..., 3, 3) matrices, repairing small drift.

    Matrices off SO(3) by more than ``PROJECT_TOL`` are replaced by their
    nearest rotation; beyond ``REJECT_TOL`` or with negative determinant
    they are rejected.
    """
    mats = np.asarray(mats, dtype=float)
    if mats.shape[-2:] != (3, 3):
        raise InvalidRotationError(f"expected (..., 3, 3) matrices, got shape {mats.shape}")
    if not np.all(np.isfinite(mats)):
        raise InvalidRotationError("rotation matrix has non-finite entries")
    gram = np.einsum("...ki,...kj->...ij", mats, mats)
    dev = np.abs(gram - np.eye(3)).reshape(*mats.shape[:-2], 9).max(axis=-1)
    det = np.linalg.det(mats)
    if np.any(det <= 0):
        raise InvalidRotationError("matrix is a reflection or singular (det <= 0)")
    if np.any(dev > REJECT_TOL):
        raise InvalidRotationError(
            f"matrix deviates from orthonormal by {float(dev.max()):.3g} (> {REJECT_TOL})"
        )
    if np.any(dev > PROJECT_TOL):
        mats = mats.copy()
        bad = dev > PROJECT_TOL
        mats[bad] = nearest_rotation(mats[bad])
    return mats


def hat(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotvec_to_matrix(rotvecs: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (..., 3) to rotation matrices (..., 3, 3)."""
    rotvecs = np.asarray(rotvecs, dtype=float)
    flat = rotvecs.reshape(-1, 3)
    mats = _ScipyRotation.from_rotvec(flat).as_matrix()
    return mats.reshape(*rotvecs.shape[:-1], 3, 3)


def matrix_to_rotvec(mats: np.ndarray) -> np.ndarray:
    mats = np.asarray(mats, dtype=float)
    flat = mats.reshape(-1, 3, 3)
    vecs = _ScipyRotation.from_matrix(flat).as_rotvec()
    return vecs.reshape(*mats.shape[:-2], 3)


def geodesic_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched rotation angle of a^T b, in [0, pi].

    Equal to arccos(clip((tr(a^T b) - 1) / 2, -1, 1)) on SO(3), but computed
    as atan2(sin, cos) so small angles keep full precision and identical
    inputs give exactly 0.
    """
    m = np.einsum("...ki,...kj->...ij", a, b)
    mt = np.einsum("...ki,...kj->...ij", b, a)
    skew = m - mt
    sin2 = np.stack(
        [skew[..., 2, 1], skew[..., 0, 2], skew[..., 1, 0]], axis=-1
    )
    sin = 0.5 * np.linalg.norm(sin2, axis=-1)
    cos = 0.5 * (np.trace(m, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(sin, cos)


@dataclass(frozen=True, eq=False)
class Rotation:
    matrix: np.ndarray

    def __post_init__(self):
        m = validate_rotations(np.array(self.matrix, dtype=float))
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def _trusted(cls, m: np.ndarray) -> "Rotation":
        obj = object.__new__(cls)
        object.__setattr__(obj, "matrix", _frozen(np.array(m, dtype=float)))
        return obj

    @classmethod
    def identity(cls) -> "Rotation":
        return cls._trusted(np.eye(3))

    @classmethod
    def from_quaternion(cls, qw: float, qx: float, qy: float, qz: float) -> "Rotation":
        q = np.array([qx, qy, qz, qw], dtype=float)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise InvalidRotationError("zero or non-finite quaternion")
        return cls._trusted(_ScipyRotation.from_quat(q / n).as_matrix())

    @classmethod
    def from_rotvec(cls, v) -> "Rotation":
        return cls._trusted(rotvec_to_matrix(np.asarray(v, dtype=float)))

    @classmethod
    def about_axis(cls, axis: str, angle: float) -> "Rotation":
        v = np.zeros(3)
        v["xyz".index(axis)] = angle
        return cls.from_rotvec(v)

    def as_quaternion(self) -> tuple[float, float, float, float]:
        """Unit quaternion (qw, qx, qy, qz) with qw >= 0."""
        qx, qy, qz, qw = _ScipyRotation.from_matrix(self.matrix).as_quat()
        if qw < 0:
            qw, qx, qy, qz = -qw, -qx, -qy, -qz
        return float(qw), float(qx), float(qy), float(qz)

    def as_rotvec(self) -> np.ndarray:
        return matrix_to_rotvec(self.matrix)

    @property
    def T(self) -> "Rotation":
        return Rotation._trusted(self.matrix.T)

    def __matmul__(self, other):
        if isinstance(other, Rotation):
            return Rotation._trusted(self.matrix @ other.matrix)
        return self.matrix @ np.asarray(other, dtype=float)

    def __repr__(self):
        return f"Rotation(rotvec={np.round(self.as_rotvec(), 6).tolist()})"


def geodesic_angle(a: Rotation, b: Rotation) -> float:
    """Angle in radians of the rotation taking ``a`` to ``b``."""
    return float(geodesic_angles(a.matrix, b.matrix))


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform; ``position`` is the camera center."""

    rotation: Rotation
    position: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(p)):
            raise InvalidRotationError("pose position is not finite")
        object.__setattr__(self, "position", _frozen(p))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def translation(cls, x: float, y: float, z: float) -> "Pose":
        return cls(Rotation.identity(), np.array([x, y, z], dtype=float))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.position
        return m

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.matrix.T + self.position

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __repr__(self):
        return f"Pose({self.rotation!r}, position={np.round(self.position, 6).tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    """a ∘ b: apply b first, then a."""
    r = a.rotation.matrix @ b.rotation.matrix
    return Pose(Rotation._trusted(r), a.rotation.matrix @ b.position + a.position)


def inverse(p: Pose) -> Pose:
    rt = p.rotation.matrix.T
    return Pose(Rotation._trusted(rt), -(rt @ p.position))


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels. Image size is optional."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: Optional[int] = None
    height: Optional[int] = None

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidIntrinsicsError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidIntrinsicsError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width is not None and not 0 <= self.cx <= self.width:
            raise InvalidIntrinsicsError(f"cx={self.cx} outside [0, {self.width}]")
        if self.height is not None and not 0 <= self.cy <= self.height:
            raise InvalidIntrinsicsError(f"cy={self.cy} outside [0, {self.height}]")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor: float) -> "Intrinsics":
        w = None if self.width is None else int(round(self.width * factor))
        h = None if self.height is None else int(round(self.height * factor))
        return Intrinsics(self.fx * factor, self.fy * factor, self.cx * factor, self.cy * factor, w, h)


class Trajectory:
    """Ordered camera poses with per-frame confidence in [0, 1].

    Stored as stacked arrays (``rotations`` (N, 3, 3), ``positions`` (N, 3),
    ``confidence`` (N,)) so that alignment and scoring vectorize; ``poses``
    gives the per-frame :class:`Pose` view.
    """

    __slots__ = ("rotations", "positions", "confidence", "intrinsics")

    def __init__(
        self,
        rotations,
        positions,
        confidence=None,
        intrinsics: Optional[Sequence[Optional[Intrinsics]]] = None,
        *,
        validate: bool = True,
    ):
        rot = np.array(rotations, dtype=float)
        pos = np.array(positions, dtype=float)
        if rot.ndim != 3 or rot.shape[1:] != (3, 3):
            raise ValueError(f"rotations must be (N, 3, 3), got {rot.shape}")
        n = rot.shape[0]
        if n < 1:
            raise ValueError("trajectory must contain at least one pose")
        if pos.shape != (n, 3):
            raise ValueError(f"positions must be ({n}, 3), got {pos.shape}")
        if confidence is None:
            conf = np.ones(n)
        else:
            conf = np.array(confidence, dtype=float).reshape(-1)
        if conf.shape != (n,):
            raise ValueError(f"confidence must have length {n}, got {conf.shape[0]}")
        if validate:
            rot = validate_rotations(rot)
            if not np.all(np.isfinite(pos)):
                raise InvalidRotationError("positions must be finite")
            if not np.all((conf >= 0.0) & (conf <= 1.0)):
                raise ValueError("confidence values must lie in [0, 1]")
        if intrinsics is not None:
            intrinsics = tuple(intrinsics)
            if len(intrinsics) != n:
                raise ValueError(f"intrinsics must have length {n}, got {len(intrinsics)}")
        object.__setattr__(self, "rotations", _frozen(rot))
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "confidence", _frozen(conf))
        object.__setattr__(self, "intrinsics", intrinsics)

    def __setattr__(self, name, value):
        raise AttributeError("Trajectory is immutable")

    @classmethod
    def from_poses(cls, poses: Sequence[Pose], confidence=None, intrinsics=None) -> "Trajectory":
        rot = np.stack([p.rotation.matrix for p in poses])
        pos = np.stack([p.position for p in poses])
        return cls(rot, pos, confidence, intrinsics)

    def __len__(self):
        return self.rotations.shape[0]

    @property
    def n_frames(self) -> int:
        return len(self)

    @property
    def poses(self) -> list[Pose]:
        return [Pose(Rotation._trusted(r), p) for r, p in zip(self.rotations, self.positions)]

    def pose(self, i: int) -> Pose:
        return Pose(Rotation._trusted(self.rotations[i]), self.positions[i])

    def replace(self, **changes) -> "Trajectory":
        fields = dict(
            rotations=self.rotations,
            positions=self.positions,
            confidence=self.confidence,
            intrinsics=self.intrinsics,
        )
        fields.update(changes)
        return Trajectory(**fields)

    def transformed(self, pose: Pose) -> "Trajectory":
        """Pre-compose every frame with a common rigid transform."""
        r = pose.rotation.matrix
        return Trajectory(
            np.einsum("ij,njk->nik", r, self.rotations),
            self.positions @ r.T + pose.position,
            self.confidence,
            self.intrinsics,
            validate=False,
        )

    def __repr__(self):
        return f"Trajectory(n_frames={len(self)})"
