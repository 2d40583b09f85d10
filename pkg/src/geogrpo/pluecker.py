"""Per-pixel Plücker ray embeddings for camera conditioning.

Each pixel (u, v) is sampled at its center (u + 0.5, v + 0.5). The ray
direction is R K^-1 [u, v, 1]^T normalized to unit length, and the moment
is o x d with o the camera center, giving a 6-vector (moment, direction).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidIntrinsicsError, ParseError
from .se3 import Intrinsics, Pose, Trajectory

PLK_MAGIC = b"PLK1"


@dataclass(frozen=True, eq=False)
class PlueckerMap:
    data: np.ndarray  # (6, h, w): channels 0-2 moment, 3-5 direction
    frame: int

    @property
    def moment(self) -> np.ndarray:
        return self.data[:3]

    @property
    def direction(self) -> np.ndarray:
        return self.data[3:]


def pluecker_frame(intr: Intrinsics, pose: Pose, h: int, w: int, frame: int = 0) -> PlueckerMap:
    if h < 1 or w < 1:
        raise ValueError(f"image size must be positive, got h={h}, w={w}")
    if not (intr.fx > 0 and intr.fy > 0):
        raise InvalidIntrinsicsError("singular intrinsics")
    vs, us = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    # K^-1 [u, v, 1] written out; K is upper triangular with zero skew.
    cam = np.stack(
        [(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], axis=0
    )
    d = np.einsum("ij,jhw->ihw", pose.rotation.matrix, cam)
    d /= np.linalg.norm(d, axis=0, keepdims=True)
    o = pose.position[:, None, None]
    m = np.cross(o, d, axis=0)
    return PlueckerMap(np.concatenate([m, d], axis=0), frame)


def pluecker_trajectory(traj: Trajectory, h: int, w: int) -> list[PlueckerMap]:
    if traj.intrinsics is None:
        raise InvalidIntrinsicsError("trajectory has no intrinsics (frame 0)")
    maps = []
    for i, (intr, pose) in enumerate(zip(traj.intrinsics, traj.poses)):
        if intr is None:
            raise InvalidIntrinsicsError(f"frame {i} has no intrinsics")
        maps.append(pluecker_frame(intr, pose, h, w, frame=i))
    return maps


def write_pluecker(path, maps: Sequence[PlueckerMap]) -> None:
    """Write maps as PLK1: magic, u32 N, u32 h, u32 w, then float32 LE data."""
    if not maps:
        raise ValueError("no maps to write")
    _, h, w = maps[0].data.shape
    stack = np.stack([m.data for m in maps]).astype("<f4")
    if stack.shape[1:] != (6, h, w):
        raise ValueError("all maps must share one resolution")
    with open(path, "wb") as f:
        f.write(PLK_MAGIC + struct.pack("<III", len(maps), h, w))
        f.write(stack.tobytes(order="C"))


def read_pluecker(path) -> np.ndarray:
    """Read a PLK1 file into an (N, 6, h, w) float32 array."""
    raw = Path(path).read_bytes()
    if raw[:4] != PLK_MAGIC or len(raw) < 16:
        raise ParseError("not a PLK1 file", path=path)
    n, h, w = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * n * 6 * h * w
    if len(raw) != expected:
        raise ParseError(f"expected {expected} bytes, found {len(raw)}", path=path)
    return np.frombuffer(raw[16:], dtype="<f4").reshape(n, 6, h, w)
