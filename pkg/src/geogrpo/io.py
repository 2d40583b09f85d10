"""Trajectory and confidence-map file formats.

Native trajectory format, one frame per line, ``#`` starts a comment::

    frame fx fy cx cy qw qx qy qz tx ty tz conf

Intrinsics may be written as ``nan nan nan nan`` when unknown. TUM format::

    timestamp tx ty tz qx qy qz qw

Note the quaternion order: scalar first in native, scalar last in TUM.
TUM files carry no intrinsics and confidence defaults to 1.

Confidence maps use the CNF1 binary layout: magic ``CNF1``, u32 N, u32 h,
u32 w, then N*h*w little-endian float32 values in (frame, row, col) order.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from .errors import GeoGrpoError, ParseError
from .se3 import Intrinsics, Rotation, Trajectory

CNF_MAGIC = b"CNF1"
QUAT_TOL = 1e-3

NATIVE_HEADER = (
    "# native trajectory: frame fx fy cx cy qw qx qy qz tx ty tz conf\n"
    "# quaternion is scalar-first (qw qx qy qz); camera-to-world pose\n"
)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _rotation_from_quat(qw, qx, qy, qz, lineno, path) -> np.ndarray:
    norm = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    if not abs(norm - 1.0) <= QUAT_TOL:
        raise ParseError(f"quaternion norm {norm:.6g} is not unit (tolerance {QUAT_TOL})", lineno, path)
    return Rotation.from_quaternion(qw, qx, qy, qz).matrix


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _floats(fields, lineno, path):
    try:
        return [float(f) for f in fields]
    except ValueError as err:
        raise ParseError(f"non-numeric field ({err})", lineno, path) from None


def parse_trajectory(path, format: str = "native") -> Trajectory:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ParseError(f"cannot read file: {err.strerror}", path=path) from None
    if format == "native":
        traj = _parse_native(text, path)
    elif format == "tum":
        traj = _parse_tum(text, path)
    else:
        raise ParseError(f"unknown trajectory format {format!r}", path=path)
    return traj


def _parse_native(text, path) -> Trajectory:
    rots, pos, conf, intr = [], [], [], []
    for lineno, fields in _data_lines(text):
        if len(fields) != 13:
            raise ParseError(f"expected 13 fields, found {len(fields)}", lineno, path)
        vals = _floats(fields, lineno, path)
        fx, fy, cx, cy = vals[1:5]
        if all(math.isnan(v) for v in (fx, fy, cx, cy)):
            intr.append(None)
        else:
            try:
                intr.append(Intrinsics(fx, fy, cx, cy))
            except GeoGrpoError as err:
                raise ParseError(str(err), lineno, path) from None
        rots.append(_rotation_from_quat(*vals[5:9], lineno, path))
        pos.append(vals[9:12])
        c = vals[12]
        if not 0.0 <= c <= 1.0:
            raise ParseError(f"confidence {c} outside [0, 1]", lineno, path)
        conf.append(c)
    return _build(rots, pos, conf, intr if any(i is not None for i in intr) else None, path)


def _parse_tum(text, path) -> Trajectory:
    rots, pos = [], []
    for lineno, fields in _data_lines(text):
        if len(fields) != 8:
            raise ParseError(f"expected 8 fields, found {len(fields)}", lineno, path)
        _, tx, ty, tz, qx, qy, qz, qw = _floats(fields, lineno, path)
        rots.append(_rotation_from_quat(qw, qx, qy, qz, lineno, path))
        pos.append([tx, ty, tz])
    return _build(rots, pos, None, None, path)


def _build(rots, pos, conf, intr, path) -> Trajectory:
    if len(rots) < 2:
        raise ParseError(f"trajectory needs at least 2 frames, found {len(rots)}", path=path)
    try:
        return Trajectory(np.array(rots), np.array(pos), conf, intr)
    except (GeoGrpoError, ValueError) as err:
        raise ParseError(str(err), path=path) from None


def format_native(traj: Trajectory) -> str:
    lines = [NATIVE_HEADER]
    for i in range(len(traj)):
        intr = traj.intrinsics[i] if traj.intrinsics is not None else None
        k = ("nan",) * 4 if intr is None else tuple(_fmt(v) for v in (intr.fx, intr.fy, intr.cx, intr.cy))
        q = Rotation._trusted(traj.rotations[i]).as_quaternion()
        fields = (str(i), *k, *(_fmt(v) for v in q), *(_fmt(v) for v in traj.positions[i]), _fmt(traj.confidence[i]))
        lines.append(" ".join(fields) + "\n")
    return "".join(lines)


def format_tum(traj: Trajectory, timestamps=None) -> str:
    lines = ["# tum trajectory: timestamp tx ty tz qx qy qz qw\n"]
    for i in range(len(traj)):
        ts = float(i) if timestamps is None else float(timestamps[i])
        qw, qx, qy, qz = Rotation._trusted(traj.rotations[i]).as_quaternion()
        vals = (ts, *traj.positions[i], qx, qy, qz, qw)
        lines.append(" ".join(_fmt(v) for v in vals) + "\n")
    return "".join(lines)


def write_trajectory(path, traj: Trajectory, format: str = "native") -> None:
    if format == "native":
        text = format_native(traj)
    elif format == "tum":
        text = format_tum(traj)
    else:
        raise ValueError(f"unknown trajectory format {format!r}")
    Path(path).write_text(text)


def write_confidence_maps(path, maps) -> None:
    arr = np.asarray(maps, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"expected (N, h, w) maps, got shape {arr.shape}")
    n, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(CNF_MAGIC + struct.pack("<III", n, h, w) + arr.tobytes(order="C"))


def read_confidence_maps(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        raise ParseError(f"cannot read file: {err.strerror}", path=path) from None
    if len(raw) < 16 or raw[:4] != CNF_MAGIC:
        raise ParseError("not a CNF1 confidence file", path=path)
    n, h, w = struct.unpack("<III", raw[4:16])
    if len(raw) != 16 + 4 * n * h * w:
        raise ParseError(f"expected {16 + 4 * n * h * w} bytes, found {len(raw)}", path=path)
    return np.frombuffer(raw[16:], dtype="<f4").reshape(n, h, w)
