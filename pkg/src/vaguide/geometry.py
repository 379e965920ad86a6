"""SE(3) pose algebra: composition, relative motions, 6-vector actions.

Poses are position (mm) + unit quaternion (w, x, y, z). Actions are
[tx, ty, tz] in mm plus intrinsic Z-Y-X Euler angles [rx, ry, rz] in
degrees, expressed in the frame of the starting pose. Quaternions are
kept canonical (w >= 0) so pose equality is testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_QUAT_TOL = 1e-9


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = math.sqrt(float(np.dot(q, q)))
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("quaternion has zero or non-finite norm")
    if abs(n - 1.0) > 1e-12:  # keep already-normalized quaternions bit-stable
        q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dtype=np.float64,
    )


def _quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=np.float64)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a 3x3 rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return _normalize_quat(np.array(q))


def euler_zyx_to_quat(rx_deg: float, ry_deg: float, rz_deg: float) -> np.ndarray:
    """Quaternion of the intrinsic Z-Y-X rotation Rz(rz) @ Ry(ry) @ Rx(rx)."""
    hx = math.radians(rx_deg) / 2
    hy = math.radians(ry_deg) / 2
    hz = math.radians(rz_deg) / 2
    qx = np.array([math.cos(hx), math.sin(hx), 0.0, 0.0])
    qy = np.array([math.cos(hy), 0.0, math.sin(hy), 0.0])
    qz = np.array([math.cos(hz), 0.0, 0.0, math.sin(hz)])
    return _normalize_quat(_quat_mul(_quat_mul(qz, qy), qx))


def quat_to_euler_zyx(q: np.ndarray) -> tuple[float, float, float]:
    """Intrinsic Z-Y-X Euler angles (rx, ry, rz) in degrees, rx/rz in (-180, 180]."""
    m = quat_to_matrix(q)
    sy = -m[2, 0]
    sy = min(1.0, max(-1.0, sy))
    ry = math.asin(sy)
    if abs(sy) < 1.0 - 1e-12:
        rx = math.atan2(m[2, 1], m[2, 2])
        rz = math.atan2(m[1, 0], m[0, 0])
    else:
        # gimbal band: fold all z rotation into rz
        rx = 0.0
        rz = math.atan2(-m[0, 1], m[1, 1])
    return (
        _wrap_deg(math.degrees(rx)),
        _wrap_deg(math.degrees(ry)),
        _wrap_deg(math.degrees(rz)),
    )


def _wrap_deg(a: float) -> float:
    a = math.fmod(a, 360.0)
    if a <= -180.0:
        a += 360.0
    elif a > 180.0:
        a -= 360.0
    return a


@dataclass(frozen=True)
class Pose:
    """Rigid probe pose: position in mm + canonical unit quaternion."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ValueError("position must be a finite 3-vector")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", _normalize_quat(self.orientation))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_matrix(t: np.ndarray) -> "Pose":
        t = np.asarray(t, dtype=np.float64)
        return Pose(t[:3, 3].copy(), matrix_to_quat(t[:3, :3]))

    def matrix(self) -> np.ndarray:
        t = np.eye(4)
        t[:3, :3] = quat_to_matrix(self.orientation)
        t[:3, 3] = self.position
        return t

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def to_array(self) -> np.ndarray:
        """[px, py, pz, qw, qx, qy, qz]."""
        return np.concatenate([self.position, self.orientation])

    @staticmethod
    def from_array(a) -> "Pose":
        a = np.asarray(a, dtype=np.float64)
        return Pose(a[:3], a[3:7])

    def allclose(self, other: "Pose", trans_tol: float = 1e-9, quat_tol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.position, other.position, atol=trans_tol)
            and np.allclose(self.orientation, other.orientation, atol=quat_tol)
        )


@dataclass(frozen=True)
class Action6:
    """Relative probe motion: translation (mm) + Z-Y-X Euler rotation (deg)."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64)
        r = np.asarray(self.rotation, dtype=np.float64)
        if t.shape != (3,) or r.shape != (3,):
            raise ValueError("translation and rotation must be 3-vectors")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r))):
            raise ValueError("action components must be finite")
        r = np.array([_wrap_deg(float(v)) for v in r])
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)

    @staticmethod
    def zero() -> "Action6":
        return Action6(np.zeros(3), np.zeros(3))

    def to_array(self) -> np.ndarray:
        """[tx, ty, tz, rx, ry, rz]."""
        return np.concatenate([self.translation, self.rotation])

    @staticmethod
    def from_array(a) -> "Action6":
        a = np.asarray(a, dtype=np.float64)
        return Action6(a[:3], a[3:6])


def compose(a: Pose, b: Pose) -> Pose:
    """Pose whose homogeneous matrix is T_a @ T_b."""
    q = _quat_mul(a.orientation, b.orientation)
    p = a.position + quat_to_matrix(a.orientation) @ b.position
    return Pose(p, q)


def inverse(p: Pose) -> Pose:
    qi = _quat_conj(p.orientation)
    return Pose(-(quat_to_matrix(qi) @ p.position), qi)


def relative_action(p_i: Pose, p_j: Pose) -> Action6:
    """Motion taking p_i to p_j, expressed in p_i's frame (T_i^-1 T_j)."""
    if np.array_equal(p_i.position, p_j.position) and np.array_equal(
        p_i.orientation, p_j.orientation
    ):
        return Action6.zero()
    rel = compose(inverse(p_i), p_j)
    rx, ry, rz = quat_to_euler_zyx(rel.orientation)
    return Action6(rel.position, np.array([rx, ry, rz]))


def apply_action(p: Pose, a: Action6) -> Pose:
    """Pose reached by executing action a from pose p."""
    delta = Pose(a.translation, euler_zyx_to_quat(*a.rotation))
    return compose(p, delta)


def interpolate(p0: Pose, p1: Pose, s: float) -> Pose:
    """Lerp positions, shortest-arc slerp orientations; s in [0, 1]."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation parameter {s} outside [0, 1]")
    pos = (1.0 - s) * p0.position + s * p1.position
    q0 = p0.orientation
    q1 = p1.orientation
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        q = q0 + s * (q1 - q0)
    else:
        theta = math.acos(min(1.0, dot))
        st = math.sin(theta)
        q = (math.sin((1 - s) * theta) / st) * q0 + (math.sin(s * theta) / st) * q1
    return Pose(pos, q)


def pose_distance(p0: Pose, p1: Pose) -> tuple[float, float]:
    """(Euclidean translation distance in mm, geodesic rotation angle in deg)."""
    trans = float(np.linalg.norm(p0.position - p1.position))
    # 2*acos(|<q0,q1>|) computed via the chord length, which is exact at 0
    # and well conditioned near it
    d = min(
        float(np.linalg.norm(p0.orientation - p1.orientation)),
        float(np.linalg.norm(p0.orientation + p1.orientation)),
    )
    rot = math.degrees(4.0 * math.asin(min(1.0, d / 2.0)))
    return trans, rot
