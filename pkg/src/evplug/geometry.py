"""Rigid-body math and pinhole projection primitives.

Conventions used throughout the package:

* lengths in meters, angles in radians (degrees appear only at the CLI)
* rotation matrices are 3x3 orthonormal with det +1, acting on column vectors
* roll/pitch/yaw compose as R = Rz(yaw) @ Ry(pitch) @ Rx(roll)
* pixel coordinates are principal-point-relative; "buffer" coordinates
  (array indices) are principal-point-relative plus (cx, cy)
* camera frames look along +Z, +X to the right, +Y down in the image
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvplugError

# constructor rejection / silent-reorthonormalization thresholds (Frobenius)
_ORTHO_REJECT = 1e-6
_ORTHO_CLEAN = 1e-12


class GimbalLock(EvplugError):
    """Pitch too close to +-pi/2 for a unique roll/yaw split."""


class BehindCamera(EvplugError):
    """Point does not lie strictly in front of the camera (Z <= 0)."""


def vec3(x: float, y: float, z: float) -> np.ndarray:
    v = np.array([float(x), float(y), float(z)])
    if not np.all(np.isfinite(v)):
        raise ValueError(f"non-finite vector: {v}")
    return v


def as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite vector: {a}")
    return a


class Rotation3:
    """3x3 orthonormal rotation, det +1.

    Constructors reject matrices whose orthonormality deviation exceeds
    1e-6 (Frobenius); inputs between 1e-12 and 1e-6 are snapped to the
    nearest rotation so stored instances always satisfy R^T R = I to
    within 1e-9.
    """

    __slots__ = ("m",)

    def __init__(self, m) -> None:
        m = np.array(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("rotation has non-finite entries")
        dev = float(np.linalg.norm(m.T @ m - np.eye(3)))
        if dev > _ORTHO_REJECT:
            raise ValueError(f"matrix not orthonormal (deviation {dev:.3e})")
        if dev > _ORTHO_CLEAN:
            u, _, vt = np.linalg.svd(m)
            m = u @ vt
        if np.linalg.det(m) < 0.0:
            raise ValueError("matrix is a reflection (det -1)")
        m.setflags(write=False)
        self.m = m

    @classmethod
    def _wrap(cls, m: np.ndarray) -> "Rotation3":
        """Internal: adopt m unchecked.  Only for products of already
        validated rotations (kinematic chains), where revalidation is
        redundant and costs more than the multiply itself."""
        obj = cls.__new__(cls)
        m = np.asarray(m, dtype=float)
        m.setflags(write=False)
        obj.m = m
        return obj

    @classmethod
    def identity(cls) -> "Rotation3":
        return cls(np.eye(3))

    @classmethod
    def rot_x(cls, angle: float) -> "Rotation3":
        c, s = math.cos(angle), math.sin(angle)
        return cls([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])

    @classmethod
    def rot_y(cls, angle: float) -> "Rotation3":
        c, s = math.cos(angle), math.sin(angle)
        return cls([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])

    @classmethod
    def rot_z(cls, angle: float) -> "Rotation3":
        c, s = math.cos(angle), math.sin(angle)
        return cls([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    @classmethod
    def from_rotvec(cls, w) -> "Rotation3":
        w = as_vec3(w)
        angle = float(np.linalg.norm(w))
        if angle < 1e-12:
            # second-order series keeps tiny rotations exact enough
            k = _skew(w)
            return cls(np.eye(3) + k + 0.5 * (k @ k))
        axis = w / angle
        k = _skew(axis)
        return cls(np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k))

    def apply(self, p) -> np.ndarray:
        return self.m @ as_vec3(p)

    def compose(self, other: "Rotation3") -> "Rotation3":
        """self applied after other."""
        return Rotation3(self.m @ other.m)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.m.T)

    def as_rotvec(self) -> np.ndarray:
        m = self.m
        cos_a = max(-1.0, min(1.0, (np.trace(m) - 1.0) / 2.0))
        angle = math.acos(cos_a)
        if angle < 1e-10:
            return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
        if angle > math.pi - 1e-6:
            # near pi the antisymmetric part vanishes; recover axis from m + I
            a = m + np.eye(3)
            axis = a[:, int(np.argmax(np.diag(a)))]
            axis = axis / np.linalg.norm(axis)
            return axis * angle
        vee = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
        return vee * (angle / (2.0 * math.sin(angle)))

    def angle_to(self, other: "Rotation3") -> float:
        """Geodesic angle between two rotations."""
        cos_a = (np.trace(self.m.T @ other.m) - 1.0) / 2.0
        return math.acos(max(-1.0, min(1.0, cos_a)))

    def __repr__(self) -> str:
        return f"Rotation3({self.m.tolist()!r})"


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True, eq=False)
class Transform3D:
    """Rigid transform: p_out = rotation @ p_in + translation."""

    rotation: Rotation3
    translation: np.ndarray

    def __post_init__(self) -> None:
        t = as_vec3(self.translation).copy()
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Transform3D":
        return cls(Rotation3.identity(), np.zeros(3))

    def apply(self, p) -> np.ndarray:
        return self.rotation.m @ as_vec3(p) + self.translation

    def apply_many(self, pts: np.ndarray) -> np.ndarray:
        """Apply to an (n, 3) array of points."""
        return pts @ self.rotation.m.T + self.translation

    def compose(self, other: "Transform3D") -> "Transform3D":
        """self applied after other: (self . other)(p) = self(other(p))."""
        return Transform3D(
            self.rotation.compose(other.rotation),
            self.rotation.m @ other.translation + self.translation,
        )

    def inverse(self) -> "Transform3D":
        rt = self.rotation.m.T
        return Transform3D(Rotation3(rt), -(rt @ self.translation))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.m
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m) -> "Transform3D":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"homogeneous transform must be 4x4, got {m.shape}")
        return cls(Rotation3(m[:3, :3]), m[:3, 3])

    def to_json(self) -> dict:
        return {
            "r": [float(x) for x in self.rotation.m.reshape(9)],
            "t": [float(x) for x in self.translation],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Transform3D":
        r = np.asarray(d["r"], dtype=float).reshape(3, 3)
        return cls(Rotation3(r), np.asarray(d["t"], dtype=float))

    def __repr__(self) -> str:
        return f"Transform3D(r={self.rotation.m.tolist()!r}, t={self.translation.tolist()!r})"


def compose(a: Transform3D, b: Transform3D) -> Transform3D:
    """Transform mapping points as a applied after b."""
    return a.compose(b)


def invert(t: Transform3D) -> Transform3D:
    return t.inverse()


@dataclass(frozen=True)
class Rpy:
    """Roll/pitch/yaw angles, each in (-pi, pi]."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self) -> None:
        for name in ("roll", "pitch", "yaw"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} is not finite")
            if not (-math.pi < v <= math.pi + 1e-15):
                raise ValueError(f"{name}={v} outside (-pi, pi]")


def rpy_to_rotation(rpy: Rpy) -> Rotation3:
    return Rotation3.rot_z(rpy.yaw).compose(
        Rotation3.rot_y(rpy.pitch).compose(Rotation3.rot_x(rpy.roll))
    )


def rotation_to_rpy(r: Rotation3) -> Rpy:
    """Inverse of rpy_to_rotation away from the pitch = +-pi/2 singularity."""
    m = r.m
    s = -m[2, 0]  # sin(pitch)
    if abs(s) >= 1.0 - 1e-9:
        raise GimbalLock(f"pitch within 1e-9 of +-pi/2 (sin pitch = {s:.12f})")
    pitch = math.asin(max(-1.0, min(1.0, s)))
    roll = math.atan2(m[2, 1], m[2, 2])
    yaw = math.atan2(m[1, 0], m[0, 0])
    return Rpy(_half_open(roll), _half_open(pitch), _half_open(yaw))


def _half_open(a: float) -> float:
    # atan2 may return exactly -pi; keep angles in (-pi, pi]
    return math.pi if a == -math.pi else a


@dataclass(frozen=True)
class CameraIntrinsics:
    """Shared-focal pinhole model; f, cx, cy in pixels."""

    f: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.f) and self.f > 0):
            raise ValueError(f"focal length must be finite positive, got {self.f}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_json(self) -> dict:
        return {
            "f": float(self.f), "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height),
        }

    @classmethod
    def from_json(cls, d: dict) -> "CameraIntrinsics":
        return cls(f=float(d["f"]), cx=float(d["cx"]), cy=float(d["cy"]),
                   width=int(d["width"]), height=int(d["height"]))


def project_pinhole(intr: CameraIntrinsics, p_cam) -> tuple[float, float]:
    """Project a camera-frame point; returns principal-point-relative pixels."""
    p = as_vec3(p_cam)
    if p[2] <= 0.0:
        raise BehindCamera(f"point at Z={p[2]} is not in front of the camera")
    return (intr.f * p[0] / p[2], intr.f * p[1] / p[2])


def back_project(intr: CameraIntrinsics, x: float, y: float, z: float) -> np.ndarray:
    """Camera-frame point at depth z whose projection is (x, y)."""
    if not z > 0.0:
        raise ValueError(f"depth must be positive, got {z}")
    return np.array([x * z / intr.f, y * z / intr.f, z])


def buffer_from_pp(intr: CameraIntrinsics, x: float, y: float) -> tuple[float, float]:
    return (x + intr.cx, y + intr.cy)


def pp_from_buffer(intr: CameraIntrinsics, xb: float, yb: float) -> tuple[float, float]:
    return (xb - intr.cx, yb - intr.cy)
