"""Port pose recovery from triangulated pin points.

The out-of-plane orientation comes from a least-squares plane fit
z = A*x + B*y + C solved through its 3x3 normal equations: setting the
partial derivatives of

    e(A, B, C) = sum_i (A*x_i + B*y_i + C - z_i)^2

with respect to A, B and C to zero gives

    [sum x^2  sum xy  sum x] [A]   [sum xz]
    [sum xy   sum y^2 sum y] [B] = [sum yz]
    [sum x    sum y   n    ] [C]   [sum z ]

which is solved exactly.  The in-plane rotation (yaw about the port
normal) comes from a closed-form 2D Procrustes registration of the
observed in-plane pin coordinates against the model layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvplugError
from .geometry import Rotation3, Transform3D
from .ports import PortModel


class DegenerateConfiguration(EvplugError):
    """Points collinear/duplicate: normal matrix effectively singular."""


class NearVerticalPlane(EvplugError):
    """Plane too steep for the z = Ax + By + C parameterization."""


class TooFewPoints(EvplugError):
    pass


class LabelMismatch(EvplugError):
    """Observed labels are not a subset of the model pin labels."""


class AmbiguousYaw(EvplugError):
    """In-plane registration has no unique optimum and no fallback given."""


_CONDITION_LIMIT = 1e12
_VERTICAL_LIMIT = 0.05  # |normal . z| below this is rejected


@dataclass(frozen=True)
class PlaneFit:
    a: float
    b: float
    c: float
    rms_residual: float

    def normal(self) -> np.ndarray:
        """Unit plane normal with negative z component (toward the camera)."""
        n = np.array([self.a, self.b, -1.0])
        n /= np.linalg.norm(n)
        return n if n[2] < 0 else -n


def fit_plane_lsq(points) -> PlaneFit:
    """Least-squares plane z = A*x + B*y + C through >= 3 points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got {pts.shape}")
    n = len(pts)
    if n < 3:
        raise DegenerateConfiguration(f"need >= 3 points, got {n}")
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    m = np.array([
        [x @ x, x @ y, x.sum()],
        [x @ y, y @ y, y.sum()],
        [x.sum(), y.sum(), float(n)],
    ])
    rhs = np.array([x @ z, y @ z, z.sum()])
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > _CONDITION_LIMIT:
        raise DegenerateConfiguration(f"normal-matrix condition {cond:.3e}")
    a, b, c = np.linalg.solve(m, rhs)
    nz = 1.0 / math.sqrt(a * a + b * b + 1.0)
    if nz < _VERTICAL_LIMIT:
        raise NearVerticalPlane(f"|normal . z| = {nz:.4f}")
    resid = a * x + b * y + c - z
    rms = math.sqrt(float(resid @ resid) / n)
    return PlaneFit(float(a), float(b), float(c), rms)


def plane_to_roll_pitch(fit: PlaneFit) -> tuple[float, float]:
    """Tilt of the fitted plane as the unique Ry(pitch) @ Rx(roll) rotation.

    The returned rotation takes the frontal-plane normal (0, 0, -1) to the
    fitted normal, so refitting a frontal plane rotated by Ry(alpha)
    returns pitch = alpha, and by Rx(beta) returns roll = beta.
    """
    n = fit.normal()
    roll = math.asin(max(-1.0, min(1.0, n[1])))
    pitch = math.atan2(-n[0], -n[2])
    return roll, pitch


def roll_pitch_rotation(roll: float, pitch: float) -> Rotation3:
    return Rotation3.rot_y(pitch).compose(Rotation3.rot_x(roll))


@dataclass(frozen=True)
class PortPoseEstimate:
    pose: Transform3D          # camera frame; port +Z points at the camera
    per_pin_residual: dict[str, float]
    plane: PlaneFit

    def to_json(self) -> dict:
        return {
            "pose": self.pose.to_json(),
            "per_pin_residual": {k: float(v) for k, v in self.per_pin_residual.items()},
            "plane": {
                "a": self.plane.a, "b": self.plane.b, "c": self.plane.c,
                "rms_residual": self.plane.rms_residual,
            },
        }


def estimate_port_pose(
    points: dict[str, np.ndarray],
    model: PortModel,
    fallback_yaw: float | None = None,
) -> PortPoseEstimate:
    """Rigid pose of the port in the camera frame from labeled 3D points.

    Origin: observed centroid registered to the model centroid.  Plane fit
    supplies the out-of-plane orientation; yaw about the normal is the
    closed-form 2D Procrustes optimum.  ``fallback_yaw`` is consulted only
    when the registration is ambiguous (no unique optimum).
    """
    if len(points) < 3:
        raise TooFewPoints(f"need >= 3 labeled points, got {len(points)}")
    labels = list(points.keys())
    model_labels = set(model.pin_labels())
    unknown = sorted(set(labels) - model_labels)
    if unknown:
        raise LabelMismatch(f"labels not in {model.kind} model: {unknown}")

    obs = np.array([np.asarray(points[k], dtype=float) for k in labels])
    fit = fit_plane_lsq(obs)
    n = fit.normal()  # points toward the camera = port outward +Z

    # deterministic in-plane basis; any in-plane spin is absorbed by yaw
    seed = np.array([1.0, 0.0, 0.0])
    if abs(seed @ n) > 0.9:
        seed = np.array([0.0, 1.0, 0.0])
    e1 = seed - (seed @ n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    r0 = Rotation3(np.column_stack([e1, e2, n]))

    obs_centroid = obs.mean(axis=0)
    q = (obs - obs_centroid) @ np.column_stack([e1, e2])  # (n, 2) in-plane

    mdl = np.array([model.pin(k).center[:2] for k in labels])
    mdl_centroid3 = np.zeros(3)
    mdl_centroid3[:2] = mdl.mean(axis=0)
    m2 = mdl - mdl.mean(axis=0)

    s_cross = float(m2[:, 0] @ q[:, 1] - m2[:, 1] @ q[:, 0])
    s_dot = float(m2[:, 0] @ q[:, 0] + m2[:, 1] @ q[:, 1])
    scale = float(np.linalg.norm(m2) * np.linalg.norm(q))
    if math.hypot(s_cross, s_dot) < 1e-9 * max(scale, 1e-12):
        if fallback_yaw is None:
            raise AmbiguousYaw("no unique in-plane registration optimum")
        gamma = float(fallback_yaw)
    else:
        gamma = math.atan2(s_cross, s_dot)

    rot = r0.compose(Rotation3.rot_z(gamma))
    t = obs_centroid - rot.m @ mdl_centroid3
    pose = Transform3D(rot, t)

    residual = {}
    for k in labels:
        residual[k] = float(np.linalg.norm(points[k] - pose.apply(model.pin(k).center)))
    return PortPoseEstimate(pose=pose, per_pin_residual=residual, plane=fit)
