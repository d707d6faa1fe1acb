"""Marker-less eye-to-hand calibration (robot-world / hand-eye, AX = YB).

Each observation pairs a flange pose from forward kinematics with a plug-tip
pose detected in the camera frame, constraining

    T_base_flange(i) . T_flange_tip = T_base_cam . T_cam_tip(i)

with two rigid unknowns: X = T_flange_tip and Y = T_base_cam.  Eliminating Y
between observations i, j gives the classic AX = XB relative-motion problem,
solved for the X rotation by the linearized modified-Rodrigues system
skew(pa + pb) x = pb - pa.  The Y rotation follows by averaging, both
translations from one stacked linear solve, and a Gauss-Newton pass on the
12-DOF parameterization polishes the result to local optimality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvplugError
from .geometry import Rotation3, Transform3D

_MIN_AXIS_SPREAD = math.radians(5.0)


class TooFewPoses(EvplugError):
    pass


class DegenerateMotion(EvplugError):
    pass


@dataclass(frozen=True)
class PosePair:
    T_base_flange: Transform3D
    T_cam_tip: Transform3D
    match_score: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.match_score <= 1.0:
            raise ValueError("match_score must lie in [0, 1]")

    def to_json(self) -> dict:
        return {
            "T_base_flange": self.T_base_flange.to_json(),
            "T_cam_tip": self.T_cam_tip.to_json(),
            "match_score": self.match_score,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PosePair":
        return cls(
            Transform3D.from_json(obj["T_base_flange"]),
            Transform3D.from_json(obj["T_cam_tip"]),
            float(obj["match_score"]),
        )


@dataclass(frozen=True)
class CalibrationResult:
    T_base_cam: Transform3D
    T_flange_tip: Transform3D
    per_pair_residual: tuple
    mean_translation_error: float

    def to_json(self) -> dict:
        return {
            "schema": "evplug-calibration-v1",
            "T_base_cam": self.T_base_cam.to_json(),
            "T_flange_tip": self.T_flange_tip.to_json(),
            "per_pair_residual": [[r, t] for r, t in self.per_pair_residual],
            "mean_translation_error": self.mean_translation_error,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CalibrationResult":
        if obj.get("schema") != "evplug-calibration-v1":
            raise ValueError(f"unsupported calibration schema {obj.get('schema')!r}")
        return cls(
            Transform3D.from_json(obj["T_base_cam"]),
            Transform3D.from_json(obj["T_flange_tip"]),
            tuple((float(r), float(t)) for r, t in obj["per_pair_residual"]),
            float(obj["mean_translation_error"]),
        )


def reject_outliers(
    pairs: list[PosePair], min_score: float = 0.9
) -> tuple[list[PosePair], list[PosePair]]:
    """Split pairs on detection confidence, preserving order."""
    accepted = [p for p in pairs if p.match_score >= min_score]
    rejected = [p for p in pairs if p.match_score < min_score]
    return accepted, rejected


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _modified_rodrigues(r: Rotation3) -> np.ndarray:
    """p = 2 sin(theta/2) * axis; zero for the identity rotation."""
    rv = r.as_rotvec()
    theta = float(np.linalg.norm(rv))
    if theta < 1e-12:
        return np.zeros(3)
    return 2.0 * math.sin(theta / 2.0) * rv / theta


def _rotation_from_mrp(p: np.ndarray) -> Rotation3:
    n2 = float(np.dot(p, p))
    m = (1.0 - n2 / 2.0) * np.eye(3) + 0.5 * (
        np.outer(p, p) + math.sqrt(max(4.0 - n2, 0.0)) * _skew(p)
    )
    return Rotation3(m)


def _project_rotation(m: np.ndarray) -> Rotation3:
    u, _, vt = np.linalg.svd(m)
    return Rotation3(u @ np.diag([1.0, 1.0, float(np.linalg.det(u @ vt))]) @ vt)


def _check_motion_spread(motions_a: list[Transform3D]) -> None:
    axes = []
    for m in motions_a:
        rv = m.rotation.as_rotvec()
        ang = float(np.linalg.norm(rv))
        if ang > 1e-8:
            axes.append(rv / ang)
    best = 0.0
    for i in range(len(axes)):
        for j in range(i + 1, len(axes)):
            best = max(best, math.acos(min(1.0, abs(float(np.dot(axes[i], axes[j]))))))
    if len(axes) < 2 or best <= _MIN_AXIS_SPREAD:
        raise DegenerateMotion(
            "relative flange rotations span a single axis; vary the wrist "
            "orientation between poses"
        )


def _pair_residuals(pairs, x: Transform3D, y: Transform3D):
    out = []
    for p in pairs:
        left = p.T_base_flange.compose(x)
        right = y.compose(p.T_cam_tip)
        d = right.inverse().compose(left)
        out.append((
            float(np.linalg.norm(d.rotation.as_rotvec())),
            float(np.linalg.norm(d.translation)),
        ))
    return tuple(out)


def _residual_vector(pairs, x: Transform3D, y: Transform3D) -> np.ndarray:
    r = np.empty(6 * len(pairs))
    for i, p in enumerate(pairs):
        left = p.T_base_flange.compose(x)
        right = y.compose(p.T_cam_tip)
        d = right.inverse().compose(left)
        r[6 * i : 6 * i + 3] = d.rotation.as_rotvec()
        r[6 * i + 3 : 6 * i + 6] = d.translation
    return r


def _apply_increment(x: Transform3D, y: Transform3D, delta: np.ndarray):
    xn = Transform3D(
        x.rotation.compose(Rotation3.from_rotvec(delta[0:3])),
        x.translation + delta[3:6],
    )
    yn = Transform3D(
        y.rotation.compose(Rotation3.from_rotvec(delta[6:9])),
        y.translation + delta[9:12],
    )
    return xn, yn


def _refine(pairs, x: Transform3D, y: Transform3D):
    """Gauss-Newton with numeric Jacobian on the 12-DOF parameterization."""
    eps = 1e-7
    prev_cost = None
    for _ in range(100):
        r0 = _residual_vector(pairs, x, y)
        cost = float(r0 @ r0)
        # noisy data flattens the cost long before delta reaches zero
        if prev_cost is not None and prev_cost - cost < 1e-12 * max(prev_cost, 1e-30):
            break
        prev_cost = cost
        jac = np.empty((len(r0), 12))
        for k in range(12):
            d = np.zeros(12)
            d[k] = eps
            rp = _residual_vector(pairs, *_apply_increment(x, y, d))
            rm = _residual_vector(pairs, *_apply_increment(x, y, -d))
            jac[:, k] = (rp - rm) / (2.0 * eps)
        try:
            delta, *_ = np.linalg.lstsq(jac, -r0, rcond=None)
        except np.linalg.LinAlgError:
            break
        x, y = _apply_increment(x, y, delta)
        if float(np.linalg.norm(delta)) < 1e-10:
            break
    return x, y


def calibrate(pairs: list[PosePair]) -> CalibrationResult:
    """Solve for (T_base_cam, T_flange_tip) from accepted pose pairs."""
    if len(pairs) < 3:
        raise TooFewPoses(f"calibration needs >= 3 pose pairs, got {len(pairs)}")
    motions_a = []
    motions_b = []
    for i in range(len(pairs) - 1):
        a_i, a_j = pairs[i].T_base_flange, pairs[i + 1].T_base_flange
        b_i, b_j = pairs[i].T_cam_tip, pairs[i + 1].T_cam_tip
        motions_a.append(a_j.inverse().compose(a_i))
        motions_b.append(b_j.inverse().compose(b_i))
    _check_motion_spread(motions_a)

    rows = []
    rhs = []
    for ma, mb in zip(motions_a, motions_b):
        pa = _modified_rodrigues(ma.rotation)
        pb = _modified_rodrigues(mb.rotation)
        rows.append(_skew(pa + pb))
        rhs.append(pb - pa)
    sol, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    p_x = 2.0 * sol / math.sqrt(1.0 + float(np.dot(sol, sol)))
    r_x = _rotation_from_mrp(p_x)

    acc = np.zeros((3, 3))
    for p in pairs:
        acc += p.T_base_flange.rotation.m @ r_x.m @ p.T_cam_tip.rotation.m.T
    r_y = _project_rotation(acc)

    a_mat = np.zeros((3 * len(pairs), 6))
    b_vec = np.zeros(3 * len(pairs))
    for i, p in enumerate(pairs):
        a_mat[3 * i : 3 * i + 3, 0:3] = p.T_base_flange.rotation.m
        a_mat[3 * i : 3 * i + 3, 3:6] = -np.eye(3)
        b_vec[3 * i : 3 * i + 3] = (
            r_y.apply(p.T_cam_tip.translation) - p.T_base_flange.translation
        )
    t_sol, *_ = np.linalg.lstsq(a_mat, b_vec, rcond=None)

    x = Transform3D(r_x, t_sol[0:3])
    y = Transform3D(r_y, t_sol[3:6])
    x, y = _refine(pairs, x, y)

    residuals = _pair_residuals(pairs, x, y)
    mean_t = float(np.mean([t for _, t in residuals])) if residuals else 0.0
    return CalibrationResult(
        T_base_cam=y,
        T_flange_tip=x,
        per_pair_residual=residuals,
        mean_translation_error=mean_t,
    )


def apply_calibration(result: CalibrationResult, T_cam_object: Transform3D) -> Transform3D:
    """Object pose in the robot base frame."""
    return result.T_base_cam.compose(T_cam_object)
