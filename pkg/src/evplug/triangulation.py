"""Stereo depth recovery for the verged two-camera rig.

Two backends are provided.  ``triangulate_eq1`` implements the closed-form
verged-stereo expression

    Z0 = b / tan(theta)
    Z  = b * f / (x1 - x2 + f * b / Z0)
    X  = x1 * Z / f,   Y = y1 * Z / f

which is exact on the optical axis at the crossing distance and in the
parallel (theta = 0) limit, where the correction term f*b/Z0 is taken as 0
and the formula reduces to the plain disparity equation.  For verged axes
it is an approximation; ``triangulate_rays`` intersects the two exact
back-projected rays (midpoint of the shortest connecting segment) and
serves as the reference the approximation is audited against.

All results are expressed in the camera-1 frame.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import EvplugError
from .geometry import back_project
from .scene import StereoRig


class ParallelCameras(EvplugError):
    """Z0 is undefined for theta = 0."""


class PointAtInfinity(EvplugError):
    """Effective disparity too close to zero for a finite depth."""


class MismatchedFocal(EvplugError):
    """The closed form assumes one shared focal length."""


class ParallelRays(EvplugError):
    """Back-projected rays are parallel; no unique midpoint."""


class LabelMismatch(EvplugError):
    """Point label sets of the two cameras disagree."""


class TooFewPoints(EvplugError):
    """Fewer than three labeled correspondences."""


_DISPARITY_EPS = 1e-9


def z0(rig: StereoRig) -> float:
    """Distance along camera 1's axis where the two optical axes cross."""
    if rig.theta == 0.0:
        raise ParallelCameras("optical axes never cross for theta = 0")
    return rig.baseline / math.tan(rig.theta)


def triangulate_eq1(rig: StereoRig, p1, p2) -> np.ndarray:
    """Closed-form verged triangulation; returns a camera-1-frame point.

    p1, p2 are principal-point-relative pixel pairs from cameras 1 and 2.
    """
    if rig.left.f != rig.right.f:
        raise MismatchedFocal(
            f"shared focal length required, got {rig.left.f} and {rig.right.f}"
        )
    f = rig.left.f
    b = rig.baseline
    x1, y1 = float(p1[0]), float(p1[1])
    x2 = float(p2[0])
    # parallel limit: the f*b/Z0 term vanishes with tan(theta)
    term = f * b / z0(rig) if rig.theta > 0.0 else 0.0
    denom = x1 - x2 + term
    if abs(denom) <= _DISPARITY_EPS:
        raise PointAtInfinity(f"effective disparity {denom:.3e} px")
    z = b * f / denom
    return np.array([x1 * z / f, y1 * z / f, z])


def triangulate_rays(rig: StereoRig, p1, p2) -> np.ndarray:
    """Midpoint of the shortest segment between the two back-projected rays.

    Exact inverse of project_to_stereo for noiseless correspondences; the
    camera-2 ray is mapped through the full verge transform.  Returns a
    camera-1-frame point.
    """
    d1 = back_project(rig.left, float(p1[0]), float(p1[1]), 1.0)
    d1 /= np.linalg.norm(d1)
    o1 = np.zeros(3)

    t12 = rig.T_cam1_cam2()
    d2 = back_project(rig.right, float(p2[0]), float(p2[1]), 1.0)
    d2 = t12.rotation.m @ (d2 / np.linalg.norm(d2))
    o2 = t12.translation

    cross = np.cross(d1, d2)
    denom = float(cross @ cross)
    if denom < 1e-24:
        raise ParallelRays("back-projected rays are parallel")
    w = o2 - o1
    s1 = float(np.cross(w, d2) @ cross) / denom
    s2 = float(np.cross(w, d1) @ cross) / denom
    return 0.5 * ((o1 + s1 * d1) + (o2 + s2 * d2))


def triangulate_port_points(
    rig: StereoRig,
    points1: dict[str, tuple[float, float]],
    points2: dict[str, tuple[float, float]],
    method: str = "eq1",
) -> dict[str, np.ndarray]:
    """Triangulate labeled pin detections from both cameras.

    Labels must agree between the two views; at least three are required.
    """
    if set(points1) != set(points2):
        only1 = sorted(set(points1) - set(points2))
        only2 = sorted(set(points2) - set(points1))
        raise LabelMismatch(f"unmatched labels: cam1-only {only1}, cam2-only {only2}")
    if len(points1) < 3:
        raise TooFewPoints(f"need >= 3 correspondences, got {len(points1)}")
    if method == "eq1":
        tri = triangulate_eq1
    elif method == "rays":
        tri = triangulate_rays
    else:
        raise ValueError(f"unknown triangulation method {method!r}")
    return {label: tri(rig, points1[label], points2[label]) for label in points1}
