"""Plug/port contact model and insertion-outcome categorization.

The tip frame is the plug tool frame: +z points along the insertion
direction (the way the pins face), so a perfectly mated plug has its z axis
anti-parallel to the port z axis and its y axis (the guidance-slot axis)
coincident with the port y axis.  The mate rotation is therefore the port
rotation turned half a turn about y.  Three scalar errors, all zero at a
perfect mate, decide the outcome at final approach:

  alpha  angle between tip z and -(port z) (axis misalignment)
  rho    rotation error about the insertion axis relative to the slot
  d      lateral offset of the tip axis in the port face plane

A plug violating the entry tolerances jams against the face; the jam is
modeled as a linear spring on the penetration overlap, so force crosses any
reasonable threshold within millimeters and the run halts before depth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvplugError
from .geometry import Transform3D


class EmptyTrajectory(EvplugError):
    pass


FULL_INSERTION = "FullInsertion"
PARTIAL_MISALIGNMENT = "PartialMisalignment"
HALTED_MISSED_ROTATION = "HaltedMissedRotation"

_CATEGORIES = (FULL_INSERTION, PARTIAL_MISALIGNMENT, HALTED_MISSED_ROTATION)

DEFAULT_SPRING_K = 5000.0  # N/m
DEFAULT_FORCE_THRESHOLD = 30.0  # N

# Half turn about y: maps the port frame onto the tip frame of a perfectly
# mated plug (z flips to the insertion direction, the slot axis y survives).
MATE_FLIP = np.diag([-1.0, 1.0, -1.0])


@dataclass(frozen=True)
class InsertionTolerances:
    """Entry tolerances; defaults give a 1 deg clean-fit cone, a 1-5 deg
    contact-with-strain band, and hard slot/lateral limits."""

    axis_align: float = math.radians(1.0)
    partial_axis_max: float = math.radians(5.0)
    slot_rot: float = math.radians(8.0)
    lateral: float = 0.002
    spring_k: float = DEFAULT_SPRING_K

    def __post_init__(self) -> None:
        if not 0.0 < self.axis_align < self.partial_axis_max:
            raise ValueError("need 0 < axis_align < partial_axis_max")
        if self.slot_rot <= 0.0 or self.lateral <= 0.0 or self.spring_k <= 0.0:
            raise ValueError("slot_rot, lateral and spring_k must be positive")


@dataclass(frozen=True)
class InsertionOutcome:
    category: str
    residual_angle: float
    max_force: float
    halted: bool

    def __post_init__(self) -> None:
        if self.category not in _CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.category == HALTED_MISSED_ROTATION and not self.halted:
            raise ValueError("missed-rotation outcome must be halted")
        if self.max_force < 0.0 or self.residual_angle < 0.0:
            raise ValueError("max_force and residual_angle must be >= 0")

    def to_json(self) -> dict:
        return {
            "category": self.category,
            "residual_angle": self.residual_angle,
            "max_force": self.max_force,
            "halted": self.halted,
        }


def alignment_errors(tip_pose: Transform3D, port_pose: Transform3D) -> tuple[float, float, float]:
    """(alpha, rho, d) of a tip pose against the port, see module docstring.

    d is measured between the tip axis and the port origin in the face plane,
    so it is depth-independent along a straight insertion line.
    """
    rel = port_pose.inverse().compose(tip_pose)
    # right-multiply by the mate flip so a perfect mate reads as identity
    rm = rel.rotation.m @ MATE_FLIP
    zt = rm[:, 2]
    alpha = math.acos(min(1.0, max(-1.0, zt[2])))
    # slot error: mate-relative x projected into the face plane
    xt = rm[:, 0]
    rho = abs(math.atan2(xt[1], xt[0]))
    # intersect the tip axis with the z=0 face plane; fall back to the tip
    # point itself when the axis is parallel to the plane
    t = rel.translation
    if abs(zt[2]) > 1e-9:
        s = -t[2] / zt[2]
        hit = t + s * zt
    else:
        hit = t
    d = math.hypot(hit[0], hit[1])
    return alpha, rho, d


def categorize(alpha: float, rho: float, d: float, tol: InsertionTolerances) -> str:
    if rho <= tol.slot_rot and d <= tol.lateral:
        if alpha <= tol.axis_align:
            return FULL_INSERTION
        if alpha <= tol.partial_axis_max:
            return PARTIAL_MISALIGNMENT
    return HALTED_MISSED_ROTATION


def contact_force(
    tip_pose: Transform3D,
    port_pose: Transform3D,
    tol: InsertionTolerances,
) -> np.ndarray:
    """Force on the tip (world frame, N) at the given pose.

    Zero until the face plane is crossed.  A jamming plug sees the full
    spring k*overlap along the port normal; a partial-band plug sees a
    reduced lateral strain force that grows with the axis error beyond the
    clean-fit cone but stays far below halt thresholds.
    """
    alpha, rho, d = alignment_errors(tip_pose, port_pose)
    zp = port_pose.rotation.m[:, 2]
    overlap = -float(np.dot(tip_pose.translation - port_pose.translation, zp))
    if overlap <= 0.0:
        return np.zeros(3)
    cat = categorize(alpha, rho, d, tol)
    if cat == FULL_INSERTION:
        return np.zeros(3)
    if cat == PARTIAL_MISALIGNMENT:
        mag = tol.spring_k * overlap * math.sin(alpha - tol.axis_align)
        lat = tip_pose.rotation.m[:, 2] - np.dot(tip_pose.rotation.m[:, 2], zp) * zp
        n = np.linalg.norm(lat)
        direction = lat / n if n > 1e-12 else zp
        return mag * direction
    return tol.spring_k * overlap * zp  # jam: spring pushes back out


def simulate_insertion(
    tip_trajectory: list[Transform3D],
    port_pose: Transform3D,
    tol: InsertionTolerances,
    force_threshold: float = DEFAULT_FORCE_THRESHOLD,
) -> InsertionOutcome:
    """Run the contact model along a commanded tip trajectory.

    Categorization uses the final commanded pose (orientation and lateral
    placement are constant along a straight insertion, so this is the
    approach geometry); the force walk decides whether the motion halts
    before reaching it.
    """
    if not tip_trajectory:
        raise EmptyTrajectory("tip trajectory is empty")
    alpha, rho, d = alignment_errors(tip_trajectory[-1], port_pose)
    category = categorize(alpha, rho, d, tol)
    max_force = 0.0
    halted = False
    for pose in tip_trajectory:
        f = float(np.linalg.norm(contact_force(pose, port_pose, tol)))
        max_force = max(max_force, f)
        if f >= force_threshold:
            halted = True
            break
    if category == HALTED_MISSED_ROTATION and not halted:
        # trajectory stopped short of contact; the category still reflects
        # the commanded approach, so synthesize the halt the full motion
        # would have produced at the threshold crossing
        halted = True
        max_force = max(max_force, force_threshold)
    return InsertionOutcome(category, alpha, max_force, halted)
