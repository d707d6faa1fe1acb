"""Stereo rig geometry and scene description for the simulator.

Camera 1 defines the rig frame.  Camera 2 sits at +baseline along camera 1's
X axis and is rotated by -theta about Y, so for theta > 0 the two optical
axes converge and cross at Z0 = baseline / tan(theta) on camera 1's axis;
theta = 0 is the parallel special case.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EvplugError
from .geometry import (
    CameraIntrinsics,
    Rotation3,
    Transform3D,
    as_vec3,
    project_pinhole,
)
from .ports import PortModel, load_port_model


class PortOutOfView(EvplugError):
    """No part of the port projects into one of the camera images."""


@dataclass(frozen=True)
class StereoRig:
    left: CameraIntrinsics
    right: CameraIntrinsics
    baseline: float
    theta: float
    T_world_cam1: Transform3D

    def __post_init__(self) -> None:
        if not (math.isfinite(self.baseline) and self.baseline > 0):
            raise ValueError(f"baseline must be positive, got {self.baseline}")
        if not (0.0 <= self.theta < math.pi / 2):
            raise ValueError(f"verge angle must be in [0, pi/2), got {self.theta}")

    def T_cam1_cam2(self) -> Transform3D:
        """Pose of camera 2 expressed in camera 1 coordinates."""
        return Transform3D(Rotation3.rot_y(-self.theta), np.array([self.baseline, 0.0, 0.0]))

    def to_json(self) -> dict:
        return {
            "left": self.left.to_json(),
            "right": self.right.to_json(),
            "baseline": float(self.baseline),
            "theta": float(self.theta),
            "T_world_cam1": self.T_world_cam1.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "StereoRig":
        return cls(
            left=CameraIntrinsics.from_json(d["left"]),
            right=CameraIntrinsics.from_json(d["right"]),
            baseline=float(d["baseline"]),
            theta=float(d["theta"]),
            T_world_cam1=Transform3D.from_json(d["T_world_cam1"]),
        )


def project_to_stereo(rig: StereoRig, p_world) -> tuple[tuple[float, float], tuple[float, float]]:
    """Project a world point into both cameras.

    Returns ((x1, y1), (x2, y2)) in principal-point-relative pixels.
    Raises BehindCamera if the point is not in front of both cameras.
    """
    p1 = rig.T_world_cam1.inverse().apply(as_vec3(p_world))
    p2 = rig.T_cam1_cam2().inverse().apply(p1)
    return project_pinhole(rig.left, p1), project_pinhole(rig.right, p2)


@dataclass(frozen=True)
class SceneConfig:
    """One simulated presentation of a port in front of the rig."""

    port_pose: Transform3D  # world frame
    port: PortModel
    pixel_noise_sigma: float = 0.0  # grey levels, Gaussian, per pixel
    illumination_scale: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.pixel_noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if not (0.0 <= self.illumination_scale <= 1.0):
            raise ValueError("illumination scale must lie in [0, 1]")
        if not (0 <= int(self.rng_seed) < 2 ** 64):
            raise ValueError("seed must be an unsigned 64-bit integer")

    def with_seed(self, seed: int) -> "SceneConfig":
        return replace(self, rng_seed=seed)

    def to_json(self) -> dict:
        return {
            "port_type": self.port.kind,
            "port_pose": self.port_pose.to_json(),
            "pixel_noise_sigma": float(self.pixel_noise_sigma),
            "illumination_scale": float(self.illumination_scale),
            "rng_seed": int(self.rng_seed),
        }

    @classmethod
    def from_json(cls, d: dict) -> "SceneConfig":
        return cls(
            port_pose=Transform3D.from_json(d["port_pose"]),
            port=load_port_model(d["port_type"]),
            pixel_noise_sigma=float(d.get("pixel_noise_sigma", 0.0)),
            illumination_scale=float(d.get("illumination_scale", 1.0)),
            rng_seed=int(d.get("rng_seed", 0)),
        )


def port_pin_pixels(scene: SceneConfig, rig: StereoRig) -> dict[str, tuple[tuple[float, float], tuple[float, float]]]:
    """Ground-truth stereo projections of every pin center, keyed by label."""
    out = {}
    for pin in scene.port.pins:
        p_world = scene.port_pose.apply(pin.center)
        out[pin.label] = project_to_stereo(rig, p_world)
    return out
