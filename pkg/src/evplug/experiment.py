"""Simulated charging bay: canonical rig and frames, noise presets, the
marker-less calibration protocol and the end-to-end plug-in experiment.

World frame equals the robot base frame.  The port face sits 0.45 m in
front of the base at 0.5 m height, facing the stereo rig 0.7 m further
out along the same axis, so camera 1 views the face dead-on at the
nominal angle.  Positive port angles turn the face toward camera 2,
which itself looks at the port from about 14.4 degrees off-axis.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .detection import build_port_templates, detect_port
from .errors import EvplugError
from .geometry import CameraIntrinsics, Rotation3, Transform3D, project_pinhole
from .handeye import CalibrationResult, PosePair, apply_calibration, calibrate, reject_outliers
from .insertion import (
    FULL_INSERTION,
    HALTED_MISSED_ROTATION,
    PARTIAL_MISALIGNMENT,
    InsertionTolerances,
    simulate_insertion,
)
from .planner import PlanParams, execute, execute_waypoints, plan_plug_in, plan_unplug
from .pose import estimate_port_pose
from .ports import CirclePrimitive, LinePrimitive, PinSpec, PortModel, load_port_model
from .render import render_views
from .robot import load_ur10
from .scene import SceneConfig, StereoRig
from .triangulation import triangulate_port_points

CAMERA_F = 1400.0  # px
IMAGE_WIDTH = 1024
IMAGE_HEIGHT = 768
BASELINE = 0.18  # m
VERGENCE = 0.0  # rad; parallel axes keep the closed-form depth exact
PORT_DISTANCE = 0.7  # m, port face to camera 1 along the optical axis

PORT_POSITION = np.array([0.45, 0.0, 0.5])

# camera 1 axes in world coordinates: optical axis looks back along -x,
# image x runs along world +y, image y runs down (world -z)
_R_WORLD_CAM1 = np.array([
    [0.0, 0.0, -1.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])

# port face axes in world coordinates: outward normal +x (toward the rig),
# pattern x along world +y, pattern y straight up
_R_WORLD_PORT = np.array([
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
])

T_BASE_CAM_TRUE = Transform3D(
    Rotation3(_R_WORLD_CAM1), PORT_POSITION + np.array([PORT_DISTANCE, 0.0, 0.0])
)
T_FLANGE_TIP_TRUE = Transform3D(Rotation3.identity(), np.array([0.0, 0.0, 0.15]))

# canonical plug presentation for calibration: tool z toward the camera
_R_FACING_CAM = Rotation3(np.diag([1.0, -1.0, -1.0]))


def make_rig() -> StereoRig:
    intr = CameraIntrinsics(
        f=CAMERA_F, cx=IMAGE_WIDTH / 2, cy=IMAGE_HEIGHT / 2,
        width=IMAGE_WIDTH, height=IMAGE_HEIGHT,
    )
    return StereoRig(
        left=intr, right=intr, baseline=BASELINE, theta=VERGENCE,
        T_world_cam1=T_BASE_CAM_TRUE,
    )


def port_pose(angle_deg: float) -> Transform3D:
    """World pose of the port face turned angle_deg about its vertical axis."""
    rot = Rotation3(_R_WORLD_PORT).compose(Rotation3.rot_y(math.radians(angle_deg)))
    return Transform3D(rot, PORT_POSITION)


@dataclass(frozen=True)
class NoisePreset:
    name: str
    coord_sigma_px: float  # detection coordinate noise, both cameras
    holder_jitter_deg: float  # port-holder orientation scatter, per axis
    grey_sigma: float  # rendered pixel noise, grey levels


PRESETS = {
    "none": NoisePreset("none", 0.0, 0.0, 0.0),
    "lab": NoisePreset("lab", 0.5, 0.2, 2.0),
}


def noise_preset(name: str) -> NoisePreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown noise preset {name!r}; expected one of {sorted(PRESETS)}")


def plug_face_model(port: PortModel) -> PortModel:
    """Pin layout of the mating plug as a camera sees it face-on.

    Mating is a half turn about the slot axis, so a port pin at (x, y)
    has its plug counterpart at (-x, y) in the tool frame.
    """
    pins = tuple(
        PinSpec(p.label, np.array([-p.center[0], p.center[1], 0.0]), p.radius)
        for p in port.pins
    )
    outline = []
    for prim in port.outline:
        if isinstance(prim, CirclePrimitive):
            outline.append(
                CirclePrimitive(np.array([-prim.center[0], prim.center[1]]), prim.radius)
            )
        elif isinstance(prim, LinePrimitive):
            outline.append(
                LinePrimitive(
                    np.array([-prim.p0[0], prim.p0[1]]),
                    np.array([-prim.p1[0], prim.p1[1]]),
                )
            )
    return PortModel(
        kind=port.kind,
        pins=pins,
        outline=tuple(outline),
        slot_direction=port.slot_direction,
        face_radius=port.face_radius,
        insertion_depth=port.insertion_depth,
    )


def synthesize_calibration_pairs(
    port: PortModel,
    n_poses: int,
    noise_sigma_px: float,
    seed: int,
    rig: StereoRig | None = None,
) -> list[PosePair]:
    """Plug presentations in front of the rig with exact robot poses.

    The flange pose follows from the ground-truth transforms instead of a
    driven arm, so pair geometry is exact and pixel noise is the only error
    source.  The plug pose in the camera frame is recovered from its
    projected pin centers through triangulation and pose estimation, which
    propagates that noise the same way the live pipeline would.
    """
    if n_poses < 1:
        raise ValueError("n_poses must be at least 1")
    rig = make_rig() if rig is None else rig
    plug = plug_face_model(port)
    t_c1_c2 = rig.T_cam1_cam2().inverse()
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_poses):
        pos = np.array([
            rng.uniform(-0.15, 0.15),
            rng.uniform(-0.12, 0.12),
            PORT_DISTANCE + rng.uniform(-0.12, 0.12),
        ])
        axis = rng.normal(0.0, 1.0, 3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(math.radians(10.0), math.radians(30.0))
        rot = Rotation3.from_rotvec(angle * axis).compose(_R_FACING_CAM)
        t_cam_tip = Transform3D(rot, pos)

        pts1, pts2 = {}, {}
        for pin in plug.pins:
            p_c1 = t_cam_tip.apply(pin.center)
            x1, y1 = project_pinhole(rig.left, p_c1)
            x2, y2 = project_pinhole(rig.right, t_c1_c2.apply(p_c1))
            if noise_sigma_px > 0.0:
                x1, y1 = x1 + rng.normal(0.0, noise_sigma_px), y1 + rng.normal(0.0, noise_sigma_px)
                x2, y2 = x2 + rng.normal(0.0, noise_sigma_px), y2 + rng.normal(0.0, noise_sigma_px)
            pts1[pin.label] = (x1, y1)
            pts2[pin.label] = (x2, y2)
        measured = estimate_port_pose(triangulate_port_points(rig, pts1, pts2), plug)

        t_base_flange = T_BASE_CAM_TRUE.compose(t_cam_tip).compose(T_FLANGE_TIP_TRUE.inverse())
        pairs.append(PosePair(T_base_flange=t_base_flange, T_cam_tip=measured.pose, match_score=1.0))
    return pairs


def run_calibration(
    port: PortModel,
    n_poses: int = 26,
    noise_sigma_px: float = 0.0,
    seed: int = 0,
    rig: StereoRig | None = None,
) -> CalibrationResult:
    pairs = synthesize_calibration_pairs(port, n_poses, noise_sigma_px, seed, rig=rig)
    accepted, _ = reject_outliers(pairs)
    return calibrate(accepted)


CATEGORY_LABELS = {
    FULL_INSERTION: "Success",
    PARTIAL_MISALIGNMENT: "Success: Misalignment",
    HALTED_MISSED_ROTATION: "Failed: Missed rotation",
}


@dataclass(frozen=True)
class ExperimentConfig:
    port_type: str = "type2"
    port_angle_deg: float = 10.0
    runs: int = 10
    noise: str = "lab"
    seed: int = 0
    n_calibration_poses: int = 26
    force_threshold: float = 30.0
    contrast_threshold: float = 10.0
    min_match_score: float = 0.25

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items()}


def _run_once(
    index: int,
    cfg: ExperimentConfig,
    preset: NoisePreset,
    rig: StereoRig,
    port: PortModel,
    chain,
    templates,
    calib: CalibrationResult,
    tol: InsertionTolerances,
) -> dict:
    rng = np.random.default_rng([cfg.seed, 1000 + index])
    jitter = rng.normal(0.0, math.radians(preset.holder_jitter_deg), 3)
    true_port = Transform3D(
        port_pose(cfg.port_angle_deg).rotation.compose(Rotation3.from_rotvec(jitter)),
        PORT_POSITION,
    )
    scene = SceneConfig(
        port_pose=true_port,
        port=port,
        pixel_noise_sigma=preset.grey_sigma,
        rng_seed=int(rng.integers(0, 2**62)),
    )
    img1, img2 = render_views(scene, rig)
    detection = detect_port(
        img1, img2, rig, port, templates,
        min_score=cfg.min_match_score,
        coord_noise_sigma=preset.coord_sigma_px,
        rng=rng,
    )
    port_base_est = apply_calibration(calib, detection.estimate.pose)
    plan = plan_plug_in(port_base_est, calib, PlanParams(), chain=chain)
    log = execute(plan, chain, true_port, cfg.force_threshold, tol)
    tips = [s[2] for s in log.samples]
    outcome = simulate_insertion(tips, true_port, tol, cfg.force_threshold)

    unplug_ok = False
    try:
        waypoints = plan_unplug(log)
        _, achieved = execute_waypoints(chain, plan.tool, waypoints, log.samples[-1][1].q)
        gaps = [
            float(np.linalg.norm(a.translation - w.translation))
            for a, w in zip(achieved, waypoints)
        ]
        unplug_ok = max(gaps) <= 1e-6
    except EvplugError:
        pass

    return {
        "run": index,
        "port_angle_deg": float(cfg.port_angle_deg),
        "category": CATEGORY_LABELS[outcome.category],
        "residual_angle_deg": math.degrees(outcome.residual_angle),
        "max_force_n": float(outcome.max_force),
        "halted": bool(outcome.halted),
        "halt_reason": None if log.halt is None else str(log.halt[1]),
        "unplug_ok": bool(unplug_ok),
        "match_score": float(detection.score),
        "n_pins_used": len(detection.used_labels),
        "error": None,
    }


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Calibrate once, then render/detect/plan/execute cfg.runs times.

    Per-run failures are recorded in place of a category rather than
    aborting the batch.  The result is JSON-ready and fully determined by
    the config (runs are independently seeded off cfg.seed).
    """
    preset = noise_preset(cfg.noise)
    rig = make_rig()
    port = load_port_model(cfg.port_type)
    chain = load_ur10()
    calib = run_calibration(
        port, cfg.n_calibration_poses, preset.coord_sigma_px, seed=cfg.seed, rig=rig
    )
    templates = build_port_templates(
        SceneConfig(port_pose=port_pose(0.0), port=port), rig, cfg.contrast_threshold
    )
    tol = InsertionTolerances()
    records = []
    for i in range(cfg.runs):
        try:
            records.append(
                _run_once(i, cfg, preset, rig, port, chain, templates, calib, tol)
            )
        except EvplugError as exc:
            records.append({
                "run": i,
                "port_angle_deg": float(cfg.port_angle_deg),
                "category": None,
                "residual_angle_deg": None,
                "max_force_n": None,
                "halted": None,
                "halt_reason": None,
                "unplug_ok": None,
                "match_score": None,
                "n_pins_used": None,
                "error": f"{type(exc).__name__}: {exc}",
            })
    counts = {label: 0 for label in CATEGORY_LABELS.values()}
    errors = 0
    for r in records:
        if r["error"] is None:
            counts[r["category"]] += 1
        else:
            errors += 1
    succeeded = counts["Success"] + counts["Success: Misalignment"]
    return {
        "schema": "evplug-experiment-v1",
        "config": cfg.to_json(),
        "calibration": calib.to_json(),
        "summary": {
            **counts,
            "errors": errors,
            "runs": cfg.runs,
            "success_rate": succeeded / cfg.runs if cfg.runs else 0.0,
        },
        "runs": records,
    }
