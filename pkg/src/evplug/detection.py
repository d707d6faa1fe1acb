"""Stereo port detection: template match, per-pin centroid refinement,
triangulation and pose recovery, run independently in both cameras.

Templates are built once from a noiseless render of a canonical scene, so
each camera's template bakes in its own perspective of the port face.  At
detection time a coarse template match anchors the pattern, predicted pin
locations are snapped onto the actual dark pins by an iterative grey-level
centroid, and the labeled stereo correspondences are triangulated into a
first pose.  Reprojecting the model through that pose and refining once
more removes the prediction bias the rigid template leaves behind at large
viewing angles.  Optional coordinate noise enters after the final
refinement, standing in for real-world detector jitter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EvplugError
from .geometry import BehindCamera, buffer_from_pp, pp_from_buffer, project_pinhole
from .matching import CircleRoi, Match2D, ShapeTemplate, create_template, match_template
from .pose import PortPoseEstimate, estimate_port_pose
from .ports import PortModel, CirclePrimitive, LinePrimitive
from .render import render_views
from .scene import SceneConfig, StereoRig, project_to_stereo
from .triangulation import triangulate_port_points

_ROI_MARGIN_PX = 6.0
_MIN_CONTRAST = 30.0  # grey levels across a centroid window
_FIRST_PASS_SLOP_PX = 6.0  # prediction error absorbed by the first window
_SECOND_PASS_SLOP_PX = 3.0


class DetectionFailed(EvplugError):
    pass


@dataclass(frozen=True)
class CameraTemplate:
    """Matching template for one camera plus the pin bookkeeping needed to
    turn a 2D match into labeled pin predictions."""

    template: ShapeTemplate
    pin_offsets: dict  # label -> (2,) px offset from the match center
    pin_radius_px: dict  # label -> projected pin radius in px
    z_ref: float  # camera-frame depth the offsets were measured at


@dataclass(frozen=True)
class DetectionResult:
    estimate: PortPoseEstimate
    match1: Match2D
    match2: Match2D
    used_labels: tuple
    score: float  # the weaker of the two camera match scores

    def to_json(self) -> dict:
        return {
            "schema": "evplug-detection-v1",
            "estimate": self.estimate.to_json(),
            "match1": self.match1.to_json(),
            "match2": self.match2.to_json(),
            "used_labels": list(self.used_labels),
            "score": self.score,
        }


def _face_boundary_points(port: PortModel) -> np.ndarray:
    """Port-frame sample points along everything the renderer draws."""
    pts = []
    circle_t = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
    for prim in port.outline:
        if isinstance(prim, CirclePrimitive):
            cx, cy = prim.center
            pts.append(
                np.stack(
                    [cx + prim.radius * np.cos(circle_t),
                     cy + prim.radius * np.sin(circle_t),
                     np.zeros_like(circle_t)],
                    axis=1,
                )
            )
        elif isinstance(prim, LinePrimitive):
            pts.append(np.array([[*prim.p0, 0.0], [*prim.p1, 0.0]]))
    for pin in port.pins:
        cx, cy = pin.center[:2]
        pts.append(
            np.stack(
                [cx + pin.radius * np.cos(circle_t),
                 cy + pin.radius * np.sin(circle_t),
                 np.zeros_like(circle_t)],
                axis=1,
            )
        )
    return np.concatenate(pts, axis=0)


def build_port_templates(
    scene: SceneConfig,
    rig: StereoRig,
    contrast_threshold: float = 10.0,
) -> tuple[CameraTemplate, CameraTemplate]:
    """Render the scene without noise and cut one template per camera.

    The ROI is centered on the projected port origin and sized to cover
    every drawn feature plus a small margin, so the template carries the
    full outline-plus-pins pattern.
    """
    clean = replace(scene, pixel_noise_sigma=0.0)
    img1, img2 = render_views(clean, rig)
    t_cam1 = rig.T_world_cam1.inverse()
    t_cam2 = rig.T_cam1_cam2().inverse()
    boundary = _face_boundary_points(scene.port)
    out = []
    for idx, (img, intr) in enumerate(((img1, rig.left), (img2, rig.right))):
        origin_pp = project_to_stereo(rig, scene.port_pose.apply(np.zeros(3)))[idx]
        cx, cy = buffer_from_pp(intr, *origin_pp)
        radius = 0.0
        for p in boundary:
            bx, by = buffer_from_pp(intr, *project_to_stereo(rig, scene.port_pose.apply(p))[idx])
            radius = max(radius, math.hypot(bx - cx, by - cy))
        roi = CircleRoi(cx, cy, radius + _ROI_MARGIN_PX)
        template = create_template(img, roi, contrast_threshold)
        offsets = {}
        radii = {}
        for pin in scene.port.pins:
            p_world = scene.port_pose.apply(pin.center)
            bx, by = buffer_from_pp(intr, *project_to_stereo(rig, p_world)[idx])
            offsets[pin.label] = np.array([bx - cx, by - cy])
            p_c1 = t_cam1.apply(p_world)
            z = p_c1[2] if idx == 0 else t_cam2.apply(p_c1)[2]
            radii[pin.label] = pin.radius * intr.f / z
        origin_c1 = t_cam1.apply(scene.port_pose.apply(np.zeros(3)))
        z_ref = origin_c1[2] if idx == 0 else t_cam2.apply(origin_c1)[2]
        out.append(CameraTemplate(template, offsets, radii, float(z_ref)))
    return out[0], out[1]


def refine_pin_centroid(
    image: np.ndarray,
    x: float,
    y: float,
    win_radius: int,
    iterations: int = 3,
) -> tuple[float, float] | None:
    """Grey-level centroid of a dark blob near (x, y), buffer coordinates.

    Each iteration recenters the window on the previous estimate, so an
    initial guess a few pixels off still converges onto the pin.  Pixels
    darker than the window mid-level vote with weight proportional to how
    far below it they sit; returns None when the window shows no contrast
    (no pin there) or falls outside the image.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    for _ in range(iterations):
        ix, iy = int(round(x)), int(round(y))
        x0, x1 = max(0, ix - win_radius), min(w, ix + win_radius + 1)
        y0, y1 = max(0, iy - win_radius), min(h, iy + win_radius + 1)
        if x0 >= x1 or y0 >= y1:
            return None
        win = img[y0:y1, x0:x1]
        lo, hi = float(win.min()), float(win.max())
        if hi - lo < _MIN_CONTRAST:
            return None
        weight = np.clip(0.5 * (lo + hi) - win, 0.0, None)
        total = float(weight.sum())
        if total <= 0.0:
            return None
        xs = np.arange(x0, x1, dtype=float)
        ys = np.arange(y0, y1, dtype=float)
        x = float((weight.sum(axis=0) * xs).sum() / total)
        y = float((weight.sum(axis=1) * ys).sum() / total)
    return x, y


def _refine_set(image, guesses: dict, radii: dict, slop: float) -> dict:
    refined = {}
    for label, (gx, gy) in guesses.items():
        win = max(3, int(round(radii[label] + slop)))
        hit = refine_pin_centroid(image, gx, gy, win)
        if hit is not None:
            refined[label] = hit
    return refined


def detect_port(
    img1: np.ndarray,
    img2: np.ndarray,
    rig: StereoRig,
    port: PortModel,
    templates: tuple[CameraTemplate, CameraTemplate],
    angle_range: tuple[float, float] = (-math.radians(15.0), math.radians(15.0)),
    angle_step: float = math.radians(1.0),
    min_score: float = 0.25,
    method: str = "eq1",
    coord_noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> DetectionResult:
    """Locate the port in a stereo pair and estimate its 6-DOF pose.

    The returned pose is expressed in the camera-1 frame.  Raises
    DetectionFailed when either camera yields no match above min_score or
    fewer than three pins survive refinement in both cameras.
    """
    matches = []
    for idx, (img, tmpl) in enumerate(((img1, templates[0]), (img2, templates[1]))):
        found = match_template(
            img, tmpl.template, angle_range=angle_range, angle_step=angle_step,
            min_score=min_score, max_matches=1,
        )
        if not found:
            raise DetectionFailed(f"no match above {min_score} in camera {idx + 1}")
        matches.append(found[0])

    # first pass: pins where the rigid template predicts them
    refined = []
    for (img, tmpl), m in zip(((img1, templates[0]), (img2, templates[1])), matches):
        c, s = math.cos(m.angle), math.sin(m.angle)
        rot = np.array([[c, -s], [s, c]])
        guesses = {
            label: np.array([m.tx, m.ty]) + rot @ off
            for label, off in tmpl.pin_offsets.items()
        }
        refined.append(_refine_set(img, guesses, tmpl.pin_radius_px, _FIRST_PASS_SLOP_PX))
    labels = sorted(set(refined[0]) & set(refined[1]))
    if len(labels) < 3:
        raise DetectionFailed(f"only {len(labels)} pins refined in both cameras")

    pts1 = {k: pp_from_buffer(rig.left, *refined[0][k]) for k in labels}
    pts2 = {k: pp_from_buffer(rig.right, *refined[1][k]) for k in labels}
    first = estimate_port_pose(triangulate_port_points(rig, pts1, pts2, method=method), port)

    # second pass: reproject the model through the first pose, refine again
    t_cam2 = rig.T_cam1_cam2().inverse()
    guesses1, guesses2 = {}, {}
    for pin in port.pins:
        p_c1 = first.pose.apply(pin.center)
        try:
            pp1 = project_pinhole(rig.left, p_c1)
            pp2 = project_pinhole(rig.right, t_cam2.apply(p_c1))
        except BehindCamera:
            continue
        guesses1[pin.label] = np.array(buffer_from_pp(rig.left, *pp1))
        guesses2[pin.label] = np.array(buffer_from_pp(rig.right, *pp2))
    final1 = _refine_set(img1, guesses1, templates[0].pin_radius_px, _SECOND_PASS_SLOP_PX)
    final2 = _refine_set(img2, guesses2, templates[1].pin_radius_px, _SECOND_PASS_SLOP_PX)
    labels = sorted(set(final1) & set(final2))
    if len(labels) < 3:
        raise DetectionFailed(f"only {len(labels)} pins survived reprojection refinement")

    pts1 = {k: np.array(pp_from_buffer(rig.left, *final1[k])) for k in labels}
    pts2 = {k: np.array(pp_from_buffer(rig.right, *final2[k])) for k in labels}
    if coord_noise_sigma > 0.0:
        rng = np.random.default_rng(0) if rng is None else rng
        for pts in (pts1, pts2):
            for k in labels:
                pts[k] = pts[k] + rng.normal(0.0, coord_noise_sigma, 2)
    pts1 = {k: tuple(v) for k, v in pts1.items()}
    pts2 = {k: tuple(v) for k, v in pts2.items()}
    estimate = estimate_port_pose(triangulate_port_points(rig, pts1, pts2, method=method), port)
    return DetectionResult(
        estimate=estimate,
        match1=matches[0],
        match2=matches[1],
        used_labels=tuple(labels),
        score=min(matches[0].score, matches[1].score),
    )
