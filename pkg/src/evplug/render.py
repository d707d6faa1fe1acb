"""Synthetic stereo views of a port face.

Rendering targets gradient quality rather than photorealism: dark features
(pins, outline ring, key mark) on a uniform bright background, 2x
supersampled coverage anti-aliasing, then optional Gaussian pixel noise.

Projected circles are rasterized exactly: the image of a circle lying in a
3D plane is a conic, obtained as C = H^-T Q H^-1 where H maps in-plane
homogeneous coordinates to pixel homogeneous coordinates and
Q = diag(1, 1, -r^2).  Interior pixels satisfy p^T C p < 0, which
evaluates in one vectorized pass per primitive bounding box.
"""
from __future__ import annotations

import math

import numpy as np

from .geometry import CameraIntrinsics, Transform3D
from .ports import CirclePrimitive, LinePrimitive
from .scene import PortOutOfView, SceneConfig, StereoRig

_SUPERSAMPLE = 2
_BG_LEVEL = 235.0
_FG_LEVEL = 45.0
_RING_HALF_WIDTH = 0.0008  # m, outline stroke half-width in the port plane
_LINE_HALF_WIDTH = 0.0008


def render_views(scene: SceneConfig, rig: StereoRig) -> tuple[np.ndarray, np.ndarray]:
    """Render both camera images; returns two uint8 arrays (h, w).

    The noise-free layer is fully determined by the geometry; rng_seed only
    drives the additive Gaussian noise layer.  Raises PortOutOfView when no
    primitive projects inside one of the images.
    """
    t_cam1_port = rig.T_world_cam1.inverse().compose(scene.port_pose)
    t_cam2_port = rig.T_cam1_cam2().inverse().compose(t_cam1_port)
    base1 = _render_camera(scene, rig.left, t_cam1_port)
    base2 = _render_camera(scene, rig.right, t_cam2_port)
    rng = np.random.default_rng(scene.rng_seed)
    return _finish(base1, scene, rng), _finish(base2, scene, rng)


def _finish(base: np.ndarray, scene: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    img = base
    if scene.pixel_noise_sigma > 0.0:
        img = img + rng.normal(0.0, scene.pixel_noise_sigma, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _render_camera(scene: SceneConfig, intr: CameraIntrinsics, t_cam_port: Transform3D) -> np.ndarray:
    s = scene.illumination_scale
    bg = _BG_LEVEL * s
    fg = _FG_LEVEL * s
    ss = _SUPERSAMPLE
    hs, ws = intr.height * ss, intr.width * ss
    coverage = np.zeros((hs, ws), dtype=bool)

    r = t_cam_port.rotation.m
    t = t_cam_port.translation
    u3, v3, origin = r[:, 0], r[:, 1], t  # port-plane basis in camera frame

    any_visible = False
    for prim in _primitives(scene.port):
        if isinstance(prim, _Disk):
            vis = _fill_conic(coverage, intr, u3, v3, origin, prim.center, prim.radius)
        elif isinstance(prim, _Ring):
            outer = _fill_conic(coverage, intr, u3, v3, origin, prim.center, prim.r_outer,
                                subtract_inner=prim.r_inner)
            vis = outer
        else:  # _Strip
            vis = _fill_strip(coverage, intr, u3, v3, origin, prim)
        any_visible = any_visible or vis
    if not any_visible:
        raise PortOutOfView("no port primitive projects inside the image")

    img_s = np.full((hs, ws), bg)
    img_s[coverage] = fg
    # box-average the supersampled grid down to sensor resolution
    return img_s.reshape(intr.height, ss, intr.width, ss).mean(axis=(1, 3))


class _Disk:
    __slots__ = ("center", "radius")

    def __init__(self, center, radius):
        self.center, self.radius = center, radius


class _Ring:
    __slots__ = ("center", "r_outer", "r_inner")

    def __init__(self, center, r_outer, r_inner):
        self.center, self.r_outer, self.r_inner = center, r_outer, r_inner


class _Strip:
    __slots__ = ("p0", "p1", "half_width")

    def __init__(self, p0, p1, half_width):
        self.p0, self.p1, self.half_width = p0, p1, half_width


def _primitives(port):
    for pin in port.pins:
        yield _Disk(pin.center[:2], pin.radius)
    for prim in port.outline:
        if isinstance(prim, CirclePrimitive):
            yield _Ring(prim.center, prim.radius + _RING_HALF_WIDTH,
                        prim.radius - _RING_HALF_WIDTH)
        elif isinstance(prim, LinePrimitive):
            yield _Strip(prim.p0, prim.p1, _LINE_HALF_WIDTH)


def _plane_homography(intr, u3, v3, origin, center2):
    """H mapping (s, t, 1) around a plane point to pixel homogeneous coords."""
    c3 = origin + center2[0] * u3 + center2[1] * v3
    m = np.column_stack([u3, v3, c3])
    k = np.diag([intr.f, intr.f, 1.0])
    h = k @ m
    if abs(np.linalg.det(h)) < 1e-18:
        return None, c3
    return h, c3


def _conic_matrix(h, radius):
    hinv = np.linalg.inv(h)
    q = np.diag([1.0, 1.0, -radius * radius])
    return hinv.T @ q @ hinv


def _boundary_points(u3, v3, c3, radius, samples=48):
    ang = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    return c3[None, :] + radius * (np.cos(ang)[:, None] * u3 + np.sin(ang)[:, None] * v3)


def _bbox_from_points(intr, pts3, margin_px, ss):
    """Supersample-grid bounding box of projected points, or None."""
    if np.any(pts3[:, 2] <= 1e-9):
        return None
    xs = intr.f * pts3[:, 0] / pts3[:, 2] + intr.cx
    ys = intr.f * pts3[:, 1] / pts3[:, 2] + intr.cy
    x0 = int(math.floor((xs.min() - margin_px + 0.5) * ss))
    x1 = int(math.ceil((xs.max() + margin_px + 0.5) * ss))
    y0 = int(math.floor((ys.min() - margin_px + 0.5) * ss))
    y1 = int(math.ceil((ys.max() + margin_px + 0.5) * ss))
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, intr.width * ss), min(y1, intr.height * ss)
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, x1, y0, y1


def _grid_pp(intr, box, ss):
    """Principal-point-relative coordinates of supersample centers in box."""
    x0, x1, y0, y1 = box
    xs = (np.arange(x0, x1) + 0.5) / ss - 0.5 - intr.cx
    ys = (np.arange(y0, y1) + 0.5) / ss - 0.5 - intr.cy
    return np.meshgrid(xs, ys)


def _conic_interior(conic, gx, gy):
    # sign convention fixed by construction: interior is negative
    return (
        conic[0, 0] * gx * gx + 2.0 * conic[0, 1] * gx * gy + conic[1, 1] * gy * gy
        + 2.0 * conic[0, 2] * gx + 2.0 * conic[1, 2] * gy + conic[2, 2]
    ) < 0.0


def _fill_conic(coverage, intr, u3, v3, origin, center2, radius, subtract_inner=None):
    ss = _SUPERSAMPLE
    h, c3 = _plane_homography(intr, u3, v3, origin, np.asarray(center2, dtype=float))
    if h is None:
        return False
    pts = _boundary_points(u3, v3, c3, radius)
    box = _bbox_from_points(intr, pts, 2.0, ss)
    if box is None:
        return False
    gx, gy = _grid_pp(intr, box, ss)
    inside = _conic_interior(_conic_matrix(h, radius), gx, gy)
    if subtract_inner is not None:
        inside &= ~_conic_interior(_conic_matrix(h, subtract_inner), gx, gy)
    x0, x1, y0, y1 = box
    coverage[y0:y1, x0:x1] |= inside
    return bool(inside.any())


def _fill_strip(coverage, intr, u3, v3, origin, strip):
    """Perspective-exact quad for a stroked in-plane segment."""
    ss = _SUPERSAMPLE
    d = strip.p1 - strip.p0
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        return False
    n2 = np.array([-d[1], d[0]]) / norm * strip.half_width
    corners2 = [strip.p0 + n2, strip.p1 + n2, strip.p1 - n2, strip.p0 - n2]
    corners3 = np.array([origin + c[0] * u3 + c[1] * v3 for c in corners2])
    box = _bbox_from_points(intr, corners3, 2.0, ss)
    if box is None:
        return False
    xs = intr.f * corners3[:, 0] / corners3[:, 2]
    ys = intr.f * corners3[:, 1] / corners3[:, 2]
    gx, gy = _grid_pp(intr, box, ss)
    inside = np.ones(gx.shape, dtype=bool)
    # convex quad: consistent half-plane test edge by edge
    area = 0.0
    for i in range(4):
        j = (i + 1) % 4
        area += xs[i] * ys[j] - xs[j] * ys[i]
    sign = 1.0 if area > 0 else -1.0
    for i in range(4):
        j = (i + 1) % 4
        ex, ey = xs[j] - xs[i], ys[j] - ys[i]
        inside &= sign * (ex * (gy - ys[i]) - ey * (gx - xs[i])) >= 0.0
    x0, x1, y0, y1 = box
    coverage[y0:y1, x0:x1] |= inside
    return bool(inside.any())
