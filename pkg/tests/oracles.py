"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written with different algebra or a more
direct (often slower) formulation than the code under test, so agreement
between the two is meaningful.
"""
from __future__ import annotations

import math

import numpy as np


def rodrigues_matrix(axis, angle: float) -> np.ndarray:
    """Rotation matrix via the cos/sin/outer-product form of Rodrigues."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    kx = np.array([
        [0.0, -k[2], k[1]],
        [k[2], 0.0, -k[0]],
        [-k[1], k[0], 0.0],
    ])
    return (
        math.cos(angle) * np.eye(3)
        + math.sin(angle) * kx
        + (1.0 - math.cos(angle)) * np.outer(k, k)
    )


def quat_multiply_matrix(axis, angle: float) -> np.ndarray:
    """Rotation matrix through a unit quaternion, a second independent route."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    w = math.cos(angle / 2.0)
    x, y, z = math.sin(angle / 2.0) * k
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def svd_plane_fit(points) -> tuple[float, float, float]:
    """Total-least-squares plane as (A, B, C) of z = A*x + B*y + C.

    Centroid plus smallest right singular vector; raises if the best-fit
    normal is perpendicular to z (the slope form cannot represent it).
    """
    pts = np.asarray(points, dtype=float)
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c)
    n = vt[-1]
    if abs(n[2]) < 1e-12:
        raise ValueError("plane is vertical; no z = f(x, y) form")
    a = -n[0] / n[2]
    b = -n[1] / n[2]
    return float(a), float(b), float(n @ c / n[2])


def lsq_plane_fit(points) -> tuple[float, float, float]:
    """Algebraic least squares for z = A*x + B*y + C via numpy lstsq."""
    pts = np.asarray(points, dtype=float)
    m = np.column_stack([pts[:, 0], pts[:, 1], np.ones(len(pts))])
    coef, *_ = np.linalg.lstsq(m, pts[:, 2], rcond=None)
    return float(coef[0]), float(coef[1]), float(coef[2])


def closest_ray_midpoint(o1, d1, o2, d2) -> np.ndarray:
    """Midpoint of the shortest segment between two rays, by normal equations.

    Minimizes |o1 + t*d1 - (o2 + s*d2)|^2 over (t, s) with a 2x2 solve,
    avoiding the cross-product formulation used by the package.
    """
    o1, d1 = np.asarray(o1, float), np.asarray(d1, float)
    o2, d2 = np.asarray(o2, float), np.asarray(d2, float)
    a = np.array([[d1 @ d1, -(d1 @ d2)], [d1 @ d2, -(d2 @ d2)]])
    rhs = np.array([(o2 - o1) @ d1, (o2 - o1) @ d2])
    t, s = np.linalg.solve(a, rhs)
    return 0.5 * ((o1 + t * d1) + (o2 + s * d2))


def finite_difference_jacobian(fk, q: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    """6x6 geometric Jacobian by central differences on a pose function.

    fk(q) must return an object with .translation (3,) and .rotation.m (3,3).
    Angular rows come from the rotation-vector of R+ R-^T over 2*eps.
    """

    def rotvec(m):
        cos_a = max(-1.0, min(1.0, (np.trace(m) - 1.0) / 2.0))
        angle = math.acos(cos_a)
        vee = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
        if angle < 1e-12:
            return 0.5 * vee
        return vee * (angle / (2.0 * math.sin(angle)))

    j = np.zeros((6, 6))
    for i in range(6):
        qp, qm = q.copy(), q.copy()
        qp[i] += eps
        qm[i] -= eps
        fp, fm = fk(qp), fk(qm)
        j[:3, i] = (fp.translation - fm.translation) / (2.0 * eps)
        j[3:, i] = rotvec(fp.rotation.m @ fm.rotation.m.T) / (2.0 * eps)
    return j


def sobel8_unit_gradients(image: np.ndarray, contrast_threshold: float):
    """(ex, ey) unit gradient fields, zero under the threshold; plain loops."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    p = np.pad(img, 1, mode="edge")
    ex = np.zeros((h, w))
    ey = np.zeros((h, w))
    for yy in range(h):
        for xx in range(w):
            win = p[yy:yy + 3, xx:xx + 3]
            gx = (
                (win[0, 2] - win[0, 0])
                + 2.0 * (win[1, 2] - win[1, 0])
                + (win[2, 2] - win[2, 0])
            ) / 8.0
            gy = (
                (win[2, 0] - win[0, 0])
                + 2.0 * (win[2, 1] - win[0, 1])
                + (win[2, 2] - win[0, 2])
            ) / 8.0
            mag = math.hypot(gx, gy)
            if mag >= contrast_threshold:
                ex[yy, xx] = gx / mag
                ey[yy, xx] = gy / mag
    return ex, ey


def match_score_reference(
    image: np.ndarray,
    points: np.ndarray,
    dirs: np.ndarray,
    tx: float,
    ty: float,
    angle: float,
    contrast_threshold: float,
) -> float:
    """Mean |cos| between rotated template directions and image gradients.

    Point positions are rotated, offset, and rounded to the nearest pixel;
    samples falling outside the image or below the contrast threshold
    contribute zero.
    """
    ex, ey = sobel8_unit_gradients(image, contrast_threshold)
    h, w = ex.shape
    c, s = math.cos(angle), math.sin(angle)
    total = 0.0
    for (px, py), (dx, dy) in zip(points, dirs):
        rx = c * px - s * py
        ry = s * px + c * py
        rdx = c * dx - s * dy
        rdy = s * dx + c * dy
        ix = int(np.rint(tx + rx))
        iy = int(np.rint(ty + ry))
        if 0 <= ix < w and 0 <= iy < h:
            total += abs(ex[iy, ix] * rdx + ey[iy, ix] * rdy)
    return total / len(points)


def pyramid_level_count(n_points: int, min_points: int = 20) -> int:
    """Levels produced by repeated [::4] decimation while the next level
    keeps at least min_points."""
    levels = 1
    n = n_points
    while (n + 3) // 4 >= min_points:
        n = (n + 3) // 4
        levels += 1
    return levels


def synthesize_handeye_pairs(rng: np.random.Generator, n: int, x, y, pair_cls):
    """Pose pairs consistent with A_i X = Y B_i for ground-truth X and Y.

    A_i rotations are drawn with distinct random axes so the motion set is
    well conditioned; translations are uniform in a 1 m cube.
    """
    from evplug.geometry import Rotation3, Transform3D

    pairs = []
    y_inv = y.inverse()
    for _ in range(n):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        ang = rng.uniform(0.3, 2.5)
        a = Transform3D(
            Rotation3.from_rotvec(ang * axis), rng.uniform(-0.5, 0.5, 3)
        )
        b = y_inv.compose(a).compose(x)
        pairs.append(pair_cls(T_base_flange=a, T_cam_tip=b, match_score=1.0))
    return pairs
