"""Gradient-orientation shape-based template matching.

A template is a sparse set of edge points with unit gradient directions,
taken from a circular region of a model image.  Matching scores a candidate
placement (translation, rotation, optional uniform scale) as the mean
absolute cosine between the rotated template directions and the unit image
gradient at the displaced point locations:

    score(t, phi) = (1/n) * sum_i |<rot(d_i, phi), e(t + rot(p_i, phi))>|

where e is the unit image gradient, zero below the contrast threshold or
outside the image.  The absolute value makes the score invariant to global
contrast polarity; direction normalization makes it invariant to
illumination scaling as long as edges stay above the contrast threshold.

Search is coarse-to-fine over a point-decimation pyramid.  Coarse levels
rank candidates on box-blurred double-angle orientation fields (blurring
(cos 2a, sin 2a) instead of the raw gradient keeps antiparallel edge pairs,
e.g. the two sides of a thin stroke, from cancelling); reported scores are
always evaluated with the exact base-level formula.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EvplugError

_EPS = 1e-12
_MIN_POINTS = 20


class ImageTooSmall(EvplugError):
    pass


class InsufficientStructure(EvplugError):
    pass


@dataclass(frozen=True)
class CircleRoi:
    """Circular region of interest, pixel coordinates (x right, y down)."""

    cx: float
    cy: float
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError("roi radius must be positive")

    def to_json(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "radius": self.radius}

    @classmethod
    def from_json(cls, obj: dict) -> "CircleRoi":
        return cls(float(obj["cx"]), float(obj["cy"]), float(obj["radius"]))


@dataclass(frozen=True)
class GradientMap:
    """Sobel gradients plus contrast mask and the masked unit field."""

    gx: np.ndarray
    gy: np.ndarray
    mask: np.ndarray
    contrast_threshold: float
    ex: np.ndarray
    ey: np.ndarray


def gradient_map(image: np.ndarray, contrast_threshold: float) -> GradientMap:
    """3x3 Sobel gradients scaled so axis-aligned ramps match the central
    difference; mask keeps pixels at or above contrast_threshold."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise ImageTooSmall(f"need at least 3x3 pixels, got {img.shape}")
    if contrast_threshold <= 0.0:
        raise ValueError("contrast_threshold must be positive")
    p = np.pad(img, 1, mode="edge")
    # Sobel/8: smoothing taps (1,2,1)/4 across, central difference along
    gx = (
        (p[:-2, 2:] - p[:-2, :-2])
        + 2.0 * (p[1:-1, 2:] - p[1:-1, :-2])
        + (p[2:, 2:] - p[2:, :-2])
    ) / 8.0
    gy = (
        (p[2:, :-2] - p[:-2, :-2])
        + 2.0 * (p[2:, 1:-1] - p[:-2, 1:-1])
        + (p[2:, 2:] - p[:-2, 2:])
    ) / 8.0
    mag = np.hypot(gx, gy)
    mask = mag >= contrast_threshold
    inv = np.where(mask, 1.0 / np.maximum(mag, _EPS), 0.0)
    return GradientMap(gx, gy, mask, contrast_threshold, gx * inv, gy * inv)


def _pyramid(points: np.ndarray, dirs: np.ndarray):
    levels = [(points, dirs)]
    while (len(levels[-1][0]) + 3) // 4 >= _MIN_POINTS:
        p, d = levels[-1]
        levels.append((p[::4], d[::4]))
    return tuple(levels)


@dataclass(frozen=True)
class ShapeTemplate:
    points: np.ndarray  # (n, 2) px offsets from the roi center
    dirs: np.ndarray  # (n, 2) unit gradient directions
    source_roi: CircleRoi
    contrast_threshold: float
    levels: tuple = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if len(self.points) < _MIN_POINTS:
            raise InsufficientStructure(
                f"template needs >= {_MIN_POINTS} points, got {len(self.points)}"
            )
        norms = np.linalg.norm(self.dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("template directions must be unit vectors")
        if self.levels is None:
            object.__setattr__(self, "levels", _pyramid(self.points, self.dirs))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def to_json(self) -> dict:
        return {
            "schema": "evplug-template-v1",
            "contrast_threshold": self.contrast_threshold,
            "roi": self.source_roi.to_json(),
            "points": [[float(x), float(y)] for x, y in self.points],
            "dirs": [[float(x), float(y)] for x, y in self.dirs],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ShapeTemplate":
        if obj.get("schema") != "evplug-template-v1":
            raise ValueError(f"unsupported template schema {obj.get('schema')!r}")
        return cls(
            np.asarray(obj["points"], dtype=float),
            np.asarray(obj["dirs"], dtype=float),
            CircleRoi.from_json(obj["roi"]),
            float(obj["contrast_threshold"]),
        )


@dataclass(frozen=True)
class Match2D:
    tx: float
    ty: float
    angle: float
    score: float
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")

    def to_json(self) -> dict:
        return {
            "tx": self.tx,
            "ty": self.ty,
            "angle": self.angle,
            "score": self.score,
            "scale": self.scale,
        }


def create_template(
    model_image: np.ndarray, roi: CircleRoi, contrast_threshold: float
) -> ShapeTemplate:
    grad = gradient_map(model_image, contrast_threshold)
    h, w = grad.gx.shape
    if not (0.0 <= roi.cx - roi.radius and roi.cx + roi.radius <= w - 1
            and 0.0 <= roi.cy - roi.radius and roi.cy + roi.radius <= h - 1):
        raise ValueError("roi extends outside the model image")
    ys, xs = np.nonzero(grad.mask)
    inside = (xs - roi.cx) ** 2 + (ys - roi.cy) ** 2 <= roi.radius**2
    ys, xs = ys[inside], xs[inside]
    if len(xs) < _MIN_POINTS:
        raise InsufficientStructure(
            f"roi contains {len(xs)} edge points, need >= {_MIN_POINTS}"
        )
    points = np.column_stack([xs - roi.cx, ys - roi.cy]).astype(float)
    dirs = np.column_stack([grad.ex[ys, xs], grad.ey[ys, xs]])
    return ShapeTemplate(points, dirs, roi, contrast_threshold)


# ---------------------------------------------------------------------------
# matching internals


def _rot2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _box_mean(a: np.ndarray, radius: int) -> np.ndarray:
    """Box average with window (2r+1)^2; borders use the constant divisor."""
    out = a
    for axis in (0, 1):
        n = out.shape[axis]
        s = np.cumsum(out, axis=axis)
        zero = np.zeros_like(np.take(s, [0], axis=axis))
        s = np.concatenate([zero, s], axis=axis)
        hi = np.minimum(np.arange(n) + radius, n - 1) + 1
        lo = np.maximum(np.arange(n) - radius, 0)
        out = np.take(s, hi, axis=axis) - np.take(s, lo, axis=axis)
    return out / float((2 * radius + 1) ** 2)


def _coarse_field(grad: GradientMap, level: int):
    """Blurred double-angle orientation field (ux, uy, valid) for one level."""
    radius = 2**level
    mag = np.hypot(grad.gx, grad.gy)
    safe = np.maximum(mag, _EPS)
    hx = np.where(grad.mask, (grad.gx * grad.gx - grad.gy * grad.gy) / safe, 0.0)
    hy = np.where(grad.mask, 2.0 * grad.gx * grad.gy / safe, 0.0)
    bx = _box_mean(hx, radius)
    by = _box_mean(hy, radius)
    bm = np.hypot(bx, by)
    valid = bm >= grad.contrast_threshold / (2.0 ** (level + 1) + 1.0)
    inv = np.where(valid, 1.0 / np.maximum(bm, _EPS), 0.0)
    return bx * inv, by * inv, valid.astype(float)


def _pad_fields(fields, pad):
    return tuple(np.pad(f, pad, mode="constant") for f in fields)


def _rotated(tmpl_level, angle: float, scale: float):
    pts, dirs = tmpl_level
    r = _rot2(angle)
    return scale * (pts @ r.T), dirs @ r.T


def _sweep_level(padded, pad, shape, stride, pts, dirs, exact: bool) -> np.ndarray:
    """Score map over the stride grid; one shifted strided view per point."""
    h, w = shape
    ny = (h + stride - 1) // stride
    nx = (w + stride - 1) // stride
    acc = np.zeros((ny, nx))
    fx, fy = padded[0], padded[1]
    vf = None if exact else padded[2]
    for k in range(len(pts)):
        rx, ry = int(round(pts[k, 0])), int(round(pts[k, 1]))
        dx, dy = dirs[k, 0], dirs[k, 1]
        ys = slice(pad + ry, pad + ry + (ny - 1) * stride + 1, stride)
        xs = slice(pad + rx, pad + rx + (nx - 1) * stride + 1, stride)
        if exact:
            acc += np.abs(fx[ys, xs] * dx + fy[ys, xs] * dy)
        else:
            d2x, d2y = dx * dx - dy * dy, 2.0 * dx * dy
            dot = fx[ys, xs] * d2x + fy[ys, xs] * d2y
            acc += vf[ys, xs] * np.sqrt(np.clip(1.0 + dot, 0.0, 2.0) * 0.5)
    return acc / len(pts)


def _eval_candidates(fields, shape, pts, dirs, cands, exact: bool) -> np.ndarray:
    """Scores for candidate placements; cands is (m, 4) of tx, ty, angle, scale."""
    h, w = shape
    m = len(cands)
    n = len(pts)
    ang = cands[:, 2]
    c, s = np.cos(ang), np.sin(ang)
    sc = cands[:, 3]
    # rotated, scaled template points per candidate: (m, n)
    px = sc[:, None] * (c[:, None] * pts[:, 0] - s[:, None] * pts[:, 1])
    py = sc[:, None] * (s[:, None] * pts[:, 0] + c[:, None] * pts[:, 1])
    dx = c[:, None] * dirs[:, 0] - s[:, None] * dirs[:, 1]
    dy = s[:, None] * dirs[:, 0] + c[:, None] * dirs[:, 1]
    ix = np.rint(cands[:, 0, None] + px).astype(int)
    iy = np.rint(cands[:, 1, None] + py).astype(int)
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    ixc, iyc = np.clip(ix, 0, w - 1), np.clip(iy, 0, h - 1)
    fx = np.where(ok, fields[0][iyc, ixc], 0.0)
    fy = np.where(ok, fields[1][iyc, ixc], 0.0)
    if exact:
        contrib = np.abs(fx * dx + fy * dy)
    else:
        vf = np.where(ok, fields[2][iyc, ixc], 0.0)
        d2x, d2y = dx * dx - dy * dy, 2.0 * dx * dy
        contrib = vf * np.sqrt(np.clip(1.0 + fx * d2x + fy * d2y, 0.0, 2.0) * 0.5)
    return contrib.sum(axis=1) / n if m else np.zeros(0)


def _nms(entries, radius: float):
    """Greedy suppression of lower-scoring entries within radius; entries are
    (score, tx, ty, angle, scale) tuples, returned best-first with ties broken
    by (tx, ty, angle) so ordering never depends on evaluation order."""
    order = sorted(entries, key=lambda e: (-e[0], e[1], e[2], e[3]))
    kept: list = []
    r2 = radius * radius
    for e in order:
        if all((e[1] - k[1]) ** 2 + (e[2] - k[2]) ** 2 > r2 for k in kept):
            kept.append(e)
    return kept


def _quad_peak(sm: float, s0: float, sp: float) -> float:
    den = sm - 2.0 * s0 + sp
    if abs(den) < _EPS:
        return 0.0
    return max(-1.0, min(1.0, 0.5 * (sm - sp) / den))


def match_template(
    image: np.ndarray,
    tmpl: ShapeTemplate,
    angle_range: tuple[float, float] = (-math.pi, math.pi),
    angle_step: float = math.radians(1.0),
    min_score: float = 0.7,
    max_matches: int = 5,
    scales: tuple[float, ...] = (1.0,),
) -> list[Match2D]:
    """Find template instances; see module docstring for the score metric.

    angle_step is the base-level sampling step (coarser levels use
    angle_step * 2^level); the returned angle is refined below the step by
    quadratic interpolation.  Matches below min_score are dropped, the rest
    are non-maximum-suppressed within the template radius and the best
    max_matches are returned sorted by descending score.
    """
    if not 0.0 < min_score <= 1.0:
        raise ValueError("min_score must lie in (0, 1]")
    if angle_step <= 0.0 or max_matches < 1:
        raise ValueError("angle_step must be positive and max_matches >= 1")
    lo, hi = float(angle_range[0]), float(angle_range[1])
    if hi < lo:
        raise ValueError("empty angle range")
    grad = gradient_map(image, tmpl.contrast_threshold)
    shape = grad.gx.shape
    h, w = shape

    top = tmpl.n_levels - 1
    extent = float(np.max(np.abs(tmpl.points))) if len(tmpl.points) else 1.0
    pad = int(math.ceil(extent * max(scales))) + 2 ** max(top, 0) + 2

    exact_fields = (grad.ex, grad.ey)
    level_fields: dict[int, tuple] = {0: exact_fields}
    for k in range(1, top + 1):
        level_fields[k] = _coarse_field(grad, k)
    padded_top = _pad_fields(level_fields[top], pad)

    stride = 2**top
    step_top = angle_step * (2**top)
    n_angles = max(1, int(math.floor((hi - lo) / step_top + 1e-9)) + 1)
    angles = [lo + i * step_top for i in range(n_angles)]
    if angles[-1] < hi - 1e-12:
        angles.append(hi)

    keep = max(16, 4 * max_matches)
    pool: list = []
    for scale in scales:
        for ang in angles:
            pts, dirs = _rotated(tmpl.levels[top], ang, scale)
            smap = _sweep_level(padded_top, pad, shape, stride, pts, dirs, top == 0)
            flat = smap.ravel()
            take = min(keep * 3, flat.size)
            idx = np.argpartition(flat, -take)[-take:]
            for j in sorted(idx.tolist()):
                sc = float(flat[j])
                if sc < 0.2 * min_score:
                    continue
                ty, tx = divmod(j, smap.shape[1])
                pool.append((sc, float(tx * stride), float(ty * stride), ang, scale))
    cands = _nms(pool, tmpl.source_roi.radius)[:keep]
    if not cands:
        return []

    # descend: re-localize each surviving candidate at every finer level
    for k in range(top - 1, -1, -1):
        sk = 2**k
        astep = angle_step * sk
        fields = level_fields[k]
        pts, dirs = tmpl.levels[k]
        refined = []
        for _, tx, ty, ang, scale in cands:
            offs = (-sk, 0, sk)
            trial = []
            for da in (-astep, 0.0, astep):
                a = min(max(ang + da, lo), hi)
                for oy in offs:
                    for ox in offs:
                        trial.append((tx + ox, ty + oy, a, scale))
            arr = np.array(trial)
            scores = _eval_candidates(fields, shape, pts, dirs, arr, k == 0)
            order = np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0], -scores))
            best = order[0]
            refined.append((float(scores[best]), *[float(v) for v in arr[best]][:3], scale))
        cands = _nms(refined, tmpl.source_roi.radius)[:keep]

    # hill-climb at base level, then subpixel/subangle interpolation
    pts0, dirs0 = tmpl.levels[0]
    results = []
    for score, tx, ty, ang, scale in cands:
        for _ in range(8):
            trial = [(tx + ox, ty + oy, ang, scale)
                     for oy in (-1, 0, 1) for ox in (-1, 0, 1)]
            arr = np.array(trial)
            scores = _eval_candidates(exact_fields, shape, pts0, dirs0, arr, True)
            order = np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0], -scores))
            b = order[0]
            bx, by, bs = float(arr[b, 0]), float(arr[b, 1]), float(scores[b])
            if bx == tx and by == ty:
                score = bs
                break
            tx, ty, score = bx, by, bs
        probes = np.array([
            (tx - 1, ty, ang, scale), (tx, ty, ang, scale), (tx + 1, ty, ang, scale),
            (tx, ty - 1, ang, scale), (tx, ty + 1, ang, scale),
            (tx, ty, max(ang - angle_step, lo), scale),
            (tx, ty, min(ang + angle_step, hi), scale),
        ])
        ps = _eval_candidates(exact_fields, shape, pts0, dirs0, probes, True)
        s0 = float(ps[1])
        dx = _quad_peak(float(ps[0]), s0, float(ps[2]))
        dy = _quad_peak(float(ps[3]), s0, float(ps[4]))
        da = _quad_peak(float(ps[5]), s0, float(ps[6])) * angle_step
        fx, fy = tx + dx, ty + dy
        fa = min(max(ang + da, lo), hi)
        fscore = float(_eval_candidates(
            exact_fields, shape, pts0, dirs0,
            np.array([(fx, fy, fa, scale)]), True)[0])
        if fscore < s0:  # interpolation overshoot: keep the integer peak
            fx, fy, fa, fscore = tx, ty, ang, s0
        results.append((min(fscore, 1.0), fx, fy, fa, scale))

    final = [e for e in _nms(results, tmpl.source_roi.radius) if e[0] >= min_score]
    return [
        Match2D(tx=e[1], ty=e[2], angle=e[3], score=e[0], scale=e[4])
        for e in final[:max_matches]
    ]
