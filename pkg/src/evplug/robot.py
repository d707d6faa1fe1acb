"""Six-joint serial-arm kinematics and a velocity-command stepper.

Standard Denavit-Hartenberg convention: link i maps frame i-1 to frame i as
Rz(theta_i + offset) Tz(d_i) Tx(a_i) Rx(alpha_i).  The shipped asset holds
UR10 constants; everything here reads the chain from configuration so tests
and oracles share one source of numbers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import EvplugError
from .geometry import Rotation3, Transform3D
from .ports import AssetError, asset_path


class JointLimit(EvplugError):
    pass


class NoConvergence(EvplugError):
    pass


class Unreachable(EvplugError):
    pass


@dataclass(frozen=True)
class DHJoint:
    d: float
    a: float
    alpha: float
    theta_offset: float


@dataclass(frozen=True)
class DHChain:
    joints: tuple[DHJoint, ...]
    limits_lo: np.ndarray
    limits_hi: np.ndarray
    max_joint_speed: np.ndarray

    def __post_init__(self) -> None:
        if len(self.joints) != 6:
            raise ValueError("chain must have exactly 6 joints")
        for arr in (self.limits_lo, self.limits_hi, self.max_joint_speed):
            if np.asarray(arr).shape != (6,):
                raise ValueError("limit and speed vectors must have 6 entries")
        if np.any(self.limits_lo >= self.limits_hi):
            raise ValueError("joint limits need lo < hi")
        if np.any(self.max_joint_speed <= 0.0):
            raise ValueError("joint speeds must be positive")

    def check_limits(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (6,):
            raise ValueError("q must have 6 entries")
        if np.any(q < self.limits_lo - 1e-12) or np.any(q > self.limits_hi + 1e-12):
            raise JointLimit(f"joint vector {q.tolist()} violates limits")
        return q

    def reach(self) -> float:
        # conservative workspace sphere: no pose can place the flange
        # farther than the sum of all link offsets
        return float(sum(abs(j.a) + abs(j.d) for j in self.joints))


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qdot: np.ndarray
    t: float

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        qd = np.asarray(self.qdot, dtype=float)
        if q.shape != (6,) or qd.shape != (6,):
            raise ValueError("q and qdot must have 6 entries")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("joint state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qd)


def load_ur10() -> DHChain:
    path = asset_path("ur10_dh.json")
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("schema") != "evplug-dh-v1":
        raise AssetError(f"unsupported DH schema {obj.get('schema')!r}")
    joints = tuple(
        DHJoint(float(j["d"]), float(j["a"]), float(j["alpha"]), float(j["theta_offset"]))
        for j in obj["joints"]
    )
    return DHChain(
        joints,
        np.asarray(obj["limits_lo"], dtype=float),
        np.asarray(obj["limits_hi"], dtype=float),
        np.asarray(obj["max_joint_speed"], dtype=float),
    )


def link_transform(joint: DHJoint, theta: float) -> Transform3D:
    ct, st = math.cos(theta + joint.theta_offset), math.sin(theta + joint.theta_offset)
    ca, sa = math.cos(joint.alpha), math.sin(joint.alpha)
    m = np.array([
        [ct, -st * ca, st * sa],
        [st, ct * ca, -ct * sa],
        [0.0, sa, ca],
    ])
    t = np.array([joint.a * ct, joint.a * st, joint.d])
    return Transform3D(Rotation3(m), t)


def _raw_frames(chain: DHChain, q: np.ndarray) -> list:
    """Cumulative (R, p) pairs as plain arrays (limits checked).

    The DH product of validated joint rotations is orthonormal by
    construction, so the IK/Jacobian loops skip per-step revalidation."""
    q = chain.check_limits(q)
    r = np.eye(3)
    p = np.zeros(3)
    frames = []
    for joint, qi in zip(chain.joints, q):
        ct, st = math.cos(qi + joint.theta_offset), math.sin(qi + joint.theta_offset)
        ca, sa = math.cos(joint.alpha), math.sin(joint.alpha)
        m = np.array([
            [ct, -st * ca, st * sa],
            [st, ct * ca, -ct * sa],
            [0.0, sa, ca],
        ])
        t = np.array([joint.a * ct, joint.a * st, joint.d])
        p = r @ t + p
        r = r @ m
        frames.append((r, p))
    return frames


def joint_frames(chain: DHChain, q: np.ndarray) -> list[Transform3D]:
    """Cumulative base->frame_i transforms, i = 1..6 (limits checked)."""
    return [Transform3D(Rotation3._wrap(r), p) for r, p in _raw_frames(chain, q)]


def forward_kinematics(chain: DHChain, q: np.ndarray) -> Transform3D:
    r, p = _raw_frames(chain, q)[-1]
    return Transform3D(Rotation3._wrap(r), p)


def jacobian(chain: DHChain, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian at the flange, rows = (linear, angular)."""
    frames = _raw_frames(chain, q)
    pe = frames[-1][1]
    j = np.zeros((6, 6))
    z_prev = np.array([0.0, 0.0, 1.0])
    p_prev = np.zeros(3)
    for i in range(6):
        if i > 0:
            z_prev = frames[i - 1][0][:, 2]
            p_prev = frames[i - 1][1]
        j[:3, i] = np.cross(z_prev, pe - p_prev)
        j[3:, i] = z_prev
    return j


def is_singular(chain: DHChain, q: np.ndarray, cond_threshold: float = 1e6) -> bool:
    sv = np.linalg.svd(jacobian(chain, q), compute_uv=False)
    return bool(sv[-1] < sv[0] / cond_threshold)


def _pose_error(current: Transform3D, target: Transform3D) -> np.ndarray:
    et = target.translation - current.translation
    er = Rotation3._wrap(target.rotation.m @ current.rotation.m.T).as_rotvec()
    return np.concatenate([et, er])


def _dls_descent(chain, target, q0, tol, max_iters):
    """One damped-least-squares run; returns (q, err) at the stopping point."""
    q = q0.copy()
    lam = 0.01
    err = _pose_error(forward_kinematics(chain, q), target)
    prev_norm = None
    for _ in range(max_iters):
        if np.linalg.norm(err[:3]) < tol and np.linalg.norm(err[3:]) < tol:
            return q, err
        norm = float(np.linalg.norm(err))
        # a crawl far from the target will not recover; hand off to a restart
        if prev_norm is not None and norm > 1e3 * tol and prev_norm - norm < 1e-4 * prev_norm:
            break
        prev_norm = norm
        j = jacobian(chain, q)
        jtj = j.T @ j
        for _ in range(12):  # grow damping until the step reduces the error
            try:
                dq = np.linalg.solve(jtj + lam * lam * np.eye(6), j.T @ err)
            except np.linalg.LinAlgError:
                lam *= 2.0
                continue
            q_try = np.clip(q + dq, chain.limits_lo, chain.limits_hi)
            err_try = _pose_error(forward_kinematics(chain, q_try), target)
            if np.linalg.norm(err_try) < np.linalg.norm(err):
                q, err = q_try, err_try
                lam = max(lam * 0.5, 0.01)
                break
            lam *= 2.0
        else:
            break
    return q, err


def _restart_seeds(chain, seed: np.ndarray, target: Transform3D):
    """Deterministic fallback seeds for IK restarts.

    DLS from a fixed posture can stall on near-stretched targets, so retry
    from the target azimuth, a flipped wrist, and a few fixed perturbations.
    """
    yield seed
    azimuth = seed.copy()
    azimuth[0] = math.atan2(target.translation[1], target.translation[0])
    yield chain.check_limits(azimuth)
    flip = seed.copy()
    flip[3] += math.pi
    flip[4] = -flip[4]
    flip[5] += math.pi
    yield chain.check_limits(flip)
    both = azimuth.copy()
    both[3:] = flip[3:]
    yield chain.check_limits(both)
    rng = np.random.default_rng(0x1C0FFEE)
    for _ in range(8):
        yield chain.check_limits(seed + rng.uniform(-0.7, 0.7, 6))


def inverse_kinematics(
    chain: DHChain,
    target: Transform3D,
    seed: np.ndarray,
    tol: float = 1e-9,
    max_iters: int = 500,
) -> np.ndarray:
    """Damped least-squares IK; returns a limit-respecting q whose forward
    pose matches target within tol (meters and radians).

    The first descent starts from seed; if it stalls, a fixed sequence of
    restart postures is tried, so results stay reproducible."""
    if float(np.linalg.norm(target.translation)) > chain.reach():
        raise Unreachable("target lies outside the workspace sphere")
    seed = chain.check_limits(np.asarray(seed, dtype=float)).copy()
    best_err = None
    for q0 in _restart_seeds(chain, seed, target):
        q, err = _dls_descent(chain, target, q0, tol, max_iters)
        if np.linalg.norm(err[:3]) < tol and np.linalg.norm(err[3:]) < tol:
            return q
        if best_err is None or np.linalg.norm(err) < np.linalg.norm(best_err):
            best_err = err
    raise NoConvergence(
        f"IK stalled with {np.linalg.norm(best_err[:3]):.2e} m / "
        f"{np.linalg.norm(best_err[3:]):.2e} rad residual"
    )


def velocity_step(
    chain: DHChain,
    state: JointState,
    qdot_cmd: np.ndarray,
    dt: float,
    speed_fraction: float = 1.0,
) -> JointState:
    """Advance one control period with per-joint speed clamping.

    Piecewise-constant integration is exact, so endpoints do not depend on
    how an interval is subdivided.  Joint limits clamp position, not error.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if not 0.0 < speed_fraction <= 1.0:
        raise ValueError("speed_fraction must lie in (0, 1]")
    cap = speed_fraction * chain.max_joint_speed
    qdot = np.clip(np.asarray(qdot_cmd, dtype=float), -cap, cap)
    q = np.clip(state.q + qdot * dt, chain.limits_lo, chain.limits_hi)
    return JointState(q=q, qdot=qdot, t=state.t + dt)
