"""Three-stage plug-in planning, force-monitored execution, waypoint-replay
unplugging, and a joint-space RRT-connect for obstructed transit moves.

The plug-in itself is straight-line Cartesian tracking (Approach at full
speed to a pre-pose on the port axis, Align at 10% to a few millimeters
from contact, Insert at 2% to full depth); RRT-connect only serves
standby<->approach transit where obstacles may sit in the way.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EvplugError
from .geometry import Rotation3, Transform3D
from .handeye import CalibrationResult
from .insertion import InsertionTolerances, contact_force
from .robot import (
    DHChain,
    JointState,
    NoConvergence,
    Unreachable,
    _raw_frames,
    forward_kinematics,
    inverse_kinematics,
    joint_frames,
)

CONTROL_DT = 0.008  # s, 125 Hz command period
_LINK_RADIUS = 0.08  # m, planner point-sphere radius
SEGMENT_LABELS = ("Approach", "Align", "Insert")

# generic elbow-up configuration; IK needs a seed away from the stretched
# singularity at q = 0
HOME_Q = np.array([0.0, -1.2, 1.8, -2.2, -1.5707963267948966, 0.0])


class EmptyLog(EvplugError):
    pass


class IkFailureDuringTracking(EvplugError):
    pass


class StartInCollision(EvplugError):
    pass


class GoalInCollision(EvplugError):
    pass


class Timeout(EvplugError):
    pass


@dataclass(frozen=True)
class PlanParams:
    approach_offset: float = 0.1
    standoff: float = 0.005
    insertion_depth: float = 0.025
    standby_retreat: float = 0.25
    approach_speed: float = 1.0
    align_speed: float = 0.1
    insert_speed: float = 0.02

    def __post_init__(self) -> None:
        for name in ("approach_offset", "standoff", "insertion_depth", "standby_retreat"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("approach_speed", "align_speed", "insert_speed"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")


@dataclass(frozen=True)
class PlanSegment:
    target_tip_pose: Transform3D
    speed_fraction: float
    label: str

    def to_json(self) -> dict:
        return {
            "target_tip_pose": self.target_tip_pose.to_json(),
            "speed_fraction": self.speed_fraction,
            "label": self.label,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PlanSegment":
        return cls(
            Transform3D.from_json(obj["target_tip_pose"]),
            float(obj["speed_fraction"]),
            str(obj["label"]),
        )


@dataclass(frozen=True)
class PlugInPlan:
    segments: tuple[PlanSegment, ...]
    standby_pose: Transform3D
    tool: Transform3D  # flange -> tip, needed to turn tip targets into flange targets

    def __post_init__(self) -> None:
        labels = tuple(s.label for s in self.segments)
        if labels != SEGMENT_LABELS:
            raise ValueError(f"segments must be {SEGMENT_LABELS} in order, got {labels}")
        for s in self.segments:
            if not 0.0 < s.speed_fraction <= 1.0:
                raise ValueError("speed fractions must lie in (0, 1]")

    def to_json(self) -> dict:
        return {
            "schema": "evplug-plan-v1",
            "segments": [s.to_json() for s in self.segments],
            "standby_pose": self.standby_pose.to_json(),
            "tool": self.tool.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PlugInPlan":
        if obj.get("schema") != "evplug-plan-v1":
            raise ValueError(f"unsupported plan schema {obj.get('schema')!r}")
        return cls(
            tuple(PlanSegment.from_json(s) for s in obj["segments"]),
            Transform3D.from_json(obj["standby_pose"]),
            Transform3D.from_json(obj["tool"]),
        )


@dataclass
class ExecutionLog:
    samples: list = field(default_factory=list)  # (t, JointState, tip_pose, force)
    waypoints_reached: list = field(default_factory=list)
    halt: tuple | None = None  # (t, reason)
    standby_pose: Transform3D | None = None
    force_threshold: float = math.inf

    def validate(self) -> None:
        times = [s[0] for s in self.samples]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("sample timestamps must increase strictly")
        if self.halt is not None and self.samples:
            last_force = float(np.linalg.norm(self.samples[-1][3]))
            if self.halt[1] == "force_threshold" and last_force < self.force_threshold:
                raise ValueError("halted log must end at or above the force threshold")

    def to_json(self) -> dict:
        return {
            "schema": "evplug-execlog-v1",
            "samples": [
                {
                    "t": t,
                    "q": [float(v) for v in st.q],
                    "qdot": [float(v) for v in st.qdot],
                    "tip_pose": tip.to_json(),
                    "force": [float(v) for v in f],
                }
                for t, st, tip, f in self.samples
            ],
            "waypoints_reached": [w.to_json() for w in self.waypoints_reached],
            "halt": None if self.halt is None else {"t": self.halt[0], "reason": self.halt[1]},
            "standby_pose": None if self.standby_pose is None else self.standby_pose.to_json(),
            "force_threshold": self.force_threshold,
        }


_MATE_FLIP = Rotation3.rot_y(math.pi)


def _staged_target(port_pose: Transform3D, dz: float) -> Transform3D:
    """Tip target dz along the port z axis, in the mated tool orientation.

    Mated means tip z anti-parallel to the port z axis with the guidance
    slot axis (y) shared, i.e. the port rotation turned half a turn about y.
    """
    rot = port_pose.rotation.compose(_MATE_FLIP)
    return Transform3D(rot, port_pose.translation + dz * port_pose.rotation.m[:, 2])


def flange_target(tip_pose: Transform3D, tool: Transform3D) -> Transform3D:
    return tip_pose.compose(tool.inverse())


def plan_plug_in(
    port_pose_base: Transform3D,
    calib: CalibrationResult,
    params: PlanParams = PlanParams(),
    chain: DHChain | None = None,
    seed_q: np.ndarray | None = None,
) -> PlugInPlan:
    """Build the Approach/Align/Insert staging along the port axis.

    All four targets share the mated tool orientation and differ only by an
    offset along the port z axis, so Align is a pure translation and Insert
    drives straight down the insertion line.  When a chain is given, each
    flange target is verified reachable by IK (seeded from seed_q), raising
    Unreachable otherwise.
    """
    tool = calib.T_flange_tip
    targets = [
        _staged_target(port_pose_base, params.approach_offset),
        _staged_target(port_pose_base, params.standoff),
        _staged_target(port_pose_base, -params.insertion_depth),
    ]
    standby = _staged_target(port_pose_base, params.approach_offset + params.standby_retreat)
    if chain is not None:
        q = HOME_Q.copy() if seed_q is None else np.asarray(seed_q, dtype=float)
        for tgt in [standby] + targets:
            try:
                q = inverse_kinematics(chain, flange_target(tgt, tool), q)
            except (NoConvergence, Unreachable) as exc:
                raise Unreachable(f"segment target not reachable: {exc}") from exc
    else:
        reach_guard = 10.0  # no chain: reject only absurd targets
        if float(np.linalg.norm(targets[0].translation)) > reach_guard:
            raise Unreachable("port pose is far outside any plausible workspace")
    speeds = (params.approach_speed, params.align_speed, params.insert_speed)
    segments = tuple(
        PlanSegment(t, s, lbl) for t, s, lbl in zip(targets, speeds, SEGMENT_LABELS)
    )
    return PlugInPlan(segments=segments, standby_pose=standby, tool=tool)


def _interp_pose(a: Transform3D, b: Transform3D, u: float) -> Transform3D:
    rv = b.rotation.compose(a.rotation.inverse()).as_rotvec()
    rot = Rotation3.from_rotvec(u * rv).compose(a.rotation)
    return Transform3D(rot, (1.0 - u) * a.translation + u * b.translation)


def _track_segment(
    chain: DHChain,
    tool: Transform3D,
    q: np.ndarray,
    start_tip: Transform3D,
    target_tip: Transform3D,
    speed_fraction: float,
    log: ExecutionLog,
    port_pose: Transform3D | None,
    contact: InsertionTolerances | None,
    force_threshold: float,
    t: float,
    dt: float,
):
    """IK-track the straight tip path; returns (q, t, halted). The path
    parameter step adapts so every joint stays within speed_fraction of its
    maximum; the force monitor stops motion within one control step."""
    u = 0.0
    du = 0.05
    cap = speed_fraction * chain.max_joint_speed * dt
    steps = 0
    while u < 1.0:
        steps += 1
        if steps > 20000:
            log.halt = (t, "timeout")
            return q, t, True
        advanced = False
        for _ in range(40):
            u_try = min(1.0, u + du)
            pose = _interp_pose(start_tip, target_tip, u_try)
            try:
                q_try = inverse_kinematics(chain, flange_target(pose, tool), q)
            except (NoConvergence, Unreachable):
                log.halt = (t, "ik_failure")
                return q, t, True
            dq = q_try - q
            ratio = float(np.max(np.abs(dq) / cap))
            if ratio <= 1.0:
                grow = 2.0 if ratio < 0.5 else 1.0 / max(ratio, 0.5)
                du = min(0.25, du * grow)
                advanced = True
                break
            du = max(du / ratio * 0.95, 1e-7)
        if not advanced:
            log.halt = (t, "ik_failure")
            return q, t, True
        q, u = q_try, u_try
        t += dt
        tip = forward_kinematics(chain, q).compose(tool)
        if port_pose is not None and contact is not None:
            f = contact_force(tip, port_pose, contact)
        else:
            f = np.zeros(3)
        log.samples.append((t, JointState(q=q, qdot=dq / dt, t=t), tip, f))
        if float(np.linalg.norm(f)) >= force_threshold:
            log.halt = (t, "force_threshold")
            return q, t, True
    return q, t, False


def execute(
    plan: PlugInPlan,
    chain: DHChain,
    world_port_pose: Transform3D,
    force_threshold: float,
    contact: InsertionTolerances,
    q_start: np.ndarray | None = None,
    dt: float = CONTROL_DT,
) -> ExecutionLog:
    """Run the plan on the simulated arm with force monitoring.

    world_port_pose is the true port pose driving the contact model (the
    plan was built from the detected pose, so their difference is exactly
    the pipeline's alignment error).
    """
    if q_start is None:
        q = inverse_kinematics(
            chain, flange_target(plan.standby_pose, plan.tool), HOME_Q
        )
    else:
        q = chain.check_limits(np.asarray(q_start, dtype=float)).copy()
    log = ExecutionLog(standby_pose=plan.standby_pose, force_threshold=force_threshold)
    t = 0.0
    tip = forward_kinematics(chain, q).compose(plan.tool)
    for seg in plan.segments:
        q, t, halted = _track_segment(
            chain, plan.tool, q, tip, seg.target_tip_pose, seg.speed_fraction,
            log, world_port_pose, contact, force_threshold, t, dt,
        )
        tip = forward_kinematics(chain, q).compose(plan.tool)
        if halted:
            break
        log.waypoints_reached.append(seg.target_tip_pose)
    log.validate()
    return log


def plan_unplug(log: ExecutionLog) -> list[Transform3D]:
    """Reached waypoints in inverse order, then retreat to standby."""
    if not log.waypoints_reached:
        raise EmptyLog("no waypoints were reached; nothing to replay")
    if log.standby_pose is None:
        raise EmptyLog("log carries no standby pose")
    return list(reversed(log.waypoints_reached)) + [log.standby_pose]


def execute_waypoints(
    chain: DHChain,
    tool: Transform3D,
    waypoints: list[Transform3D],
    q_start: np.ndarray,
    speed_fraction: float = 0.3,
    dt: float = CONTROL_DT,
) -> tuple[np.ndarray, list[Transform3D]]:
    """Track a pose list without force monitoring (unplug replay); returns
    the final joint vector and the achieved tip pose at each waypoint."""
    q = chain.check_limits(np.asarray(q_start, dtype=float)).copy()
    achieved = []
    t = 0.0
    log = ExecutionLog(force_threshold=math.inf)
    tip = forward_kinematics(chain, q).compose(tool)
    for wp in waypoints:
        q, t, halted = _track_segment(
            chain, tool, q, tip, wp, speed_fraction, log, None, None, math.inf, t, dt,
        )
        if halted:
            raise IkFailureDuringTracking(f"replay failed: {log.halt[1]}")
        tip = forward_kinematics(chain, q).compose(tool)
        achieved.append(tip)
    return q, achieved


# ---------------------------------------------------------------------------
# RRT-connect


@dataclass(frozen=True)
class CollisionWorld:
    boxes: tuple  # of (lo, hi) 3-vector pairs, base frame

    def __post_init__(self) -> None:
        norm = []
        for lo, hi in self.boxes:
            lo = np.asarray(lo, dtype=float)
            hi = np.asarray(hi, dtype=float)
            if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
                raise ValueError("boxes need positive extents")
            norm.append((lo, hi))
        object.__setattr__(self, "boxes", tuple(norm))

    def point_collides(self, p: np.ndarray, margin: float) -> bool:
        for lo, hi in self.boxes:
            if np.all(p >= lo - margin) and np.all(p <= hi + margin):
                return True
        return False


# edge checking: samples every _EDGE_RES rad of joint motion; checked points
# move at most ~2 m per rad of joint norm, so inflating the margin by
# _SWEEP_PAD makes the discrete check certify the continuous sweep
_EDGE_RES = 0.02
_SWEEP_PAD = 0.5 * 2.0 * _EDGE_RES


def _config_free(
    chain: DHChain, world: CollisionWorld, q: np.ndarray, margin: float = _LINK_RADIUS
) -> bool:
    frames = _raw_frames(chain, q)
    for idx in (1, 2, 5):  # elbow, wrist root, flange
        if world.point_collides(frames[idx][1], margin):
            return False
    return True


def _edge_free(chain, world, qa, qb) -> bool:
    dist = float(np.linalg.norm(qb - qa))
    n = max(1, int(math.ceil(dist / _EDGE_RES)))
    pad = _LINK_RADIUS + _SWEEP_PAD
    for i in range(1, n + 1):
        if not _config_free(chain, world, qa + (i / n) * (qb - qa), pad):
            return False
    return True


def _nearest(nodes: list, q: np.ndarray) -> int:
    pts = np.array([n[0] for n in nodes])
    return int(np.argmin(np.sum((pts - q) ** 2, axis=1)))


def _extend(chain, world, nodes, q_target, step):
    """One RRT extend; returns (status, new_index) with status in
    reached/advanced/trapped."""
    i = _nearest(nodes, q_target)
    qn = nodes[i][0]
    d = q_target - qn
    dist = float(np.linalg.norm(d))
    if dist < 1e-12:
        return "reached", i
    qnew = q_target if dist <= step else qn + (step / dist) * d
    if not _config_free(chain, world, qnew, _LINK_RADIUS + _SWEEP_PAD) or not _edge_free(
        chain, world, qn, qnew
    ):
        return "trapped", -1
    nodes.append((qnew, i))
    status = "reached" if dist <= step else "advanced"
    return status, len(nodes) - 1


def _trace(nodes, idx) -> list:
    path = []
    while idx != -1:
        path.append(nodes[idx][0])
        idx = nodes[idx][1]
    return path[::-1]


def rrt_connect(
    chain: DHChain,
    q_start: np.ndarray,
    q_goal: np.ndarray,
    world: CollisionWorld,
    step: float = 0.1,
    rng_seed: int = 0,
    max_samples: int = 50000,
    shortcut_attempts: int = 500,
) -> list[np.ndarray]:
    """Bidirectional RRT with greedy connect and shortcut smoothing.

    The returned path starts at q_start, ends at q_goal, and is collision
    free at the given joint-space step resolution; results are deterministic
    per rng_seed.
    """
    q_start = chain.check_limits(np.asarray(q_start, dtype=float)).copy()
    q_goal = chain.check_limits(np.asarray(q_goal, dtype=float)).copy()
    if not _config_free(chain, world, q_start):
        raise StartInCollision("start configuration collides")
    if not _config_free(chain, world, q_goal):
        raise GoalInCollision("goal configuration collides")
    if _edge_free(chain, world, q_start, q_goal):
        return [q_start, q_goal]

    rng = np.random.default_rng(rng_seed)
    tree_a: list = [(q_start, -1)]
    tree_b: list = [(q_goal, -1)]
    a_is_start = True
    for _ in range(max_samples):
        q_rand = rng.uniform(chain.limits_lo, chain.limits_hi)
        status, idx = _extend(chain, world, tree_a, q_rand, step)
        if status != "trapped":
            q_new = tree_a[idx][0]
            while True:  # greedy connect from the other tree
                status_b, idx_b = _extend(chain, world, tree_b, q_new, step)
                if status_b != "advanced":
                    break
            if status_b == "reached":
                pa = _trace(tree_a, idx)
                pb = _trace(tree_b, idx_b)
                path = pa + pb[::-1][1:] if a_is_start else pb + pa[::-1][1:]
                return _shortcut(chain, world, path, step, rng, shortcut_attempts)
        tree_a, tree_b = tree_b, tree_a
        a_is_start = not a_is_start
    raise Timeout(f"no path after {max_samples} samples")


def _shortcut(chain, world, path, step, rng, attempts):
    path = [np.asarray(p, dtype=float) for p in path]
    for _ in range(attempts):
        if len(path) <= 2:
            break
        i = int(rng.integers(0, len(path) - 1))
        j = int(rng.integers(0, len(path) - 1))
        if abs(i - j) < 2:
            continue
        i, j = min(i, j), max(i, j)
        if _edge_free(chain, world, path[i], path[j]):
            path = path[: i + 1] + path[j:]
    return path
