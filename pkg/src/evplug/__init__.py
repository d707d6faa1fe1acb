"""Vision-guided robotic EV-plug insertion, simulated end to end.

The package covers the whole pipeline: stereo rendering of a charging
port, shape-based template matching, closed-form and ray triangulation,
6-DOF pose recovery, marker-less hand-eye calibration, UR10 kinematics,
staged plug-in execution with force-halt safety, waypoint-replay
unplugging and an RRT-connect transit planner.
"""
from .errors import EvplugError
from .geometry import CameraIntrinsics, Rotation3, Rpy, Transform3D
from .scene import SceneConfig, StereoRig, port_pin_pixels, project_to_stereo
from .ports import PortModel, load_port_model
from .render import render_views
from .matching import Match2D, ShapeTemplate, create_template, match_template
from .triangulation import triangulate_eq1, triangulate_port_points, triangulate_rays
from .pose import PortPoseEstimate, estimate_port_pose, fit_plane_lsq
from .detection import DetectionResult, build_port_templates, detect_port
from .handeye import CalibrationResult, PosePair, apply_calibration, calibrate
from .robot import DHChain, forward_kinematics, inverse_kinematics, jacobian, load_ur10
from .planner import (
    ExecutionLog,
    PlanParams,
    PlugInPlan,
    execute,
    plan_plug_in,
    plan_unplug,
    rrt_connect,
)
from .insertion import InsertionOutcome, InsertionTolerances, simulate_insertion
from .experiment import ExperimentConfig, run_calibration, run_experiment

__version__ = "0.1.0"

__all__ = [
    "CalibrationResult",
    "CameraIntrinsics",
    "DHChain",
    "DetectionResult",
    "EvplugError",
    "ExecutionLog",
    "ExperimentConfig",
    "InsertionOutcome",
    "InsertionTolerances",
    "Match2D",
    "PlanParams",
    "PlugInPlan",
    "PortModel",
    "PortPoseEstimate",
    "PosePair",
    "Rotation3",
    "Rpy",
    "SceneConfig",
    "ShapeTemplate",
    "StereoRig",
    "Transform3D",
    "apply_calibration",
    "build_port_templates",
    "calibrate",
    "create_template",
    "detect_port",
    "estimate_port_pose",
    "execute",
    "fit_plane_lsq",
    "forward_kinematics",
    "inverse_kinematics",
    "jacobian",
    "load_port_model",
    "load_ur10",
    "match_template",
    "plan_plug_in",
    "plan_unplug",
    "port_pin_pixels",
    "project_to_stereo",
    "render_views",
    "rrt_connect",
    "run_calibration",
    "run_experiment",
    "simulate_insertion",
    "triangulate_eq1",
    "triangulate_port_points",
    "triangulate_rays",
]
