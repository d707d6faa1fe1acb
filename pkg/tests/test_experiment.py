from __future__ import annotations

import math

import numpy as np
import pytest

from evplug.experiment import (
    CATEGORY_LABELS,
    ExperimentConfig,
    PORT_POSITION,
    T_BASE_CAM_TRUE,
    T_FLANGE_TIP_TRUE,
    make_rig,
    noise_preset,
    plug_face_model,
    port_pose,
    run_calibration,
    run_experiment,
    synthesize_calibration_pairs,
)
from evplug.handeye import calibrate


def test_rig_places_camera_along_port_normal(rig):
    np.testing.assert_allclose(
        rig.T_world_cam1.translation, PORT_POSITION + [0.7, 0.0, 0.0]
    )
    assert rig.baseline == 0.18
    assert rig.theta == 0.0
    assert rig.left.f == 1400.0
    # optical axis looks back toward the port (world -x)
    np.testing.assert_allclose(rig.T_world_cam1.rotation.m[:, 2],
                               [-1.0, 0.0, 0.0], atol=1e-15)


def test_port_pose_normal_tracks_the_angle():
    for deg in (0.0, 10.0, 30.0):
        a = math.radians(deg)
        pose = port_pose(deg)
        np.testing.assert_allclose(pose.translation, PORT_POSITION)
        np.testing.assert_allclose(
            pose.rotation.m[:, 2], [math.cos(a), math.sin(a), 0.0], atol=1e-12
        )
    # vertical pattern axis survives the turn
    np.testing.assert_allclose(port_pose(30.0).rotation.m[:, 1],
                               [0.0, 0.0, 1.0], atol=1e-12)


def test_noise_presets():
    none = noise_preset("none")
    assert (none.coord_sigma_px, none.holder_jitter_deg, none.grey_sigma) == (0, 0, 0)
    lab = noise_preset("lab")
    assert lab.coord_sigma_px == 0.5
    assert lab.holder_jitter_deg == 0.2
    assert lab.grey_sigma == 2.0
    with pytest.raises(ValueError):
        noise_preset("outdoor")


def test_plug_face_is_x_mirrored_port(port_type2):
    plug = plug_face_model(port_type2)
    assert plug.kind == port_type2.kind
    for p_pin, g_pin in zip(port_type2.pins, plug.pins):
        assert p_pin.label == g_pin.label
        assert g_pin.center[0] == -p_pin.center[0]
        assert g_pin.center[1] == p_pin.center[1]
        assert g_pin.radius == p_pin.radius
    # mirroring twice restores the port layout
    back = plug_face_model(plug)
    for a, b in zip(back.pins, port_type2.pins):
        np.testing.assert_array_equal(a.center, b.center)


def test_synthesized_pairs_satisfy_the_calibration_identity(port_type2):
    pairs = synthesize_calibration_pairs(port_type2, 8, 0.0, seed=3)
    assert len(pairs) == 8
    for p in pairs:
        left = p.T_base_flange.compose(T_FLANGE_TIP_TRUE)
        right = T_BASE_CAM_TRUE.compose(p.T_cam_tip)
        np.testing.assert_allclose(left.matrix(), right.matrix(), atol=1e-9)
    with pytest.raises(ValueError):
        synthesize_calibration_pairs(port_type2, 0, 0.0, seed=3)


def test_noiseless_calibration_recovers_truth(port_type2):
    result = run_calibration(port_type2, n_poses=12, noise_sigma_px=0.0, seed=0)
    np.testing.assert_allclose(
        result.T_base_cam.matrix(), T_BASE_CAM_TRUE.matrix(), atol=1e-8
    )
    np.testing.assert_allclose(
        result.T_flange_tip.matrix(), T_FLANGE_TIP_TRUE.matrix(), atol=1e-8
    )
    assert result.mean_translation_error < 1e-9


def test_noisy_calibration_stays_millimetric_at_the_port(port_type2):
    """Noise moves T_base_cam and T_flange_tip in compensating directions;
    the honest accuracy measure is the composed pose the pipeline actually
    uses: camera-frame port pose mapped into the base frame."""
    from evplug.handeye import apply_calibration

    true_port = port_pose(10.0)
    t_cam_port = T_BASE_CAM_TRUE.inverse().compose(true_port)
    for seed in range(3):
        result = run_calibration(port_type2, n_poses=26, noise_sigma_px=0.5,
                                 seed=seed)
        est = apply_calibration(result, t_cam_port)
        assert np.linalg.norm(est.translation - true_port.translation) < 3e-3
        assert 0.0 < result.mean_translation_error < 5e-3


def test_pixel_noise_changes_measured_pairs_not_robot_poses(port_type2):
    clean = synthesize_calibration_pairs(port_type2, 5, 0.0, seed=9)
    noisy = synthesize_calibration_pairs(port_type2, 5, 0.5, seed=9)
    # noise draws shift the rng stream, so only the first pose is shared
    c, n = clean[0], noisy[0]
    np.testing.assert_allclose(
        c.T_base_flange.matrix(), n.T_base_flange.matrix(), atol=1e-12
    )
    gap = np.abs(c.T_cam_tip.translation - n.T_cam_tip.translation).max()
    assert 0.0 < gap < 5e-3


def test_experiment_config_serializes_every_field():
    cfg = ExperimentConfig(runs=3, port_angle_deg=30.0, noise="none", seed=5)
    d = cfg.to_json()
    assert d["runs"] == 3
    assert d["port_angle_deg"] == 30.0
    assert d["noise"] == "none"
    assert d["seed"] == 5
    assert set(d) == {
        "port_type", "port_angle_deg", "runs", "noise", "seed",
        "n_calibration_poses", "force_threshold", "contrast_threshold",
        "min_match_score",
    }


def test_category_labels_cover_all_outcomes():
    assert set(CATEGORY_LABELS.values()) == {
        "Success", "Success: Misalignment", "Failed: Missed rotation",
    }


@pytest.fixture(scope="module")
def small_noiseless_batch():
    cfg = ExperimentConfig(runs=2, noise="none", port_angle_deg=10.0, seed=0,
                           n_calibration_poses=12)
    return cfg, run_experiment(cfg)


def test_run_experiment_shape_and_summary(small_noiseless_batch):
    cfg, result = small_noiseless_batch
    assert result["schema"] == "evplug-experiment-v1"
    assert result["config"] == cfg.to_json()
    assert len(result["runs"]) == 2
    summary = result["summary"]
    assert summary["runs"] == 2
    counted = sum(summary[label] for label in CATEGORY_LABELS.values())
    assert counted + summary["errors"] == 2
    assert summary["success_rate"] == 1.0


def test_noiseless_runs_succeed_and_unplug(small_noiseless_batch):
    _, result = small_noiseless_batch
    for rec in result["runs"]:
        assert rec["error"] is None
        assert rec["category"] == "Success"
        assert rec["halted"] is False
        assert rec["unplug_ok"] is True
        assert rec["n_pins_used"] == 7
        assert rec["max_force_n"] == 0.0


def test_run_experiment_is_reproducible(small_noiseless_batch):
    cfg, result = small_noiseless_batch
    again = run_experiment(cfg)
    assert again == result
