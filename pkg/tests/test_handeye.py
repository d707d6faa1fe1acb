from __future__ import annotations

import math

import numpy as np
import pytest

from evplug.geometry import Rotation3, Transform3D
from evplug.handeye import (
    CalibrationResult,
    DegenerateMotion,
    PosePair,
    TooFewPoses,
    apply_calibration,
    calibrate,
    reject_outliers,
)
from oracles import synthesize_handeye_pairs


def _random_transform(rng) -> Transform3D:
    rv = rng.uniform(-1.2, 1.2, 3)
    return Transform3D(Rotation3.from_rotvec(rv), rng.uniform(-0.8, 0.8, 3))


def _transform_gap(a: Transform3D, b: Transform3D) -> tuple[float, float]:
    return (
        a.rotation.angle_to(b.rotation),
        float(np.linalg.norm(a.translation - b.translation)),
    )


def test_exact_pairs_recover_both_unknowns():
    rng = np.random.default_rng(11)
    for _ in range(5):
        x_true = _random_transform(rng)
        y_true = _random_transform(rng)
        pairs = synthesize_handeye_pairs(rng, 10, x_true, y_true, PosePair)
        result = calibrate(pairs)
        # angle_to loses half the digits near identity; compare matrices
        np.testing.assert_allclose(
            result.T_flange_tip.matrix(), x_true.matrix(), atol=1e-9
        )
        np.testing.assert_allclose(
            result.T_base_cam.matrix(), y_true.matrix(), atol=1e-9
        )
        assert result.mean_translation_error < 1e-10
        assert len(result.per_pair_residual) == 10


def test_minimum_pair_count_is_three():
    rng = np.random.default_rng(3)
    x, y = _random_transform(rng), _random_transform(rng)
    pairs = synthesize_handeye_pairs(rng, 3, x, y, PosePair)
    result = calibrate(pairs)
    assert result.mean_translation_error < 1e-9
    with pytest.raises(TooFewPoses):
        calibrate(pairs[:2])


def test_noisy_pairs_degrade_gracefully():
    rng = np.random.default_rng(7)
    x_true = _random_transform(rng)
    y_true = _random_transform(rng)
    pairs = synthesize_handeye_pairs(rng, 15, x_true, y_true, PosePair)
    noisy = []
    for p in pairs:
        t = p.T_cam_tip
        bent = Transform3D(
            t.rotation.compose(Rotation3.from_rotvec(rng.normal(0.0, 1e-4, 3))),
            t.translation + rng.normal(0.0, 1e-4, 3),
        )
        noisy.append(PosePair(p.T_base_flange, bent))
    result = calibrate(noisy)
    dr_x, dt_x = _transform_gap(result.T_flange_tip, x_true)
    dr_y, dt_y = _transform_gap(result.T_base_cam, y_true)
    assert dt_x < 2e-4 and dt_y < 2e-4
    assert dr_x < 2e-3 and dr_y < 2e-3
    assert 0.0 < result.mean_translation_error < 1e-3


def test_single_axis_motion_is_rejected():
    rng = np.random.default_rng(5)
    x = _random_transform(rng)
    y = _random_transform(rng)
    pairs = []
    for k in range(6):
        a = Transform3D(Rotation3.rot_z(0.3 * k), rng.uniform(-0.5, 0.5, 3))
        b = y.inverse().compose(a).compose(x)
        pairs.append(PosePair(a, b))
    with pytest.raises(DegenerateMotion):
        calibrate(pairs)


def test_reject_outliers_splits_on_score_preserving_order():
    rng = np.random.default_rng(2)
    x, y = _random_transform(rng), _random_transform(rng)
    pairs = synthesize_handeye_pairs(rng, 6, x, y, PosePair)
    scored = [
        PosePair(p.T_base_flange, p.T_cam_tip, s)
        for p, s in zip(pairs, (1.0, 0.5, 0.95, 0.89, 0.9, 0.2))
    ]
    accepted, rejected = reject_outliers(scored, min_score=0.9)
    assert [p.match_score for p in accepted] == [1.0, 0.95, 0.9]
    assert [p.match_score for p in rejected] == [0.5, 0.89, 0.2]


def test_match_score_validation():
    t = Transform3D(Rotation3.identity(), np.zeros(3))
    with pytest.raises(ValueError):
        PosePair(t, t, match_score=1.2)


def test_apply_calibration_maps_camera_pose_to_base():
    rng = np.random.default_rng(9)
    x, y = _random_transform(rng), _random_transform(rng)
    pairs = synthesize_handeye_pairs(rng, 8, x, y, PosePair)
    result = calibrate(pairs)
    obj_cam = _random_transform(rng)
    obj_base = apply_calibration(result, obj_cam)
    expected = y.compose(obj_cam)
    dr, dt = _transform_gap(obj_base, expected)
    assert dr < 1e-9 and dt < 1e-9


def test_calibration_result_round_trips_through_json():
    rng = np.random.default_rng(13)
    x, y = _random_transform(rng), _random_transform(rng)
    pairs = synthesize_handeye_pairs(rng, 5, x, y, PosePair)
    result = calibrate(pairs)
    back = CalibrationResult.from_json(result.to_json())
    np.testing.assert_allclose(back.T_base_cam.matrix(), result.T_base_cam.matrix())
    np.testing.assert_allclose(
        back.T_flange_tip.matrix(), result.T_flange_tip.matrix()
    )
    assert back.per_pair_residual == result.per_pair_residual
    with pytest.raises(ValueError):
        CalibrationResult.from_json({"schema": "something-else"})


def test_pose_pair_round_trips_through_json():
    rng = np.random.default_rng(17)
    p = PosePair(_random_transform(rng), _random_transform(rng), 0.75)
    q = PosePair.from_json(p.to_json())
    np.testing.assert_allclose(q.T_base_flange.matrix(), p.T_base_flange.matrix())
    np.testing.assert_allclose(q.T_cam_tip.matrix(), p.T_cam_tip.matrix())
    assert q.match_score == 0.75
