import math

import numpy as np
import pytest

from dqcalib.dq_core import Pose, Quaternion
from dqcalib.errors import NoForwardMotion, NoOverlapWindow
from dqcalib.interp import Trajectory
from dqcalib.synth import RigSpec, TrajectorySpec, generate
from dqcalib.verify import (
    associate_features,
    compare,
    kinematic_offset,
    sign_test,
    _segment_starts,
)

ID = Quaternion(1.0, 0.0, 0.0, 0.0)


def _straight(speed: float, duration: float = 10.0, rate: float = 100.0) -> Trajectory:
    ts = np.arange(0.0, duration + 1e-9, 1.0 / rate)
    return Trajectory("base", tuple(Pose(float(t), ID, (speed * t, 0.0, 0.0)) for t in ts))


def _at_x(x: float) -> Pose:
    return Pose(0.0, ID, (x, 0.0, 0.0))


def test_straight_drive_offset():
    base = _straight(5.0)
    est = kinematic_offset(base, [1.0, 2.0, 3.0], _at_x(5.0), _at_x(0.0))
    assert np.allclose(est.offsets, 1.0, atol=0.01)
    assert np.all(est.confidence < 0.05)
    assert est.at(2.2) == pytest.approx(1.0, abs=0.01)


def test_stationary_vehicle_raises():
    base = _straight(0.0)
    with pytest.raises(NoForwardMotion):
        kinematic_offset(base, [1.0], _at_x(5.0), _at_x(0.0))


def test_reversing_vehicle_raises():
    base = _straight(-5.0)
    with pytest.raises(NoForwardMotion):
        kinematic_offset(base, [1.0], _at_x(5.0), _at_x(0.0))


def test_skip_failures_keeps_good_anchors():
    # drives for 5 s then stops: late anchors have no forward motion left
    ts = np.arange(0.0, 10.0 + 1e-9, 0.01)
    base = Trajectory("base", tuple(Pose(float(t), ID, (5.0 * min(t, 5.0), 0.0, 0.0)) for t in ts))
    est = kinematic_offset(base, [1.0, 2.0, 8.0], _at_x(5.0), _at_x(0.0), skip_failures=True)
    assert list(est.anchors) == [1.0, 2.0]


def test_sign_test_values():
    pos, neg, p = sign_test([1.0] * 10, [0.5] * 10)
    assert (pos, neg) == (10, 0) and p == pytest.approx(0.5 ** 10)
    assert sign_test([1.0], [0.5])[2] is None
    assert sign_test([1.0, 1.0], [1.0, 1.0]) == (0, 0, None)


@pytest.fixture(scope="module")
def scene():
    # wide figure-8: the front sensor sees every curb point the rear one does
    rig = RigSpec()
    sim = generate(rig, TrajectorySpec(duration=60.0, scale=2.0))
    return rig, sim


def _offset(rig, sim, X=None):
    X = rig.extrinsic_fr if X is None else X
    obs = sim.features.observations
    anchors = _segment_starts(obs["front"], sim.base, 2.0)
    return kinematic_offset(sim.base, anchors, rig.base_to_front, rig.base_to_front @ X, skip_failures=True)


def _shifted(rig, dy):
    # the rear sensor moved sideways in the base frame
    shift = Pose(0.0, ID, (0.0, dy, 0.0))
    return rig.base_to_front.inverse() @ shift @ rig.base_to_rear


def test_offset_matches_visibility_delay(scene):
    rig, sim = scene
    est = _offset(rig, sim)
    # brute force on a 1 ms lattice of the true motion agrees to one sample
    fine = np.arange(sim.base.span[0], sim.base.span[1], 0.001)
    dense = kinematic_offset(sim.base, est.anchors, rig.base_to_front, rig.base_to_rear, candidates=fine)
    assert np.all(est.offsets > 0.0)
    assert np.max(np.abs(est.offsets - dense.offsets)) <= 0.1 + 1e-9
    # the mounts are 2.4 m apart sideways, so the closest approach is about that
    assert np.all(est.confidence >= dense.confidence - 1e-9)


def test_ground_truth_residual_is_zero(scene):
    rig, sim = scene
    obs = sim.features.observations
    rep = associate_features(obs["front"], obs["rear"], _offset(rig, sim), rig.extrinsic_fr, sim.base, rig.base_to_front)
    assert rep.rmse <= 1e-9
    assert rep.matched_count > 0.8 * rep.available
    assert len(rep.segments) >= 20


def test_lateral_perturbation_residual(scene):
    rig, sim = scene
    obs = sim.features.observations
    rep = associate_features(obs["front"], obs["rear"], _offset(rig, sim), _shifted(rig, 0.1), sim.base,
                             rig.base_to_front)
    assert rep.rmse == pytest.approx(0.1, rel=0.2)


def test_ground_truth_is_a_minimum(scene):
    rig, sim = scene
    obs = sim.features.observations
    off = _offset(rig, sim)
    ref = associate_features(obs["front"], obs["rear"], off, rig.extrinsic_fr, sim.base, rig.base_to_front).rmse
    for dy in (-0.05, 0.05):
        r = associate_features(obs["front"], obs["rear"], off, _shifted(rig, dy), sim.base, rig.base_to_front)
        assert r.rmse > ref


def test_gate_monotone(scene):
    rig, sim = scene
    obs = sim.features.observations
    off, X = _offset(rig, sim), _shifted(rig, 0.3)
    counts = [associate_features(obs["front"], obs["rear"], off, X, sim.base, rig.base_to_front, gate=g).matched_count
              for g in (0.3, 0.35, 1.0)]
    assert counts == sorted(counts) and counts[0] < counts[-1]


def test_empty_rear_raises(scene):
    rig, sim = scene
    with pytest.raises(NoOverlapWindow):
        associate_features(sim.features.observations["front"], [], _offset(rig, sim), rig.extrinsic_fr, sim.base,
                           rig.base_to_front)


def test_compare_identical_extrinsics(scene):
    rig, sim = scene
    obs = sim.features.observations
    c = compare(rig.extrinsic_fr, rig.extrinsic_fr, obs["front"], obs["rear"], sim.base, rig.base_to_front)
    assert c.rmse_before == c.rmse_after
    assert c.p_value is None and c.low_power


def test_compare_detects_improvement(scene):
    rig, sim = scene
    obs = sim.features.observations
    c = compare(_shifted(rig, 0.1), rig.extrinsic_fr, obs["front"], obs["rear"], sim.base, rig.base_to_front)
    assert c.rmse_after < c.rmse_before
    assert c.p_value is not None and c.p_value < 0.05
    assert not c.low_power


def test_single_segment_is_low_power(scene):
    rig, sim = scene
    obs = sim.features.observations
    front = [o for o in obs["front"] if 10.0 <= o.timestamp < 12.0]
    c = compare(_shifted(rig, 0.1), rig.extrinsic_fr, front, obs["rear"], sim.base, rig.base_to_front,
                segment_length=2.0)
    assert len(c.before.segments) == 1
    assert c.low_power
