import math

import numpy as np
import pytest

from dqcalib.dq_core import Pose
from dqcalib.errors import InvalidSpec
from dqcalib.interp import align
from dqcalib.synth import (
    NoiseSpec,
    RigSpec,
    TrajectoryKind,
    TrajectorySpec,
    generate,
    ground_truth_report,
    perturb_pose,
    se3_exp,
    se3_log,
)

from helpers import matrix


def test_same_seed_identical():
    rig = RigSpec(noise=NoiseSpec(0.01, 0.001), seed=7, feature_sigma=0.01)
    a, b = generate(rig, TrajectorySpec(duration=5.0)), generate(rig, TrajectorySpec(duration=5.0))
    assert a.front == b.front and a.rear == b.rear
    for sid in ("front", "rear"):
        for oa, ob in zip(a.features.observations[sid], b.features.observations[sid]):
            assert np.array_equal(oa.point, ob.point)


def test_seed_changes_output():
    a = generate(RigSpec(seed=1), TrajectorySpec(duration=5.0))
    b = generate(RigSpec(seed=2), TrajectorySpec(duration=5.0))
    assert a.front != b.front


def test_timestamps_disjoint_and_start_identity():
    sim = generate(RigSpec(), TrajectorySpec(duration=10.0))
    assert not set(sim.front.timestamps) & set(sim.rear.timestamps)
    assert sim.front.poses[0] == Pose.identity(0.0) or np.allclose(matrix(sim.front.poses[0]), np.eye(4))


@pytest.mark.parametrize("kind", list(TrajectoryKind))
def test_noiseless_consistency(kind):
    # rear odometry equals X^-1 * front odometry * X on matched times
    rig = RigSpec(phase_offsets=(0.0, 0.0))
    sim = generate(rig, TrajectorySpec(kind=kind, duration=10.0))
    X = matrix(sim.ground_truth)
    Xi = np.linalg.inv(X)
    for pf, pr in zip(sim.front.poses, sim.rear.poses):
        E = np.linalg.inv(matrix(pf)) @ X @ matrix(pr) @ Xi
        assert np.allclose(E, np.eye(4), atol=1e-12 * max(1.0, np.abs(matrix(pf)[:3, 3]).max()))


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        generate(RigSpec(), TrajectorySpec(duration=0.0))
    with pytest.raises(InvalidSpec):
        generate(RigSpec(sensor_rates=(10.0, 0.0)), TrajectorySpec())
    with pytest.raises(InvalidSpec):
        generate(RigSpec(noise=NoiseSpec(-1.0, 0.0)), TrajectorySpec())
    with pytest.raises(InvalidSpec):
        generate(RigSpec(), TrajectorySpec(kind="Spiral"))


def test_features_back_project_exactly():
    rig = RigSpec()
    sim = generate(rig, TrajectorySpec(duration=10.0))
    from dqcalib.interp import interpolate_at
    mounts = {"front": rig.base_to_front, "rear": rig.base_to_rear}
    for sid, obs in sim.features.observations.items():
        assert obs
        for o in obs:
            world = (interpolate_at(sim.base, o.timestamp) @ mounts[sid]).transform_point(o.point)
            assert np.allclose(world, sim.features.points[o.point_index], atol=1e-9)


def test_rear_sees_curb_later():
    sim = generate(RigSpec(), TrajectorySpec(duration=20.0))
    front = {o.point_index: o.timestamp for o in sim.features.observations["front"]}
    rear = {o.point_index: o.timestamp for o in sim.features.observations["rear"]}
    common = set(front) & set(rear)
    assert len(common) > 100
    assert all(rear[k] > front[k] for k in common)


def test_ground_truth_report_examples():
    X = RigSpec().extrinsic_fr
    assert ground_truth_report(X, X) == {"translation_error": 0.0, "rotation_error": 0.0}
    moved = Pose(0.0, X.rotation, tuple(X.t + [0.01, 0, 0]))
    r = ground_truth_report(X, moved)
    assert r["translation_error"] == pytest.approx(0.01) and r["rotation_error"] < 1e-12


def test_perturb_pose_exact_magnitudes():
    rng = np.random.default_rng(0)
    X = RigSpec().extrinsic_fr
    for _ in range(20):
        P = perturb_pose(X, 0.2, math.radians(2.0), rng)
        r = ground_truth_report(X, P)
        assert r["translation_error"] == pytest.approx(0.2, abs=1e-12)
        assert r["rotation_error"] == pytest.approx(math.radians(2.0), abs=1e-9)


def test_default_rig_is_large():
    X = RigSpec().extrinsic_fr
    assert np.linalg.norm(X.t) >= 3.0
    assert X.rotation.angle() >= math.radians(30.0)


def test_se3_exp_log_round_trip():
    from scipy.linalg import expm
    rng = np.random.default_rng(1)
    for _ in range(50):
        w, v = rng.normal(size=3), rng.normal(size=3)
        T = se3_exp(w, v)
        X = np.zeros((4, 4))
        X[:3, :3] = [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]
        X[:3, 3] = v
        assert np.allclose(T, expm(X), atol=1e-9)
        if np.linalg.norm(w) < math.pi:
            w2, v2 = se3_log(T)
            assert np.allclose(w2, w, atol=1e-9) and np.allclose(v2, v, atol=1e-9)


def test_non_planar_kinds_have_spread_axes():
    for kind in (TrajectoryKind.FIGURE8_3D, TrajectoryKind.PIECEWISE_RANDOM_SCREW):
        sim = generate(RigSpec(), TrajectorySpec(kind=kind, duration=20.0))
        p = align(sim.front, sim.rear)
        axes = []
        for i in range(1, len(p)):
            rel = p.poses_b[i - 1].inverse() @ p.poses_b[i]
            if rel.rotation.angle() > 1e-3:
                axes.append(rel.rotation.vec / np.linalg.norm(rel.rotation.vec))
        sv = np.linalg.svd(np.array(axes), compute_uv=False)
        assert sv[1] / sv[0] > 0.05
