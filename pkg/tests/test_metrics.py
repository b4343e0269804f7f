import math

import numpy as np
import pytest

from dqcalib.dq_core import Pose
from dqcalib.errors import GridMismatch
from dqcalib.interp import Trajectory, align
from dqcalib.metrics import ape, map_through_extrinsic, rotation_angle, rpe
from dqcalib.synth import NoiseSpec, RigSpec, TrajectorySpec, generate

from helpers import matrix, random_pose


def traj(poses, name="t"):
    return Trajectory(name, tuple(p.with_timestamp(float(i)) for i, p in enumerate(poses)))


@pytest.fixture
def walk():
    rng = np.random.default_rng(0)
    return traj([random_pose(rng) for _ in range(20)])


def test_identical_trajectories_have_zero_error(walk):
    for s in (ape(walk, walk), rpe(walk, walk)):
        assert np.all(s.translation_err < 1e-12) and np.all(s.rotation_err < 1e-6)


def test_constant_offset_ape(walk):
    X = Pose.from_rotvec([0.0, 0.3, 0.0], [1.0, 2.0, 2.0])
    shifted = traj([p @ X for p in walk.poses])
    s = ape(walk, shifted)
    assert np.allclose(s.translation_err, 3.0, atol=1e-9)
    assert np.allclose(s.rotation_err, 0.3, atol=1e-9)


def test_rpe_zero_for_correct_extrinsic():
    sim = generate(RigSpec(), TrajectorySpec(duration=10.0))
    a, b = align(sim.front, sim.rear).trajectories()
    mapped = map_through_extrinsic(b, sim.ground_truth)
    assert rpe(a, mapped).translation["max"] < 1e-9
    assert ape(a, mapped).translation["max"] < 1e-9


def test_rpe_locality(walk):
    poses = list(walk.poses)
    poses[7] = poses[7] @ Pose.from_rotvec([0, 0, 0.1], [0.5, 0, 0])
    s = rpe(walk, traj(poses))
    bad = np.nonzero(s.translation_err > 1e-9)[0]
    assert bad.tolist() == [6, 7]


def test_symmetry(walk):
    rng = np.random.default_rng(1)
    other = traj([p @ random_pose(rng, 0.1) for p in walk.poses])
    for f in (ape, rpe):
        s1, s2 = f(walk, other), f(other, walk)
        assert np.allclose(s1.translation_err, s2.translation_err, atol=1e-12)
        assert np.allclose(s1.rotation_err, s2.rotation_err, atol=1e-9)


def test_rpe_over_whole_span_brute_force(walk):
    rng = np.random.default_rng(2)
    other = traj([p @ random_pose(rng, 0.2) for p in walk.poses])
    n = len(walk) - 1
    s = rpe(walk, other, n)
    assert len(s) == 1
    a0, an, b0, bn = walk.poses[0], walk.poses[n], other.poses[0], other.poses[n]
    E = (a0.inverse() @ an).inverse() @ (b0.inverse() @ bn)
    assert s.translation_err[0] == pytest.approx(np.linalg.norm(E.t), abs=1e-12)
    # the same error rebuilt from the end-point APE and the initial APE offset
    ape0, apen = a0.inverse() @ b0, an.inverse() @ bn
    C = an.inverse() @ a0
    E2 = C @ ape0.inverse() @ C.inverse() @ apen
    assert np.allclose(matrix(E), matrix(E2), atol=1e-9)


def test_rpe_time_delta():
    t = Trajectory("t", tuple(Pose.identity(x) for x in np.round(np.arange(0, 2.0, 0.1), 9)))
    s = rpe(t, t, 0.5)
    assert len(s) == 15 and s.timestamps[0] == 0.0


def test_statistics_recomputable(walk):
    rng = np.random.default_rng(3)
    other = traj([p @ random_pose(rng, 0.2) for p in walk.poses])
    s = ape(walk, other)
    x = s.translation_err
    st = s.translation
    assert st["rmse"] ** 2 == pytest.approx(np.mean(x ** 2), abs=1e-12)
    assert st["mean"] == pytest.approx(np.mean(x), abs=1e-12)
    assert st["median"] == pytest.approx(np.median(x), abs=1e-12)
    assert st["std"] == pytest.approx(np.std(x), abs=1e-12)
    assert st["max"] == np.max(x)
    assert np.all(s.rotation_err >= 0)


def test_grid_mismatch(walk):
    with pytest.raises(GridMismatch):
        ape(walk, Trajectory("x", walk.poses[:-1]))
    shifted = Trajectory("x", tuple(p.with_timestamp(p.timestamp + 0.01) for p in walk.poses))
    with pytest.raises(GridMismatch):
        rpe(walk, shifted)


def test_rotation_angle_clamps():
    assert rotation_angle(np.eye(3) * (1 + 1e-15)) == 0.0
    R = np.diag([-1.0, -1.0, 1.0]) * (1 + 1e-15)
    assert rotation_angle(R) == pytest.approx(math.pi)


def test_csv_layout(walk):
    text = ape(walk, walk).to_csv().splitlines()
    assert text[0] == "timestamp,trans_err,rot_err"
    assert len(text) == len(walk) + 1


def test_calibration_improves_ape():
    rng = np.random.default_rng(4)
    sim = generate(RigSpec(noise=NoiseSpec(0.01, math.radians(0.1), "absolute")), TrajectorySpec(duration=20.0))
    a, b = align(sim.front, sim.rear).trajectories()
    from dqcalib.synth import perturb_pose
    cad = perturb_pose(sim.ground_truth, 0.2, math.radians(2.0), rng)
    before = ape(a, map_through_extrinsic(b, cad)).rmse[0]
    after = ape(a, map_through_extrinsic(b, sim.ground_truth)).rmse[0]
    assert after < before
