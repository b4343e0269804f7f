"""Synthetic two-lidar rig: ground-truth extrinsics, asynchronous noisy
odometry trajectories and curb-like feature observations.

Vehicle motion is an analytic path sampled at *knots* and joined by constant
screws (matrix exponential of the knot-to-knot twist).  Knots sit on the rear
sensor's clock by default, so every rear sampling interval is a single screw
and screw interpolation reproduces the motion exactly; ``smooth=True`` uses a
1 ms knot lattice instead, which behaves like a smooth trajectory.

Both sensor odometry frames are anchored at the vehicle state at t = 0, so a
sensor with zero phase offset starts at the identity pose.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .dq_core import Pose, Quaternion
from .errors import InvalidSpec
from .interp import Trajectory
from .verify import Observation


class TrajectoryKind(str, enum.Enum):
    CONSTANT_SCREW = "ConstantScrew"
    FIGURE8_3D = "Figure8_3D"
    PLANAR_LOOP = "PlanarLoop"
    PIECEWISE_RANDOM_SCREW = "PiecewiseRandomScrew"


@dataclass(frozen=True)
class NoiseSpec:
    trans_sigma: float = 0.0
    rot_sigma: float = 0.0
    mode: str = "relative"  # "relative" (odometry drift) or "absolute"


def _pose(rotvec, t) -> Pose:
    return Pose(0.0, Quaternion.from_matrix(Rotation.from_rotvec(rotvec).as_matrix()), tuple(t))


def default_base_to_front() -> Pose:
    r = Rotation.from_euler("ZYX", [-40.0, 2.0, 0.0], degrees=True)
    return _pose(r.as_rotvec(), (9.5, -1.2, 2.4))


def default_base_to_rear() -> Pose:
    r = Rotation.from_euler("ZYX", [110.0, 0.0, -3.0], degrees=True)
    return _pose(r.as_rotvec(), (-2.0, 1.2, 2.6))


def default_extrinsic() -> Pose:
    return default_base_to_front().inverse() @ default_base_to_rear()


@dataclass(frozen=True)
class RigSpec:
    extrinsic_fr: Pose = field(default_factory=default_extrinsic)
    base_to_front: Pose = field(default_factory=default_base_to_front)
    sensor_rates: tuple[float, float] = (10.0, 10.0)
    phase_offsets: tuple[float, float] = (0.0, 0.037)
    noise: NoiseSpec = NoiseSpec()
    seed: int = 0
    feature_sigma: float = 0.0
    curb_offset: float = 4.0

    @property
    def base_to_rear(self) -> Pose:
        return self.base_to_front @ self.extrinsic_fr


@dataclass(frozen=True)
class TrajectorySpec:
    kind: TrajectoryKind = TrajectoryKind.FIGURE8_3D
    duration: float = 60.0
    scale: float = 1.0
    smooth: bool = False


@dataclass(frozen=True)
class FeatureTrack:
    label: str
    points: np.ndarray
    observations: dict  # sensor_id -> list[Observation]
    generated_at: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def all_observations(self) -> list[Observation]:
        out = []
        for sid in sorted(self.observations):
            out.extend(self.observations[sid])
        return out


class Simulation(NamedTuple):
    front: Trajectory
    rear: Trajectory
    ground_truth: Pose
    features: FeatureTrack
    base: Trajectory


# --------------------------------------------------------------------------
# SE(3) exp / log on 4x4 matrices (kept separate from the DQ code on purpose)

def se3_exp(omega, v) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    th = float(np.linalg.norm(omega))
    W = np.array([[0, -omega[2], omega[1]], [omega[2], 0, -omega[0]], [-omega[1], omega[0], 0]])
    if th < 1e-6:
        b, c = 0.5 - th * th / 24.0, 1.0 / 6.0 - th * th / 120.0
    else:
        b, c = (1 - math.cos(th)) / th ** 2, (th - math.sin(th)) / th ** 3
    T = np.eye(4)
    T[:3, :3] = Rotation.from_rotvec(omega).as_matrix()
    T[:3, 3] = (np.eye(3) + b * W + c * W @ W) @ np.asarray(v, dtype=float)
    return T


def se3_log(T) -> tuple[np.ndarray, np.ndarray]:
    omega = Rotation.from_matrix(T[:3, :3]).as_rotvec()
    th = float(np.linalg.norm(omega))
    W = np.array([[0, -omega[2], omega[1]], [omega[2], 0, -omega[0]], [-omega[1], omega[0], 0]])
    if th < 1e-6:
        k = 1.0 / 12.0 + th * th / 720.0
    else:
        k = (1.0 - th * math.sin(th) / (2.0 * (1.0 - math.cos(th)))) / th ** 2
    Vinv = np.eye(3) - 0.5 * W + k * W @ W
    return omega, Vinv @ T[:3, 3]


def _inv(T):
    out = np.eye(4)
    out[:3, :3] = T[:3, :3].T
    out[:3, 3] = -T[:3, :3].T @ T[:3, 3]
    return out


# --------------------------------------------------------------------------
# analytic vehicle paths (world <- base), returned as 4x4 matrices

def _euler_pose(yaw, pitch, roll, p) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
    T[:3, 3] = p
    return T


class _Path:
    def __init__(self, spec: TrajectorySpec, rng: np.random.Generator):
        self.spec = spec
        s = spec.scale
        kind = TrajectoryKind(spec.kind)
        self.kind = kind
        if kind is TrajectoryKind.FIGURE8_3D:
            self.period = 30.0 * (1.0 + 0.1 * rng.uniform(-1, 1))
            self.amp = 40.0 * s
            self.height = 1.5 * s
            self.heading0 = rng.uniform(-math.pi, math.pi)
            self.phases = rng.uniform(0, 2 * math.pi, size=3)
            self.pitch_amp, self.pitch_freq = math.radians(12.0), 0.45
            self.roll_amp, self.roll_freq = math.radians(15.0), 0.35
        elif kind is TrajectoryKind.PLANAR_LOOP:
            self.period = 30.0 * (1.0 + 0.1 * rng.uniform(-1, 1))
            self.axes = np.array([30.0, 18.0]) * s * (1.0 + 0.1 * rng.uniform(-1, 1, size=2))
            self.heading0 = rng.uniform(-math.pi, math.pi)
        elif kind is TrajectoryKind.CONSTANT_SCREW:
            self.omega = np.array([0.03, 0.05, 0.25]) + 0.02 * rng.uniform(-1, 1, size=3)
            self.v = np.array([4.0 * s, 0.0, 0.2 * s])
        else:
            self.piece = 1.0
            n = int(math.ceil(spec.duration / self.piece)) + 1
            om = rng.normal(0.0, 0.25, size=(n, 3))
            om[:, 2] += 0.1
            v = np.column_stack([rng.uniform(2.0, 6.0, n), rng.normal(0, 0.3, n), rng.normal(0, 0.3, n)]) * s
            self.twists = list(zip(om, v))
            starts = [np.eye(4)]
            for k in range(n - 1):
                starts.append(starts[-1] @ se3_exp(self.piece * om[k], self.piece * v[k]))
            self.starts = starts

    def __call__(self, t: float) -> np.ndarray:
        k = self.kind
        if k is TrajectoryKind.FIGURE8_3D:
            w = 2 * math.pi / self.period
            ph = self.phases
            p = np.array([self.amp * math.sin(w * t), 0.5 * self.amp * math.sin(2 * w * t),
                          self.height * math.sin(1.5 * w * t + ph[0])])
            dp = np.array([self.amp * w * math.cos(w * t), self.amp * w * math.cos(2 * w * t),
                           1.5 * w * self.height * math.cos(1.5 * w * t + ph[0])])
            yaw = math.atan2(dp[1], dp[0])
            pitch = -math.atan2(dp[2], math.hypot(dp[0], dp[1])) + self.pitch_amp * math.sin(2 * math.pi * self.pitch_freq * t + ph[1])
            roll = self.roll_amp * math.sin(2 * math.pi * self.roll_freq * t + ph[2])
            T = _euler_pose(yaw, pitch, roll, p)
            return _euler_pose(self.heading0, 0.0, 0.0, np.zeros(3)) @ T
        if k is TrajectoryKind.PLANAR_LOOP:
            w = 2 * math.pi / self.period
            a, b = self.axes
            p = np.array([a * math.sin(w * t), b * (1.0 - math.cos(w * t)), 0.0])
            yaw = math.atan2(b * w * math.sin(w * t), a * w * math.cos(w * t))
            return _euler_pose(self.heading0, 0.0, 0.0, np.zeros(3)) @ _euler_pose(yaw, 0.0, 0.0, p)
        if k is TrajectoryKind.CONSTANT_SCREW:
            return se3_exp(t * self.omega, t * self.v)
        i = min(int(t // self.piece), len(self.starts) - 1)
        om, v = self.twists[i]
        dt = t - i * self.piece
        return self.starts[i] @ se3_exp(dt * om, dt * v)


class _KnottedMotion:
    """Analytic path sampled at knots and joined by constant screws."""

    def __init__(self, path: _Path, knots: np.ndarray):
        self.knots = knots
        self.poses = [path(float(t)) for t in knots]
        self.logs = [se3_log(_inv(self.poses[i]) @ self.poses[i + 1]) for i in range(len(knots) - 1)]

    def __call__(self, t: float) -> np.ndarray:
        kn = self.knots
        i = int(np.searchsorted(kn, t, side="right")) - 1
        i = min(max(i, 0), len(kn) - 2)
        if t == kn[i]:
            return self.poses[i]
        if t == kn[i + 1]:
            return self.poses[i + 1]
        f = (t - kn[i]) / (kn[i + 1] - kn[i])
        om, v = self.logs[i]
        return self.poses[i] @ se3_exp(f * om, f * v)


def _sample_times(rate: float, phase: float, duration: float) -> np.ndarray:
    n = int(math.floor((duration - phase) * rate + 1e-9)) + 1
    return np.round(phase + np.arange(n) / rate, 9)


def _validate(rig: RigSpec, traj: TrajectorySpec) -> None:
    if traj.duration <= 0:
        raise InvalidSpec(f"duration must be positive, got {traj.duration}")
    if traj.scale <= 0:
        raise InvalidSpec(f"scale must be positive, got {traj.scale}")
    if any(r <= 0 for r in rig.sensor_rates):
        raise InvalidSpec(f"sensor rates must be positive, got {rig.sensor_rates}")
    if any(p < 0 for p in rig.phase_offsets):
        raise InvalidSpec(f"phase offsets must be non-negative, got {rig.phase_offsets}")
    if rig.noise.trans_sigma < 0 or rig.noise.rot_sigma < 0 or rig.feature_sigma < 0:
        raise InvalidSpec("noise sigmas must be non-negative")
    if rig.noise.mode not in ("relative", "absolute"):
        raise InvalidSpec(f"unknown noise mode {rig.noise.mode!r}")
    try:
        TrajectoryKind(traj.kind)
    except ValueError:
        raise InvalidSpec(f"unknown trajectory kind {traj.kind!r}") from None


def _to_pose(T, t) -> Pose:
    return Pose(float(t), Quaternion.from_matrix(T[:3, :3]), tuple(T[:3, 3]))


def _perturb(T, rng, noise: NoiseSpec) -> np.ndarray:
    dth = rng.normal(0.0, noise.rot_sigma, 3)
    dt = rng.normal(0.0, noise.trans_sigma, 3)
    out = T.copy()
    out[:3, :3] = T[:3, :3] @ Rotation.from_rotvec(dth).as_matrix()
    out[:3, 3] = T[:3, 3] + dt
    return out


def _odometry(mats: list[np.ndarray], rng, noise: NoiseSpec) -> list[np.ndarray]:
    if noise.trans_sigma == 0.0 and noise.rot_sigma == 0.0:
        return mats
    if noise.mode == "absolute":
        return [mats[0]] + [_perturb(T, rng, noise) for T in mats[1:]]
    out = [mats[0]]
    for k in range(1, len(mats)):
        rel = _inv(mats[k - 1]) @ mats[k]
        out.append(out[-1] @ _perturb(rel, rng, noise))
    return out


def generate(rig: RigSpec = RigSpec(), traj: TrajectorySpec = TrajectorySpec()) -> Simulation:
    _validate(rig, traj)
    rng = np.random.default_rng(rig.seed)
    path = _Path(traj, rng)
    t_front = _sample_times(rig.sensor_rates[0], rig.phase_offsets[0], traj.duration)
    t_rear = _sample_times(rig.sensor_rates[1], rig.phase_offsets[1], traj.duration)
    if traj.smooth:
        knots = np.round(np.arange(0.0, traj.duration + 0.0005, 0.001), 9)
    else:
        knots = np.unique(np.concatenate([[0.0], t_rear, [traj.duration]]))
    motion = _KnottedMotion(path, knots)

    T_bf = rig.base_to_front.matrix()
    T_br = rig.base_to_rear.matrix()
    W0 = motion(0.0)
    anchor_f = _inv(W0 @ T_bf)
    anchor_r = _inv(W0 @ T_br)

    world_f = [motion(float(t)) @ T_bf for t in t_front]
    world_r = [motion(float(t)) @ T_br for t in t_rear]
    odo_f = _odometry([anchor_f @ T for T in world_f], rng, rig.noise)
    odo_r = _odometry([anchor_r @ T for T in world_r], rng, rig.noise)
    front = Trajectory("front", tuple(_to_pose(T, t) for T, t in zip(odo_f, t_front)))
    rear = Trajectory("rear", tuple(_to_pose(T, t) for T, t in zip(odo_r, t_rear)))

    t_base = np.union1d(t_front, t_rear)
    base = Trajectory("base", tuple(_to_pose(motion(float(t)), t) for t in t_base))
    features = _curb_features(rig, traj, motion, t_front, t_rear, rng)
    return Simulation(front, rear, rig.extrinsic_fr, features, base)


def _curb_point(T, offset: float, height: float) -> np.ndarray:
    # lateral offset in the heading-only frame, so body roll and pitch do not shake the curb
    fwd = T[:3, 0].copy()
    fwd[2] = 0.0
    n = np.linalg.norm(fwd)
    fwd = fwd / n if n > 1e-9 else np.array([1.0, 0.0, 0.0])
    left = np.array([-fwd[1], fwd[0], 0.0])
    return T[:3, 3] - offset * left - np.array([0.0, 0.0, height])


def _curb_features(rig, traj, motion, t_front, t_rear, rng, spacing_dt=0.1, window=5.0,
                   max_gap=4.0, max_range=20.0, height=0.5) -> FeatureTrack:
    taus = np.round(np.arange(0.0, traj.duration + 1e-9, spacing_dt), 9)
    pts = np.array([_curb_point(motion(float(t)), rig.curb_offset, height) for t in taus])
    obs = {}
    mounts = {"front": rig.base_to_front, "rear": rig.base_to_rear}
    for sid, times in (("front", t_front), ("rear", t_rear)):
        mount = mounts[sid]
        base_inv = [_inv(motion(float(t))) for t in times]
        T_sensor_inv = [_inv(mount.matrix()) @ Bi for Bi in base_inv]
        mx = mount.translation[0]
        # longitudinal offset of each point relative to the sensor mount, per sample
        hom = np.column_stack([pts, np.ones(len(pts))])
        lon = np.array([(Bi @ hom.T)[0] - mx for Bi in base_inv])  # (samples, points)
        found = []
        for j, tau in enumerate(taus):
            cand = np.nonzero(np.abs(times - tau) <= window)[0]
            if len(cand) == 0:
                continue
            k = cand[np.argmin(np.abs(lon[cand, j]))]
            if abs(lon[k, j]) > max_gap:
                continue
            p_s = (T_sensor_inv[k] @ hom[j])[:3]
            if np.linalg.norm(p_s) > max_range:
                continue
            if rig.feature_sigma > 0:
                p_s = p_s + rng.normal(0.0, rig.feature_sigma, 3)
            found.append(Observation(sid, float(times[k]), "curb", p_s, j))
        found.sort(key=lambda o: (o.timestamp, o.point_index))
        obs[sid] = found
    return FeatureTrack("curb", pts, obs, taus)


def ground_truth_report(rig: RigSpec | Pose, result) -> dict:
    """Translation (m) and geodesic rotation (rad) error of an estimated extrinsic."""
    gt = rig.extrinsic_fr if isinstance(rig, RigSpec) else rig
    est = result if isinstance(result, Pose) else result.pose
    dR = gt.rotation_matrix().T @ est.rotation_matrix()
    return {
        "translation_error": float(np.linalg.norm(est.t - gt.t)),
        "rotation_error": float(Rotation.from_matrix(dR).magnitude()),
    }


def perturb_pose(pose: Pose, trans: float, rot: float, rng: np.random.Generator) -> Pose:
    """``pose`` shifted by exactly ``trans`` meters and rotated by exactly ``rot`` radians
    in random directions (a stand-in for an imprecise CAD prior)."""
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    ax = rng.normal(size=3)
    ax /= np.linalg.norm(ax)
    R = pose.rotation_matrix() @ Rotation.from_rotvec(rot * ax).as_matrix()
    return Pose(pose.timestamp, Quaternion.from_matrix(R), tuple(pose.t + trans * d))
