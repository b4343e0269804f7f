"""Screw linear interpolation and time alignment of asynchronous trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dq_core import (
    TOL,
    DualQuaternion,
    Pose,
    Quaternion,
    require_unit,
    dq_conjugate,
    dq_mul,
    from_pose,
    to_pose,
)
from .errors import NoOverlap, OutOfRange


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered poses of one sensor in its own odometry frame."""

    sensor_id: str
    poses: tuple[Pose, ...]

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        ts = [p.timestamp for p in self.poses]
        for i in range(1, len(ts)):
            if not ts[i] > ts[i - 1]:
                raise ValueError(
                    f"trajectory {self.sensor_id!r}: timestamps must strictly increase "
                    f"(index {i}: {ts[i - 1]!r} -> {ts[i]!r})"
                )

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    @cached_property
    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.poses])

    @cached_property
    def dqs(self) -> tuple[DualQuaternion, ...]:
        return tuple(from_pose(p) for p in self.poses)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.timestamps[0]), float(self.timestamps[-1])

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)


@dataclass(frozen=True)
class GridPolicy:
    """Which clock anchors the common grid: ``sensor_a``, ``sensor_b`` or ``uniform``."""

    kind: str = "sensor_a"
    dt: float | None = None

    def __post_init__(self):
        if self.kind not in ("sensor_a", "sensor_b", "uniform"):
            raise ValueError(f"unknown grid policy {self.kind!r}")
        if self.kind == "uniform" and not (self.dt and self.dt > 0):
            raise ValueError("uniform grid needs a positive dt")

    @classmethod
    def uniform(cls, dt: float) -> GridPolicy:
        return cls("uniform", float(dt))

    @classmethod
    def parse(cls, text: str) -> GridPolicy:
        text = text.strip().lower()
        if text.startswith("uniform"):
            _, _, dt = text.partition(":")
            return cls.uniform(float(dt))
        return cls(text)

    def __str__(self) -> str:
        return f"uniform:{self.dt!r}" if self.kind == "uniform" else self.kind


SENSOR_A = GridPolicy("sensor_a")
SENSOR_B = GridPolicy("sensor_b")


@dataclass(frozen=True)
class AlignedPair:
    timestamps: np.ndarray
    poses_a: tuple[Pose, ...]
    poses_b: tuple[Pose, ...]
    sensor_a: str = "a"
    sensor_b: str = "b"

    def __post_init__(self):
        if not (len(self.timestamps) == len(self.poses_a) == len(self.poses_b)):
            raise ValueError("aligned pair sequences differ in length")

    def __len__(self) -> int:
        return len(self.timestamps)

    def trajectories(self) -> tuple[Trajectory, Trajectory]:
        return Trajectory(self.sensor_a, self.poses_a), Trajectory(self.sensor_b, self.poses_b)


def dq_pow(q: DualQuaternion, n: float) -> DualQuaternion:
    """Raise a unit DQ to a real power by scaling its screw angle and pitch.

    ``q**n = cos(n*theta/2) + k sin(n*theta/2)`` evaluated with dual-number
    angle ``theta + eps*d`` and dual axis ``k = l + eps*m``.
    """
    require_unit(q, "dq_pow")
    if n == 0.0:
        return DualQuaternion.identity()
    q = q.canonical()
    if n == 1.0:
        return q
    r, d = q.real, q.dual
    s = math.sqrt(r.x * r.x + r.y * r.y + r.z * r.z)
    half = math.atan2(s, r.w)
    if 2.0 * half < TOL.pure_translation_angle:
        # pure-translation branch: rotation scaled on its own axis, translation linearly
        if s > 0.0:
            hn = n * half
            k = math.sin(hn) / s
            rn = Quaternion(math.cos(hn), r.x * k, r.y * k, r.z * k)
        else:
            rn = Quaternion.identity()
        return DualQuaternion.from_rt(rn, n * q.translation())
    axis = r.vec / s
    pitch = -2.0 * d.w / s
    moment = (d.vec - 0.5 * pitch * r.w * axis) / s
    hn, pn = n * half, n * pitch
    c, sn = math.cos(hn), math.sin(hn)
    real = Quaternion(c, *(sn * axis))
    dual = Quaternion(-0.5 * pn * sn, *(sn * moment + 0.5 * pn * c * axis))
    return DualQuaternion(real, dual)


def sclerp(q1: DualQuaternion, q2: DualQuaternion, n: float) -> DualQuaternion:
    """``q1 * (q1^-1 * q2)**n``, taking the short arc between ``q1`` and ``q2``."""
    require_unit(q1, "sclerp")
    require_unit(q2, "sclerp")
    if n == 0.0:
        return q1
    if n == 1.0:
        return q2
    if q1.real.dot(q2.real) < 0.0:
        q2 = -q2
    delta = dq_mul(dq_conjugate(q1), q2)
    return dq_mul(q1, dq_pow(delta, n))


def interpolate_at(traj: Trajectory, t: float) -> Pose:
    ts = traj.timestamps
    if t < ts[0] or t > ts[-1]:
        raise OutOfRange(t, traj.span)
    i = int(np.searchsorted(ts, t, side="left"))
    if ts[i] == t:
        return traj.poses[i]
    t0, t1 = ts[i - 1], ts[i]
    n = (t - t0) / (t1 - t0)
    q = sclerp(traj.dqs[i - 1], traj.dqs[i], n)
    return to_pose(q, float(t))


def _grid(a: Trajectory, b: Trajectory, policy: GridPolicy, lo: float, hi: float) -> np.ndarray:
    if policy.kind == "sensor_a":
        ts = a.timestamps
    elif policy.kind == "sensor_b":
        ts = b.timestamps
    else:
        count = int(math.floor((hi - lo) / policy.dt + 1e-9)) + 1
        ts = np.round(lo + policy.dt * np.arange(count), 9)
        return ts[(ts >= lo) & (ts <= hi)]
    # grid points outside the overlap are dropped, never extrapolated
    return ts[(ts >= lo) & (ts <= hi)]


def align(a: Trajectory, b: Trajectory, grid: GridPolicy = SENSOR_A) -> AlignedPair:
    """Resample both trajectories onto a common grid inside their time overlap."""
    if len(a) < 2 or len(b) < 2:
        raise NoOverlap("each trajectory needs at least two poses")
    lo = max(a.span[0], b.span[0])
    hi = min(a.span[1], b.span[1])
    if hi <= lo:
        raise NoOverlap(
            f"time spans do not overlap: {a.sensor_id} {a.span}, {b.sensor_id} {b.span}"
        )
    for tr in (a, b):
        inside = int(np.count_nonzero((tr.timestamps >= lo) & (tr.timestamps <= hi)))
        if inside < 2:
            raise NoOverlap(f"{tr.sensor_id}: only {inside} samples inside the overlap [{lo}, {hi}]")
    ts = _grid(a, b, grid, lo, hi)
    if len(ts) < 2:
        raise NoOverlap("fewer than two grid points inside the overlap")
    poses_a = tuple(interpolate_at(a, float(t)) for t in ts)
    poses_b = tuple(interpolate_at(b, float(t)) for t in ts)
    return AlignedPair(np.asarray(ts, dtype=float), poses_a, poses_b, a.sensor_id, b.sensor_id)
