"""Relative and absolute pose error between two time-aligned trajectories."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .dq_core import Pose
from .errors import GridMismatch
from .interp import Trajectory

GRID_ATOL = 1e-9


def rotation_angle(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, arccos((tr R - 1) / 2) with the cosine clamped."""
    c = (float(np.trace(R)) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def _stats(x: np.ndarray) -> dict:
    if len(x) == 0:
        return {"rmse": 0.0, "mean": 0.0, "median": 0.0, "std": 0.0, "max": 0.0}
    return {
        "rmse": float(math.sqrt(np.mean(x * x))),
        "mean": float(np.mean(x)),
        "median": float(np.median(x)),
        "std": float(np.std(x)),
        "max": float(np.max(x)),
    }


@dataclass(frozen=True)
class ErrorSeries:
    kind: str
    timestamps: np.ndarray
    translation_err: np.ndarray
    rotation_err: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def translation(self) -> dict:
        return _stats(self.translation_err)

    @property
    def rotation(self) -> dict:
        return _stats(self.rotation_err)

    @property
    def rmse(self) -> tuple[float, float]:
        return self.translation["rmse"], self.rotation["rmse"]

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "samples": len(self),
            "translation_m": self.translation,
            "rotation_rad": self.rotation,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["timestamp", "trans_err", "rot_err"])
        for t, e, r in zip(self.timestamps, self.translation_err, self.rotation_err):
            w.writerow([f"{t:.9f}", f"{e:.12g}", f"{r:.12g}"])
        return buf.getvalue()


def _check_grid(a: Trajectory, b: Trajectory) -> None:
    if len(a) != len(b):
        raise GridMismatch(f"trajectories have {len(a)} and {len(b)} samples; align them first")
    if len(a) and not np.allclose(a.timestamps, b.timestamps, rtol=0.0, atol=GRID_ATOL):
        bad = int(np.argmax(np.abs(a.timestamps - b.timestamps) > GRID_ATOL))
        raise GridMismatch(
            f"timestamps differ at index {bad}: {a.timestamps[bad]!r} vs {b.timestamps[bad]!r}; align them first"
        )


def _error(E: Pose) -> tuple[float, float]:
    return float(np.linalg.norm(E.t)), rotation_angle(E.rotation_matrix())


def _series(kind, ts, errs) -> ErrorSeries:
    errs = np.asarray(errs, dtype=float).reshape(-1, 2)
    return ErrorSeries(kind, np.asarray(ts, dtype=float), errs[:, 0].copy(), errs[:, 1].copy())


def ape(a: Trajectory, b: Trajectory) -> ErrorSeries:
    """Per-sample ``E_i = A_i^-1 B_i``; no alignment of the two trajectories."""
    _check_grid(a, b)
    errs = [_error(pa.inverse() @ pb) for pa, pb in zip(a.poses, b.poses)]
    return _series("ape", a.timestamps, errs)


def _delta_steps(ts: np.ndarray, delta) -> list[tuple[int, int]]:
    if isinstance(delta, (int, np.integer)) and not isinstance(delta, bool):
        if delta < 1:
            raise ValueError(f"index delta must be >= 1, got {delta}")
        return [(i, i + int(delta)) for i in range(len(ts) - int(delta))]
    delta = float(delta)
    if delta <= 0.0:
        raise ValueError(f"time delta must be positive, got {delta}")
    # j is the first sample at least delta seconds after i
    js = np.searchsorted(ts, ts + delta - GRID_ATOL, side="left")
    return [(i, int(j)) for i, j in enumerate(js) if j < len(ts)]


def rpe(a: Trajectory, b: Trajectory, delta: int | float = 1) -> ErrorSeries:
    """``E_ij = (A_i^-1 A_j)^-1 (B_i^-1 B_j)`` for ``j = i + delta``.

    An integer ``delta`` counts grid steps, a float is seconds. The error is
    stamped with the start time ``t_i``.
    """
    _check_grid(a, b)
    ts = a.timestamps
    errs, stamps = [], []
    for i, j in _delta_steps(ts, delta):
        ra = a.poses[i].inverse() @ a.poses[j]
        rb = b.poses[i].inverse() @ b.poses[j]
        errs.append(_error(ra.inverse() @ rb))
        stamps.append(ts[i])
    return _series("rpe", stamps, errs)


def map_through_extrinsic(rear: Trajectory, extrinsic_fr: Pose, sensor_id: str = "rear_in_front") -> Trajectory:
    """Express rear odometry as front odometry under an extrinsic: ``X T_R X^-1``.

    With a common odometry origin this reproduces the front trajectory exactly
    when ``X`` is the true extrinsic.
    """
    X, Xi = extrinsic_fr, extrinsic_fr.inverse()
    poses = tuple((X @ p @ Xi).with_timestamp(p.timestamp) for p in rear.poses)
    return Trajectory(sensor_id, poses)
