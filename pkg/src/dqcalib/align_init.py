"""Closed-form rigid alignment of trajectory translation clouds.

The fit minimises ``sum ||R a_i + t - b_i||^2`` over rotations with det = +1
and unit scale (lidar odometry is metric).  Applied to the front and rear
translation sequences it only aligns trajectory *shapes*: the rear lever arm
shows up as residual, so the result seeds the hand-eye solver's sign choice
and sanity gates rather than standing in for the extrinsic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dq_core import Quaternion
from .errors import DegenerateGeometry, TooFewPoints
from .interp import AlignedPair

COLLINEAR_RTOL = 1e-9
LOW_CONFIDENCE_RESIDUAL = 0.5


@dataclass(frozen=True)
class RigidFit:
    rotation: Quaternion
    translation: np.ndarray
    rms_residual: float
    low_confidence: bool = False

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.to_matrix().T + self.translation


def umeyama_fit(points_a, points_b) -> RigidFit:
    a = np.asarray(points_a, dtype=float).reshape(-1, 3)
    b = np.asarray(points_b, dtype=float).reshape(-1, 3)
    if a.shape != b.shape:
        raise ValueError(f"point sets differ in shape: {a.shape} vs {b.shape}")
    if len(a) < 3:
        raise TooFewPoints(f"need at least 3 point pairs, got {len(a)}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    ac, bc = a - mu_a, b - mu_b
    for name, pts in (("points_a", ac), ("points_b", bc)):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[0] == 0.0 or sv[1] <= COLLINEAR_RTOL * sv[0]:
            raise DegenerateGeometry(f"{name} are collinear; rotation about the line is unobservable")
    # cross-covariance maps a -> b
    H = bc.T @ ac / len(a)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    t = mu_b - R @ mu_a
    resid = a @ R.T + t - b
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return RigidFit(Quaternion.from_matrix(R), t, rms)


def initial_extrinsic(pair: AlignedPair, threshold: float = LOW_CONFIDENCE_RESIDUAL) -> RigidFit:
    """Fit front translations onto rear translations along an aligned pair.

    The returned rotation maps front-odometry coordinates into the rear
    odometry frame, i.e. it estimates the *inverse* of the extrinsic rotation.
    """
    pa = np.array([p.translation for p in pair.poses_a])
    pb = np.array([p.translation for p in pair.poses_b])
    fit = umeyama_fit(pa, pb)
    if fit.rms_residual > threshold:
        fit = RigidFit(fit.rotation, fit.translation, fit.rms_residual, low_confidence=True)
    return fit
