"""Dual-quaternion hand-eye solver for two rigidly coupled sensors.

For matched relative motions ``a`` (front) and ``b`` (rear) over the same
interval the extrinsic ``X = T_FR`` satisfies ``a = X b X*``.  Each pair
contributes six linear equations ``S x = 0`` in the stacked 8-vector
``x = (q_r, q_d)``; the solution lies in the span of the two right singular
vectors of the smallest singular values of the stacked matrix.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .align_init import RigidFit
from .dq_core import DualQuaternion, Pose, Quaternion, dq_conjugate, dq_mul, from_pose, skew, to_pose
from .errors import InsufficientMotion, NumericalFailure
from .interp import AlignedPair

DEFAULT_MIN_ANGLE = math.radians(0.5)
DEFAULT_CONGRUENCE_TOL = 0.02
DEFAULT_BATCH_SIZE = 50
DEFAULT_DEGENERACY_THRESHOLD = 1e-3
_SIGMA_FLOOR = 1e-150


class Degeneracy(str, enum.Enum):
    WELL_CONDITIONED = "WellConditioned"
    NEAR_PLANAR = "NearPlanar"
    INSUFFICIENT = "Insufficient"


@dataclass(frozen=True)
class MotionPair:
    a: DualQuaternion
    b: DualQuaternion
    interval: tuple[float, float]
    rotation_angle: float


class MotionPairs(list):
    """List of accepted pairs plus the rejection bookkeeping of the extraction."""

    def __init__(self, pairs=(), rejected_small=0, rejected_incongruent=0, scalar_mismatch=()):
        super().__init__(pairs)
        self.rejected_small = rejected_small
        self.rejected_incongruent = rejected_incongruent
        # (|delta real.w|, |delta dual.w|) for every interval, accepted or not
        self.scalar_mismatch = list(scalar_mismatch)


@dataclass(frozen=True)
class CalibrationResult:
    extrinsic: DualQuaternion
    singular_values: np.ndarray
    pairs_used: int
    mean_residual: float
    degeneracy_flag: Degeneracy
    batches: int = 1
    failed_batches: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def pose(self) -> Pose:
        return to_pose(self.extrinsic)


def _angle(q: DualQuaternion) -> float:
    r = q.real
    return 2.0 * math.atan2(math.sqrt(r.x * r.x + r.y * r.y + r.z * r.z), abs(r.w))


def extract_motions(
    pair: AlignedPair,
    min_angle: float = DEFAULT_MIN_ANGLE,
    congruence_tol: float = DEFAULT_CONGRUENCE_TOL,
) -> MotionPairs:
    """Relative motions of both sensors over each consecutive grid interval."""
    da = [from_pose(p) for p in pair.poses_a]
    db = [from_pose(p) for p in pair.poses_b]
    out = MotionPairs()
    for i in range(1, len(pair)):
        a = dq_mul(dq_conjugate(da[i - 1]), da[i]).canonical()
        b = dq_mul(dq_conjugate(db[i - 1]), db[i]).canonical()
        dr = abs(a.real.w - b.real.w)
        dd = abs(a.dual.w - b.dual.w)
        out.scalar_mismatch.append((dr, dd))
        angle = _angle(a)
        if max(angle, _angle(b)) < min_angle:
            out.rejected_small += 1
            continue
        if dr > congruence_tol or dd > congruence_tol:
            out.rejected_incongruent += 1
            continue
        out.append(MotionPair(a, b, (float(pair.timestamps[i - 1]), float(pair.timestamps[i])), angle))
    return out


def build_s_matrix(m: MotionPair) -> np.ndarray:
    """6x8 block matrix with ``S @ (q_r, q_d) = 0`` for the true extrinsic."""
    ar, ad = m.a.real.vec, m.a.dual.vec
    br, bd = m.b.real.vec, m.b.dual.vec
    S = np.zeros((6, 8))
    S[0:3, 0] = ar - br
    S[0:3, 1:4] = skew(ar + br)
    S[3:6, 0] = ad - bd
    S[3:6, 1:4] = skew(ad + bd)
    S[3:6, 4] = ar - br
    S[3:6, 5:8] = skew(ar + br)
    return S


def stack(pairs) -> np.ndarray:
    return np.vstack([build_s_matrix(m) for m in pairs])


def _lambda_directions(a: float, b: float, c: float, lenient: bool) -> list[np.ndarray]:
    """Unit (l1, l2) solving ``a l1^2 + b l1 l2 + c l2^2 = 0``."""
    if a == 0.0 and c == 0.0:
        return [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    swap = abs(a) < abs(c)
    if swap:
        a, c = c, a
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        if lenient or -disc <= 1e-12 * (b * b + 4.0 * abs(a * c)):
            disc = 0.0
        else:
            raise NumericalFailure(f"orthogonality quadratic has no real root (discriminant {disc:.3e})")
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    roots = [q / a]
    roots.append(c / q if q != 0.0 else roots[0])
    dirs = []
    for s in roots:
        v = np.array([1.0, s]) if swap else np.array([s, 1.0])
        dirs.append(v / np.linalg.norm(v))
    return dirs


def solve_nullspace(M: np.ndarray, lenient: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Unit-DQ 8-vector in the two-dimensional near-nullspace of ``M``.

    Returns ``(x, singular_values)``.
    """
    _, sv, Vt = np.linalg.svd(M, full_matrices=False)
    v7, v8 = Vt[6], Vt[7]
    u1, w1 = v7[:4], v7[4:]
    u2, w2 = v8[:4], v8[4:]
    a = float(u1 @ w1)
    b = float(u1 @ w2 + u2 @ w1)
    c = float(u2 @ w2)
    best, best_val = None, -1.0
    for lam in _lambda_directions(a, b, c, lenient):
        val = float(np.sum((lam[0] * u1 + lam[1] * u2) ** 2))
        if val > best_val:
            best, best_val = lam, val
    if best_val <= 0.0:
        raise NumericalFailure("nullspace combination has a vanishing rotation part")
    lam = best / math.sqrt(best_val)
    x = lam[0] * v7 + lam[1] * v8
    return x, sv


def _orthonormalize(x: np.ndarray) -> DualQuaternion:
    return DualQuaternion.from_array(x).normalized()


def _batches(n: int, size: int | None) -> list[np.ndarray]:
    """Interleaved partition: batch k takes pairs k, k + nb, k + 2 nb, ...

    Every batch then spans the whole trajectory and sees its full axis
    diversity; contiguous batches of a few seconds of driving are often
    nearly planar on their own.
    """
    if size is None or size <= 0 or size >= n:
        return [np.arange(n)]
    nb = max(1, n // size)
    return [np.arange(k, n, nb) for k in range(nb)]


def solve(
    pairs,
    batch_size: int | None = DEFAULT_BATCH_SIZE,
    init: RigidFit | None = None,
    degeneracy_threshold: float = DEFAULT_DEGENERACY_THRESHOLD,
) -> CalibrationResult:
    """Recover the extrinsic DQ from matched motion pairs.

    Each interleaved batch of about ``batch_size`` pairs is solved on its own; batch
    solutions are sign-aligned and averaged with weights ``1/sigma_7**2``
    (the batch's seventh singular value), then re-orthonormalized.  ``init``,
    when given, picks the sign of the final DQ.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise InsufficientMotion(f"need at least 2 usable motion pairs, got {len(pairs)}")
    M = stack(pairs)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[3] == 0.0 or sv[4] / sv[3] < degeneracy_threshold:
        raise InsufficientMotion("motion pairs share a single screw axis; the extrinsic is unobservable")
    near_planar = sv[5] / sv[4] < degeneracy_threshold
    flag = Degeneracy.NEAR_PLANAR if near_planar else Degeneracy.WELL_CONDITIONED

    sols, weights, failed = [], [], 0
    blocks = M.reshape(-1, 6, 8)
    for idx in _batches(len(pairs), batch_size):
        try:
            x, bsv = solve_nullspace(blocks[idx].reshape(-1, 8), lenient=near_planar)
        except NumericalFailure:
            failed += 1
            continue
        sols.append(x)
        weights.append(1.0 / max(bsv[6] ** 2, _SIGMA_FLOOR))
    if not sols:
        raise NumericalFailure("no batch produced a real nullspace solution")

    ref = sols[int(np.argmax(weights))]
    acc = np.zeros(8)
    w = np.asarray(weights) / np.sum(weights)
    for wi, x in zip(w, sols):
        acc += wi * (x if x[:4] @ ref[:4] >= 0.0 else -x)
    q = _orthonormalize(acc)

    if init is not None:
        # the trajectory fit maps front -> rear, so the extrinsic rotation is its inverse
        if q.real.dot(init.rotation.conjugate()) < 0.0:
            q = -q
    else:
        q = q.canonical()

    diagnostics = {"sigma6_over_sigma5": float(sv[5] / sv[4])}
    if near_planar:
        q, axis = _pin_unobservable(q, M)
        diagnostics["unobservable_axis"] = axis.tolist()

    x = q.as_array()
    per_pair = np.linalg.norm((M @ x).reshape(-1, 6), axis=1)
    return CalibrationResult(
        extrinsic=q,
        singular_values=sv,
        pairs_used=len(pairs),
        mean_residual=float(np.mean(per_pair)),
        degeneracy_flag=flag,
        batches=len(sols) + failed,
        failed_batches=failed,
        diagnostics=diagnostics,
    )


def _pin_unobservable(q: DualQuaternion, M: np.ndarray) -> tuple[DualQuaternion, np.ndarray]:
    """Re-solve the dual part for the minimum-norm translation.

    With parallel rotation axes the translation along that axis (front frame)
    is unconstrained.  Keeping the recovered rotation, the dual part is taken
    as the minimum-norm least-squares solution of ``M x = 0`` plus the
    orthogonality row ``q_r . q_d = 0``; its free direction gives the axis.
    """
    qr = q.real.as_array()
    A = np.vstack([M[:, 4:], qr[None, :]])
    rhs = np.concatenate([-M[:, :4] @ qr, [0.0]])
    U, sv, Vt = np.linalg.svd(A, full_matrices=False)
    keep = sv > 1e-8 * sv[0]
    qd = Vt[keep].T @ ((U[:, keep].T @ rhs) / sv[keep])
    free = Quaternion.from_array(Vt[-1])
    n = (free * q.real.conjugate()).vec
    n = n / np.linalg.norm(n)
    n = -n if n[np.argmax(np.abs(n))] < 0 else n
    pinned = DualQuaternion(q.real, Quaternion.from_array(qd)).normalized()
    return pinned, n


def gate_pairs(pairs, init: RigidFit, max_axis_angle: float) -> tuple[list[MotionPair], int]:
    """Drop pairs whose rotation axes disagree with the initial rotation estimate."""
    R = init.rotation.conjugate().to_matrix()
    kept, dropped = [], 0
    for m in pairs:
        la, lb = m.a.real.vec, R @ m.b.real.vec
        na, nb = np.linalg.norm(la), np.linalg.norm(lb)
        if na == 0.0 or nb == 0.0:
            kept.append(m)
            continue
        cosang = float(np.clip(la @ lb / (na * nb), -1.0, 1.0))
        if math.acos(cosang) > max_axis_angle:
            dropped += 1
        else:
            kept.append(m)
    return kept, dropped


def express_in_base(extrinsic_fr: Pose, base_to_front: Pose) -> Pose:
    """``T_BR = T_BF * T_FR``."""
    return base_to_front @ extrinsic_fr
