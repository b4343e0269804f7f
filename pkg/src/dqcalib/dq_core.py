"""Quaternion and dual-quaternion algebra.

Quaternions are stored as ``(w, x, y, z)`` with the Hamilton product.  A unit
dual quaternion ``q = q_r + eps * q_d`` encodes the rigid motion ``T = [R t]``
with ``q_r = q(R)`` and ``q_d = 1/2 * (0, t) * q(R)``.

Poses follow the ``T_AB`` convention: ``p_A = R_AB p_B + t_AB``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NonUnitDQ


@dataclass
class Tolerances:
    """Global numeric tolerances (mutable so callers can tighten/loosen them)."""

    unit_pre: float = 1e-6
    unit_post: float = 1e-9
    pure_translation_angle: float = 1e-8


TOL = Tolerances()


@dataclass(frozen=True, slots=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> Quaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def pure(cls, v: Sequence[float]) -> Quaternion:
        return cls(0.0, float(v[0]), float(v[1]), float(v[2]))

    @classmethod
    def from_array(cls, a) -> Quaternion:
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> Quaternion:
        ax = np.asarray(axis, dtype=float)
        n = np.linalg.norm(ax)
        if n == 0.0:
            return cls.identity()
        s = math.sin(0.5 * angle) / n
        return cls(math.cos(0.5 * angle), ax[0] * s, ax[1] * s, ax[2] * s)

    @classmethod
    def from_rotvec(cls, rv: Sequence[float]) -> Quaternion:
        rv = np.asarray(rv, dtype=float)
        angle = float(np.linalg.norm(rv))
        if angle < 1e-12:
            # second-order accurate for tiny angles
            h = 0.5 * rv
            return cls(1.0, h[0], h[1], h[2]).normalized()
        return cls.from_axis_angle(rv, angle)

    @classmethod
    def from_matrix(cls, m) -> Quaternion:
        """Shepperd's method; returns the representative with ``w >= 0``."""
        m = np.asarray(m, dtype=float)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0.0:
            s = 2.0 * math.sqrt(tr + 1.0)
            q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
        return cls(*q).normalized().canonical()

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def norm_sq(self) -> float:
        return self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def normalized(self) -> Quaternion:
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize a zero quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def conjugate(self) -> Quaternion:
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def dot(self, other: Quaternion) -> float:
        return self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z

    def scaled(self, s: float) -> Quaternion:
        return Quaternion(self.w * s, self.x * s, self.y * s, self.z * s)

    def __add__(self, other: Quaternion) -> Quaternion:
        return Quaternion(self.w + other.w, self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: Quaternion) -> Quaternion:
        return Quaternion(self.w - other.w, self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self) -> Quaternion:
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: Quaternion) -> Quaternion:
        return q_mul(self, other)

    def canonical(self) -> Quaternion:
        return -self if _negative_leading(self.as_array()) else self

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def rotate(self, v: Sequence[float]) -> np.ndarray:
        return self.to_matrix() @ np.asarray(v, dtype=float)

    def angle(self) -> float:
        """Rotation angle in [0, pi] of the (assumed unit) quaternion."""
        return 2.0 * math.atan2(math.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2), abs(self.w))


def q_mul(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product ``a * b``."""
    return Quaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def _negative_leading(arr) -> bool:
    """True when the sign convention (w >= 0, ties by first nonzero > 0) asks for a flip."""
    for c in arr:
        if c != 0.0:
            return c < 0.0
    return False


@dataclass(frozen=True, slots=True)
class DualQuaternion:
    real: Quaternion
    dual: Quaternion

    @classmethod
    def identity(cls) -> DualQuaternion:
        return cls(Quaternion.identity(), Quaternion(0.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> DualQuaternion:
        return cls(Quaternion.identity(), Quaternion.pure(t).scaled(0.5))

    @classmethod
    def from_rt(cls, rotation: Quaternion, translation: Sequence[float]) -> DualQuaternion:
        r = rotation.normalized().canonical()
        return cls(r, q_mul(Quaternion.pure(translation), r).scaled(0.5))

    @classmethod
    def from_array(cls, a) -> DualQuaternion:
        return cls(Quaternion.from_array(a[:4]), Quaternion.from_array(a[4:8]))

    def as_array(self) -> np.ndarray:
        return np.array([self.real.w, self.real.x, self.real.y, self.real.z,
                         self.dual.w, self.dual.x, self.dual.y, self.dual.z])

    def __mul__(self, other: DualQuaternion) -> DualQuaternion:
        return dq_mul(self, other)

    def __neg__(self) -> DualQuaternion:
        return DualQuaternion(-self.real, -self.dual)

    def scaled(self, s: float) -> DualQuaternion:
        return DualQuaternion(self.real.scaled(s), self.dual.scaled(s))

    def conjugate(self) -> DualQuaternion:
        return dq_conjugate(self)

    def canonical(self) -> DualQuaternion:
        """Representative of ``{q, -q}`` whose real part has non-negative w."""
        if _negative_leading(self.real.as_array()):
            return -self
        return self

    def is_unit(self, tol: float | None = None) -> bool:
        tol = TOL.unit_post if tol is None else tol
        return abs(self.real.norm_sq() - 1.0) <= tol and abs(self.real.dot(self.dual)) <= tol

    def translation(self) -> np.ndarray:
        return 2.0 * q_mul(self.dual, self.real.conjugate()).vec

    def normalized(self) -> DualQuaternion:
        """Project onto unit DQs: unit real part, dual part orthogonal to it."""
        n = self.real.norm()
        r = self.real.scaled(1.0 / n)
        d = self.dual.scaled(1.0 / n)
        d = d - r.scaled(r.dot(d))
        return DualQuaternion(r, d)


def dq_mul(a: DualQuaternion, b: DualQuaternion) -> DualQuaternion:
    return DualQuaternion(
        q_mul(a.real, b.real),
        q_mul(a.real, b.dual) + q_mul(a.dual, b.real),
    )


def dq_conjugate(q: DualQuaternion) -> DualQuaternion:
    return DualQuaternion(q.real.conjugate(), q.dual.conjugate())


def dq_norm_sq(q: DualQuaternion) -> tuple[float, float]:
    """``q * q_conj`` as a dual scalar ``(real, dual)``."""
    p = dq_mul(q, dq_conjugate(q))
    return p.real.w, p.dual.w


def require_unit(q: DualQuaternion, what: str) -> None:
    if not q.is_unit(TOL.unit_pre):
        r, d = dq_norm_sq(q)
        raise NonUnitDQ(f"{what}: expected unit dual quaternion, |q|^2 = ({r:.3g}, {d:.3g})")


def dq_inverse(q: DualQuaternion) -> DualQuaternion:
    require_unit(q, "dq_inverse")
    return dq_conjugate(q)


@dataclass(frozen=True, slots=True)
class Pose:
    """Timestamped rigid transform; ``translation`` in meters."""

    timestamp: float
    rotation: Quaternion
    translation: tuple[float, float, float]

    def __post_init__(self):
        if abs(self.rotation.norm_sq() - 1.0) > 2 * TOL.unit_post:
            raise ValueError(f"pose rotation is not unit (|q|^2 = {self.rotation.norm_sq()!r})")
        t = self.translation
        if not isinstance(t, tuple) or len(t) != 3 or not all(isinstance(c, float) for c in t):
            object.__setattr__(self, "translation", tuple(float(c) for c in t))

    @classmethod
    def identity(cls, timestamp: float = 0.0) -> Pose:
        return cls(timestamp, Quaternion.identity(), (0.0, 0.0, 0.0))

    @classmethod
    def from_matrix(cls, m, timestamp: float = 0.0) -> Pose:
        m = np.asarray(m, dtype=float)
        return cls(timestamp, Quaternion.from_matrix(m[:3, :3]), tuple(m[:3, 3]))

    @classmethod
    def from_rotvec(cls, rotvec, translation, timestamp: float = 0.0) -> Pose:
        return cls(timestamp, Quaternion.from_rotvec(rotvec), tuple(translation))

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def rotation_matrix(self) -> np.ndarray:
        return self.rotation.to_matrix()

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.to_matrix()
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: Pose) -> Pose:
        """Composition ``self * other``; the result keeps ``other``'s timestamp."""
        r = q_mul(self.rotation, other.rotation).normalized()
        t = self.rotation.rotate(other.translation) + self.t
        return Pose(other.timestamp, r, tuple(t))

    def inverse(self) -> Pose:
        rc = self.rotation.conjugate()
        return Pose(self.timestamp, rc, tuple(-rc.rotate(self.translation)))

    def transform_point(self, p) -> np.ndarray:
        return self.rotation.rotate(p) + self.t

    def with_timestamp(self, timestamp: float) -> Pose:
        return Pose(timestamp, self.rotation, self.translation)


def from_pose(p: Pose) -> DualQuaternion:
    """``q(T) = q(R) + eps * 1/2 * q(t) q(R)``, sign-canonical."""
    return DualQuaternion.from_rt(p.rotation, p.translation)


def to_pose(q: DualQuaternion, timestamp: float = 0.0) -> Pose:
    require_unit(q, "to_pose")
    q = q.normalized()
    return Pose(timestamp, q.real.canonical(), tuple(q.translation()))


@dataclass(frozen=True)
class Screw:
    angle: float
    pitch: float
    direction: np.ndarray
    moment: np.ndarray
    pure_translation: bool = False


def screw_params(q: DualQuaternion) -> Screw:
    """Decompose a unit DQ into rotation angle, pitch and Pluecker axis line.

    Uses the canonical sign so the angle lies in [0, pi].  Below
    ``TOL.pure_translation_angle`` the axis is taken along the translation.
    """
    require_unit(q, "screw_params")
    q = q.canonical()
    r, d = q.real, q.dual
    s = math.sqrt(r.x * r.x + r.y * r.y + r.z * r.z)
    half = math.atan2(s, r.w)
    angle = 2.0 * half
    if angle < TOL.pure_translation_angle:
        t = q.translation()
        n = float(np.linalg.norm(t))
        direction = t / n if n > 0.0 else np.array([0.0, 0.0, 1.0])
        return Screw(0.0, n, direction, np.zeros(3), pure_translation=True)
    direction = r.vec / s
    pitch = -2.0 * d.w / s
    moment = (d.vec - 0.5 * pitch * r.w * direction) / s
    return Screw(angle, pitch, direction, moment)


def from_screw(angle: float, pitch: float, direction, moment) -> DualQuaternion:
    direction = np.asarray(direction, dtype=float)
    moment = np.asarray(moment, dtype=float)
    c, s = math.cos(0.5 * angle), math.sin(0.5 * angle)
    real = Quaternion(c, *(s * direction))
    dual = Quaternion(-0.5 * pitch * s, *(s * moment + 0.5 * pitch * c * direction))
    return DualQuaternion(real, dual)


def twist_exp(omega, v) -> DualQuaternion:
    """Unit DQ of ``exp([omega, v])`` for a body twist applied over unit time.

    ``omega`` is the rotation vector, ``v`` the linear velocity expressed in
    the moving frame.  Uses the SE(3) left Jacobian with series expansions
    near zero rotation.
    """
    omega = np.asarray(omega, dtype=float)
    v = np.asarray(v, dtype=float)
    th = float(np.linalg.norm(omega))
    W = skew(omega)
    if th < 1e-6:
        b = 0.5 - th * th / 24.0
        c = 1.0 / 6.0 - th * th / 120.0
    else:
        b = (1.0 - math.cos(th)) / (th * th)
        c = (th - math.sin(th)) / (th ** 3)
    V = np.eye(3) + b * W + c * (W @ W)
    return DualQuaternion.from_rt(Quaternion.from_rotvec(omega), V @ v)


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
