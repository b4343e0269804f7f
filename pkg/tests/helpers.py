"""Shared random generators and matrix oracles for the tests."""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from dqcalib.dq_core import DualQuaternion, Pose, Quaternion, from_pose


def random_pose(rng, t_scale=5.0, timestamp=0.0) -> Pose:
    R = Rotation.random(random_state=rng).as_matrix()
    return Pose(timestamp, Quaternion.from_matrix(R), tuple(rng.uniform(-t_scale, t_scale, 3)))


def random_unit_dq(rng) -> DualQuaternion:
    return from_pose(random_pose(rng))


def matrix(pose: Pose) -> np.ndarray:
    """Homogeneous matrix built from scipy's quaternion conversion (independent of dq_core)."""
    r = pose.rotation
    T = np.eye(4)
    T[:3, :3] = Rotation.from_quat([r.x, r.y, r.z, r.w]).as_matrix()
    T[:3, 3] = pose.translation
    return T


def pose_close(a: Pose, b: Pose, tol=1e-9) -> bool:
    return np.allclose(matrix(a), matrix(b), atol=tol, rtol=0.0)


def dq_close(a: DualQuaternion, b: DualQuaternion, tol=1e-9) -> bool:
    x, y = a.as_array(), b.as_array()
    return np.allclose(x, y, atol=tol) or np.allclose(x, -y, atol=tol)


def rot_angle(Ra, Rb) -> float:
    return float(Rotation.from_matrix(Ra.T @ Rb).magnitude())


ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((number, title, passed, detail))
    print(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
