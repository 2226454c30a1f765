"""Kinematics of a 7-DOF revolute arm: poses, forward kinematics, Jacobian, limits.

All functions here are pure; ArmModel is immutable after load and safe to
share across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

N_JOINTS = 7


class KinematicsError(ValueError):
    pass


def as_joint_vector(values) -> np.ndarray:
    """Validate and copy a length-7 finite real vector."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.shape != (N_JOINTS,):
        raise KinematicsError(f"joint vector must have {N_JOINTS} entries, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise KinematicsError("joint vector has non-finite entries")
    return v.copy()


# ---------------------------------------------------------------------------
# quaternion helpers (wxyz order throughout)

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise KinematicsError("cannot normalize near-zero quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([w, -x, -y, -z])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix to canonical (w >= 0) unit quaternion, Shepperd's method."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax([R[0, 0], R[1, 1], R[2, 2]]))
        if i == 0:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                          (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
        elif i == 1:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                          0.25 * s, (R[1, 2] + R[2, 1]) / s])
        else:
            s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                          (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return quat_normalize(q)


def quat_to_axis_angle(q) -> np.ndarray:
    """Shortest-arc rotation vector (axis * angle, angle in [0, pi])."""
    q = quat_normalize(q)
    w = min(1.0, max(-1.0, q[0]))
    angle = 2.0 * math.acos(w)
    s = math.sqrt(max(0.0, 1.0 - w * w))
    if s < 1e-12:
        # angle ~ 0 or ~ pi with degenerate sine; near pi the axis is the
        # vector part itself, near 0 the small-angle form applies.
        return 2.0 * q[1:4]
    axis = q[1:4] / s
    if angle > math.pi:
        angle = 2.0 * math.pi - angle
        axis = -axis
    if abs(angle - math.pi) < 1e-12 and axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis  # pi-rotation sign tie: pick positive-leading axis
    return axis * angle


def quat_slerp(qa, qb, s: float) -> np.ndarray:
    """Shortest-arc spherical interpolation, s in [0, 1]."""
    qa = quat_normalize(qa)
    qb = quat_normalize(qb)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(qa + s * (qb - qa))
    theta = math.acos(min(1.0, dot))
    st = math.sin(theta)
    return quat_normalize(
        qa * (math.sin((1.0 - s) * theta) / st) + qb * (math.sin(s * theta) / st))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pose:
    """Rigid transform: position (m) and canonical unit quaternion (wxyz)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3).copy()
        if not np.all(np.isfinite(p)):
            raise KinematicsError("pose position has non-finite entries")
        q = np.asarray(self.quaternion, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(q)):
            raise KinematicsError("pose quaternion has non-finite entries")
        q = quat_normalize(q)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "quaternion", q)
        p.setflags(write=False)
        q.setflags(write=False)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def compose(self, other: "Pose") -> "Pose":
        """self * other (other expressed in self's frame)."""
        R = quat_to_matrix(self.quaternion)
        return Pose(self.position + R @ other.position,
                    quat_multiply(self.quaternion, other.quaternion))

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.quaternion)
        Ri = quat_to_matrix(qi)
        return Pose(-(Ri @ self.position), qi)

    def almost_equal(self, other: "Pose", pos_tol=1e-9, ori_tol=1e-9) -> bool:
        if np.max(np.abs(self.position - other.position)) > pos_tol:
            return False
        return abs(abs(float(np.dot(self.quaternion, other.quaternion))) - 1.0) <= ori_tol


@dataclass(frozen=True)
class Twist:
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=np.float64).reshape(3).copy()
        ang = np.asarray(self.angular, dtype=np.float64).reshape(3).copy()
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise KinematicsError("twist has non-finite entries")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        f = np.asarray(self.force, dtype=np.float64).reshape(3).copy()
        t = np.asarray(self.torque, dtype=np.float64).reshape(3).copy()
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(t))):
            raise KinematicsError("wrench has non-finite entries")
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])

    @staticmethod
    def from_array(a) -> "Wrench":
        a = np.asarray(a, dtype=np.float64).reshape(6)
        return Wrench(a[:3], a[3:])


@dataclass(frozen=True)
class ArmModel:
    """Modified-DH description of a 7-joint revolute chain plus joint limits.

    Rows of dh are (a, d, alpha, theta_offset); per-joint transform is
    RotX(alpha) TransX(a) RotZ(theta + offset) TransZ(d), Craig convention.
    """

    dh_a: np.ndarray
    dh_d: np.ndarray
    dh_alpha: np.ndarray
    dh_theta_offset: np.ndarray
    ee_offset: Pose
    q_min: np.ndarray
    q_max: np.ndarray
    dq_max: np.ndarray
    tau_max: np.ndarray
    inertia: np.ndarray
    viscous_friction: np.ndarray
    q_home: np.ndarray

    def __post_init__(self):
        for name in ("dh_a", "dh_d", "dh_alpha", "dh_theta_offset", "q_min",
                     "q_max", "dq_max", "tau_max", "inertia",
                     "viscous_friction", "q_home"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1).copy()
            if v.shape != (N_JOINTS,):
                raise KinematicsError(f"{name} must have {N_JOINTS} entries")
            if not np.all(np.isfinite(v)):
                raise KinematicsError(f"{name} has non-finite entries")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if not np.all(self.q_min < self.q_max):
            raise KinematicsError("q_min must be < q_max for every joint")
        for name in ("dq_max", "tau_max", "inertia", "viscous_friction"):
            if not np.all(getattr(self, name) > 0):
                raise KinematicsError(f"{name} entries must be positive")
        if np.any(self.q_home < self.q_min) or np.any(self.q_home > self.q_max):
            raise KinematicsError("q_home outside position limits")

    def joint_transform(self, i: int, qi: float) -> np.ndarray:
        a, d = self.dh_a[i], self.dh_d[i]
        alpha = self.dh_alpha[i]
        theta = qi + self.dh_theta_offset[i]
        ct, st = math.cos(theta), math.sin(theta)
        ca, sa = math.cos(alpha), math.sin(alpha)
        return np.array([
            [ct, -st, 0.0, a],
            [st * ca, ct * ca, -sa, -d * sa],
            [st * sa, ct * sa, ca, d * ca],
            [0.0, 0.0, 0.0, 1.0],
        ])


def _chain_transforms(model: ArmModel, q: np.ndarray) -> list[np.ndarray]:
    """Cumulative base->joint-frame transforms, one per joint, then the ee."""
    T = np.eye(4)
    out = []
    for i in range(N_JOINTS):
        T = T @ model.joint_transform(i, q[i])
        out.append(T)
    ee = np.eye(4)
    ee[:3, :3] = quat_to_matrix(model.ee_offset.quaternion)
    ee[:3, 3] = model.ee_offset.position
    out.append(out[-1] @ ee)
    return out


def forward_kinematics(model: ArmModel, q) -> Pose:
    """End-effector pose in the base frame; total on finite input."""
    q = as_joint_vector(q)
    T = _chain_transforms(model, q)[-1]
    return Pose(T[:3, 3], matrix_to_quat(T[:3, :3]))


def jacobian(model: ArmModel, q) -> np.ndarray:
    """Geometric 6x7 Jacobian at the end-effector, base frame.

    Column i is (z_i x (p_ee - p_i); z_i) for revolute joint i.
    """
    q = as_joint_vector(q)
    chain = _chain_transforms(model, q)
    p_ee = chain[-1][:3, 3]
    J = np.zeros((6, N_JOINTS))
    for i in range(N_JOINTS):
        # axis/origin of joint i are those of frame i-1's z after RotX(alpha_i):
        # equivalently frame i's z axis and origin in Craig's convention.
        z_i = chain[i][:3, 2]
        p_i = chain[i][:3, 3]
        J[:3, i] = np.cross(z_i, p_ee - p_i)
        J[3:, i] = z_i
    return J


def pose_error(current: Pose, desired: Pose) -> np.ndarray:
    """6-vector error: position difference then shortest-arc rotation vector."""
    dp = desired.position - current.position
    q_rel = quat_multiply(desired.quaternion, quat_conjugate(current.quaternion))
    return np.concatenate([dp, quat_to_axis_angle(q_rel)])


@dataclass(frozen=True)
class LimitFlags:
    position: bool = False
    velocity: bool = False
    torque: bool = False

    @property
    def any(self) -> bool:
        return self.position or self.velocity or self.torque


def clamp_joint_command(model: ArmModel, q, dq, tau):
    """Clamp (q, dq, tau) into the model limits; flags say what was clamped."""
    q = as_joint_vector(q)
    dq = as_joint_vector(dq)
    tau = as_joint_vector(tau)
    qc = np.clip(q, model.q_min, model.q_max)
    dqc = np.clip(dq, -model.dq_max, model.dq_max)
    tauc = np.clip(tau, -model.tau_max, model.tau_max)
    flags = LimitFlags(position=bool(np.any(qc != q)),
                       velocity=bool(np.any(dqc != dq)),
                       torque=bool(np.any(tauc != tau)))
    return qc, dqc, tauc, flags
