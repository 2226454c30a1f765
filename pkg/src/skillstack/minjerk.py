"""Minimum-jerk (quintic) time scaling and the trajectory blends built on it."""
from __future__ import annotations

import numpy as np

from .kinematics import Pose, quat_slerp


class InvalidDuration(ValueError):
    pass


def minjerk_scalar(t: float, T: float) -> tuple[float, float, float]:
    """Quintic scaling s(t) with zero boundary velocity/acceleration.

    Returns (s, ds/dt, d2s/dt2); clamps to the terminal value for t >= T.
    """
    if not T > 0:
        raise InvalidDuration(f"duration must be > 0, got {T}")
    if t < 0:
        raise InvalidDuration(f"time must be >= 0, got {t}")
    tau = t / T
    if tau >= 1.0:
        return 1.0, 0.0, 0.0
    s = tau**3 * (10.0 - 15.0 * tau + 6.0 * tau * tau)
    ds = tau**2 * (30.0 - 60.0 * tau + 30.0 * tau * tau) / T
    dds = tau * (60.0 - 180.0 * tau + 120.0 * tau * tau) / (T * T)
    return s, ds, dds


def minjerk_joint(start: np.ndarray, goal: np.ndarray, duration: float,
                  t: float) -> tuple[np.ndarray, np.ndarray]:
    """Joint-space blend: (q_d, dq_d) at time t; constant past the end."""
    s, ds, _ = minjerk_scalar(t, duration)
    delta = goal - start
    return start + s * delta, ds * delta


def minjerk_pose(start: Pose, goal: Pose, duration: float, t: float) -> Pose:
    """Pose blend: linear position, shortest-arc slerp, both on the quintic."""
    s, _, _ = minjerk_scalar(t, duration)
    pos = start.position + s * (goal.position - start.position)
    return Pose(pos, quat_slerp(start.quaternion, goal.quaternion, s))
