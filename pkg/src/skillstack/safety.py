"""Virtual walls and workspace limits: axis-aligned box checks run every tick."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import ArmModel, Pose


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in the base frame."""

    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3).copy()
        h = np.asarray(self.half_extents, dtype=np.float64).reshape(3).copy()
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(h))):
            raise ValueError("box has non-finite entries")
        if not np.all(h > 0):
            raise ValueError("box half_extents must be strictly positive")
        c.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)


def boxes_intersect(a: Box, b: Box) -> bool:
    """Closed overlap test: touching faces count as intersecting."""
    return bool(np.all(np.abs(a.center - b.center) <= a.half_extents + b.half_extents))


def box_contains(outer: Box, inner: Box) -> bool:
    """True iff inner lies entirely within outer (closed)."""
    return bool(np.all(np.abs(inner.center - outer.center) + inner.half_extents
                       <= outer.half_extents))


@dataclass(frozen=True)
class SafetyConfig:
    enabled: bool = True
    walls: tuple[Box, ...] = ()
    workspace: Box | None = None
    ee_half_extents: np.ndarray = field(
        default_factory=lambda: np.array([0.05, 0.05, 0.05]))

    def __post_init__(self):
        h = np.asarray(self.ee_half_extents, dtype=np.float64).reshape(3).copy()
        if not np.all(h > 0):
            raise ValueError("ee_half_extents must be strictly positive")
        h.setflags(write=False)
        object.__setattr__(self, "ee_half_extents", h)
        object.__setattr__(self, "walls", tuple(self.walls))


@dataclass(frozen=True)
class Violation:
    kind: str      # "wall" | "workspace" | "joint_limit"
    detail: str


def check_safety(cfg: SafetyConfig, ee_pose: Pose, q, model: ArmModel) -> Violation | None:
    """Verdict on a commanded next state; None means ok."""
    if not cfg.enabled:
        return None
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if np.any(q < model.q_min) or np.any(q > model.q_max):
        bad = np.where((q < model.q_min) | (q > model.q_max))[0]
        return Violation("joint_limit", f"joints {bad.tolist()} outside position limits")
    ee_box = Box(ee_pose.position, cfg.ee_half_extents)
    for i, wall in enumerate(cfg.walls):
        if boxes_intersect(ee_box, wall):
            return Violation("wall", f"end-effector box intersects wall {i}")
    if cfg.workspace is not None and not box_contains(cfg.workspace, ee_box):
        return Violation("workspace", "end-effector box leaves the workspace")
    return None
