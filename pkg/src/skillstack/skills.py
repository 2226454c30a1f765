"""Skill parameterization: the five-field skill spec and its validation.

A skill = skill type + trajectory generator + feedback controller +
termination handler + sensor subscriptions. Specs are plain immutable data;
value-range problems are reported by validate_skill rather than raised, so
wire-decoded specs can always be constructed and then judged.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .dmp import MAX_BASIS, MIN_BASIS
from .kinematics import N_JOINTS, Pose, Wrench
from .sim_robot import ControlMode, GRIPPER_MAX_WIDTH

DEFAULT_MAX_SKILL_DURATION = 60.0


class SkillType(enum.Enum):
    JOINT_POSITION = 1
    CARTESIAN_POSE = 2
    IMPEDANCE_POSE = 3
    FORCE = 4
    GRIPPER = 5
    TORQUE = 6


def _vec(values, n: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.shape != (n,):
        raise ValueError(f"expected {n} values, got {v.shape}")
    return v


# -- trajectory generators --------------------------------------------------

@dataclass(frozen=True)
class MinJerkJoint:
    goal: np.ndarray
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "goal", _vec(self.goal, N_JOINTS))


@dataclass(frozen=True)
class MinJerkPose:
    goal: Pose
    duration: float


@dataclass(frozen=True)
class JointDMP:
    weights: np.ndarray            # n_basis x 7
    goal: np.ndarray
    tau: float
    alpha: float = 25.0
    beta: float = 6.25
    alpha_x: float = 8.0 / 3.0
    n_basis: int = 10

    def __post_init__(self):
        object.__setattr__(self, "weights",
                           np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "goal", _vec(self.goal, N_JOINTS))


@dataclass(frozen=True)
class StreamedJointSetpoint:
    initial: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "initial", _vec(self.initial, N_JOINTS))


@dataclass(frozen=True)
class StreamedPoseSetpoint:
    initial: Pose


@dataclass(frozen=True)
class Hold:
    pass


@dataclass(frozen=True)
class GripperMove:
    target_width: float
    speed: float = 0.05
    grasp_force: float = 0.0


@dataclass(frozen=True)
class ConstantWrench:
    wrench: Wrench
    duration: float


TrajGenSpec = (MinJerkJoint | MinJerkPose | JointDMP | StreamedJointSetpoint
               | StreamedPoseSetpoint | Hold | GripperMove | ConstantWrench)

JOINT_PRODUCING = (MinJerkJoint, JointDMP, StreamedJointSetpoint, Hold)
POSE_PRODUCING = (MinJerkPose, StreamedPoseSetpoint)


# -- feedback controllers ---------------------------------------------------

@dataclass(frozen=True)
class InternalJointPD:
    kp: np.ndarray
    kd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kp", _vec(self.kp, N_JOINTS))
        object.__setattr__(self, "kd", _vec(self.kd, N_JOINTS))


@dataclass(frozen=True)
class CartesianImpedance:
    stiffness: np.ndarray          # N/m x3, N·m/rad x3
    damping: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "stiffness", _vec(self.stiffness, 6))
        object.__setattr__(self, "damping", _vec(self.damping, 6))


@dataclass(frozen=True)
class Passthrough:
    pass


@dataclass(frozen=True)
class ForceToTorque:
    pass


FeedbackSpec = InternalJointPD | CartesianImpedance | Passthrough | ForceToTorque
TORQUE_PRODUCING = (InternalJointPD, CartesianImpedance, ForceToTorque)


# -- termination handlers ---------------------------------------------------

@dataclass(frozen=True)
class TimeTerm:
    duration: float


@dataclass(frozen=True)
class JointGoalTerm:
    tolerance: float


@dataclass(frozen=True)
class PoseGoalTerm:
    pos_tol: float
    ori_tol: float


@dataclass(frozen=True)
class ContactTerm:
    force_threshold: np.ndarray    # 6 per-axis thresholds, inf = ignore axis

    def __post_init__(self):
        object.__setattr__(self, "force_threshold", _vec(self.force_threshold, 6))


@dataclass(frozen=True)
class AnyOf:
    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))


TermSpec = TimeTerm | JointGoalTerm | PoseGoalTerm | ContactTerm | AnyOf


# -- sensor updates ---------------------------------------------------------

@dataclass(frozen=True)
class SensorUpdate:
    topic: str
    timestamp: float
    payload: object                # JointSetpointPayload | PoseSetpointPayload


@dataclass(frozen=True)
class JointSetpointPayload:
    setpoint: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "setpoint", _vec(self.setpoint, N_JOINTS))


@dataclass(frozen=True)
class PoseSetpointPayload:
    setpoint: Pose


# -- the skill spec ---------------------------------------------------------

@dataclass(frozen=True)
class SkillSpec:
    skill_type: SkillType
    traj_gen: TrajGenSpec
    feedback: FeedbackSpec
    termination: TermSpec
    sensor_topics: tuple[str, ...] = ()
    max_duration: float = DEFAULT_MAX_SKILL_DURATION

    def __post_init__(self):
        object.__setattr__(self, "sensor_topics", tuple(self.sensor_topics))


def skill_control_mode(spec: SkillSpec) -> ControlMode:
    """The single control mode a validated skill runs under."""
    st, gen, fb = spec.skill_type, spec.traj_gen, spec.feedback
    if st in (SkillType.FORCE, SkillType.TORQUE):
        return ControlMode.EXTERNAL_TORQUE
    if st is SkillType.GRIPPER:
        return ControlMode.JOINT_POSITION_JOINT_IMPEDANCE  # arm holds
    streamed = isinstance(gen, (StreamedJointSetpoint, StreamedPoseSetpoint))
    if st is SkillType.IMPEDANCE_POSE:
        return (ControlMode.CARTESIAN_VELOCITY_CARTESIAN_IMPEDANCE if streamed
                else ControlMode.CARTESIAN_POSE_CARTESIAN_IMPEDANCE)
    if st is SkillType.CARTESIAN_POSE:
        return (ControlMode.CARTESIAN_VELOCITY_JOINT_IMPEDANCE if streamed
                else ControlMode.CARTESIAN_POSE_JOINT_IMPEDANCE)
    # joint position skill
    cart = isinstance(fb, CartesianImpedance)
    if streamed:
        return (ControlMode.JOINT_VELOCITY_CARTESIAN_IMPEDANCE if cart
                else ControlMode.JOINT_VELOCITY_JOINT_IMPEDANCE)
    return (ControlMode.JOINT_POSITION_CARTESIAN_IMPEDANCE if cart
            else ControlMode.JOINT_POSITION_JOINT_IMPEDANCE)


def _validate_gen(gen, out: list[str]):
    if isinstance(gen, (MinJerkJoint, MinJerkPose, ConstantWrench)):
        if not (np.isfinite(gen.duration) and gen.duration > 0):
            out.append("generator duration must be > 0")
    if isinstance(gen, MinJerkJoint) and not np.all(np.isfinite(gen.goal)):
        out.append("generator goal has non-finite entries")
    if isinstance(gen, JointDMP):
        if not (MIN_BASIS <= gen.n_basis <= MAX_BASIS):
            out.append(f"n_basis must be in [{MIN_BASIS}, {MAX_BASIS}]")
        elif gen.weights.shape != (gen.n_basis, N_JOINTS):
            out.append(f"DMP weights shape {gen.weights.shape} != "
                       f"({gen.n_basis}, {N_JOINTS})")
        if not (np.isfinite(gen.tau) and gen.tau > 0):
            out.append("DMP tau must be > 0")
        if not np.all(np.isfinite(gen.weights)):
            out.append("DMP weights have non-finite entries")
    if isinstance(gen, GripperMove):
        if not (0.0 <= gen.target_width <= GRIPPER_MAX_WIDTH):
            out.append(f"gripper width {gen.target_width} outside [0, {GRIPPER_MAX_WIDTH}]")
        if not gen.speed > 0:
            out.append("gripper speed must be > 0")
        if gen.grasp_force < 0:
            out.append("gripper grasp_force must be >= 0")


def _validate_feedback(fb, out: list[str]):
    if isinstance(fb, InternalJointPD):
        for name, g in (("kp", fb.kp), ("kd", fb.kd)):
            if not (np.all(np.isfinite(g)) and np.all(g >= 0)):
                out.append(f"gain out of range: {name} must be finite and >= 0")
    if isinstance(fb, CartesianImpedance):
        for name, g in (("stiffness", fb.stiffness), ("damping", fb.damping)):
            if not (np.all(np.isfinite(g)) and np.all(g >= 0)):
                out.append(f"gain out of range: {name} must be finite and >= 0")


def _validate_term(term, out: list[str], depth: int = 0):
    if depth > 2:
        out.append("termination nesting depth exceeds 2")
        return
    if isinstance(term, TimeTerm):
        if not (np.isfinite(term.duration) and term.duration > 0):
            out.append("time terminator duration must be > 0")
    elif isinstance(term, JointGoalTerm):
        if not term.tolerance > 0:
            out.append("joint goal tolerance must be > 0")
    elif isinstance(term, PoseGoalTerm):
        if not (term.pos_tol > 0 and term.ori_tol > 0):
            out.append("pose goal tolerances must be > 0")
    elif isinstance(term, ContactTerm):
        if not np.all(term.force_threshold > 0):
            out.append("contact thresholds must be > 0")
    elif isinstance(term, AnyOf):
        if not term.children:
            out.append("AnyOf terminator must have at least one child")
        for c in term.children:
            _validate_term(c, out, depth + 1)
    else:
        out.append(f"unknown terminator {type(term).__name__}")


_GEN_RULES: dict[SkillType, tuple] = {
    SkillType.GRIPPER: (GripperMove,),
    SkillType.FORCE: (ConstantWrench,),
    SkillType.IMPEDANCE_POSE: POSE_PRODUCING,
    SkillType.CARTESIAN_POSE: POSE_PRODUCING,
    SkillType.JOINT_POSITION: JOINT_PRODUCING,
    SkillType.TORQUE: JOINT_PRODUCING + POSE_PRODUCING + (ConstantWrench,),
}

_FB_RULES: dict[SkillType, tuple] = {
    SkillType.GRIPPER: (Passthrough,),
    SkillType.FORCE: (ForceToTorque,),
    SkillType.IMPEDANCE_POSE: (CartesianImpedance,),
    SkillType.CARTESIAN_POSE: (Passthrough,),
    # CartesianImpedance admitted here so joint commands can run under the
    # robot's internal Cartesian impedance (modes 2 and 4)
    SkillType.JOINT_POSITION: (InternalJointPD, Passthrough, CartesianImpedance),
    SkillType.TORQUE: TORQUE_PRODUCING,
}


def validate_skill(spec: SkillSpec) -> list[str]:
    """Compatibility-matrix and nested-invariant check; [] means ok."""
    out: list[str] = []
    if not isinstance(spec.skill_type, SkillType):
        return [f"unknown skill type {spec.skill_type!r}"]
    if not isinstance(spec.traj_gen, _GEN_RULES[spec.skill_type]):
        out.append(f"incompatible generator {type(spec.traj_gen).__name__} "
                   f"for {spec.skill_type.name}")
    if not isinstance(spec.feedback, _FB_RULES[spec.skill_type]):
        out.append(f"incompatible feedback {type(spec.feedback).__name__} "
                   f"for {spec.skill_type.name}")
    _validate_gen(spec.traj_gen, out)
    _validate_feedback(spec.feedback, out)
    _validate_term(spec.termination, out)
    if not (np.isfinite(spec.max_duration) and spec.max_duration > 0):
        out.append("max_duration must be > 0")
    for t in spec.sensor_topics:
        if not isinstance(t, str) or not t:
            out.append("sensor topics must be non-empty strings")
    return out
