"""Per-tick skill execution: generator state machines, feedback laws,
termination predicates. Everything here is owned by the control loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dmp import DmpParams, DmpState
from .kinematics import (
    ArmModel,
    N_JOINTS,
    Pose,
    Twist,
    Wrench,
    pose_error,
    quat_conjugate,
    quat_multiply,
    quat_slerp,
    quat_to_axis_angle,
)
from .minjerk import minjerk_joint, minjerk_pose
from .sim_robot import ControlMode, GripperCommand, RobotCommand, RobotState
from .skills import (
    CartesianImpedance,
    ConstantWrench,
    ContactTerm,
    AnyOf,
    ForceToTorque,
    GripperMove,
    Hold,
    InternalJointPD,
    JointDMP,
    JointGoalTerm,
    JointSetpointPayload,
    MinJerkJoint,
    MinJerkPose,
    PoseGoalTerm,
    PoseSetpointPayload,
    SensorUpdate,
    SkillSpec,
    SkillType,
    StreamedJointSetpoint,
    StreamedPoseSetpoint,
    TimeTerm,
    skill_control_mode,
)

GOAL_SPEED_GATE = 0.01          # rad/s, arrival gate for goal terminators
STREAM_LINEAR_CAP = 0.5         # m/s, pose-stream rate limit
STREAM_ANGULAR_CAP = 1.0        # rad/s


class TypeMismatch(TypeError):
    """Sensor payload not admissible for the subscribed generator."""


@dataclass
class GenOutput:
    """What a generator produced this tick; at most one family is set."""
    q_d: np.ndarray | None = None
    dq_d: np.ndarray | None = None
    pose_d: Pose | None = None
    twist_d: Twist | None = None
    wrench_d: Wrench | None = None
    gripper: GripperCommand | None = None


@dataclass(frozen=True)
class GoalContext:
    """Targets the goal terminators compare against."""
    goal_q: np.ndarray | None = None
    goal_pose: Pose | None = None


class TrajectoryGenerator:
    """Base: initialized from the live robot state, stepped once per tick."""

    def __init__(self, spec, state: RobotState, model: ArmModel):
        self.spec = spec
        self.model = model

    def step(self, t: float, dt: float) -> GenOutput:
        raise NotImplementedError

    def update(self, u: SensorUpdate):
        raise TypeMismatch(f"{type(self).__name__} accepts no sensor updates")

    def goal_context(self) -> GoalContext:
        return GoalContext()


class MinJerkJointGen(TrajectoryGenerator):
    def __init__(self, spec: MinJerkJoint, state, model):
        super().__init__(spec, state, model)
        self.start = state.q.copy()

    def step(self, t, dt):
        q_d, dq_d = minjerk_joint(self.start, self.spec.goal, self.spec.duration, t)
        return GenOutput(q_d=q_d, dq_d=dq_d)

    def goal_context(self):
        return GoalContext(goal_q=self.spec.goal)


class MinJerkPoseGen(TrajectoryGenerator):
    def __init__(self, spec: MinJerkPose, state, model):
        super().__init__(spec, state, model)
        self.start = state.ee_pose

    def step(self, t, dt):
        return GenOutput(pose_d=minjerk_pose(self.start, self.spec.goal,
                                             self.spec.duration, t))

    def goal_context(self):
        return GoalContext(goal_pose=self.spec.goal)


class JointDMPGen(TrajectoryGenerator):
    def __init__(self, spec: JointDMP, state, model):
        super().__init__(spec, state, model)
        params = DmpParams(weights=spec.weights, goal=spec.goal, tau=spec.tau,
                           alpha=spec.alpha, beta=spec.beta,
                           alpha_x=spec.alpha_x, n_basis=spec.n_basis)
        self.dmp = DmpState(params, state.q.copy())

    def step(self, t, dt):
        y, yd = self.dmp.step(dt)
        return GenOutput(q_d=y, dq_d=yd)

    def goal_context(self):
        return GoalContext(goal_q=self.spec.goal)


class HoldGen(TrajectoryGenerator):
    def __init__(self, spec: Hold, state, model):
        super().__init__(spec, state, model)
        self.q_hold = state.q.copy()

    def step(self, t, dt):
        return GenOutput(q_d=self.q_hold.copy(), dq_d=np.zeros(N_JOINTS))

    def goal_context(self):
        return GoalContext(goal_q=self.q_hold)


class StreamedJointGen(TrajectoryGenerator):
    """Rate-limited pursuit of the latest streamed joint setpoint."""

    def __init__(self, spec: StreamedJointSetpoint, state, model):
        super().__init__(spec, state, model)
        self.current = state.q.copy()
        self.target = spec.initial.copy()

    def update(self, u: SensorUpdate):
        if not isinstance(u.payload, JointSetpointPayload):
            raise TypeMismatch("joint-setpoint stream got a "
                               f"{type(u.payload).__name__}")
        self.target = u.payload.setpoint.copy()

    def step(self, t, dt):
        cap = self.model.dq_max * dt
        delta = np.clip(self.target - self.current, -cap, cap)
        self.current = self.current + delta
        return GenOutput(q_d=self.current.copy(), dq_d=delta / dt)

    def goal_context(self):
        return GoalContext(goal_q=self.target)


class StreamedPoseGen(TrajectoryGenerator):
    """Rate-limited pursuit of the latest streamed pose setpoint."""

    def __init__(self, spec: StreamedPoseSetpoint, state, model):
        super().__init__(spec, state, model)
        self.current = state.ee_pose
        self.target = spec.initial

    def update(self, u: SensorUpdate):
        if not isinstance(u.payload, PoseSetpointPayload):
            raise TypeMismatch("pose-setpoint stream got a "
                               f"{type(u.payload).__name__}")
        self.target = u.payload.setpoint

    def step(self, t, dt):
        dp = self.target.position - self.current.position
        dist = float(np.linalg.norm(dp))
        lin_step = min(dist, STREAM_LINEAR_CAP * dt)
        v = dp / dist * (lin_step / dt) if dist > 1e-12 else np.zeros(3)
        new_pos = self.current.position + v * dt

        q_rel = quat_multiply(self.target.quaternion,
                              quat_conjugate(self.current.quaternion))
        rotvec = quat_to_axis_angle(q_rel)
        angle = float(np.linalg.norm(rotvec))
        frac = 1.0 if angle < 1e-12 else min(1.0, STREAM_ANGULAR_CAP * dt / angle)
        new_quat = quat_slerp(self.current.quaternion, self.target.quaternion, frac)
        omega = rotvec * (frac / dt)

        self.current = Pose(new_pos, new_quat)
        return GenOutput(pose_d=self.current, twist_d=Twist(v, omega))

    def goal_context(self):
        return GoalContext(goal_pose=self.target)


class GripperMoveGen(TrajectoryGenerator):
    def __init__(self, spec: GripperMove, state, model):
        super().__init__(spec, state, model)
        self.q_hold = state.q.copy()
        self.cmd = GripperCommand(target_width=spec.target_width,
                                  speed=spec.speed, grasp_force=spec.grasp_force)
        self.sent = False

    def step(self, t, dt):
        out = GenOutput(q_d=self.q_hold.copy(), dq_d=np.zeros(N_JOINTS),
                        gripper=None if self.sent else self.cmd)
        self.sent = True
        return out

    def goal_context(self):
        return GoalContext(goal_q=self.q_hold)


class ConstantWrenchGen(TrajectoryGenerator):
    def __init__(self, spec: ConstantWrench, state, model):
        super().__init__(spec, state, model)

    def step(self, t, dt):
        w = self.spec.wrench if t < self.spec.duration else Wrench()
        return GenOutput(wrench_d=w)


_GEN_CLASSES = {
    MinJerkJoint: MinJerkJointGen,
    MinJerkPose: MinJerkPoseGen,
    JointDMP: JointDMPGen,
    Hold: HoldGen,
    StreamedJointSetpoint: StreamedJointGen,
    StreamedPoseSetpoint: StreamedPoseGen,
    GripperMove: GripperMoveGen,
    ConstantWrench: ConstantWrenchGen,
}


def make_generator(spec: SkillSpec, state: RobotState,
                   model: ArmModel) -> TrajectoryGenerator:
    return _GEN_CLASSES[type(spec.traj_gen)](spec.traj_gen, state, model)


# ---------------------------------------------------------------------------
# feedback laws

def joint_pd(state: RobotState, q_d, dq_d, kp, kd) -> np.ndarray:
    """tau = kp o (q_d - q) + kd o (dq_d - dq)."""
    return (np.asarray(kp) * (np.asarray(q_d) - state.q)
            + np.asarray(kd) * (np.asarray(dq_d) - state.dq))


def cartesian_impedance(state: RobotState, pose_d: Pose, stiffness, damping,
                        J: np.ndarray) -> np.ndarray:
    """Spring-damper in task space mapped through the Jacobian transpose."""
    e = pose_error(state.ee_pose, pose_d)
    F = np.asarray(stiffness) * e - np.asarray(damping) * (J @ state.dq)
    return J.T @ F


def force_to_torque(wrench: Wrench, J: np.ndarray) -> np.ndarray:
    """tau = J^T w."""
    return J.T @ wrench.as_array()


def build_command(spec: SkillSpec, out: GenOutput, state: RobotState,
                  J: np.ndarray) -> RobotCommand:
    """Compose the generator output and feedback spec into a robot command."""
    mode = skill_control_mode(spec)
    fb = spec.feedback

    if mode is ControlMode.EXTERNAL_TORQUE:
        if isinstance(fb, ForceToTorque):
            w = out.wrench_d if out.wrench_d is not None else Wrench()
            tau = force_to_torque(w, J)
        elif isinstance(fb, CartesianImpedance):
            pose_d = out.pose_d if out.pose_d is not None else state.ee_pose
            tau = cartesian_impedance(state, pose_d, fb.stiffness, fb.damping, J)
        else:
            kp, kd = fb.kp, fb.kd
            q_d = out.q_d if out.q_d is not None else state.q
            dq_d = out.dq_d if out.dq_d is not None else np.zeros(N_JOINTS)
            tau = joint_pd(state, q_d, dq_d, kp, kd)
        return RobotCommand(mode=mode, tau_d=tau)

    if mode in (ControlMode.JOINT_POSITION_JOINT_IMPEDANCE,
                ControlMode.JOINT_POSITION_CARTESIAN_IMPEDANCE):
        return RobotCommand(mode=mode, q_d=out.q_d, dq_d=out.dq_d)
    if mode in (ControlMode.JOINT_VELOCITY_JOINT_IMPEDANCE,
                ControlMode.JOINT_VELOCITY_CARTESIAN_IMPEDANCE):
        return RobotCommand(mode=mode, dq_d=out.dq_d)
    if mode in (ControlMode.CARTESIAN_POSE_JOINT_IMPEDANCE,
                ControlMode.CARTESIAN_POSE_CARTESIAN_IMPEDANCE):
        return RobotCommand(mode=mode, pose_d=out.pose_d)
    return RobotCommand(mode=mode, twist_d=out.twist_d)


# ---------------------------------------------------------------------------
# termination

def should_terminate(term, state: RobotState, executed_ticks: int,
                     ctx: GoalContext, dt: float = 1e-3):
    """Returns (fired, cause) with cause in time/joint_goal/pose_goal/contact."""
    if isinstance(term, TimeTerm):
        if executed_ticks >= int(round(term.duration / dt)):
            return True, "time"
        return False, None
    if isinstance(term, JointGoalTerm):
        if ctx.goal_q is None:
            return False, None
        arrived = (np.max(np.abs(state.q - ctx.goal_q)) < term.tolerance
                   and np.max(np.abs(state.dq)) < GOAL_SPEED_GATE)
        return (True, "joint_goal") if arrived else (False, None)
    if isinstance(term, PoseGoalTerm):
        if ctx.goal_pose is None:
            return False, None
        e = pose_error(state.ee_pose, ctx.goal_pose)
        arrived = (float(np.linalg.norm(e[:3])) < term.pos_tol
                   and float(np.linalg.norm(e[3:])) < term.ori_tol
                   and np.max(np.abs(state.dq)) < GOAL_SPEED_GATE)
        return (True, "pose_goal") if arrived else (False, None)
    if isinstance(term, ContactTerm):
        w = np.abs(state.ee_wrench_external.as_array())
        if np.any(w > term.force_threshold):
            return True, "contact"
        return False, None
    if isinstance(term, AnyOf):
        for child in term.children:
            fired, cause = should_terminate(child, state, executed_ticks, ctx, dt)
            if fired:
                return True, cause
        return False, None
    raise TypeError(f"unknown terminator {type(term).__name__}")
