"""Deterministic simulated 7-DOF arm and 1-DOF gripper.

Plant model: decoupled per-joint double integrators with viscous friction,
semi-implicit Euler at the control period. The robot's internal controllers
(joint impedance PD, Cartesian impedance spring-damper) are emulated here so
every command interface of the 9 control modes is drivable.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import (
    ArmModel,
    N_JOINTS,
    Pose,
    Twist,
    Wrench,
    forward_kinematics,
    jacobian,
    pose_error,
    quat_multiply,
    quat_normalize,
)

DT = 1e-3

GRIPPER_MAX_WIDTH = 0.08
GRIPPER_SETTLE_TOL = 1e-4

# internal joint impedance defaults (per-joint PD on the command setpoint)
INTERNAL_KP = 600.0
# internal Cartesian impedance defaults: N/m (xyz), N·m/rad (rot)
INTERNAL_CART_K = np.array([300.0, 300.0, 300.0, 30.0, 30.0, 30.0])
INTERNAL_CART_D = 2.0 * np.sqrt(INTERNAL_CART_K)
# joint-space damping added under Cartesian interfaces (nullspace motion)
NULLSPACE_DAMPING = 2.0


class ControlMode(enum.Enum):
    JOINT_POSITION_JOINT_IMPEDANCE = 1
    JOINT_POSITION_CARTESIAN_IMPEDANCE = 2
    JOINT_VELOCITY_JOINT_IMPEDANCE = 3
    JOINT_VELOCITY_CARTESIAN_IMPEDANCE = 4
    CARTESIAN_POSE_JOINT_IMPEDANCE = 5
    CARTESIAN_POSE_CARTESIAN_IMPEDANCE = 6
    CARTESIAN_VELOCITY_JOINT_IMPEDANCE = 7
    CARTESIAN_VELOCITY_CARTESIAN_IMPEDANCE = 8
    EXTERNAL_TORQUE = 9


class SkillPhase(enum.Enum):
    IDLE = 0
    RUNNING = 1
    FINISHING = 2
    ABORTED = 3


class CommandError(ValueError):
    """Malformed or non-finite robot command; the active skill must abort."""


@dataclass(frozen=True)
class RobotCommand:
    mode: ControlMode
    q_d: np.ndarray | None = None
    dq_d: np.ndarray | None = None
    pose_d: Pose | None = None
    twist_d: Twist | None = None
    tau_d: np.ndarray | None = None

    def validate(self):
        m = self.mode
        if m in (ControlMode.JOINT_POSITION_JOINT_IMPEDANCE,
                 ControlMode.JOINT_POSITION_CARTESIAN_IMPEDANCE):
            need = (self.q_d,)
        elif m in (ControlMode.JOINT_VELOCITY_JOINT_IMPEDANCE,
                   ControlMode.JOINT_VELOCITY_CARTESIAN_IMPEDANCE):
            need = (self.dq_d,)
        elif m in (ControlMode.CARTESIAN_POSE_JOINT_IMPEDANCE,
                   ControlMode.CARTESIAN_POSE_CARTESIAN_IMPEDANCE):
            need = (self.pose_d,)
        elif m in (ControlMode.CARTESIAN_VELOCITY_JOINT_IMPEDANCE,
                   ControlMode.CARTESIAN_VELOCITY_CARTESIAN_IMPEDANCE):
            need = (self.twist_d,)
        else:
            need = (self.tau_d,)
        for target in need:
            if target is None:
                raise CommandError(f"mode {m.name} missing its target")
        for arr in (self.q_d, self.dq_d, self.tau_d):
            if arr is not None and not np.all(np.isfinite(np.asarray(arr, dtype=float))):
                raise CommandError("non-finite command target")


@dataclass(frozen=True)
class GripperCommand:
    target_width: float
    speed: float = 0.05
    grasp_force: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.target_width <= GRIPPER_MAX_WIDTH):
            raise ValueError(f"gripper target_width {self.target_width} outside "
                             f"[0, {GRIPPER_MAX_WIDTH}]")
        if not self.speed > 0:
            raise ValueError("gripper speed must be > 0")
        if self.grasp_force < 0:
            raise ValueError("grasp_force must be >= 0")


@dataclass(frozen=True)
class RobotState:
    tick: int
    q: np.ndarray
    dq: np.ndarray
    tau_commanded: np.ndarray
    tau_external: np.ndarray
    ee_pose: Pose
    ee_wrench_external: Wrench
    gripper_width: float
    gripper_moving: bool
    active_skill_id: int | None
    skill_phase: SkillPhase

    @staticmethod
    def initial(model: ArmModel) -> "RobotState":
        q = model.q_home.copy()
        z = np.zeros(N_JOINTS)
        return RobotState(tick=0, q=q, dq=z.copy(), tau_commanded=z.copy(),
                          tau_external=z.copy(),
                          ee_pose=forward_kinematics(model, q),
                          ee_wrench_external=Wrench(),
                          gripper_width=GRIPPER_MAX_WIDTH, gripper_moving=False,
                          active_skill_id=None, skill_phase=SkillPhase.IDLE)


def _integrate_quat(q, omega, dt: float) -> np.ndarray:
    """Rotate quaternion q by the world-frame rate omega over dt."""
    angle = float(np.linalg.norm(omega)) * dt
    if angle < 1e-15:
        return quat_normalize(q)
    axis = np.asarray(omega) / np.linalg.norm(omega)
    half = angle / 2.0
    dq = np.array([math.cos(half), *(math.sin(half) * axis)])
    return quat_normalize(quat_multiply(dq, q))


class SimRobot:
    """Owned by a single control loop; never mutated concurrently."""

    def __init__(self, model: ArmModel, start_q=None):
        self.model = model
        self.q = np.array(start_q if start_q is not None else model.q_home,
                          dtype=np.float64)
        self.dq = np.zeros(N_JOINTS)
        self.tau_commanded = np.zeros(N_JOINTS)
        self.tick = 0
        self.gripper_width = GRIPPER_MAX_WIDTH
        self.gripper_moving = False
        self._gripper_cmd: GripperCommand | None = None
        # internal references for velocity interfaces
        self._last_mode: ControlMode | None = None
        self._q_ref = self.q.copy()
        self._pose_ref = forward_kinematics(model, self.q)
        # active wrench injections: (expiry_tick, 6-vector)
        self._injections: list[tuple[int, np.ndarray]] = []
        self.limit_violated = False
        self._fk_cache: tuple[int, Pose] | None = None
        self._jac_cache: tuple[int, np.ndarray] | None = None
        self._cache_gen = 0

    # -- cached kinematics (invalidated whenever q changes) ---------------

    def ee_pose(self) -> Pose:
        if self._fk_cache is None or self._fk_cache[0] != self._cache_gen:
            self._fk_cache = (self._cache_gen, forward_kinematics(self.model, self.q))
        return self._fk_cache[1]

    def jac(self) -> np.ndarray:
        if self._jac_cache is None or self._jac_cache[0] != self._cache_gen:
            self._jac_cache = (self._cache_gen, jacobian(self.model, self.q))
        return self._jac_cache[1]

    def _invalidate(self):
        self._cache_gen += 1

    # -- state save/restore (one-tick rollback for safety prevention) -----

    def save_state(self) -> dict:
        return {
            "q": self.q.copy(), "dq": self.dq.copy(),
            "tau_commanded": self.tau_commanded.copy(), "tick": self.tick,
            "gripper_width": self.gripper_width,
            "gripper_moving": self.gripper_moving,
            "gripper_cmd": self._gripper_cmd,
            "last_mode": self._last_mode,
            "q_ref": self._q_ref.copy(), "pose_ref": self._pose_ref,
            "injections": list(self._injections),
            "limit_violated": self.limit_violated,
        }

    def restore_state(self, saved: dict):
        self.q = saved["q"].copy()
        self.dq = saved["dq"].copy()
        self.tau_commanded = saved["tau_commanded"].copy()
        self.tick = saved["tick"]
        self.gripper_width = saved["gripper_width"]
        self.gripper_moving = saved["gripper_moving"]
        self._gripper_cmd = saved["gripper_cmd"]
        self._last_mode = saved["last_mode"]
        self._q_ref = saved["q_ref"].copy()
        self._pose_ref = saved["pose_ref"]
        self._injections = list(saved["injections"])
        self.limit_violated = saved["limit_violated"]
        self._invalidate()

    # -- wrench injection -------------------------------------------------

    def inject_wrench(self, w: Wrench, duration_s: float):
        """Apply w at the end-effector starting next tick, for duration_s."""
        ticks = max(1, int(round(duration_s / DT)))
        self._injections.append((self.tick + ticks, w.as_array().copy()))

    def external_wrench(self) -> np.ndarray:
        active = [w for expiry, w in self._injections if self.tick < expiry]
        if not active:
            return np.zeros(6)
        return np.sum(active, axis=0)

    # -- control ----------------------------------------------------------

    def _on_mode_change(self, mode: ControlMode):
        if mode is not self._last_mode:
            self._q_ref = self.q.copy()
            self._pose_ref = self.ee_pose()
            self._last_mode = mode

    def _command_torque(self, cmd: RobotCommand, J: np.ndarray) -> np.ndarray:
        """Emulated internal controller: map the command to joint torques."""
        m = self.model
        mode = cmd.mode
        kp = np.full(N_JOINTS, INTERNAL_KP)
        kd = 2.0 * np.sqrt(kp * m.inertia)

        if mode is ControlMode.EXTERNAL_TORQUE:
            return np.asarray(cmd.tau_d, dtype=float).copy()

        if mode in (ControlMode.JOINT_POSITION_JOINT_IMPEDANCE,
                    ControlMode.JOINT_POSITION_CARTESIAN_IMPEDANCE):
            q_d = np.asarray(cmd.q_d, dtype=float)
            dq_d = np.zeros(N_JOINTS) if cmd.dq_d is None else np.asarray(cmd.dq_d, dtype=float)
        elif mode in (ControlMode.JOINT_VELOCITY_JOINT_IMPEDANCE,
                      ControlMode.JOINT_VELOCITY_CARTESIAN_IMPEDANCE):
            dq_d = np.asarray(cmd.dq_d, dtype=float)
            self._q_ref = self._q_ref + dq_d * DT
            q_d = self._q_ref
        elif mode in (ControlMode.CARTESIAN_POSE_JOINT_IMPEDANCE,
                      ControlMode.CARTESIAN_POSE_CARTESIAN_IMPEDANCE):
            self._pose_ref = cmd.pose_d
            q_d = None
            dq_d = None
        else:  # Cartesian velocity: integrate the internal pose reference
            tw = cmd.twist_d
            self._pose_ref = Pose(
                self._pose_ref.position + tw.linear * DT,
                _integrate_quat(self._pose_ref.quaternion, tw.angular, DT))
            q_d = None
            dq_d = None

        cartesian_internal = mode in (
            ControlMode.JOINT_POSITION_CARTESIAN_IMPEDANCE,
            ControlMode.JOINT_VELOCITY_CARTESIAN_IMPEDANCE,
            ControlMode.CARTESIAN_POSE_JOINT_IMPEDANCE,
            ControlMode.CARTESIAN_POSE_CARTESIAN_IMPEDANCE,
            ControlMode.CARTESIAN_VELOCITY_JOINT_IMPEDANCE,
            ControlMode.CARTESIAN_VELOCITY_CARTESIAN_IMPEDANCE,
        )
        if not cartesian_internal:
            return kp * (q_d - self.q) + kd * (dq_d - self.dq)

        # Cartesian spring-damper toward the commanded / derived pose.
        if q_d is not None:
            pose_d = forward_kinematics(self.model, q_d)
        else:
            pose_d = self._pose_ref
        e = pose_error(self.ee_pose(), pose_d)
        xdot = J @ self.dq
        if cmd.twist_d is not None:
            xdot = xdot - cmd.twist_d.as_array()
        F = INTERNAL_CART_K * e - INTERNAL_CART_D * xdot
        tau = J.T @ F - NULLSPACE_DAMPING * self.dq
        if q_d is not None:
            # joint commands keep a weak joint-space spring so the arm does
            # not drift in the nullspace of the task
            tau = tau + 0.05 * kp * (q_d - self.q) - 0.1 * kd * self.dq
        return tau

    def step(self, cmd: RobotCommand, dt: float = DT) -> RobotState:
        """Advance one control period; raises CommandError on bad commands."""
        cmd.validate()
        m = self.model
        self._on_mode_change(cmd.mode)

        J = self.jac()
        w_ext = self.external_wrench()
        tau_ext = J.T @ w_ext

        tau_cmd = self._command_torque(cmd, J)
        if not np.all(np.isfinite(tau_cmd)):
            raise CommandError("internal controller produced non-finite torque")
        tau_cmd = np.clip(tau_cmd, -m.tau_max, m.tau_max)
        self.limit_violated = bool(np.any(np.abs(tau_cmd) >= m.tau_max))

        qdd = (tau_cmd + tau_ext - m.viscous_friction * self.dq) / m.inertia
        self.dq = self.dq + qdd * dt
        over = np.abs(self.dq) > m.dq_max
        if np.any(over):
            self.dq = np.clip(self.dq, -m.dq_max, m.dq_max)
            self.limit_violated = True
        self.q = self.q + self.dq * dt
        at_limit = (self.q < m.q_min) | (self.q > m.q_max)
        if np.any(at_limit):
            self.q = np.clip(self.q, m.q_min, m.q_max)
            self.dq = np.where(at_limit, 0.0, self.dq)
            self.limit_violated = True
        self.tau_commanded = tau_cmd
        self._invalidate()

        self._step_gripper(dt)
        self.tick += 1
        self._injections = [(e, w) for e, w in self._injections if self.tick < e]
        return self.snapshot()

    def freeze_step(self, dt: float = DT) -> RobotState:
        """Emergency stop for one period: zero velocity, no configuration
        change. Used when even holding position would breach a safety volume.
        """
        self.dq = np.zeros(N_JOINTS)
        self.tau_commanded = np.zeros(N_JOINTS)
        self._step_gripper(dt)
        self.tick += 1
        self._injections = [(e, w) for e, w in self._injections if self.tick < e]
        self._invalidate()
        return self.snapshot()

    # -- gripper ----------------------------------------------------------

    def command_gripper(self, cmd: GripperCommand):
        self._gripper_cmd = cmd
        self.gripper_moving = abs(self.gripper_width - cmd.target_width) >= GRIPPER_SETTLE_TOL

    def _step_gripper(self, dt: float):
        cmd = self._gripper_cmd
        if cmd is None:
            return
        delta = cmd.target_width - self.gripper_width
        step = cmd.speed * dt
        if abs(delta) <= step:
            self.gripper_width = cmd.target_width
        else:
            self.gripper_width += math.copysign(step, delta)
        self.gripper_moving = abs(self.gripper_width - cmd.target_width) >= GRIPPER_SETTLE_TOL
        if not self.gripper_moving:
            self.gripper_width = cmd.target_width
            self._gripper_cmd = None

    # -- state ------------------------------------------------------------

    def snapshot(self, skill_id: int | None = None,
                 phase: SkillPhase = SkillPhase.IDLE) -> RobotState:
        w = self.external_wrench()
        tau_ext = self.jac().T @ w if np.any(w) else np.zeros(N_JOINTS)
        return RobotState(
            tick=self.tick,
            q=self.q.copy(), dq=self.dq.copy(),
            tau_commanded=self.tau_commanded.copy(),
            tau_external=tau_ext,
            ee_pose=self.ee_pose(),
            ee_wrench_external=Wrench.from_array(w),
            gripper_width=self.gripper_width,
            gripper_moving=self.gripper_moving,
            active_skill_id=skill_id, skill_phase=phase)


def hold_command(q) -> RobotCommand:
    return RobotCommand(mode=ControlMode.JOINT_POSITION_JOINT_IMPEDANCE,
                        q_d=np.asarray(q, dtype=float).copy(),
                        dq_d=np.zeros(N_JOINTS))
