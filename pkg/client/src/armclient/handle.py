"""ArmHandle: a blocking, single-owner scripting interface to one robot.

A handle owns one TCP connection. A background reader thread demultiplexes
incoming frames into per-purpose queues (acks, skill statuses, robot states);
foreground calls submit skills and wait on those queues. One blocking skill
may be in flight at a time.
"""
from __future__ import annotations

import collections
import queue
import socket
import threading
import time
import uuid
import warnings

import numpy as np

from . import protocol as wire
from .dmp import DegenerateDemo, fit_dmp_weights
from .protocol import (Ack, AnyOf, CartesianImpedance, ConstantWrench,
                       ErrorCode, ForceToTorque, FrameDecoder, GripperMove,
                       Hold, InternalJointPD, JointDMP, JointGoalTerm,
                       MessageType, MinJerkJoint, MinJerkPose, Passthrough,
                       Pose, PoseGoalTerm, RobotState, SkillSpec, SkillStatus,
                       SkillType, StreamedPoseSetpoint, TimeTerm,
                       quat_normalize)

# Joint limits of the default 7-dof arm, used for client-side pre-validation
# so an out-of-range goal is rejected before anything reaches the wire.
Q_MIN = np.array([-2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973])
Q_MAX = np.array([2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973])
GRIPPER_MAX_WIDTH = 0.08

DEFAULT_DURATION = 3.0
DEFAULT_KP = 600.0
DEFAULT_KD = 50.0
DEFAULT_STIFFNESS = np.array([300.0] * 3 + [30.0] * 3)
JOINT_GOAL_TOL = 5e-3
POSE_POS_TOL = 5e-3
POSE_ORI_TOL = 1e-2
SETTLE_MARGIN = 1.0            # extra seconds allowed past the nominal motion


class ClientError(Exception):
    pass


class ValidationError(ClientError, ValueError):
    """Rejected client-side; nothing was sent to the server."""


class CommandRejected(ClientError):
    def __init__(self, code: ErrorCode, message: str):
        super().__init__(f"{code.name}: {message}")
        self.code = code


class SkillAborted(ClientError):
    def __init__(self, status: SkillStatus):
        super().__init__(f"skill {status.skill_id} aborted "
                         f"({status.termination_cause})")
        self.status = status
        self.termination_cause = status.termination_cause


class ConnectionClosed(ClientError):
    pass


class PendingSkill:
    """A submitted, not-yet-terminal skill; wait() blocks for the outcome."""

    def __init__(self, handle: "ArmHandle", skill_id: int, timeout: float):
        self._handle = handle
        self.skill_id = skill_id
        self._timeout = timeout
        self._result: SkillStatus | None = None

    def wait(self, timeout: float | None = None) -> SkillStatus:
        if self._result is None:
            self._result = self._handle._wait_terminal(
                self.skill_id, timeout if timeout is not None else self._timeout)
        return self._result


class ArmHandle:
    def __init__(self, host: str = "127.0.0.1", port: int = 5757,
                 robot_id: int = 0, default_duration: float = DEFAULT_DURATION,
                 kp: float = DEFAULT_KP, kd: float = DEFAULT_KD,
                 stiffness=DEFAULT_STIFFNESS, connect_timeout: float = 5.0):
        self.robot_id = robot_id
        self.default_duration = float(default_duration)
        self.kp = np.full(7, float(kp))
        self.kd = np.full(7, float(kd))
        self.stiffness = np.asarray(stiffness, dtype=np.float64).reshape(6)
        self.damping = 2.0 * np.sqrt(self.stiffness)

        self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._sock.settimeout(0.2)
        self._send_lock = threading.Lock()
        self._acks: queue.Queue[Ack] = queue.Queue()
        self._statuses: queue.Queue[SkillStatus] = queue.Queue()
        self._states = collections.deque(maxlen=4096)
        self._state_cond = threading.Condition()
        self._closed = threading.Event()
        self._pending: PendingSkill | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name="armclient-reader")
        self._reader.start()

    # -- lifecycle -------------------------------------------------------

    def __enter__(self) -> "ArmHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if not self._closed.is_set():
            self._closed.set()
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()
            self._reader.join(timeout=2.0)

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    def _check_open(self) -> None:
        if self._closed.is_set():
            raise ConnectionClosed("handle is closed")

    def _read_loop(self) -> None:
        decoder = FrameDecoder()
        while not self._closed.is_set():
            try:
                data = self._sock.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            if not data:
                break
            for frame in decoder.feed(data):
                if frame.msg_type is MessageType.ACK:
                    self._acks.put(wire.decode_ack(frame.payload))
                elif frame.msg_type is MessageType.SKILL_STATUS:
                    self._statuses.put(wire.decode_skill_status(frame.payload))
                elif frame.msg_type is MessageType.ROBOT_STATE:
                    with self._state_cond:
                        self._states.append(
                            wire.decode_robot_state(frame.payload))
                        self._state_cond.notify_all()
        self._closed.set()
        with self._state_cond:
            self._state_cond.notify_all()

    # -- request plumbing ------------------------------------------------

    def _send(self, msg_type: MessageType, payload: bytes) -> None:
        self._check_open()
        with self._send_lock:
            try:
                self._sock.sendall(wire.encode_frame(msg_type, self.robot_id,
                                                     payload))
            except OSError as e:
                raise ConnectionClosed(str(e))

    def _request(self, msg_type: MessageType, payload: bytes,
                 timeout: float = 5.0) -> Ack:
        self._send(msg_type, payload)
        try:
            ack = self._acks.get(timeout=timeout)
        except queue.Empty:
            raise ConnectionClosed("no acknowledgement from server")
        if ack.code is not ErrorCode.OK:
            raise CommandRejected(ack.code, ack.message)
        return ack

    def _wait_terminal(self, skill_id: int, timeout: float) -> SkillStatus:
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ConnectionClosed(f"skill {skill_id} outcome not "
                                       f"received within {timeout:.1f} s")
            try:
                status = self._statuses.get(timeout=min(remaining, 0.5))
            except queue.Empty:
                self._check_open()
                continue
            if status.skill_id == skill_id and status.terminal:
                return status

    def _run(self, spec: SkillSpec, blocking: bool):
        if self._pending is not None and self._pending._result is None:
            raise ClientError("another skill is already in flight on this handle")
        ack = self._request(MessageType.EXECUTE_SKILL,
                            wire.encode_skill_spec(spec))
        # safety cap guarantees the server eventually reports a terminal status
        pending = PendingSkill(self, ack.skill_id,
                               timeout=spec.max_duration + 10.0)
        self._pending = pending
        if not blocking:
            return pending
        status = pending.wait()
        self._pending = None
        if status.phase == "aborted":
            raise SkillAborted(status)
        return status

    # -- skills ----------------------------------------------------------

    def go_to_joints(self, goal, duration: float | None = None,
                     blocking: bool = True):
        """Min-jerk move to a 7-joint goal; returns the terminal status."""
        goal = np.asarray(goal, dtype=np.float64).reshape(-1)
        if goal.shape != (7,):
            raise ValidationError(f"goal must have 7 joints, got {goal.shape}")
        if not np.all(np.isfinite(goal)):
            raise ValidationError("goal has non-finite entries")
        if np.any(goal < Q_MIN) or np.any(goal > Q_MAX):
            bad = np.where((goal < Q_MIN) | (goal > Q_MAX))[0]
            raise ValidationError(f"goal outside joint limits at joints {bad}")
        duration = self.default_duration if duration is None else float(duration)
        if not duration > 0:
            raise ValidationError("duration must be > 0")
        spec = SkillSpec(
            SkillType.JOINT_POSITION,
            MinJerkJoint(goal=goal, duration=duration),
            InternalJointPD(kp=self.kp, kd=self.kd),
            AnyOf((JointGoalTerm(JOINT_GOAL_TOL),
                   TimeTerm(duration + SETTLE_MARGIN))),
            max_duration=duration + SETTLE_MARGIN + 5.0)
        return self._run(spec, blocking)

    def go_to_pose(self, position, quaternion, duration: float | None = None,
                   use_impedance: bool = True, blocking: bool = True):
        """Min-jerk move of the end effector to a pose (quaternion w,x,y,z)."""
        position = np.asarray(position, dtype=np.float64).reshape(-1)
        if position.shape != (3,) or not np.all(np.isfinite(position)):
            raise ValidationError("position must be 3 finite values")
        quaternion = np.asarray(quaternion, dtype=np.float64).reshape(-1)
        if quaternion.shape != (4,) or not np.all(np.isfinite(quaternion)):
            raise ValidationError("quaternion must be 4 finite values")
        norm = float(np.linalg.norm(quaternion))
        if norm < 1e-12:
            raise ValidationError("quaternion has (near-)zero norm")
        if abs(norm - 1.0) > 1e-6:
            warnings.warn(f"quaternion norm {norm:.6f} != 1; normalizing",
                          stacklevel=2)
        goal = Pose(position, quat_normalize(quaternion))
        duration = self.default_duration if duration is None else float(duration)
        if not duration > 0:
            raise ValidationError("duration must be > 0")
        if use_impedance:
            st, fb = SkillType.IMPEDANCE_POSE, CartesianImpedance(
                stiffness=self.stiffness, damping=self.damping)
        else:
            st, fb = SkillType.CARTESIAN_POSE, Passthrough()
        spec = SkillSpec(
            st, MinJerkPose(goal=goal, duration=duration), fb,
            AnyOf((PoseGoalTerm(POSE_POS_TOL, POSE_ORI_TOL),
                   TimeTerm(duration + SETTLE_MARGIN))),
            max_duration=duration + SETTLE_MARGIN + 5.0)
        return self._run(spec, blocking)

    def execute_joint_dmp(self, weights=None, goal=None, tau=None,
                          demo=None, dt: float = 1e-3, n_basis: int = 10,
                          blocking: bool = True):
        """Run a joint-space DMP, from explicit weights or fit from a demo."""
        if demo is not None:
            if weights is not None:
                raise ValidationError("pass either weights or a demo, not both")
            weights, goal, tau = fit_dmp_weights(demo, dt, n_basis=n_basis,
                                                 goal=goal)
        if weights is None or goal is None or tau is None:
            raise ValidationError("need weights+goal+tau, or a demo")
        weights = np.asarray(weights, dtype=np.float64)
        goal = np.asarray(goal, dtype=np.float64).reshape(-1)
        if goal.shape != (7,):
            raise ValidationError("DMP goal must have 7 joints")
        if weights.shape != (n_basis, 7):
            raise ValidationError(f"weights shape {weights.shape} != "
                                  f"({n_basis}, 7)")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(goal))):
            raise ValidationError("non-finite DMP parameters")
        if tau is None or not tau > 0:
            raise ValidationError("tau must be > 0")
        spec = SkillSpec(
            SkillType.JOINT_POSITION,
            JointDMP(weights=weights, goal=goal, tau=float(tau),
                     n_basis=n_basis),
            InternalJointPD(kp=self.kp, kd=self.kd),
            TimeTerm(duration=float(tau) * 1.5),
            max_duration=float(tau) * 1.5 + 5.0)
        return self._run(spec, blocking)

    def goto_gripper(self, width: float, speed: float = 0.05,
                     force: float = 0.0, blocking: bool = True):
        """Move the gripper jaws to a width; ends when the jaws settle."""
        if not 0.0 <= width <= GRIPPER_MAX_WIDTH:
            raise ValidationError(f"width {width} outside "
                                  f"[0, {GRIPPER_MAX_WIDTH}]")
        if not speed > 0:
            raise ValidationError("speed must be > 0")
        if force < 0:
            raise ValidationError("force must be >= 0")
        cap = GRIPPER_MAX_WIDTH / speed + SETTLE_MARGIN
        spec = SkillSpec(
            SkillType.GRIPPER,
            GripperMove(target_width=float(width), speed=float(speed),
                        grasp_force=float(force)),
            Passthrough(), TimeTerm(cap), max_duration=cap + 5.0)
        return self._run(spec, blocking)

    def open_gripper(self, blocking: bool = True):
        return self.goto_gripper(GRIPPER_MAX_WIDTH, blocking=blocking)

    def close_gripper(self, blocking: bool = True):
        return self.goto_gripper(0.0, blocking=blocking)

    def apply_force(self, force, torque=(0.0, 0.0, 0.0),
                    duration: float = 1.0, blocking: bool = True):
        """Exert a constant end-effector wrench for a duration."""
        w = np.concatenate([np.asarray(force, dtype=np.float64).reshape(3),
                            np.asarray(torque, dtype=np.float64).reshape(3)])
        if not np.all(np.isfinite(w)):
            raise ValidationError("wrench has non-finite entries")
        if not duration > 0:
            raise ValidationError("duration must be > 0")
        spec = SkillSpec(
            SkillType.FORCE, ConstantWrench(wrench=w, duration=float(duration)),
            ForceToTorque(), TimeTerm(float(duration)),
            max_duration=float(duration) + 5.0)
        return self._run(spec, blocking)

    def stream_pose_setpoints(self, items, settle: float = 0.5):
        """Stream timed pose setpoints ((t, position, quaternion) tuples).

        Starts a streamed-pose skill on a fresh sensor topic, publishes each
        setpoint, and blocks until the stream duration (plus settle time)
        elapses on the robot. An empty iterable is a no-op success.
        """
        items = [(float(t), Pose(np.asarray(p, dtype=np.float64).reshape(3),
                                 quat_normalize(q)))
                 for t, p, q in items]
        if not items:
            return SkillStatus(skill_id=-1, phase="succeeded",
                               termination_cause="noop")
        if any(not np.isfinite(t) or t < 0 for t, _ in items):
            raise ValidationError("setpoint timestamps must be finite and >= 0")
        start = self.get_state().ee_pose
        topic = f"pose-{uuid.uuid4().hex[:12]}"
        duration = max(t for t, _ in items) + settle
        spec = SkillSpec(
            SkillType.IMPEDANCE_POSE, StreamedPoseSetpoint(initial=start),
            CartesianImpedance(stiffness=self.stiffness, damping=self.damping),
            TimeTerm(duration), sensor_topics=(topic,),
            max_duration=duration + 5.0)
        pending = self._run(spec, blocking=False)
        try:
            for t, pose in items:
                self._send(MessageType.SENSOR,
                           wire.encode_pose_sensor(topic, t, pose))
                time.sleep(0.002)   # keep the control mailbox from flooding
        finally:
            status = pending.wait()
            self._pending = None
        if status.phase == "aborted":
            raise SkillAborted(status)
        return status

    # -- state access ----------------------------------------------------

    def get_state(self) -> RobotState:
        """Snapshot of the robot state.

        Implemented as a one-tick hold skill so it works identically under
        the simulated clock, where the control loop idles between commands.
        """
        spec = SkillSpec(SkillType.JOINT_POSITION, Hold(),
                         InternalJointPD(kp=self.kp, kd=self.kd),
                         TimeTerm(duration=0.001), max_duration=5.0)
        status = self._run(spec, blocking=True)
        if status.final_state is None:
            raise ClientError("server returned no state snapshot")
        return status.final_state

    def subscribe_states(self, rate_hz: int = 100):
        """Subscribe to the state stream; returns an iterator of RobotState.

        Call unsubscribe_states() (or close the handle) to stop the stream.
        """
        if not 1 <= rate_hz <= 1000:
            raise ValidationError("rate must be in [1, 1000] Hz")
        with self._state_cond:
            self._states.clear()
        self._request(MessageType.SUBSCRIBE_STATE,
                      wire.encode_subscribe(rate_hz))
        return self._state_iter()

    def _state_iter(self):
        while True:
            item = None
            # never yield while holding the lock: a paused consumer would
            # block the reader thread out of appending new states
            with self._state_cond:
                while not self._states and not self._closed.is_set():
                    self._state_cond.wait(timeout=0.5)
                if self._states:
                    item = self._states.popleft()
            if item is not None:
                yield item
            elif self._closed.is_set():
                return

    def unsubscribe_states(self) -> None:
        self._request(MessageType.SUBSCRIBE_STATE, wire.encode_subscribe(0))

    # -- preemption ------------------------------------------------------

    def stop_skill(self, timeout: float = 5.0) -> SkillStatus:
        """Preempt whatever is running; a stop while idle is a no-op success."""
        self._request(MessageType.PREEMPT_SKILL, wire.encode_preempt(None))
        pending, self._pending = self._pending, None
        if pending is not None and pending._result is None:
            return pending.wait(timeout)
        return SkillStatus(skill_id=-1, phase="succeeded",
                           termination_cause="noop")
