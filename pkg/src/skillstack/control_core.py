"""The 1kHz control loop: mailbox-fed skill execution over the simulated arm.

One ControlCore per robot. The loop drains a bounded command mailbox, runs
generator -> feedback -> safety -> plant -> terminator each tick, appends one
log record per tick, and publishes sequence-validated state snapshots.

Clock modes:
  sim  - logical time; the loop advances only while there is work (an active
         or queued skill, pending messages, or an explicit run-ticks budget),
         which makes end-to-end runs deterministic.
  real - wall-clock pacing, sleep-until-deadline with a short spin tail;
         jitter is measured, not guaranteed.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

from .kinematics import ArmModel, Wrench
from .logfile import LogBuffer
from .runtime import (
    TypeMismatch,
    build_command,
    make_generator,
    should_terminate,
)
from .safety import SafetyConfig, check_safety
from .sim_robot import (
    DT,
    CommandError,
    RobotState,
    SimRobot,
    SkillPhase,
    hold_command,
)
from .skills import SensorUpdate, SkillSpec, SkillType, validate_skill

MAILBOX_CAPACITY = 256
DRAIN_CAP = 32
SPIN_WINDOW_S = 200e-6


class MailboxFull(RuntimeError):
    pass


class Busy(RuntimeError):
    """One active plus one queued skill already in flight."""


class InvalidSkill(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class NotStarted(RuntimeError):
    pass


# -- mailbox messages -------------------------------------------------------

@dataclass(frozen=True)
class SubmitSkill:
    skill_id: int
    spec: SkillSpec


@dataclass(frozen=True)
class PreemptSkill:
    skill_id: int | None = None      # None = whatever is active


@dataclass(frozen=True)
class DeliverSensor:
    update: SensorUpdate


@dataclass(frozen=True)
class InjectWrench:
    wrench: Wrench
    duration: float


@dataclass(frozen=True)
class ReconfigureSafety:
    config: SafetyConfig


@dataclass(frozen=True)
class RunTicks:
    count: int


class Mailbox:
    """Bounded multi-producer channel into the loop; non-blocking on both ends."""

    def __init__(self, capacity: int = MAILBOX_CAPACITY):
        self._items: list = []
        self._lock = threading.Lock()
        self.capacity = capacity

    def push(self, msg) -> None:
        with self._lock:
            if len(self._items) >= self.capacity:
                raise MailboxFull(f"mailbox at capacity {self.capacity}")
            self._items.append(msg)

    def drain(self, cap: int = DRAIN_CAP) -> list:
        with self._lock:
            taken, self._items = self._items[:cap], self._items[cap:]
            return taken

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


# -- skill bookkeeping ------------------------------------------------------

@dataclass(frozen=True)
class SkillStatus:
    skill_id: int
    phase: str                      # queued|running|succeeded|preempted|aborted
    termination_cause: str | None = None
    final_state: RobotState | None = None

    @property
    def terminal(self) -> bool:
        return self.phase in ("succeeded", "preempted", "aborted")


@dataclass
class _ActiveSkill:
    skill_id: int
    spec: SkillSpec
    generator: object
    executed: int = 0


class ControlCore:
    """Single consumer of its mailbox; the loop owns the sim robot."""

    def __init__(self, model: ArmModel, robot_id: int = 0,
                 safety: SafetyConfig | None = None, clock: str = "sim",
                 start_q=None):
        if clock not in ("sim", "real"):
            raise ValueError(f"clock must be 'sim' or 'real', got {clock!r}")
        self.model = model
        self.robot_id = robot_id
        self.clock = clock
        self.robot = SimRobot(model, start_q=start_q)
        self.mailbox = Mailbox()
        self.safety = safety if safety is not None else SafetyConfig(enabled=False)
        self.log = LogBuffer(robot_id)
        self.sensor_drops = 0
        self.jitter_ns: list[int] = []
        self.record_jitter = False

        self._active: _ActiveSkill | None = None
        self._queued: SubmitSkill | None = None
        self._run_budget = 0
        self._next_skill_id = 1
        self._inflight: set[int] = set()
        self._inflight_lock = threading.Lock()
        self._status_cbs: list = []
        self._tick_cbs: list = []

        # seqlock snapshot: even sequence = complete
        self._snap_seq = 0
        self._snap: RobotState | None = None

        self._thread: threading.Thread | None = None
        self._stop = threading.Event()
        self._work = threading.Condition()

    # -- producer-side API ------------------------------------------------

    def submit_skill(self, spec: SkillSpec) -> int:
        violations = validate_skill(spec)
        if violations:
            raise InvalidSkill(violations)
        with self._inflight_lock:
            if len(self._inflight) >= 2:
                raise Busy("one active and one queued skill already in flight")
            skill_id = self._next_skill_id
            self._next_skill_id += 1
            self._inflight.add(skill_id)
        try:
            self.post(SubmitSkill(skill_id, spec))
        except MailboxFull:
            with self._inflight_lock:
                self._inflight.discard(skill_id)
            raise
        return skill_id

    def post(self, msg) -> None:
        self.mailbox.push(msg)
        with self._work:
            self._work.notify_all()

    def run_ticks(self, n: int) -> None:
        """Grant the sim-clock loop a budget of idle ticks."""
        self.post(RunTicks(n))

    def on_status(self, cb) -> None:
        self._status_cbs.append(cb)

    def on_tick(self, cb) -> None:
        self._tick_cbs.append(cb)

    def snapshot_read(self) -> RobotState:
        """Latest complete snapshot; retries on a torn (odd) sequence."""
        while True:
            s1 = self._snap_seq
            if s1 % 2 == 0:
                snap = self._snap
                if self._snap_seq == s1:
                    if snap is None:
                        raise NotStarted("loop has not executed a tick yet")
                    return snap
            time.sleep(0)

    def flush_log(self, path) -> int:
        return self.log.flush(path)

    # -- loop internals ---------------------------------------------------

    def _emit_status(self, status: SkillStatus):
        if status.terminal:
            with self._inflight_lock:
                self._inflight.discard(status.skill_id)
        for cb in self._status_cbs:
            cb(status)

    def _abort_active(self, cause: str, state: RobotState | None = None):
        act = self._active
        self._active = None
        phase = "preempted" if cause == "preempt" else "aborted"
        self._emit_status(SkillStatus(act.skill_id, phase, cause, state))

    def _activate(self, sub: SubmitSkill):
        state = self.robot.snapshot()
        try:
            gen = make_generator(sub.spec, state, self.model)
        except Exception as e:
            self._emit_status(SkillStatus(sub.skill_id, "aborted",
                                          "command_error", state))
            return
        self._active = _ActiveSkill(sub.skill_id, sub.spec, gen)
        self._emit_status(SkillStatus(sub.skill_id, "running"))

    def _apply_message(self, msg):
        if isinstance(msg, SubmitSkill):
            if validate_skill(msg.spec):
                self._emit_status(SkillStatus(msg.skill_id, "aborted",
                                              "command_error", None))
            elif self._active is None:
                self._activate(msg)
            elif self._queued is None:
                self._queued = msg
                self._emit_status(SkillStatus(msg.skill_id, "queued"))
            else:
                self._emit_status(SkillStatus(msg.skill_id, "aborted",
                                              "command_error", None))
        elif isinstance(msg, PreemptSkill):
            if self._queued is not None and msg.skill_id in (None,
                                                            self._queued.skill_id):
                q = self._queued
                if msg.skill_id == q.skill_id:
                    self._queued = None
                    self._emit_status(SkillStatus(q.skill_id, "preempted",
                                                  "preempt", None))
            if self._active is not None and msg.skill_id in (None,
                                                             self._active.skill_id):
                self._abort_active("preempt", self.robot.snapshot())
        elif isinstance(msg, DeliverSensor):
            self._route_sensor(msg.update)
        elif isinstance(msg, InjectWrench):
            self.robot.inject_wrench(msg.wrench, msg.duration)
        elif isinstance(msg, ReconfigureSafety):
            self.safety = msg.config
        elif isinstance(msg, RunTicks):
            # the tick that delivers this message already counts as one
            self._run_budget += max(0, msg.count - 1)

    def _route_sensor(self, u: SensorUpdate):
        act = self._active
        if act is None or u.topic not in act.spec.sensor_topics:
            self.sensor_drops += 1
            return
        try:
            act.generator.update(u)
        except TypeMismatch:
            self._abort_active("command_error", self.robot.snapshot())

    def _publish(self, state: RobotState):
        self._snap_seq += 1
        self._snap = state
        self._snap_seq += 1
        for cb in self._tick_cbs:
            cb(state)

    def control_tick(self) -> RobotState:
        """One full control period; exactly one sim step and log record."""
        for msg in self.mailbox.drain(DRAIN_CAP):
            self._apply_message(msg)
        if self._active is None and self._queued is not None:
            self._activate(self._queued)
            self._queued = None

        robot = self.robot
        act = self._active
        aborted_now: tuple[int, str] | None = None

        if act is not None:
            t_skill = act.executed * DT
            try:
                out = act.generator.step(t_skill, DT)
                cmd = build_command(act.spec, out, robot.snapshot(), robot.jac())
            except Exception:
                self._abort_active("command_error", robot.snapshot())
                act = None
        if act is None:
            cmd = hold_command(robot.q)
            out = None

        saved = robot.save_state()
        try:
            robot.step(cmd, DT)
        except CommandError:
            robot.restore_state(saved)
            if act is not None:
                self._abort_active("command_error", robot.snapshot())
                act = None
            self._safe_hold_step()
        else:
            violation = check_safety(self.safety, robot.ee_pose(), robot.q,
                                     self.model)
            if violation is not None:
                robot.restore_state(saved)
                if act is not None:
                    cause = ("wall_violation" if violation.kind == "wall"
                             else violation.kind)
                    aborted_now = (act.skill_id, cause)
                    act = None
                self._safe_hold_step()

        if out is not None and out.gripper is not None:
            robot.command_gripper(out.gripper)

        phase = SkillPhase.IDLE
        skill_id = None
        if aborted_now is not None:
            skill_id, _ = aborted_now
            phase = SkillPhase.ABORTED
        elif act is not None:
            act.executed += 1
            skill_id = act.skill_id
            phase = SkillPhase.RUNNING

        state = robot.snapshot(skill_id=skill_id, phase=phase)

        if act is not None:
            fired, cause = self._check_termination(act, state)
            if fired:
                state = robot.snapshot(skill_id=act.skill_id,
                                       phase=SkillPhase.FINISHING)
                self._active = None
                skill_phase = "aborted" if cause == "safety_cap" else "succeeded"
                self._emit_status(SkillStatus(act.skill_id, skill_phase, cause,
                                              state))
        if aborted_now is not None:
            sid, cause = aborted_now
            self._active = None
            self._emit_status(SkillStatus(
                sid, "aborted", cause, robot.snapshot(skill_id=sid,
                                                      phase=SkillPhase.ABORTED)))

        wall_ns = (state.tick * 1_000_000 if self.clock == "sim"
                   else time.monotonic_ns())
        self.log.append(state, wall_ns)
        self._publish(state)
        return state

    def _safe_hold_step(self):
        """Advance one tick holding position; if residual momentum would
        still breach a safety volume, freeze instead of penetrating it."""
        robot = self.robot
        saved = robot.save_state()
        robot.step(hold_command(robot.q), DT)
        if check_safety(self.safety, robot.ee_pose(), robot.q,
                        self.model) is not None:
            robot.restore_state(saved)
            robot.freeze_step(DT)

    def _check_termination(self, act: _ActiveSkill, state: RobotState):
        if act.executed >= int(round(act.spec.max_duration / DT)):
            return True, "safety_cap"
        if act.spec.skill_type is SkillType.GRIPPER:
            # gripper skills end when the jaw settles; the explicit
            # terminator still acts as a cap
            if not state.gripper_moving:
                return True, "joint_goal"
        ctx = act.generator.goal_context()
        fired, cause = should_terminate(act.spec.termination, state,
                                        act.executed, ctx, DT)
        if (fired and act.spec.skill_type is SkillType.GRIPPER
                and cause in ("joint_goal", "pose_goal")):
            return False, None     # arm-goal causes do not end a gripper move
        return fired, cause

    # -- threaded execution ----------------------------------------------

    def _has_work(self) -> bool:
        return (self._active is not None or self._queued is not None
                or len(self.mailbox) > 0 or self._run_budget > 0)

    def start(self):
        if self._thread is not None:
            raise RuntimeError("control core already started")
        self._stop.clear()
        self._thread = threading.Thread(
            target=self._run_real if self.clock == "real" else self._run_sim,
            name=f"control-core-{self.robot_id}", daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        with self._work:
            self._work.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
        if self._active is not None:
            self._abort_active("preempt", self.robot.snapshot())
        if self._queued is not None:
            q = self._queued
            self._queued = None
            self._emit_status(SkillStatus(q.skill_id, "preempted", "preempt"))

    def _run_sim(self):
        while not self._stop.is_set():
            with self._work:
                while not self._has_work() and not self._stop.is_set():
                    self._work.wait(timeout=0.1)
            if self._stop.is_set():
                return
            if self._run_budget > 0:
                self._run_budget -= 1
            self.control_tick()

    def _run_real(self):
        period_ns = int(DT * 1e9)
        next_deadline = time.monotonic_ns() + period_ns
        last = time.monotonic_ns()
        while not self._stop.is_set():
            now = time.monotonic_ns()
            sleep_s = (next_deadline - now - int(SPIN_WINDOW_S * 1e9)) / 1e9
            if sleep_s > 0:
                time.sleep(sleep_s)
            while time.monotonic_ns() < next_deadline:
                pass
            start = time.monotonic_ns()
            if self.record_jitter:
                self.jitter_ns.append(start - last)
            last = start
            self.control_tick()
            next_deadline += period_ns
            if time.monotonic_ns() > next_deadline + 50 * period_ns:
                next_deadline = time.monotonic_ns() + period_ns  # resync after stall
