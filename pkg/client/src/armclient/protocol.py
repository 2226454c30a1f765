"""Client-side codec for the arm server's framed binary protocol.

Frame layout (little-endian):
  magic "FIFP" | version u8 = 1 | msg_type u8 | robot_id u16 | payload_len u32
  | payload | crc u32
with CRC-32/ISO-HDLC over everything after the magic through the payload.
Skill specs are tag-length-value blocks; robot states are fixed 360-byte
records shared with the server's log format.

This module is deliberately self-contained: the SDK talks to the server only
over TCP and never imports server code.
"""
from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"FIFP"
VERSION = 1
MAX_PAYLOAD = 1 << 20

_FRAME_HEADER = struct.Struct("<4sBBHI")
HEADER_SIZE = _FRAME_HEADER.size
CRC_SIZE = 4

N_JOINTS = 7


class MessageType(enum.IntEnum):
    EXECUTE_SKILL = 0x01
    PREEMPT_SKILL = 0x02
    SKILL_STATUS = 0x03
    ROBOT_STATE = 0x04
    SENSOR = 0x05
    SUBSCRIBE_STATE = 0x06
    SAFETY_RECONFIG = 0x07
    INJECT_WRENCH = 0x08
    ACK = 0x09


class ErrorCode(enum.IntEnum):
    OK = 0
    UNKNOWN_TYPE = 1
    MALFORMED = 2
    INVALID_SKILL = 3
    BUSY = 4
    UNKNOWN_ROBOT = 5
    BAD_CRC = 6


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    msg_type: MessageType
    robot_id: int
    payload: bytes


def _crc(after_magic: bytes) -> int:
    return zlib.crc32(after_magic) & 0xFFFFFFFF


def encode_frame(msg_type: int, robot_id: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload {len(payload)} exceeds {MAX_PAYLOAD}")
    head = _FRAME_HEADER.pack(MAGIC, VERSION, int(msg_type), robot_id,
                              len(payload))
    return head + payload + struct.pack("<I", _crc(head[4:] + payload))


class FrameDecoder:
    """Incremental stream decoder; resynchronizes on the magic, never raises."""

    def __init__(self):
        self._buf = bytearray()
        self.errors: list[ProtocolError] = []

    def feed(self, data: bytes) -> list[Frame]:
        self._buf.extend(data)
        out: list[Frame] = []
        while True:
            idx = self._buf.find(MAGIC)
            if idx < 0:
                if len(self._buf) > 3:
                    del self._buf[:-3]
                return out
            if idx > 0:
                self.errors.append(ProtocolError(f"skipped {idx} bytes"))
                del self._buf[:idx]
            if len(self._buf) < HEADER_SIZE:
                return out
            _, _, msg_type, robot_id, plen = _FRAME_HEADER.unpack_from(self._buf)
            if plen > MAX_PAYLOAD:
                self.errors.append(ProtocolError(f"oversize payload {plen}"))
                del self._buf[:4]
                continue
            total = HEADER_SIZE + plen + CRC_SIZE
            if len(self._buf) < total:
                return out
            payload = bytes(self._buf[HEADER_SIZE:HEADER_SIZE + plen])
            (crc,) = struct.unpack_from("<I", self._buf, HEADER_SIZE + plen)
            if crc != _crc(bytes(self._buf[4:HEADER_SIZE]) + payload):
                self.errors.append(ProtocolError("bad frame crc"))
                del self._buf[:4]
                continue
            try:
                mt = MessageType(msg_type)
            except ValueError:
                self.errors.append(ProtocolError(f"unknown type {msg_type}"))
                del self._buf[:total]
                continue
            out.append(Frame(mt, robot_id, payload))
            del self._buf[:total]


# ---------------------------------------------------------------------------
# domain types (client-side mirrors)

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if n < 1e-12 or not np.all(np.isfinite(q)):
        raise ValueError("unusable quaternion")
    q = q / n
    return -q if q[0] < 0 else q


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    quaternion: np.ndarray          # w, x, y, z, unit norm

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "quaternion",
                           np.asarray(self.quaternion, dtype=np.float64).reshape(4))


@dataclass(frozen=True)
class RobotState:
    tick: int
    wall_ns: int
    q: np.ndarray
    dq: np.ndarray
    tau_commanded: np.ndarray
    tau_external: np.ndarray
    ee_pose: Pose
    ee_wrench: np.ndarray           # fx fy fz tx ty tz
    gripper_width: float
    active_skill_id: int | None
    skill_phase: int


# skill spec building blocks, mirroring the server's wire vocabulary

class SkillType(enum.IntEnum):
    JOINT_POSITION = 1
    CARTESIAN_POSE = 2
    IMPEDANCE_POSE = 3
    FORCE = 4
    GRIPPER = 5
    TORQUE = 6


@dataclass(frozen=True)
class MinJerkJoint:
    goal: np.ndarray
    duration: float


@dataclass(frozen=True)
class MinJerkPose:
    goal: Pose
    duration: float


@dataclass(frozen=True)
class JointDMP:
    weights: np.ndarray
    goal: np.ndarray
    tau: float
    alpha: float = 25.0
    beta: float = 6.25
    alpha_x: float = 8.0 / 3.0
    n_basis: int = 10


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
    wrench: np.ndarray              # fx fy fz tx ty tz
    duration: float


@dataclass(frozen=True)
class InternalJointPD:
    kp: np.ndarray
    kd: np.ndarray


@dataclass(frozen=True)
class CartesianImpedance:
    stiffness: np.ndarray
    damping: np.ndarray


@dataclass(frozen=True)
class Passthrough:
    pass


@dataclass(frozen=True)
class ForceToTorque:
    pass


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
class AnyOf:
    children: tuple


@dataclass(frozen=True)
class SkillSpec:
    skill_type: SkillType
    traj_gen: object
    feedback: object
    termination: object
    sensor_topics: tuple[str, ...] = ()
    max_duration: float = 60.0


# ---------------------------------------------------------------------------
# TLV encoding

TAG_GEN_MINJERK_JOINT = 0x0101
TAG_GEN_MINJERK_POSE = 0x0102
TAG_GEN_JOINT_DMP = 0x0103
TAG_GEN_STREAM_JOINT = 0x0104
TAG_GEN_STREAM_POSE = 0x0105
TAG_GEN_HOLD = 0x0106
TAG_GEN_GRIPPER = 0x0107
TAG_GEN_WRENCH = 0x0108

TAG_FB_JOINT_PD = 0x0201
TAG_FB_CART_IMP = 0x0202
TAG_FB_PASSTHROUGH = 0x0203
TAG_FB_FORCE = 0x0204

TAG_TERM_TIME = 0x0301
TAG_TERM_JOINT_GOAL = 0x0302
TAG_TERM_POSE_GOAL = 0x0303
TAG_TERM_CONTACT = 0x0304
TAG_TERM_ANY_OF = 0x0305

TAG_TOPICS = 0x0401
TAG_MAX_DURATION = 0x0501

TAG_SENSOR_POSE_SETPOINT = 0x0602


def _f64s(*vals) -> bytes:
    a = np.asarray(vals, dtype="<f8").reshape(-1)
    if np.any(np.isnan(a)):
        raise ProtocolError("NaN is not encodable")
    return a.tobytes()


def _string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pose(p: Pose) -> bytes:
    return _f64s(p.position) + _f64s(p.quaternion)


def _block(tag: int, body: bytes) -> bytes:
    return struct.pack("<HI", tag, len(body)) + body


def _encode_gen(gen) -> bytes:
    if isinstance(gen, MinJerkJoint):
        return _block(TAG_GEN_MINJERK_JOINT, _f64s(gen.goal) + _f64s(gen.duration))
    if isinstance(gen, MinJerkPose):
        return _block(TAG_GEN_MINJERK_POSE, _pose(gen.goal) + _f64s(gen.duration))
    if isinstance(gen, JointDMP):
        w = np.asarray(gen.weights, dtype=np.float64)
        return _block(TAG_GEN_JOINT_DMP,
                      struct.pack("<I", gen.n_basis) + _f64s(w.reshape(-1))
                      + _f64s(gen.goal)
                      + _f64s(gen.tau, gen.alpha, gen.beta, gen.alpha_x))
    if isinstance(gen, StreamedPoseSetpoint):
        return _block(TAG_GEN_STREAM_POSE, _pose(gen.initial))
    if isinstance(gen, Hold):
        return _block(TAG_GEN_HOLD, b"")
    if isinstance(gen, GripperMove):
        return _block(TAG_GEN_GRIPPER,
                      _f64s(gen.target_width, gen.speed, gen.grasp_force))
    if isinstance(gen, ConstantWrench):
        return _block(TAG_GEN_WRENCH, _f64s(gen.wrench) + _f64s(gen.duration))
    raise ProtocolError(f"unencodable generator {type(gen).__name__}")


def _encode_fb(fb) -> bytes:
    if isinstance(fb, InternalJointPD):
        return _block(TAG_FB_JOINT_PD, _f64s(fb.kp) + _f64s(fb.kd))
    if isinstance(fb, CartesianImpedance):
        return _block(TAG_FB_CART_IMP, _f64s(fb.stiffness) + _f64s(fb.damping))
    if isinstance(fb, Passthrough):
        return _block(TAG_FB_PASSTHROUGH, b"")
    if isinstance(fb, ForceToTorque):
        return _block(TAG_FB_FORCE, b"")
    raise ProtocolError(f"unencodable feedback {type(fb).__name__}")


def _encode_term(term) -> bytes:
    if isinstance(term, TimeTerm):
        return _block(TAG_TERM_TIME, _f64s(term.duration))
    if isinstance(term, JointGoalTerm):
        return _block(TAG_TERM_JOINT_GOAL, _f64s(term.tolerance))
    if isinstance(term, PoseGoalTerm):
        return _block(TAG_TERM_POSE_GOAL, _f64s(term.pos_tol, term.ori_tol))
    if isinstance(term, AnyOf):
        body = struct.pack("<I", len(term.children))
        for c in term.children:
            body += _encode_term(c)
        return _block(TAG_TERM_ANY_OF, body)
    raise ProtocolError(f"unencodable terminator {type(term).__name__}")


def encode_skill_spec(spec: SkillSpec) -> bytes:
    out = struct.pack("<H", int(spec.skill_type))
    out += _encode_gen(spec.traj_gen)
    out += _encode_fb(spec.feedback)
    out += _encode_term(spec.termination)
    topics = struct.pack("<I", len(spec.sensor_topics))
    for t in spec.sensor_topics:
        topics += _string(t)
    out += _block(TAG_TOPICS, topics)
    out += _block(TAG_MAX_DURATION, _f64s(spec.max_duration))
    return out


def encode_preempt(skill_id: int | None = None) -> bytes:
    return b"" if skill_id is None else struct.pack("<I", skill_id)


def encode_subscribe(rate_hz: int) -> bytes:
    return struct.pack("<I", rate_hz)


def encode_pose_sensor(topic: str, timestamp: float, pose: Pose) -> bytes:
    return (_string(topic) + _f64s(timestamp)
            + _block(TAG_SENSOR_POSE_SETPOINT, _pose(pose)))


# ---------------------------------------------------------------------------
# decoding: acks, statuses, robot states

_PHASES = ("queued", "running", "succeeded", "preempted", "aborted")
TERMINAL_PHASES = ("succeeded", "preempted", "aborted")

_RECORD = struct.Struct("<QQ42dIB3x")
RECORD_SIZE = _RECORD.size          # 360
NO_SKILL_ID = 0xFFFFFFFF


@dataclass(frozen=True)
class SkillStatus:
    skill_id: int
    phase: str
    termination_cause: str | None = None
    final_state: RobotState | None = None

    @property
    def terminal(self) -> bool:
        return self.phase in TERMINAL_PHASES


@dataclass(frozen=True)
class Ack:
    code: ErrorCode
    skill_id: int
    message: str


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if len(self.data) - self.pos < n:
            raise ProtocolError("short payload")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def decode_robot_state(data: bytes) -> RobotState:
    if len(data) < RECORD_SIZE:
        raise ProtocolError(f"robot state needs {RECORD_SIZE} bytes")
    vals = _RECORD.unpack_from(data)
    tick, wall_ns = vals[0], vals[1]
    r = np.array(vals[2:44])
    skill_id, phase = vals[44], vals[45]
    return RobotState(
        tick=tick, wall_ns=wall_ns,
        q=r[0:7], dq=r[7:14], tau_commanded=r[14:21], tau_external=r[21:28],
        ee_pose=Pose(r[28:31], r[31:35]),
        ee_wrench=r[35:41], gripper_width=float(r[41]),
        active_skill_id=None if skill_id == NO_SKILL_ID else skill_id,
        skill_phase=phase)


def decode_skill_status(payload: bytes) -> SkillStatus:
    r = _Reader(payload)
    sid = r.u32()
    phase_idx = r.u8()
    if phase_idx >= len(_PHASES):
        raise ProtocolError(f"unknown phase index {phase_idx}")
    cause = r.string() or None
    final = None
    if r.u8():
        final = decode_robot_state(r.take(RECORD_SIZE))
    return SkillStatus(sid, _PHASES[phase_idx], cause, final)


def decode_ack(payload: bytes) -> Ack:
    r = _Reader(payload)
    raw = r.u16()
    try:
        code = ErrorCode(raw)
    except ValueError:
        raise ProtocolError(f"unknown ack code {raw}")
    return Ack(code, r.u32(), r.string())
