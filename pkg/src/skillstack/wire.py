"""Framed binary wire protocol: the only format clients and server share.

Frame layout (little-endian throughout):
  magic "FIFP" | version u8 = 1 | msg_type u8 | robot_id u16 | payload_len u32
  | payload | crc u32

The CRC is CRC-32/ISO-HDLC (zlib.crc32) over everything after the magic
through the end of the payload. Payloads are capped at 1 MiB. Skill specs use
a tag-length-value encoding so decoders can skip unknown trailing blocks.
"""
from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .kinematics import Pose, Twist, Wrench, quat_normalize
from .logfile import RECORD_SIZE, pack_record, unpack_record
from .safety import Box, SafetyConfig
from .sim_robot import RobotState
from .skills import (
    AnyOf,
    CartesianImpedance,
    ConstantWrench,
    ContactTerm,
    ForceToTorque,
    GripperMove,
    Hold,
    InternalJointPD,
    JointDMP,
    JointGoalTerm,
    JointSetpointPayload,
    MinJerkJoint,
    MinJerkPose,
    Passthrough,
    PoseGoalTerm,
    PoseSetpointPayload,
    SensorUpdate,
    SkillSpec,
    SkillType,
    StreamedJointSetpoint,
    StreamedPoseSetpoint,
    TimeTerm,
)

MAGIC = b"FIFP"
VERSION = 1
MAX_PAYLOAD = 1 << 20

_FRAME_HEADER = struct.Struct("<4sBBHI")
HEADER_SIZE = _FRAME_HEADER.size       # 12
CRC_SIZE = 4


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


class WireError(ValueError):
    pass


class BadMagic(WireError):
    pass


class BadCrc(WireError):
    pass


class Oversize(WireError):
    pass


class Truncated(WireError):
    pass


class UnknownVariant(WireError):
    pass


class MalformedBlock(WireError):
    pass


class EncodeNonFinite(WireError):
    pass


@dataclass(frozen=True)
class Frame:
    msg_type: MessageType
    robot_id: int
    payload: bytes


# ---------------------------------------------------------------------------
# frame codec

def crc_of(after_magic: bytes) -> int:
    return zlib.crc32(after_magic) & 0xFFFFFFFF


def encode_frame(msg_type: int, robot_id: int, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise Oversize(f"payload {len(payload)} exceeds {MAX_PAYLOAD}")
    head = _FRAME_HEADER.pack(MAGIC, VERSION, int(msg_type), robot_id,
                              len(payload))
    crc = crc_of(head[4:] + payload)
    return head + payload + struct.pack("<I", crc)


def decode_frame(data: bytes) -> Frame:
    """Decode one complete frame from an exact buffer."""
    if len(data) < HEADER_SIZE + CRC_SIZE:
        raise Truncated("buffer shorter than an empty frame")
    magic, version, msg_type, robot_id, plen = _FRAME_HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if plen > MAX_PAYLOAD:
        raise Oversize(f"declared payload {plen} exceeds {MAX_PAYLOAD}")
    total = HEADER_SIZE + plen + CRC_SIZE
    if len(data) < total:
        raise Truncated(f"need {total} bytes, have {len(data)}")
    payload = data[HEADER_SIZE:HEADER_SIZE + plen]
    (crc,) = struct.unpack_from("<I", data, HEADER_SIZE + plen)
    if crc != crc_of(data[4:HEADER_SIZE] + payload):
        raise BadCrc("frame checksum mismatch")
    try:
        mt = MessageType(msg_type)
    except ValueError:
        raise UnknownVariant(f"unknown message type 0x{msg_type:02x}")
    return Frame(mt, robot_id, payload)


class FrameDecoder:
    """Incremental decoder for a byte stream; resynchronizes on the magic.

    feed() never raises: damaged input is recorded in .errors and skipped.
    """

    def __init__(self):
        self._buf = bytearray()
        self.errors: list[WireError] = []

    def feed(self, data: bytes) -> list[Frame]:
        self._buf.extend(data)
        out: list[Frame] = []
        while True:
            idx = self._buf.find(MAGIC)
            if idx < 0:
                # keep a potential magic prefix at the tail
                if len(self._buf) > 3:
                    del self._buf[:-3]
                return out
            if idx > 0:
                self.errors.append(BadMagic(f"skipped {idx} garbage bytes"))
                del self._buf[:idx]
            if len(self._buf) < HEADER_SIZE:
                return out
            _, version, msg_type, robot_id, plen = _FRAME_HEADER.unpack_from(
                self._buf)
            if plen > MAX_PAYLOAD:
                self.errors.append(Oversize(f"declared payload {plen}"))
                del self._buf[:4]     # false sync: slide past this magic
                continue
            total = HEADER_SIZE + plen + CRC_SIZE
            if len(self._buf) < total:
                return out
            try:
                out.append(decode_frame(bytes(self._buf[:total])))
            except WireError as e:
                self.errors.append(e)
                del self._buf[:4]     # resync after the corrupt magic
                continue
            del self._buf[:total]


# ---------------------------------------------------------------------------
# TLV primitives

def _f64s(*vals) -> bytes:
    a = np.asarray(vals, dtype="<f8").reshape(-1)
    if not np.all(np.isfinite(a)):
        # infinities are legitimate (contact thresholds); only NaN is refused
        if np.any(np.isnan(a)):
            raise EncodeNonFinite("NaN is not encodable")
    return a.tobytes()


def _array(a) -> bytes:
    a = np.asarray(a, dtype="<f8").reshape(-1)
    return struct.pack("<I", a.size) + _f64s(a)


def _string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pose(p: Pose) -> bytes:
    return _f64s(p.position) + _f64s(p.quaternion)


def _block(tag: int, body: bytes) -> bytes:
    return struct.pack("<HI", tag, len(body)) + body


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if self.remaining() < n:
            raise MalformedBlock(f"need {n} bytes, {self.remaining()} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def f64s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").copy()

    def array(self) -> np.ndarray:
        n = self.u32()
        if n > MAX_PAYLOAD // 8:
            raise MalformedBlock(f"array length {n} implausible")
        return self.f64s(n)

    def string(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedBlock(f"bad UTF-8 string: {e}")

    def pose(self) -> Pose:
        pos = self.f64s(3)
        quat = self.f64s(4)
        if not np.all(np.isfinite(quat)) or np.linalg.norm(quat) < 1e-12:
            raise MalformedBlock("unusable quaternion")
        return Pose(pos, quat_normalize(quat))

    def block(self):
        """Returns (tag, sub-reader over exactly the block body)."""
        tag = self.u16()
        length = self.u32()
        return tag, _Reader(self.take(length))


# ---------------------------------------------------------------------------
# skill spec codec

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

TAG_SENSOR_JOINT_SETPOINT = 0x0601
TAG_SENSOR_POSE_SETPOINT = 0x0602


def _encode_gen(gen) -> bytes:
    if isinstance(gen, MinJerkJoint):
        return _block(TAG_GEN_MINJERK_JOINT,
                      _f64s(gen.goal) + _f64s(gen.duration))
    if isinstance(gen, MinJerkPose):
        return _block(TAG_GEN_MINJERK_POSE, _pose(gen.goal) + _f64s(gen.duration))
    if isinstance(gen, JointDMP):
        body = (struct.pack("<I", gen.n_basis) + _f64s(gen.weights.reshape(-1))
                + _f64s(gen.goal) + _f64s(gen.tau, gen.alpha, gen.beta,
                                          gen.alpha_x))
        return _block(TAG_GEN_JOINT_DMP, body)
    if isinstance(gen, StreamedJointSetpoint):
        return _block(TAG_GEN_STREAM_JOINT, _f64s(gen.initial))
    if isinstance(gen, StreamedPoseSetpoint):
        return _block(TAG_GEN_STREAM_POSE, _pose(gen.initial))
    if isinstance(gen, Hold):
        return _block(TAG_GEN_HOLD, b"")
    if isinstance(gen, GripperMove):
        return _block(TAG_GEN_GRIPPER,
                      _f64s(gen.target_width, gen.speed, gen.grasp_force))
    if isinstance(gen, ConstantWrench):
        return _block(TAG_GEN_WRENCH,
                      _f64s(gen.wrench.as_array()) + _f64s(gen.duration))
    raise UnknownVariant(f"unencodable generator {type(gen).__name__}")


def _decode_gen(tag: int, r: _Reader):
    if tag == TAG_GEN_MINJERK_JOINT:
        return MinJerkJoint(goal=r.f64s(7), duration=r.f64())
    if tag == TAG_GEN_MINJERK_POSE:
        return MinJerkPose(goal=r.pose(), duration=r.f64())
    if tag == TAG_GEN_JOINT_DMP:
        n_basis = r.u32()
        if not 1 <= n_basis <= 4096:
            raise MalformedBlock(f"implausible n_basis {n_basis}")
        weights = r.f64s(n_basis * 7).reshape(n_basis, 7)
        goal = r.f64s(7)
        tau, alpha, beta, alpha_x = (r.f64() for _ in range(4))
        return JointDMP(weights=weights, goal=goal, tau=tau, alpha=alpha,
                        beta=beta, alpha_x=alpha_x, n_basis=n_basis)
    if tag == TAG_GEN_STREAM_JOINT:
        return StreamedJointSetpoint(initial=r.f64s(7))
    if tag == TAG_GEN_STREAM_POSE:
        return StreamedPoseSetpoint(initial=r.pose())
    if tag == TAG_GEN_HOLD:
        return Hold()
    if tag == TAG_GEN_GRIPPER:
        return GripperMove(target_width=r.f64(), speed=r.f64(),
                           grasp_force=r.f64())
    if tag == TAG_GEN_WRENCH:
        w = r.f64s(6)
        return ConstantWrench(wrench=Wrench(w[:3], w[3:]), duration=r.f64())
    raise UnknownVariant(f"unknown generator tag 0x{tag:04x}")


def _encode_fb(fb) -> bytes:
    if isinstance(fb, InternalJointPD):
        return _block(TAG_FB_JOINT_PD, _f64s(fb.kp) + _f64s(fb.kd))
    if isinstance(fb, CartesianImpedance):
        return _block(TAG_FB_CART_IMP, _f64s(fb.stiffness) + _f64s(fb.damping))
    if isinstance(fb, Passthrough):
        return _block(TAG_FB_PASSTHROUGH, b"")
    if isinstance(fb, ForceToTorque):
        return _block(TAG_FB_FORCE, b"")
    raise UnknownVariant(f"unencodable feedback {type(fb).__name__}")


def _decode_fb(tag: int, r: _Reader):
    if tag == TAG_FB_JOINT_PD:
        return InternalJointPD(kp=r.f64s(7), kd=r.f64s(7))
    if tag == TAG_FB_CART_IMP:
        return CartesianImpedance(stiffness=r.f64s(6), damping=r.f64s(6))
    if tag == TAG_FB_PASSTHROUGH:
        return Passthrough()
    if tag == TAG_FB_FORCE:
        return ForceToTorque()
    raise UnknownVariant(f"unknown feedback tag 0x{tag:04x}")


def _encode_term(term) -> bytes:
    if isinstance(term, TimeTerm):
        return _block(TAG_TERM_TIME, _f64s(term.duration))
    if isinstance(term, JointGoalTerm):
        return _block(TAG_TERM_JOINT_GOAL, _f64s(term.tolerance))
    if isinstance(term, PoseGoalTerm):
        return _block(TAG_TERM_POSE_GOAL, _f64s(term.pos_tol, term.ori_tol))
    if isinstance(term, ContactTerm):
        return _block(TAG_TERM_CONTACT, _f64s(term.force_threshold))
    if isinstance(term, AnyOf):
        body = struct.pack("<I", len(term.children))
        for c in term.children:
            body += _encode_term(c)
        return _block(TAG_TERM_ANY_OF, body)
    raise UnknownVariant(f"unencodable terminator {type(term).__name__}")


def _decode_term(tag: int, r: _Reader, depth: int = 0):
    if depth > 4:
        raise MalformedBlock("terminator nesting too deep")
    if tag == TAG_TERM_TIME:
        return TimeTerm(duration=r.f64())
    if tag == TAG_TERM_JOINT_GOAL:
        return JointGoalTerm(tolerance=r.f64())
    if tag == TAG_TERM_POSE_GOAL:
        return PoseGoalTerm(pos_tol=r.f64(), ori_tol=r.f64())
    if tag == TAG_TERM_CONTACT:
        return ContactTerm(force_threshold=r.f64s(6))
    if tag == TAG_TERM_ANY_OF:
        n = r.u32()
        if n > 64:
            raise MalformedBlock(f"implausible AnyOf arity {n}")
        children = []
        for _ in range(n):
            ctag, cr = r.block()
            children.append(_decode_term(ctag, cr, depth + 1))
        return AnyOf(tuple(children))
    raise UnknownVariant(f"unknown terminator tag 0x{tag:04x}")


def encode_skill_spec(spec: SkillSpec) -> bytes:
    out = struct.pack("<H", spec.skill_type.value)
    out += _encode_gen(spec.traj_gen)
    out += _encode_fb(spec.feedback)
    out += _encode_term(spec.termination)
    topics = struct.pack("<I", len(spec.sensor_topics))
    for t in spec.sensor_topics:
        topics += _string(t)
    out += _block(TAG_TOPICS, topics)
    out += _block(TAG_MAX_DURATION, _f64s(spec.max_duration))
    return out


def decode_skill_spec(data: bytes) -> SkillSpec:
    r = _Reader(data)
    try:
        st = SkillType(r.u16())
    except ValueError as e:
        raise UnknownVariant(str(e))

    tag, body = r.block()
    if not 0x0100 <= tag <= 0x01FF:
        raise MalformedBlock(f"expected a generator block, got 0x{tag:04x}")
    gen = _decode_gen(tag, body)

    tag, body = r.block()
    if not 0x0200 <= tag <= 0x02FF:
        raise MalformedBlock(f"expected a feedback block, got 0x{tag:04x}")
    fb = _decode_fb(tag, body)

    tag, body = r.block()
    if not 0x0300 <= tag <= 0x03FF:
        raise MalformedBlock(f"expected a terminator block, got 0x{tag:04x}")
    term = _decode_term(tag, body)

    tag, body = r.block()
    if tag != TAG_TOPICS:
        raise MalformedBlock(f"expected the topics block, got 0x{tag:04x}")
    n = body.u32()
    if n > 1024:
        raise MalformedBlock(f"implausible topic count {n}")
    topics = tuple(body.string() for _ in range(n))

    max_duration = 60.0
    while r.remaining() > 0:
        tag, body = r.block()
        if tag == TAG_MAX_DURATION:
            max_duration = body.f64()
        # unknown trailing blocks are skipped for forward compatibility
    return SkillSpec(skill_type=st, traj_gen=gen, feedback=fb, termination=term,
                     sensor_topics=topics, max_duration=max_duration)


# ---------------------------------------------------------------------------
# robot state codec (same layout as a log record body)

def encode_robot_state(state: RobotState, wall_ns: int = 0) -> bytes:
    for arr in (state.q, state.dq, state.tau_commanded, state.tau_external,
                state.ee_pose.position, state.ee_pose.quaternion,
                state.ee_wrench_external.as_array(), [state.gripper_width]):
        if np.any(np.isnan(np.asarray(arr, dtype=float))):
            raise EncodeNonFinite("robot state contains NaN")
    return pack_record(state, wall_ns)


def decode_robot_state(data: bytes) -> tuple[RobotState, int]:
    if len(data) < RECORD_SIZE:
        raise MalformedBlock(f"robot state needs {RECORD_SIZE} bytes")
    try:
        return unpack_record(data)
    except Exception as e:
        raise MalformedBlock(f"undecodable robot state: {e}")


# ---------------------------------------------------------------------------
# message payloads

PREEMPT_ALL = 0xFFFFFFFF

_PHASES = ("queued", "running", "succeeded", "preempted", "aborted")


def encode_preempt(skill_id: int | None = None) -> bytes:
    if skill_id is None:
        return b""
    return struct.pack("<I", skill_id)


def decode_preempt(payload: bytes) -> int | None:
    if not payload:
        return None
    if len(payload) != 4:
        raise MalformedBlock("preempt payload must be empty or a u32")
    (sid,) = struct.unpack("<I", payload)
    return None if sid == PREEMPT_ALL else sid


@dataclass(frozen=True)
class SkillStatusMsg:
    skill_id: int
    phase: str
    termination_cause: str | None = None
    final_state: bytes | None = None    # encoded robot state, if any


def encode_skill_status(m: SkillStatusMsg) -> bytes:
    if m.phase not in _PHASES:
        raise UnknownVariant(f"unknown phase {m.phase!r}")
    out = struct.pack("<IB", m.skill_id, _PHASES.index(m.phase))
    out += _string(m.termination_cause or "")
    if m.final_state is None:
        out += b"\x00"
    else:
        out += b"\x01" + m.final_state
    return out


def decode_skill_status(payload: bytes) -> SkillStatusMsg:
    r = _Reader(payload)
    sid = r.u32()
    phase_idx = r.u8()
    if phase_idx >= len(_PHASES):
        raise MalformedBlock(f"unknown phase index {phase_idx}")
    cause = r.string() or None
    final = None
    if r.u8():
        final = r.take(RECORD_SIZE)
    return SkillStatusMsg(sid, _PHASES[phase_idx], cause, final)


def encode_sensor(update: SensorUpdate) -> bytes:
    out = _string(update.topic) + _f64s(update.timestamp)
    p = update.payload
    if isinstance(p, JointSetpointPayload):
        out += _block(TAG_SENSOR_JOINT_SETPOINT, _f64s(p.setpoint))
    elif isinstance(p, PoseSetpointPayload):
        out += _block(TAG_SENSOR_POSE_SETPOINT, _pose(p.setpoint))
    else:
        raise UnknownVariant(f"unencodable sensor payload {type(p).__name__}")
    return out


def decode_sensor(payload: bytes) -> SensorUpdate:
    r = _Reader(payload)
    topic = r.string()
    ts = r.f64()
    tag, body = r.block()
    if tag == TAG_SENSOR_JOINT_SETPOINT:
        p = JointSetpointPayload(setpoint=body.f64s(7))
    elif tag == TAG_SENSOR_POSE_SETPOINT:
        p = PoseSetpointPayload(setpoint=body.pose())
    else:
        raise UnknownVariant(f"unknown sensor payload tag 0x{tag:04x}")
    return SensorUpdate(topic=topic, timestamp=ts, payload=p)


def encode_subscribe(rate_hz: int) -> bytes:
    return struct.pack("<I", rate_hz)


def decode_subscribe(payload: bytes) -> int:
    if len(payload) != 4:
        raise MalformedBlock("subscribe payload must be a u32 rate")
    return struct.unpack("<I", payload)[0]


def encode_safety_config(cfg: SafetyConfig) -> bytes:
    out = struct.pack("<B", 1 if cfg.enabled else 0)
    out += _f64s(cfg.ee_half_extents)
    if cfg.workspace is None:
        out += b"\x00"
    else:
        out += b"\x01" + _f64s(cfg.workspace.center) + _f64s(
            cfg.workspace.half_extents)
    out += struct.pack("<I", len(cfg.walls))
    for w in cfg.walls:
        out += _f64s(w.center) + _f64s(w.half_extents)
    return out


def decode_safety_config(payload: bytes) -> SafetyConfig:
    r = _Reader(payload)
    enabled = bool(r.u8())
    ee_half = r.f64s(3)
    workspace = None
    if r.u8():
        workspace = Box(r.f64s(3), r.f64s(3))
    n = r.u32()
    if n > 1024:
        raise MalformedBlock(f"implausible wall count {n}")
    walls = tuple(Box(r.f64s(3), r.f64s(3)) for _ in range(n))
    try:
        return SafetyConfig(enabled=enabled, walls=walls, workspace=workspace,
                            ee_half_extents=ee_half)
    except ValueError as e:
        raise MalformedBlock(str(e))


def encode_inject_wrench(w: Wrench, duration: float) -> bytes:
    return _f64s(w.as_array()) + _f64s(duration)


def decode_inject_wrench(payload: bytes) -> tuple[Wrench, float]:
    r = _Reader(payload)
    vals = r.f64s(6)
    return Wrench(vals[:3], vals[3:]), r.f64()


@dataclass(frozen=True)
class AckMsg:
    code: ErrorCode
    skill_id: int = 0
    message: str = ""


def encode_ack(m: AckMsg) -> bytes:
    return struct.pack("<HI", int(m.code), m.skill_id) + _string(m.message)


def decode_ack(payload: bytes) -> AckMsg:
    r = _Reader(payload)
    raw = r.u16()
    try:
        code = ErrorCode(raw)
    except ValueError:
        raise MalformedBlock(f"unknown ack code {raw}")
    return AckMsg(code, r.u32(), r.string())
