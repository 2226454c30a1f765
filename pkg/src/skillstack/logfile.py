"""Fixed-width binary state log: one record per executed control tick.

Layout (all little-endian):
  header: magic "FILG", version u16, record_size u16, robot_id u16, reserved u16
  record: tick u64, wall_ns u64,
          q[7] dq[7] tau_cmd[7] tau_ext[7] f64,
          ee position[3] + quaternion wxyz[4] f64,
          ee external wrench[6] f64, gripper width f64,
          skill_id u32, phase u8, 3 pad bytes (8-byte alignment)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .kinematics import Pose, Wrench
from .sim_robot import RobotState, SkillPhase

LOG_MAGIC = b"FILG"
LOG_VERSION = 1
NO_SKILL_ID = 0xFFFFFFFF

_HEADER = struct.Struct("<4sHHHH")
_RECORD = struct.Struct("<QQ42dIB3x")
RECORD_SIZE = _RECORD.size
HEADER_SIZE = _HEADER.size


class LogFormatError(ValueError):
    pass


def pack_header(robot_id: int) -> bytes:
    return _HEADER.pack(LOG_MAGIC, LOG_VERSION, RECORD_SIZE, robot_id, 0)


def unpack_header(data: bytes) -> tuple[int, int]:
    """Returns (version, robot_id); raises on bad magic."""
    if len(data) < HEADER_SIZE:
        raise LogFormatError("file shorter than the log header")
    magic, version, record_size, robot_id, _ = _HEADER.unpack_from(data)
    if magic != LOG_MAGIC:
        raise LogFormatError(f"bad magic {magic!r}")
    if record_size != RECORD_SIZE:
        raise LogFormatError(f"unexpected record size {record_size}")
    return version, robot_id


def pack_record(state: RobotState, wall_ns: int) -> bytes:
    reals = np.concatenate([
        state.q, state.dq, state.tau_commanded, state.tau_external,
        state.ee_pose.position, state.ee_pose.quaternion,
        state.ee_wrench_external.as_array(), [state.gripper_width]])
    skill_id = NO_SKILL_ID if state.active_skill_id is None else state.active_skill_id
    return _RECORD.pack(state.tick, wall_ns, *reals, skill_id,
                        state.skill_phase.value)


def unpack_record(data: bytes, offset: int = 0) -> tuple[RobotState, int]:
    """Returns (state, wall_ns)."""
    vals = _RECORD.unpack_from(data, offset)
    tick, wall_ns = vals[0], vals[1]
    r = np.array(vals[2:44])
    skill_id, phase = vals[44], vals[45]
    state = RobotState(
        tick=tick,
        q=r[0:7], dq=r[7:14], tau_commanded=r[14:21], tau_external=r[21:28],
        ee_pose=Pose(r[28:31], r[31:35]),
        ee_wrench_external=Wrench(r[35:38], r[38:41]),
        gripper_width=float(r[41]),
        gripper_moving=False,
        active_skill_id=None if skill_id == NO_SKILL_ID else skill_id,
        skill_phase=SkillPhase(phase))
    return state, wall_ns


@dataclass
class LogRecord:
    state: RobotState
    wall_ns: int


class LogBuffer:
    """Accumulates packed records in memory; flushed off the control loop."""

    def __init__(self, robot_id: int):
        self.robot_id = robot_id
        self._records: list[bytes] = []

    def append(self, state: RobotState, wall_ns: int):
        self._records.append(pack_record(state, wall_ns))

    def __len__(self) -> int:
        return len(self._records)

    def as_bytes(self) -> bytes:
        return pack_header(self.robot_id) + b"".join(self._records)

    def flush(self, path) -> int:
        """Write the log file; returns the record count."""
        with open(path, "wb") as f:
            f.write(self.as_bytes())
        return len(self._records)


def read_log(path) -> tuple[int, list[LogRecord], bool]:
    """Parse a log file; returns (robot_id, records, truncated_flag).

    A trailing partial record is dropped and reported via the flag.
    """
    with open(path, "rb") as f:
        data = f.read()
    _, robot_id = unpack_header(data)
    body = data[HEADER_SIZE:]
    n, rem = divmod(len(body), RECORD_SIZE)
    records = []
    for i in range(n):
        state, wall_ns = unpack_record(body, i * RECORD_SIZE)
        records.append(LogRecord(state, wall_ns))
    return robot_id, records, rem != 0
