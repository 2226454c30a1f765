"""TCP server: routes wire-protocol frames to per-robot control loops.

One acceptor thread, one reader thread per client session, one writer thread
per session, one control core per robot. All cross-thread traffic goes through
the control-core mailboxes and the per-session outgoing queues; state frames
are droppable (a slow subscriber loses old snapshots, never stalls the loop),
acks and skill statuses are not.
"""
from __future__ import annotations

import logging
import socket
import threading
from collections import deque

from . import wire
from .config import ServerConfig
from .control_core import (
    Busy,
    ControlCore,
    DeliverSensor,
    InjectWrench,
    InvalidSkill,
    MailboxFull,
    PreemptSkill,
    ReconfigureSafety,
    SkillStatus,
)
from .wire import AckMsg, ErrorCode, Frame, FrameDecoder, MessageType, WireError

log = logging.getLogger("skillstack.server")

SESSION_QUEUE_CAP = 1024


class _Session:
    """One connected client: socket, subscriptions, in-flight skill ids."""

    _next_id = 0
    _id_lock = threading.Lock()

    def __init__(self, sock: socket.socket, server: "Server"):
        with _Session._id_lock:
            _Session._next_id += 1
            self.session_id = _Session._next_id
        self.sock = sock
        self.server = server
        self.decoder = FrameDecoder()
        # robot_id -> publish decimation in ticks
        self.subscriptions: dict[int, int] = {}
        self.open = True
        self._queue: deque[bytes] = deque()
        self._cv = threading.Condition()
        self._writer = threading.Thread(target=self._write_loop,
                                        name=f"session-w-{self.session_id}",
                                        daemon=True)
        self._reader = threading.Thread(target=self._read_loop,
                                        name=f"session-r-{self.session_id}",
                                        daemon=True)

    def start(self):
        self._writer.start()
        self._reader.start()

    # -- outgoing ---------------------------------------------------------

    def send(self, frame: bytes, droppable: bool = False):
        with self._cv:
            if not self.open:
                return
            if droppable and len(self._queue) >= SESSION_QUEUE_CAP:
                self._queue.popleft()    # drop the oldest snapshot
            self._queue.append(frame)
            self._cv.notify()

    def _write_loop(self):
        while True:
            with self._cv:
                while self.open and not self._queue:
                    self._cv.wait(timeout=0.5)
                if not self.open and not self._queue:
                    return
                chunk = b"".join(self._queue)
                self._queue.clear()
            try:
                self.sock.sendall(chunk)
            except OSError:
                self.close()
                return

    # -- incoming ---------------------------------------------------------

    def _read_loop(self):
        try:
            while self.open:
                try:
                    data = self.sock.recv(65536)
                except OSError:
                    break
                if not data:
                    break
                for frame in self.decoder.feed(data):
                    self.server.handle_frame(self, frame)
                for err in self.decoder.errors:
                    self.send(self.server.error_frame(
                        0, ErrorCode.BAD_CRC if isinstance(err, wire.BadCrc)
                        else ErrorCode.MALFORMED, str(err)))
                self.decoder.errors.clear()
        finally:
            self.close()

    def close(self):
        with self._cv:
            if not self.open:
                return
            self.open = False
            self._cv.notify_all()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self.server._drop_session(self)

    def drain_and_close(self, timeout: float = 2.0):
        """Let queued frames flush before closing (graceful shutdown)."""
        import time
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._cv:
                if not self._queue:
                    break
            time.sleep(0.01)
        self.close()


class Server:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.cores: dict[int, ControlCore] = {}
        for rc in config.robots:
            core = ControlCore(rc.load_model(), robot_id=rc.robot_id,
                              safety=rc.safety, clock=config.clock)
            core.on_tick(self._make_tick_cb(rc.robot_id))
            core.on_status(self._make_status_cb(rc.robot_id))
            self.cores[rc.robot_id] = core
        self._sessions: list[_Session] = []
        self._sessions_lock = threading.Lock()
        # (robot_id, skill_id) -> session that submitted it
        self._owners: dict[tuple[int, int], _Session] = {}
        self._owners_lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._acceptor: threading.Thread | None = None
        self._stopping = threading.Event()
        self.port: int | None = None

    # -- lifecycle --------------------------------------------------------

    def start(self):
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self.config.address, self.config.port))
        sock.listen(16)
        self._sock = sock
        self.port = sock.getsockname()[1]
        for core in self.cores.values():
            core.start()
        self._acceptor = threading.Thread(target=self._accept_loop,
                                          name="acceptor", daemon=True)
        self._acceptor.start()
        log.info("ready on %s:%d (%d robots, %s clock)", self.config.address,
                 self.port, len(self.cores), self.config.clock)

    def stop(self, log_dir=None):
        self._stopping.set()
        if self._sock is not None:
            self._sock.close()
        for core in self.cores.values():
            core.stop()     # emits preempted statuses, routed below
        with self._sessions_lock:
            sessions = list(self._sessions)
        for s in sessions:
            s.drain_and_close()
        if self._acceptor is not None:
            self._acceptor.join(timeout=2.0)
        if log_dir is not None:
            from pathlib import Path
            d = Path(log_dir)
            d.mkdir(parents=True, exist_ok=True)
            for rid, core in self.cores.items():
                core.flush_log(d / f"robot_{rid}.filg")

    def serve_forever(self, shutdown: threading.Event | None = None):
        """Block until the shutdown event (or KeyboardInterrupt)."""
        shutdown = shutdown or threading.Event()
        try:
            while not shutdown.is_set() and not self._stopping.is_set():
                shutdown.wait(timeout=0.2)
        except KeyboardInterrupt:
            pass
        self.stop(log_dir=self.config.log_dir)

    def _accept_loop(self):
        while not self._stopping.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            session = _Session(conn, self)
            with self._sessions_lock:
                self._sessions.append(session)
            session.start()

    def _drop_session(self, session: _Session):
        with self._sessions_lock:
            if session in self._sessions:
                self._sessions.remove(session)

    # -- publication and status routing -----------------------------------

    def _make_tick_cb(self, robot_id: int):
        def cb(state):
            blob = None
            with self._sessions_lock:
                sessions = list(self._sessions)
            for s in sessions:
                every = s.subscriptions.get(robot_id)
                if every is None or state.tick % every != 0:
                    continue
                if blob is None:
                    payload = wire.encode_robot_state(
                        state, wall_ns=state.tick * 1_000_000)
                    blob = wire.encode_frame(MessageType.ROBOT_STATE,
                                             robot_id, payload)
                s.send(blob, droppable=True)
        return cb

    def _make_status_cb(self, robot_id: int):
        def cb(status: SkillStatus):
            key = (robot_id, status.skill_id)
            with self._owners_lock:
                session = self._owners.get(key)
                if status.terminal and session is not None:
                    del self._owners[key]
            if session is None:
                return
            final = None
            if status.final_state is not None:
                try:
                    final = wire.encode_robot_state(status.final_state)
                except wire.EncodeNonFinite:
                    final = None
            msg = wire.SkillStatusMsg(status.skill_id, status.phase,
                                      status.termination_cause, final)
            session.send(wire.encode_frame(MessageType.SKILL_STATUS, robot_id,
                                           wire.encode_skill_status(msg)))
        return cb

    # -- frame handling ----------------------------------------------------

    def error_frame(self, robot_id: int, code: ErrorCode, message: str,
                    skill_id: int = 0) -> bytes:
        payload = wire.encode_ack(AckMsg(code, skill_id, message))
        return wire.encode_frame(MessageType.ACK, robot_id, payload)

    def ack_frame(self, robot_id: int, skill_id: int = 0) -> bytes:
        payload = wire.encode_ack(AckMsg(ErrorCode.OK, skill_id))
        return wire.encode_frame(MessageType.ACK, robot_id, payload)

    def handle_frame(self, session: _Session, frame: Frame):
        core = self.cores.get(frame.robot_id)
        if core is None:
            session.send(self.error_frame(frame.robot_id,
                                          ErrorCode.UNKNOWN_ROBOT,
                                          f"no robot {frame.robot_id}"))
            return
        try:
            self._dispatch(session, frame, core)
        except WireError as e:
            session.send(self.error_frame(frame.robot_id, ErrorCode.MALFORMED,
                                          str(e)))
        except MailboxFull as e:
            session.send(self.error_frame(frame.robot_id, ErrorCode.BUSY,
                                          str(e)))

    def _dispatch(self, session: _Session, frame: Frame, core: ControlCore):
        rid = frame.robot_id
        mt = frame.msg_type
        if mt is MessageType.EXECUTE_SKILL:
            spec = wire.decode_skill_spec(frame.payload)
            try:
                skill_id = core.submit_skill(spec)
            except InvalidSkill as e:
                session.send(self.error_frame(rid, ErrorCode.INVALID_SKILL,
                                              "; ".join(e.violations)))
                return
            except Busy as e:
                session.send(self.error_frame(rid, ErrorCode.BUSY, str(e)))
                return
            with self._owners_lock:
                self._owners[(rid, skill_id)] = session
            session.send(self.ack_frame(rid, skill_id))
        elif mt is MessageType.PREEMPT_SKILL:
            skill_id = wire.decode_preempt(frame.payload)
            core.post(PreemptSkill(skill_id))
            session.send(self.ack_frame(rid, skill_id or 0))
        elif mt is MessageType.SENSOR:
            update = wire.decode_sensor(frame.payload)
            core.post(DeliverSensor(update))
        elif mt is MessageType.SUBSCRIBE_STATE:
            rate = wire.decode_subscribe(frame.payload)
            if rate == 0:
                session.subscriptions.pop(rid, None)
            else:
                session.subscriptions[rid] = max(1, 1000 // min(rate, 1000))
            session.send(self.ack_frame(rid))
        elif mt is MessageType.SAFETY_RECONFIG:
            cfg = wire.decode_safety_config(frame.payload)
            core.post(ReconfigureSafety(cfg))
            session.send(self.ack_frame(rid))
        elif mt is MessageType.INJECT_WRENCH:
            w, duration = wire.decode_inject_wrench(frame.payload)
            core.post(InjectWrench(w, duration))
            session.send(self.ack_frame(rid))
        elif mt is MessageType.ACK:
            pass    # clients do not command us with acks
        else:
            session.send(self.error_frame(rid, ErrorCode.UNKNOWN_TYPE,
                                          f"unhandled type {mt!r}"))


def serve(config: ServerConfig,
          shutdown: threading.Event | None = None) -> None:
    server = Server(config)
    server.start()
    server.serve_forever(shutdown)
