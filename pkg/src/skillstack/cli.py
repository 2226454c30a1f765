"""Operator command line: serve, bench, logdump, inject-wrench, validate-config."""
from __future__ import annotations

import dataclasses
import signal
import socket
import sys
import threading
import time

import click
import numpy as np

from . import wire
from .config import ConfigError, load_arm_model, load_server_config
from .control_core import ControlCore
from .logfile import LogFormatError, read_log
from .kinematics import Wrench
from .server import Server
from .skills import Hold, InternalJointPD, SkillSpec, SkillType, TimeTerm
from .wire import ErrorCode, MessageType


@click.group()
def main():
    """Skill-based robot arm control stack."""


# ---------------------------------------------------------------------------
# serve

@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Server TOML config (default: $SKILLSTACK_CONFIG).")
@click.option("--clock", type=click.Choice(["real", "sim"]), default=None,
              help="Override the configured clock mode.")
@click.option("--port", type=int, default=None, help="Override the TCP port.")
def serve(config_path, clock, port):
    """Run the control server until interrupted."""
    try:
        cfg = load_server_config(config_path)
        if clock is not None:
            cfg = dataclasses.replace(cfg, clock=clock)
        if port is not None:
            cfg = dataclasses.replace(cfg, port=port)
        server = Server(cfg)
        server.start()
    except (ConfigError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    click.echo(f"ready on {cfg.address}:{server.port} "
               f"({len(cfg.robots)} robots, {cfg.clock} clock)")
    shutdown = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            signal.signal(sig, lambda *_: shutdown.set())
        except ValueError:
            pass    # not the main thread (tests)
    server.serve_forever(shutdown)


# ---------------------------------------------------------------------------
# bench

@main.group()
def bench():
    """Timing benchmarks."""


@bench.command("loop")
@click.option("--duration", type=float, required=True,
              help="Benchmark length in seconds.")
@click.option("--config", "config_path", type=click.Path(), default=None)
def bench_loop(duration, config_path):
    """Measure control-loop tick timing against the wall clock."""
    if duration <= 0:
        raise click.UsageError("--duration must be > 0")
    cfg = None
    if config_path is not None:
        try:
            cfg = load_server_config(config_path)
        except ConfigError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(1)
    if cfg is not None and cfg.clock != "real":
        raise click.UsageError("bench requires real clock")
    model = cfg.robots[0].load_model() if cfg is not None else load_arm_model()

    core = ControlCore(model, clock="real")
    core.record_jitter = True
    # idle robot under a hold skill: measures loop overhead, not controller load
    spec = SkillSpec(SkillType.JOINT_POSITION, Hold(),
                     InternalJointPD(kp=np.full(7, 600.0), kd=np.full(7, 50.0)),
                     TimeTerm(duration=duration), max_duration=duration + 5.0)
    core.submit_skill(spec)
    core.start()
    time.sleep(duration + 0.2)
    core.stop()

    periods = np.asarray(core.jitter_ns[1:], dtype=np.float64) / 1000.0  # us
    if periods.size == 0:
        click.echo("error: no ticks recorded", err=True)
        sys.exit(1)
    nominal = 1000.0
    missed = int(np.sum(periods > 2.0 * nominal))
    click.echo(f"ticks:   {periods.size}")
    click.echo(f"mean:    {periods.mean():.1f} us")
    click.echo(f"median:  {np.median(periods):.1f} us")
    click.echo(f"p99:     {np.percentile(periods, 99):.1f} us")
    click.echo(f"max:     {periods.max():.1f} us")
    click.echo(f"missed:  {missed} ({100.0 * missed / periods.size:.2f}%)")
    click.echo(f"BENCH mean_us={periods.mean():.3f} "
               f"p99_us={np.percentile(periods, 99):.3f} missed={missed}")


# ---------------------------------------------------------------------------
# logdump

_CSV_COLUMNS = (
    ["tick", "wall_ns"]
    + [f"q{i}" for i in range(7)] + [f"dq{i}" for i in range(7)]
    + [f"tau_cmd{i}" for i in range(7)] + [f"tau_ext{i}" for i in range(7)]
    + ["px", "py", "pz", "qw", "qx", "qy", "qz"]
    + ["fx", "fy", "fz", "tx", "ty", "tz"]
    + ["gripper_width", "skill_id", "phase"])


def _record_row(rec):
    s = rec.state
    reals = np.concatenate([s.q, s.dq, s.tau_commanded, s.tau_external,
                            s.ee_pose.position, s.ee_pose.quaternion,
                            s.ee_wrench_external.as_array(),
                            [s.gripper_width]])
    sid = "" if s.active_skill_id is None else str(s.active_skill_id)
    return ([str(s.tick), str(rec.wall_ns)]
            + [repr(float(v)) for v in reals]
            + [sid, s.skill_phase.name.lower()])


@main.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--csv", "as_csv", is_flag=True, help="Emit CSV instead of a summary.")
def logdump(path, as_csv):
    """Dump a binary state log."""
    try:
        robot_id, records, truncated = read_log(path)
    except (LogFormatError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    if truncated:
        click.echo(f"warning: truncated file, salvaged {len(records)} records",
                   err=True)
    if as_csv:
        click.echo(",".join(_CSV_COLUMNS))
        for rec in records:
            click.echo(",".join(_record_row(rec)))
        return
    click.echo(f"robot {robot_id}: {len(records)} records")
    for rec in records:
        s = rec.state
        sid = "-" if s.active_skill_id is None else s.active_skill_id
        click.echo(f"tick {s.tick:>8}  t={rec.wall_ns / 1e9:.3f}s  "
                   f"skill={sid} {s.skill_phase.name.lower():>8}  "
                   f"q0={s.q[0]:+.4f}  gripper={s.gripper_width:.4f}")


# ---------------------------------------------------------------------------
# inject-wrench

@main.command("inject-wrench")
@click.option("--robot", type=int, default=0)
@click.option("--fx", type=float, default=0.0)
@click.option("--fy", type=float, default=0.0)
@click.option("--fz", type=float, default=0.0)
@click.option("--tx", type=float, default=0.0)
@click.option("--ty", type=float, default=0.0)
@click.option("--tz", type=float, default=0.0)
@click.option("--duration", type=float, required=True)
@click.option("--addr", default="127.0.0.1:5757", help="Server host:port.")
def inject_wrench(robot, fx, fy, fz, tx, ty, tz, duration, addr):
    """Apply a wrench at a robot's end-effector via a running server."""
    if duration <= 0:
        raise click.UsageError("--duration must be > 0")
    host, _, port = addr.partition(":")
    try:
        sock = socket.create_connection((host, int(port or 5757)), timeout=5)
    except OSError as e:
        click.echo(f"error: cannot reach {addr}: {e}", err=True)
        sys.exit(1)
    try:
        w = Wrench(force=np.array([fx, fy, fz]), torque=np.array([tx, ty, tz]))
        sock.sendall(wire.encode_frame(MessageType.INJECT_WRENCH, robot,
                                       wire.encode_inject_wrench(w, duration)))
        decoder = wire.FrameDecoder()
        sock.settimeout(5)
        while True:
            frames = decoder.feed(sock.recv(4096))
            acks = [f for f in frames if f.msg_type is MessageType.ACK]
            if acks:
                ack = wire.decode_ack(acks[0].payload)
                break
    except OSError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    finally:
        sock.close()
    if ack.code is not ErrorCode.OK:
        click.echo(f"error: {ack.code.name}: {ack.message}", err=True)
        sys.exit(1)
    click.echo(f"ack: wrench applied to robot {robot} for {duration}s")


# ---------------------------------------------------------------------------
# validate-config

@main.command("validate-config")
@click.argument("path", type=click.Path())
def validate_config(path):
    """Parse a server config and its arm models; report problems."""
    try:
        cfg = load_server_config(path)
        for rc in cfg.robots:
            rc.load_model()
    except ConfigError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    click.echo(f"ok: {len(cfg.robots)} robots, clock={cfg.clock}, "
               f"state_rate={cfg.state_rate_hz}Hz, "
               f"listen={cfg.address}:{cfg.port}")


if __name__ == "__main__":
    main()
