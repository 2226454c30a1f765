"""CLI behavior: exit codes, logdump round-trip, bench, config validation."""
import socket
import threading

import numpy as np
import pytest
from click.testing import CliRunner

from skillstack import wire
from skillstack.cli import main
from skillstack.config import ServerConfig, RobotConfig, load_arm_model
from skillstack.control_core import ControlCore, SubmitSkill, RunTicks
from skillstack.logfile import read_log
from skillstack.server import Server
from skillstack.skills import (Hold, InternalJointPD, SkillSpec, SkillType,
                               TimeTerm)
from skillstack.wire import ErrorCode, FrameDecoder, MessageType


@pytest.fixture
def runner():
    return CliRunner()


def _hold_spec(duration=0.05):
    return SkillSpec(SkillType.JOINT_POSITION, Hold(),
                     InternalJointPD(kp=np.full(7, 600.0), kd=np.full(7, 50.0)),
                     TimeTerm(duration=duration))


def _write_log(path, n_ticks=20):
    model = load_arm_model()
    core = ControlCore(model, robot_id=3, clock="sim")
    if n_ticks > 0:
        core.submit_skill(_hold_spec(n_ticks / 1000.0))
        for _ in range(n_ticks):
            core.control_tick()
    core.flush_log(path)


# ---------------------------------------------------------------------------
# top level / usage errors

def test_no_args_shows_usage(runner):
    result = runner.invoke(main, [])
    assert "Usage" in result.output or "Commands" in result.output


def test_unknown_command_exits_2(runner):
    result = runner.invoke(main, ["frobnicate"])
    assert result.exit_code == 2


def test_bench_zero_duration_usage_error(runner):
    result = runner.invoke(main, ["bench", "loop", "--duration", "0"])
    assert result.exit_code == 2
    assert "duration" in result.output.lower()


def test_bench_missing_duration_usage_error(runner):
    result = runner.invoke(main, ["bench", "loop"])
    assert result.exit_code == 2


def test_inject_wrench_zero_duration_usage_error(runner):
    result = runner.invoke(main, ["inject-wrench", "--duration", "0"])
    assert result.exit_code == 2


# ---------------------------------------------------------------------------
# bench

def test_bench_rejects_sim_clock_config(runner, tmp_path):
    cfg = tmp_path / "server.toml"
    cfg.write_text('[server]\nclock = "sim"\n[[robots]]\nid = 0\n')
    result = runner.invoke(main, ["bench", "loop", "--duration", "0.1",
                                  "--config", str(cfg)])
    assert result.exit_code == 2
    assert "real clock" in result.output


def test_bench_runs_and_prints_machine_line(runner):
    result = runner.invoke(main, ["bench", "loop", "--duration", "0.3"])
    assert result.exit_code == 0, result.output
    line = [ln for ln in result.output.splitlines()
            if ln.startswith("BENCH ")]
    assert len(line) == 1
    fields = dict(kv.split("=") for kv in line[0].split()[1:])
    assert set(fields) == {"mean_us", "p99_us", "missed"}
    assert 0 < float(fields["mean_us"]) < 100_000
    assert int(fields["missed"]) >= 0


# ---------------------------------------------------------------------------
# logdump

def test_logdump_missing_file_exits(runner, tmp_path):
    result = runner.invoke(main, ["logdump", str(tmp_path / "nope.filg")])
    assert result.exit_code == 2  # click Path(exists=True)


def test_logdump_bad_magic_exits_1(runner, tmp_path):
    p = tmp_path / "bad.filg"
    p.write_bytes(b"NOPE" + b"\x00" * 20)
    result = runner.invoke(main, ["logdump", str(p)])
    assert result.exit_code == 1
    assert "error" in result.output


def test_logdump_header_only_zero_records(runner, tmp_path):
    p = tmp_path / "empty.filg"
    _write_log(p, n_ticks=0)
    result = runner.invoke(main, ["logdump", str(p)])
    assert result.exit_code == 0
    assert "0 records" in result.output


def test_logdump_human_summary(runner, tmp_path):
    p = tmp_path / "r.filg"
    _write_log(p, n_ticks=15)
    result = runner.invoke(main, ["logdump", str(p)])
    assert result.exit_code == 0
    assert "robot 3: 15 records" in result.output


def test_logdump_truncated_warns_and_salvages(runner, tmp_path):
    p = tmp_path / "t.filg"
    _write_log(p, n_ticks=10)
    data = p.read_bytes()
    p.write_bytes(data[:-100])  # chop into the last record
    result = runner.invoke(main, ["logdump", str(p)])
    assert result.exit_code == 0
    assert "salvaged 9 records" in result.output
    assert "warning" in result.output


def test_logdump_csv_roundtrip_exact(runner, tmp_path):
    """Every float in the CSV re-parses to the exact binary value."""
    p = tmp_path / "r.filg"
    _write_log(p, n_ticks=25)
    _, records, _ = read_log(p)
    result = runner.invoke(main, ["logdump", str(p), "--csv"])
    assert result.exit_code == 0
    lines = result.output.strip().splitlines()
    header, rows = lines[0].split(","), lines[1:]
    assert len(rows) == 25
    assert header[0] == "tick" and "q0" in header and "phase" in header
    for rec, row in zip(records, rows):
        cells = row.split(",")
        assert len(cells) == len(header)
        got = dict(zip(header, cells))
        s = rec.state
        assert int(got["tick"]) == s.tick
        assert int(got["wall_ns"]) == rec.wall_ns
        for i in range(7):
            assert float(got[f"q{i}"]) == s.q[i]
            assert float(got[f"dq{i}"]) == s.dq[i]
            assert float(got[f"tau_cmd{i}"]) == s.tau_commanded[i]
        for name, val in zip(("px", "py", "pz"), s.ee_pose.position):
            assert float(got[name]) == val
        for name, val in zip(("qw", "qx", "qy", "qz"), s.ee_pose.quaternion):
            assert float(got[name]) == val
        assert float(got["gripper_width"]) == s.gripper_width
        assert got["phase"] in ("idle", "running", "finishing", "aborted")


# ---------------------------------------------------------------------------
# validate-config

def test_validate_config_ok(runner, tmp_path):
    cfg = tmp_path / "server.toml"
    cfg.write_text('[server]\nclock = "sim"\nport = 6001\n'
                   '[[robots]]\nid = 0\n[[robots]]\nid = 1\n')
    result = runner.invoke(main, ["validate-config", str(cfg)])
    assert result.exit_code == 0
    assert "ok: 2 robots" in result.output


def test_validate_config_bad_exits_1(runner, tmp_path):
    cfg = tmp_path / "server.toml"
    cfg.write_text('[server]\nclock = "warp"\n[[robots]]\nid = 0\n')
    result = runner.invoke(main, ["validate-config", str(cfg)])
    assert result.exit_code == 1
    assert "error" in result.output


def test_validate_config_missing_file_exits_1(runner, tmp_path):
    result = runner.invoke(main, ["validate-config", str(tmp_path / "no.toml")])
    assert result.exit_code == 1


def test_serve_bad_config_exits_1(runner, tmp_path):
    cfg = tmp_path / "server.toml"
    cfg.write_text("not valid toml [[[")
    result = runner.invoke(main, ["serve", "--config", str(cfg)])
    assert result.exit_code == 1


# ---------------------------------------------------------------------------
# inject-wrench against a live server

def test_inject_wrench_end_to_end(runner):
    cfg = ServerConfig(port=0, clock="sim", robots=(RobotConfig(robot_id=0),))
    server = Server(cfg)
    server.start()
    try:
        result = runner.invoke(main, [
            "inject-wrench", "--robot", "0", "--fz", "-5.0",
            "--duration", "0.2", "--addr", f"127.0.0.1:{server.port}"])
        assert result.exit_code == 0, result.output
        assert "ack" in result.output
    finally:
        server.stop()


def test_inject_wrench_unknown_robot_exits_1(runner):
    cfg = ServerConfig(port=0, clock="sim", robots=(RobotConfig(robot_id=0),))
    server = Server(cfg)
    server.start()
    try:
        result = runner.invoke(main, [
            "inject-wrench", "--robot", "9", "--fz", "-5.0",
            "--duration", "0.2", "--addr", f"127.0.0.1:{server.port}"])
        assert result.exit_code == 1
        assert "UNKNOWN_ROBOT" in result.output
    finally:
        server.stop()


def test_inject_wrench_no_server_exits_1(runner):
    result = runner.invoke(main, [
        "inject-wrench", "--fz", "-1.0", "--duration", "0.1",
        "--addr", "127.0.0.1:1"])
    assert result.exit_code == 1
