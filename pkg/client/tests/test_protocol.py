"""Client codec against the server's codec: byte-identical specs, state
round-trips, and client/server DMP fit agreement."""
import numpy as np
import pytest

import skillstack.dmp as server_dmp
import skillstack.kinematics as sk_kin
import skillstack.skills as sk
import skillstack.wire as server_wire
from skillstack.config import load_arm_model
from skillstack.sim_robot import SimRobot

from armclient import fit_dmp_weights
from armclient import protocol as cw


def pairs():
    """(client spec, equivalent server spec) pairs covering every constructor
    the SDK emits."""
    q = np.linspace(-0.4, 0.4, 7)
    kp, kd = np.full(7, 600.0), np.full(7, 50.0)
    stiff = np.array([300.0] * 3 + [30.0] * 3)
    damp = 2.0 * np.sqrt(stiff)
    pos, quat = np.array([0.4, 0.1, 0.5]), np.array([0.0, 1.0, 0.0, 0.0])
    w = np.arange(70, dtype=np.float64).reshape(10, 7) / 100.0
    wrench = np.array([0.0, 0.0, -5.0, 0.0, 0.0, 0.0])

    out = []
    out.append((
        cw.SkillSpec(cw.SkillType.JOINT_POSITION, cw.MinJerkJoint(q, 2.0),
                     cw.InternalJointPD(kp, kd),
                     cw.AnyOf((cw.JointGoalTerm(5e-3), cw.TimeTerm(3.0))),
                     max_duration=8.0),
        sk.SkillSpec(sk.SkillType.JOINT_POSITION, sk.MinJerkJoint(q, 2.0),
                     sk.InternalJointPD(kp, kd),
                     sk.AnyOf((sk.JointGoalTerm(5e-3), sk.TimeTerm(3.0))),
                     max_duration=8.0)))
    out.append((
        cw.SkillSpec(cw.SkillType.IMPEDANCE_POSE,
                     cw.MinJerkPose(cw.Pose(pos, quat), 2.0),
                     cw.CartesianImpedance(stiff, damp),
                     cw.PoseGoalTerm(5e-3, 1e-2)),
        sk.SkillSpec(sk.SkillType.IMPEDANCE_POSE,
                     sk.MinJerkPose(sk_kin.Pose(pos, quat), 2.0),
                     sk.CartesianImpedance(stiff, damp),
                     sk.PoseGoalTerm(5e-3, 1e-2))))
    out.append((
        cw.SkillSpec(cw.SkillType.CARTESIAN_POSE,
                     cw.MinJerkPose(cw.Pose(pos, quat), 2.0),
                     cw.Passthrough(), cw.TimeTerm(3.0)),
        sk.SkillSpec(sk.SkillType.CARTESIAN_POSE,
                     sk.MinJerkPose(sk_kin.Pose(pos, quat), 2.0),
                     sk.Passthrough(), sk.TimeTerm(3.0))))
    out.append((
        cw.SkillSpec(cw.SkillType.JOINT_POSITION,
                     cw.JointDMP(w, q, 2.0), cw.InternalJointPD(kp, kd),
                     cw.TimeTerm(3.0)),
        sk.SkillSpec(sk.SkillType.JOINT_POSITION,
                     sk.JointDMP(w, q, 2.0), sk.InternalJointPD(kp, kd),
                     sk.TimeTerm(3.0))))
    out.append((
        cw.SkillSpec(cw.SkillType.IMPEDANCE_POSE,
                     cw.StreamedPoseSetpoint(cw.Pose(pos, quat)),
                     cw.CartesianImpedance(stiff, damp), cw.TimeTerm(1.0),
                     sensor_topics=("pose-abc",)),
        sk.SkillSpec(sk.SkillType.IMPEDANCE_POSE,
                     sk.StreamedPoseSetpoint(sk_kin.Pose(pos, quat)),
                     sk.CartesianImpedance(stiff, damp), sk.TimeTerm(1.0),
                     sensor_topics=("pose-abc",))))
    out.append((
        cw.SkillSpec(cw.SkillType.GRIPPER, cw.GripperMove(0.02, 0.05, 0.0),
                     cw.Passthrough(), cw.TimeTerm(3.0)),
        sk.SkillSpec(sk.SkillType.GRIPPER, sk.GripperMove(0.02, 0.05, 0.0),
                     sk.Passthrough(), sk.TimeTerm(3.0))))
    out.append((
        cw.SkillSpec(cw.SkillType.FORCE, cw.ConstantWrench(wrench, 1.0),
                     cw.ForceToTorque(), cw.TimeTerm(1.0)),
        sk.SkillSpec(sk.SkillType.FORCE,
                     sk.ConstantWrench(sk_kin.Wrench(wrench[:3], wrench[3:]),
                                       1.0),
                     sk.ForceToTorque(), sk.TimeTerm(1.0))))
    out.append((
        cw.SkillSpec(cw.SkillType.JOINT_POSITION, cw.Hold(),
                     cw.InternalJointPD(kp, kd), cw.TimeTerm(0.001),
                     max_duration=5.0),
        sk.SkillSpec(sk.SkillType.JOINT_POSITION, sk.Hold(),
                     sk.InternalJointPD(kp, kd), sk.TimeTerm(0.001),
                     max_duration=5.0)))
    return out


@pytest.mark.parametrize("client_spec,server_spec", pairs())
def test_spec_encoding_matches_server(client_spec, server_spec):
    assert (cw.encode_skill_spec(client_spec)
            == server_wire.encode_skill_spec(server_spec))


@pytest.mark.parametrize("client_spec,server_spec", pairs())
def test_every_sdk_spec_passes_server_validation(client_spec, server_spec):
    decoded = server_wire.decode_skill_spec(cw.encode_skill_spec(client_spec))
    assert sk.validate_skill(decoded) == []


def test_frame_encoding_matches_server():
    payload = b"\x01\x02\x03"
    for mt in (1, 2, 5, 6):
        assert (cw.encode_frame(mt, 3, payload)
                == server_wire.encode_frame(mt, 3, payload))
    assert (cw.encode_frame(cw.MessageType.PREEMPT_SKILL, 0,
                            cw.encode_preempt(None))
            == bytes.fromhex("464946500102000000000000dece173e"))


def test_frame_decoder_roundtrip():
    frames = [cw.encode_frame(cw.MessageType.ACK, 1, b"x" * 10),
              cw.encode_frame(cw.MessageType.ROBOT_STATE, 2, b"y" * 360)]
    dec = cw.FrameDecoder()
    blob = b"junk" + frames[0] + frames[1][:7]
    got = dec.feed(blob)
    assert len(got) == 1
    got += dec.feed(frames[1][7:])
    assert len(got) == 2
    assert got[1].payload == b"y" * 360


def test_robot_state_decoding_matches_server():
    state = SimRobot(load_arm_model()).snapshot()
    blob = server_wire.encode_robot_state(state, wall_ns=777_000_000)
    got = cw.decode_robot_state(blob)
    assert got.tick == state.tick and got.wall_ns == 777_000_000
    assert np.array_equal(got.q, state.q)
    assert np.array_equal(got.ee_pose.position, state.ee_pose.position)
    assert np.array_equal(got.ee_pose.quaternion, state.ee_pose.quaternion)
    assert got.gripper_width == state.gripper_width
    assert got.active_skill_id is None


def test_skill_status_decoding_matches_server():
    state = SimRobot(load_arm_model()).snapshot()
    msg = server_wire.SkillStatusMsg(7, "succeeded", "joint_goal",
                                     server_wire.encode_robot_state(state))
    got = cw.decode_skill_status(server_wire.encode_skill_status(msg))
    assert got.skill_id == 7 and got.phase == "succeeded"
    assert got.termination_cause == "joint_goal"
    assert np.array_equal(got.final_state.q, state.q)


def test_ack_decoding_matches_server():
    blob = server_wire.encode_ack(server_wire.AckMsg(
        server_wire.ErrorCode.INVALID_SKILL, 9, "bad duration"))
    got = cw.decode_ack(blob)
    assert got.code is cw.ErrorCode.INVALID_SKILL
    assert got.skill_id == 9 and got.message == "bad duration"


def test_sensor_encoding_matches_server():
    pose = cw.Pose(np.array([0.3, 0.0, 0.5]), np.array([1.0, 0, 0, 0]))
    client = cw.encode_pose_sensor("topic-x", 0.25, pose)
    server = server_wire.encode_sensor(sk.SensorUpdate(
        topic="topic-x", timestamp=0.25,
        payload=sk.PoseSetpointPayload(sk_kin.Pose(pose.position,
                                                   pose.quaternion))))
    assert client == server


def test_dmp_fit_matches_server_to_1e9():
    rng = np.random.default_rng(7)
    t = np.linspace(0, 1, 1001)
    demo = np.cumsum(rng.normal(0, 1e-3, (1001, 7)), axis=0) \
        + np.outer(t**2 * (3 - 2 * t), np.linspace(0.1, 0.6, 7))
    w_client, g_client, tau_client = fit_dmp_weights(demo, 1e-3, n_basis=10)
    server_fit = server_dmp.fit_dmp(demo, 1e-3, n_basis=10)
    assert np.max(np.abs(w_client - server_fit.weights)) < 1e-9
    assert np.array_equal(g_client, server_fit.goal)
    assert tau_client == server_fit.tau
