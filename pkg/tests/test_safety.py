"""Box geometry, safety verdicts, and a brute-force intersection oracle."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillstack.kinematics import Pose
from skillstack.safety import (
    Box,
    SafetyConfig,
    Violation,
    box_contains,
    boxes_intersect,
    check_safety,
)

QUAT_ID = np.array([1.0, 0.0, 0.0, 0.0])


def pose_at(p):
    return Pose(np.asarray(p, dtype=float), QUAT_ID)


class TestBoxGeometry:
    def test_overlapping(self):
        a = Box([0, 0, 0], [1, 1, 1])
        b = Box([1.5, 0, 0], [1, 1, 1])
        assert boxes_intersect(a, b)

    def test_touching_faces_count(self):
        a = Box([0, 0, 0], [1, 1, 1])
        b = Box([2.0, 0, 0], [1, 1, 1])
        assert boxes_intersect(a, b)

    def test_separated(self):
        a = Box([0, 0, 0], [1, 1, 1])
        b = Box([2.0 + 1e-9, 0, 0], [1, 1, 1])
        assert not boxes_intersect(a, b)

    def test_symmetry(self):
        a = Box([0.3, -0.2, 0.9], [0.2, 0.1, 0.4])
        b = Box([0.5, 0.1, 0.5], [0.3, 0.3, 0.1])
        assert boxes_intersect(a, b) == boxes_intersect(b, a)

    def test_containment(self):
        outer = Box([0, 0, 0.5], [1, 1, 1])
        assert box_contains(outer, Box([0.2, 0.2, 0.5], [0.1, 0.1, 0.1]))
        assert not box_contains(outer, Box([0.95, 0, 0.5], [0.1, 0.1, 0.1]))
        # contained iff it does not poke out, even while intersecting
        assert box_contains(outer, Box([0, 0, 0.5], [1, 1, 1]))

    def test_degenerate_boxes_rejected(self):
        with pytest.raises(ValueError):
            Box([0, 0, 0], [0.0, 1, 1])
        with pytest.raises(ValueError):
            Box([0, 0, np.nan], [1, 1, 1])

    def test_brute_force_oracle_10k_pairs(self):
        """Compare against a 3x-per-axis interval oracle on 10^4 random pairs."""
        rng = np.random.default_rng(99)
        for _ in range(10_000):
            ca, cb = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
            ha, hb = rng.uniform(0.01, 0.8, 3), rng.uniform(0.01, 0.8, 3)
            a, b = Box(ca, ha), Box(cb, hb)
            oracle = all(
                ca[k] - ha[k] <= cb[k] + hb[k] and cb[k] - hb[k] <= ca[k] + ha[k]
                for k in range(3))
            assert boxes_intersect(a, b) == oracle

    @given(st.lists(st.floats(-2, 2), min_size=6, max_size=6),
           st.lists(st.floats(0.01, 1), min_size=6, max_size=6))
    @settings(max_examples=200)
    def test_intersection_commutes(self, centers, halves):
        a = Box(centers[:3], halves[:3])
        b = Box(centers[3:], halves[3:])
        assert boxes_intersect(a, b) == boxes_intersect(b, a)


class TestCheckSafety:
    def test_disabled_config_always_passes(self, model):
        cfg = SafetyConfig(enabled=False,
                           walls=(Box([0.5, 0, 0.5], [10, 10, 10]),))
        v = check_safety(cfg, pose_at([0.5, 0, 0.5]), model.q_home, model)
        assert v is None

    def test_clear_pose_passes(self, model):
        cfg = SafetyConfig(walls=(Box([2.0, 0, 0.5], [0.1, 0.1, 0.1]),))
        v = check_safety(cfg, pose_at([0.4, 0, 0.6]), model.q_home, model)
        assert v is None

    def test_wall_violation_reported(self, model):
        cfg = SafetyConfig(walls=(Box([0.4, 0.0, 0.6], [0.1, 0.1, 0.1]),))
        v = check_safety(cfg, pose_at([0.45, 0.0, 0.62]), model.q_home, model)
        assert isinstance(v, Violation) and v.kind == "wall"

    def test_wall_margin_includes_ee_box(self, model):
        # ee box half-extent 0.05: a pose 0.14 from a 0.1-half wall still hits
        cfg = SafetyConfig(walls=(Box([0.5, 0.0, 0.5], [0.1, 0.1, 0.1]),))
        v = check_safety(cfg, pose_at([0.5 + 0.14, 0.0, 0.5]), model.q_home, model)
        assert v is not None and v.kind == "wall"
        v = check_safety(cfg, pose_at([0.5 + 0.16, 0.0, 0.5]), model.q_home, model)
        assert v is None

    def test_workspace_violation_reported(self, model):
        cfg = SafetyConfig(workspace=Box([0.3, 0.0, 0.5], [0.4, 0.4, 0.4]))
        v = check_safety(cfg, pose_at([0.3, 0.0, 0.5]), model.q_home, model)
        assert v is None
        v = check_safety(cfg, pose_at([0.69, 0.0, 0.5]), model.q_home, model)
        assert v is not None and v.kind == "workspace"

    def test_joint_limit_violation_reported(self, model):
        q = model.q_home.copy()
        q[0] = model.q_max[0] + 0.01
        v = check_safety(SafetyConfig(), pose_at([0.4, 0, 0.6]), q, model)
        assert v is not None and v.kind == "joint_limit"
        assert "0" in v.detail

    def test_joint_limit_checked_before_walls(self, model):
        q = model.q_home.copy()
        q[2] = model.q_min[2] - 0.1
        cfg = SafetyConfig(walls=(Box([0.4, 0, 0.6], [1, 1, 1]),))
        v = check_safety(cfg, pose_at([0.4, 0, 0.6]), q, model)
        assert v.kind == "joint_limit"

    def test_config_immutable(self):
        cfg = SafetyConfig()
        with pytest.raises(Exception):
            cfg.enabled = False
        with pytest.raises(ValueError):
            SafetyConfig(ee_half_extents=[0.0, 0.05, 0.05])
