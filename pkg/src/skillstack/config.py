"""TOML configuration loading: arm parameters, safety volumes, server setup."""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .kinematics import ArmModel, KinematicsError, Pose
from .safety import Box, SafetyConfig

CONFIG_ENV_VAR = "SKILLSTACK_CONFIG"


class ConfigError(ValueError):
    """Raised with the offending file and key in the message."""


def _require(table: dict, key: str, source: str):
    if key not in table:
        raise ConfigError(f"{source}: missing key '{key}'")
    return table[key]


def default_arm_config_path() -> Path:
    return Path(resources.files("skillstack").joinpath("data/panda_arm.toml"))


def load_arm_model(path: str | os.PathLike | None = None) -> ArmModel:
    """Load an ArmModel from a TOML file; None loads the bundled default arm."""
    path = Path(path) if path is not None else default_arm_config_path()
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: TOML parse error: {e}")

    src = str(path)
    arm = _require(doc, "arm", src)
    ee = doc.get("ee_offset", {})
    try:
        ee_offset = Pose(ee.get("position", [0.0, 0.0, 0.0]),
                         ee.get("quaternion_wxyz", [1.0, 0.0, 0.0, 0.0]))
        q_min = np.asarray(_require(arm, "q_min", src), dtype=float)
        q_max = np.asarray(_require(arm, "q_max", src), dtype=float)
        q_home = np.asarray(arm.get("q_home", np.clip(np.zeros(7), q_min, q_max)),
                            dtype=float)
        return ArmModel(
            dh_a=_require(arm, "dh_a", src),
            dh_d=_require(arm, "dh_d", src),
            dh_alpha=_require(arm, "dh_alpha", src),
            dh_theta_offset=_require(arm, "dh_theta_offset", src),
            ee_offset=ee_offset,
            q_min=q_min,
            q_max=q_max,
            dq_max=_require(arm, "dq_max", src),
            tau_max=_require(arm, "tau_max", src),
            inertia=_require(arm, "inertia", src),
            viscous_friction=_require(arm, "viscous_friction", src),
            q_home=q_home,
        )
    except KinematicsError as e:
        raise ConfigError(f"{src}: [arm] {e}")


def _load_box(table: dict, source: str, key: str) -> Box:
    try:
        return Box(center=_require(table, "center", f"{source}:{key}"),
                   half_extents=_require(table, "half_extents", f"{source}:{key}"))
    except ValueError as e:
        raise ConfigError(f"{source}: {key}: {e}")


def load_safety_config(table: dict | None, source: str = "<config>") -> SafetyConfig:
    """Build a SafetyConfig from a parsed [safety] table (None = disabled)."""
    if table is None:
        return SafetyConfig(enabled=False)
    walls = tuple(_load_box(w, source, "safety.walls")
                  for w in table.get("walls", []))
    workspace = None
    if "workspace" in table:
        workspace = _load_box(table["workspace"], source, "safety.workspace")
    ee_half = table.get("ee_half_extents", [0.05, 0.05, 0.05])
    try:
        return SafetyConfig(enabled=bool(table.get("enabled", True)),
                            walls=walls, workspace=workspace,
                            ee_half_extents=ee_half)
    except ValueError as e:
        raise ConfigError(f"{source}: safety: {e}")


@dataclass(frozen=True)
class RobotConfig:
    robot_id: int
    arm_config: str | None = None
    safety: SafetyConfig = field(default_factory=lambda: SafetyConfig(enabled=False))

    def load_model(self) -> ArmModel:
        return load_arm_model(self.arm_config)


@dataclass(frozen=True)
class ServerConfig:
    address: str = "127.0.0.1"
    port: int = 5757
    clock: str = "sim"          # "sim" | "real"
    state_rate_hz: int = 100
    log_dir: str = "logs"
    robots: tuple[RobotConfig, ...] = (RobotConfig(robot_id=0),)

    def __post_init__(self):
        if self.clock not in ("sim", "real"):
            raise ConfigError(f"server.clock must be 'sim' or 'real', got {self.clock!r}")
        ids = [r.robot_id for r in self.robots]
        if len(set(ids)) != len(ids):
            raise ConfigError("robots: duplicate robot_id")
        if not self.robots:
            raise ConfigError("robots: at least one robot required")
        rate = int(self.state_rate_hz)
        if rate < 1:
            raise ConfigError("server.state_rate_hz must be >= 1")
        # publish every N ticks; cap rate to the nearest divisor of 1000
        rate = min(rate, 1000)
        while 1000 % rate != 0:
            rate -= 1
        object.__setattr__(self, "state_rate_hz", rate)

    @property
    def publish_every_ticks(self) -> int:
        return 1000 // self.state_rate_hz


def load_server_config(path: str | os.PathLike | None = None) -> ServerConfig:
    """Load server config; path None falls back to $SKILLSTACK_CONFIG."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return ServerConfig()
    path = Path(path)
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: TOML parse error: {e}")

    src = str(path)
    srv = doc.get("server", {})
    robots = []
    base = path.parent
    for i, rt in enumerate(doc.get("robots", [{"id": 0}])):
        arm_cfg = rt.get("arm_config")
        if arm_cfg is not None and not os.path.isabs(arm_cfg):
            arm_cfg = str(base / arm_cfg)
        robots.append(RobotConfig(
            robot_id=int(_require(rt, "id", f"{src}: [[robots]] #{i}")),
            arm_config=arm_cfg,
            safety=load_safety_config(rt.get("safety"), src),
        ))
    return ServerConfig(
        address=srv.get("address", "127.0.0.1"),
        port=int(srv.get("port", 5757)),
        clock=srv.get("clock", "sim"),
        state_rate_hz=int(srv.get("state_rate_hz", 100)),
        log_dir=srv.get("log_dir", "logs"),
        robots=tuple(robots),
    )
