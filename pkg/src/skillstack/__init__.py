"""Skill-based robot-arm control stack over a simulated 7-DOF arm."""

from .config import ConfigError, ServerConfig, load_arm_model, load_server_config
from .control_core import Busy, ControlCore, InvalidSkill, MailboxFull, SkillStatus
from .kinematics import ArmModel, Pose, Twist, Wrench
from .sim_robot import ControlMode, GripperCommand, RobotCommand, RobotState, SimRobot
from .skills import SkillSpec, SkillType, validate_skill

__version__ = "0.1.0"

__all__ = [
    "ArmModel", "Busy", "ConfigError", "ControlCore", "ControlMode",
    "GripperCommand", "InvalidSkill", "MailboxFull", "Pose", "RobotCommand",
    "RobotState", "ServerConfig", "SimRobot", "SkillSpec", "SkillStatus",
    "SkillType", "Twist", "Wrench", "load_arm_model", "load_server_config",
    "validate_skill", "__version__",
]
