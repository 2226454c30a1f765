"""High-level scripting client for the skill-based arm control server."""
from .dmp import DegenerateDemo, fit_dmp_weights
from .handle import (ArmHandle, ClientError, CommandRejected, ConnectionClosed,
                     PendingSkill, SkillAborted, ValidationError)
from .protocol import Pose, RobotState, SkillStatus

__all__ = [
    "ArmHandle",
    "ClientError",
    "CommandRejected",
    "ConnectionClosed",
    "DegenerateDemo",
    "PendingSkill",
    "Pose",
    "RobotState",
    "SkillAborted",
    "SkillStatus",
    "ValidationError",
    "fit_dmp_weights",
]
