"""Shared fixtures: a live sim-clock server (imported from the server package
only here, in tests — the SDK itself talks pure TCP)."""
import pytest

from skillstack.config import RobotConfig, ServerConfig
from skillstack.server import Server

from armclient import ArmHandle


@pytest.fixture(scope="module")
def server():
    cfg = ServerConfig(port=0, clock="sim",
                       robots=tuple(RobotConfig(robot_id=i) for i in range(2)))
    srv = Server(cfg)
    srv.start()
    yield srv
    srv.stop()


@pytest.fixture
def arm(server):
    with ArmHandle(port=server.port, robot_id=0) as handle:
        yield handle
