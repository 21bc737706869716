import pytest

from mindsim.simrun.config import SimConfig


@pytest.fixture
def small_config():
    """Four 16 MiB memory blades: fast to build, roomy enough for fuzz traces."""
    return SimConfig(memory_blades=4, blade_capacity=16 << 20)
