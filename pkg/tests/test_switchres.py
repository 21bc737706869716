import pytest

from mindsim import switchres
from mindsim.errors import CapacityError
from mindsim.switchres import SwitchBudget


def test_directory_pool_boundary():
    b = SwitchBudget()
    b.reserve(switchres.DIRECTORY, 30_000)
    with pytest.raises(CapacityError) as exc:
        b.reserve(switchres.DIRECTORY, 1)
    assert exc.value.category == switchres.DIRECTORY
    assert exc.value.shortfall == 1
    b.release(switchres.DIRECTORY, 1)
    b.reserve(switchres.DIRECTORY, 1)
    assert b.utilization(switchres.DIRECTORY) == 1.0


def test_rule_categories_share_one_pool():
    b = SwitchBudget(match_action_rules=10)
    b.reserve(switchres.TRANSLATION, 4)
    b.reserve(switchres.PROTECTION, 5)
    with pytest.raises(CapacityError) as exc:
        b.reserve(switchres.OUTLIER, 3)
    assert exc.value.shortfall == 2
    assert b.used[switchres.OUTLIER] == 0  # rejection is atomic
    assert b.available(switchres.DIRECTORY) == 30_000


def test_release_more_than_used_is_rejected():
    b = SwitchBudget()
    with pytest.raises(ValueError):
        b.release(switchres.PROTECTION, 1)
    with pytest.raises(ValueError):
        b.reserve(switchres.PROTECTION, 0)
