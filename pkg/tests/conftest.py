import numpy as np
import pytest

from hotspot.geogrid import GridSpec
from hotspot.ingest import IndicatorDictionary
from hotspot.synth import CityConfig, make_world, simulate_panel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def dictionary():
    return IndicatorDictionary()


@pytest.fixture(scope="session")
def small_city():
    """12x12 synthetic city, 2x2 zones, 140 weeks of history."""
    cfg = CityConfig(n_rows=12, n_cols=12, n_hot=5)
    world = make_world(cfg, 140, seed=3)
    return world, simulate_panel(world, seed=3)


@pytest.fixture
def grid5():
    return GridSpec.full(5, 5)


@pytest.fixture(scope="session")
def trial_setup():
    from hotspot.trial import TrialConfig, prepare_trial
    city = CityConfig(n_rows=12, n_cols=18, zone_rows=2, zone_cols=3, n_hot=8)
    cfg = TrialConfig(weeks=12)
    return prepare_trial(city, cfg, seed=11), cfg


@pytest.fixture(scope="session")
def trial_run(trial_setup):
    from hotspot.trial import run_trial
    setup, cfg = trial_setup
    return run_trial(setup, cfg, seed=99)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
