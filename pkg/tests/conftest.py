import numpy as np
import pytest

from anmloc.geometry import forward_map, reference_scene
from anmloc.signal import SystemConfig, make_gains, make_pilots


@pytest.fixture
def sys_cfg():
    return SystemConfig()


@pytest.fixture
def scene():
    return reference_scene()


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def truth(scene, sys_cfg, rng):
    return forward_map(scene, sys_cfg.c).with_gains(make_gains(scene, sys_cfg, rng))


@pytest.fixture
def pilots(sys_cfg, rng):
    return make_pilots(sys_cfg, rng)


def small_system(**kw):
    base = dict(n_sub=5, n_rx=4, n_tx=5, n_pilot=6, n_nlos=1)
    base.update(kw)
    return SystemConfig(**base)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
