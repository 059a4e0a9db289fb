import numpy as np
import pytest

from flexhdr.model import ModelConfig, init_params

TINY = ModelConfig(channels=4, encoder_widths=(4, 6, 8), refine_width=8, rdb_layers=2, rdb_growth=3, flow_iters=2)


@pytest.fixture
def tiny_cfg():
    return TINY


@pytest.fixture
def tiny_params():
    return init_params(TINY, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
