import numpy as np
import pytest

from vdcnn.autodiff import get_precision, set_precision


@pytest.fixture(autouse=True)
def _restore_precision():
    old = get_precision()
    yield
    set_precision(old)


@pytest.fixture
def f64():
    set_precision(64)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
