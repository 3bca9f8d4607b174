import numpy as np
import pytest

from counterspec import kernels

_ACCEPTANCE = pytest.StashKey[list]()

BACKENDS = ["python", "generic"] + (["cython"] if kernels.compiled_kernel is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for the acceptance summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, title, passed, detail):
        lines.append((number, f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
