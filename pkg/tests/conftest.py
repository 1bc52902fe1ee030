import numpy as np
import pytest

from tvlds import kernels
from tvlds.model import SystemParams

ACCEPTANCE_LINES = []


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return request.param


@pytest.fixture
def iso2():
    """d=2, A=0.5 I, sigma_w=0.75 I, so Sigma_inf = I exactly."""
    return SystemParams(0.5 * np.eye(2), 0.75 * np.eye(2), 0.5)


@pytest.fixture
def acceptance_report():
    def report(number, title, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})")
        assert ok, f"criterion {number} failed: {detail}"
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
