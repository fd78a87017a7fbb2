import numpy as np
import pytest

from otfs_chest.grid import ChannelState, FrameParams


@pytest.fixture
def small_frame():
    # M_tau = 5, N_nu = 5
    return FrameParams(M=16, N=8, delta_f=1.0, tau_max=0.2, nu_max=0.25)


@pytest.fixture
def aircraft_frame():
    return FrameParams(M=64, N=32, delta_f=30e3, tau_max=7e-6, nu_max=1700.0)


@pytest.fixture
def three_paths(small_frame):
    h = np.array([0.8, 0.5 * np.exp(1j), 0.33 * np.exp(-2j)])
    h = h / np.linalg.norm(h)
    return ChannelState.from_arrays(h, [0.0, 0.071, 0.183], [0.17, -0.093, 0.052], normalized=True)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one summary line per acceptance criterion, printed at session end."""

    def report(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
