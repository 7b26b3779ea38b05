import numpy as np
import pytest

from lastraj.trajectory import Trajectory


def traj(steps, context=(0.0,), id=""):
    return Trajectory.from_steps(steps, context=context, id=id)


def random_traj(rng, t_max=6, b=10.0, grid=None, context_width=1):
    """Random trajectory whose per-step intra+inter stays within ``b``."""
    T = int(rng.integers(1, t_max + 1))
    if grid is None:
        intra = rng.uniform(0, b, size=T)
        inter = rng.uniform(0, 1, size=T) * (b - intra)
    else:
        intra = rng.choice(grid, size=T).astype(float)
        inter = rng.choice(grid, size=T).astype(float)
    items = rng.integers(0, 5, size=T)
    return Trajectory(items, intra, inter, rng.normal(size=context_width))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    def report(name: str, passed: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
        CRITERIA_LINES.append(line)
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
