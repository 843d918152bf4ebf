import numpy as np
import pytest

from parasys.elliptic import FESpace
from parasys.geometry import build_mesh, unit_square

ALL_SIDES = ("bottom", "right", "top", "left")


def square_mesh(h, m=1, dirichlet=ALL_SIDES):
    return build_mesh(unit_square(), h, [dirichlet] * m)


@pytest.fixture(scope="session")
def mesh8():
    return square_mesh(1 / 8)


@pytest.fixture(scope="session")
def space8(mesh8):
    return FESpace(mesh8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def sine_mode(space):
    return space.interpolate(lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]))


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one 'criterion N PASS|FAIL ...' line for the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE_LINES].append(line)
        print(line)
        return ok

    return record
