import numpy as np
import pytest

from entrolab.heat import spectral_decompose
from entrolab.scenario import default_config, materialize
from entrolab.space import build_interval_grid, build_weighted_graph


def two_point(w=1.0):
    return build_weighted_graph([0, 1], [(0, 1, w)], [1.0, 1.0])


def smooth_pair(space, c0=0.35, c1=0.65, w=0.08):
    x = space.coords[:, 0]
    L = x[-1] + (space.spacing if space.boundary == "periodic" else 0.0)
    r0 = np.exp(-(x - c0 * L) ** 2 / (2 * (w * L) ** 2))
    r1 = np.exp(-(x - c1 * L) ** 2 / (2 * (w * L) ** 2)) + 0.2 * np.exp(-(x - 0.8 * L) ** 2 / (2 * (0.05 * L) ** 2))
    return r0 / (r0 @ space.measure), r1 / (r1 @ space.measure)


@pytest.fixture(scope="session")
def default_scenario():
    sc = materialize(default_config())
    return sc, spectral_decompose(sc.space)


@pytest.fixture(scope="session")
def small_interval():
    sp = build_interval_grid(60, 1.0, "neumann")
    return sp, spectral_decompose(sp)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
