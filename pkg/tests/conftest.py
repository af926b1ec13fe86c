import numpy as np
import pytest

from flockhydro.equilibrium import make_table
from flockhydro.gci_chi import compute_chi
from flockhydro.quadrature import ModelParams, SelfPropulsion, build_polar_grid


def pytest_configure(config):
    config._acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config._acceptance_lines


@pytest.fixture(scope="session")
def sp2():
    """V_{1,1}, sigma = 1, d = 2 on a 64^2 grid with its profile."""
    p = ModelParams(1.0, 2, SelfPropulsion(1.0, 1.0))
    g = build_polar_grid(p, 64, 64)
    return p, g, make_table(p, g), compute_chi(p, g)


@pytest.fixture(scope="session")
def sp3():
    p = ModelParams(1.0, 3, SelfPropulsion(1.0, 1.0))
    g = build_polar_grid(p, 64, 64)
    return p, g, make_table(p, g), compute_chi(p, g)


@pytest.fixture(scope="session")
def z2():
    p = ModelParams(1.0, 2)
    g = build_polar_grid(p, 64, 64)
    return p, g, make_table(p, g), compute_chi(p, g)


def unit(rng, d):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)
