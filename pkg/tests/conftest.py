import numpy as np
import pytest

from kdelf.cosmo import FlatLambdaCDM, UnitVolume
from kdelf.simulate import draw_sample
from kdelf.survey import DoublePowerLaw, SurveyWindow, TabulatedBoundary


@pytest.fixture(scope="session")
def cosmo():
    return FlatLambdaCDM()


@pytest.fixture(scope="session")
def unit_cosmo():
    return UnitVolume()


@pytest.fixture(scope="session")
def truth():
    return DoublePowerLaw()


@pytest.fixture(scope="session")
def toy_window():
    """Linear boundary L = 0.5 + 0.75 z over z in [0, 2], L in [0, 3]."""
    return SurveyWindow(z_min=0.0, z_max=2.0, L_min=0.0, L_max=3.0, omega=1.0,
                        boundary=TabulatedBoundary(z=(0.0, 2.0), f=(0.5, 2.0)))


@pytest.fixture(scope="session")
def small_sample(truth, cosmo):
    return draw_sample(truth, SurveyWindow(), cosmo, 400, seed=7, exact_n=True)


def random_cloud(rng, n, d):
    pts = rng.normal(size=(n, d))
    pts[:, -1] = np.abs(pts[:, -1])
    return pts


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request, capsys):
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE].append((number, line))
        with capsys.disabled():
            print("\n" + line, flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
