import numpy as np
import pytest

from invscat.domain import BackgroundMedium, ProbeRing, build_grid


@pytest.fixture(scope="session")
def medium():
    return BackgroundMedium(300e6)


@pytest.fixture(scope="session")
def lam(medium):
    return medium.wavelength


@pytest.fixture(scope="session")
def small_grid(medium):
    """10 x 10 cells over one wavelength."""
    return build_grid(medium.wavelength, 10, 10, medium)


@pytest.fixture(scope="session")
def ring(lam):
    return ProbeRing.uniform(2.0 * lam, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance report: one line per criterion, printed after the run
_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    n = mark.args[0]
    ok = call.excinfo is None
    _CRITERIA.setdefault(n, []).append((item.name, ok, getattr(item, "criterion_note", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        for name, ok, note in _CRITERIA[n]:
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {name}  {note}".rstrip())
