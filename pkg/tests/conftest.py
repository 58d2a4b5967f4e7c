import pytest

from brwlab.model import make_builtin_law
from brwlab.walk import gaussian_spine, lattice_spine


@pytest.fixture(scope="session")
def gauss_law():
    return make_builtin_law("binary_gaussian")


@pytest.fixture(scope="session")
def lattice_law():
    return make_builtin_law("lattice_bernoulli")


@pytest.fixture(scope="session")
def lattice():
    return lattice_spine()


@pytest.fixture(scope="session")
def gauss():
    return make_builtin_law("binary_gaussian").spine

from hypothesis import settings  # noqa: E402

# numba compiles on first call, which would trip per-example deadlines
settings.register_profile("brwlab", deadline=None)
settings.load_profile("brwlab")

ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
