import numpy as np
import pytest

from sgdiff import _accel

BACKENDS = [pytest.param(True, id="numba",
                         marks=pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba missing")),
            pytest.param(False, id="numpy")]


@pytest.fixture(params=BACKENDS)
def numba(request):
    """Run a test once through the jitted kernels and once through numpy."""
    return request.param


@pytest.fixture
def rs():
    return np.random.default_rng(20240611)


# acceptance criteria report -------------------------------------------------

_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(key, ok, detail)`` records one acceptance line."""

    def record(key: str, ok: bool, detail: str) -> None:
        _CRITERIA[key] = (bool(ok), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int(k.split(".")[0].rstrip("ab")), k)):
        ok, detail = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
