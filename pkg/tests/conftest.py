import math
import os

import pytest

from openbath import _backend
from openbath.bath import BathSpec, OhmicFamily, UnderdampedBrownian
from openbath.expfit import espira, esprit, matsubara_underdamped, sample_correlation

os.environ.setdefault("OPENBATH_THREADS", "1")


@pytest.fixture(params=sorted(_backend.BACKENDS))
def backend(request):
    """Every available kernel backend."""
    return request.param


@pytest.fixture(scope="session")
def ud_bath():
    """Underdamped bath at T = 0.05 (alpha = 1, Gamma = 2, w0 = 1.2)."""
    return BathSpec(UnderdampedBrownian(1.0, 2.0, 1.2), 20.0)


@pytest.fixture(scope="session")
def ud_matsubara(ud_bath):
    """Matsubara series converged far below the fit accuracies used in the tests."""
    return matsubara_underdamped(ud_bath, 20000)


@pytest.fixture(scope="session")
def ud_fit(ud_bath):
    """12-term ESPIRA fit with rmse_time ~ 1e-10 max|C| on its samples."""
    sig = sample_correlation(ud_bath, n_samples=1024, t_max=64.0)
    return espira(sig, 1e-9)


@pytest.fixture(scope="session")
def ud_signal(ud_bath):
    return sample_correlation(ud_bath, n_samples=512, t_max=64.0)


@pytest.fixture(scope="session")
def ud_esprit(ud_signal):
    return esprit(ud_signal, 12)


@pytest.fixture(scope="session")
def ohmic_bath():
    """Ohmic bath: s = 3/2, alpha = 0.05 pi, w_c = 1, T = 1/2."""
    return BathSpec(OhmicFamily(0.05 * math.pi, 1.5, 1.0), 2.0)



_ACCEPTANCE = pytest.StashKey()


@pytest.fixture
def acceptance(request):
    """``record(n, passed, detail)`` prints one PASS/FAIL line and keeps it for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(n, passed, detail):
        line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines[n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
