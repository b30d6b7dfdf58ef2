import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ltac import benchmarks
from ltac.bounds import upper_bound, upper_bound_ball
from ltac.synthesis import DEFAULT_DEGREES, solve_O1, solve_O1_ball

# Van der Pol limit-cycle average of x1^2 + x2^2, from scipy DOP853
# (rtol = atol = 1e-12) over whole periods after a t = 200 transient.
VDP_PHI0_ORACLE = 4.1187539896828165


@pytest.fixture(scope="session")
def b1():
    return benchmarks.load("b1")


@pytest.fixture(scope="session")
def vdp():
    return benchmarks.load("vdp")


@pytest.fixture(scope="session")
def b1_cert(b1):
    return upper_bound(b1, 2)


@pytest.fixture(scope="session")
def b1_synthesis(b1, b1_cert):
    return solve_O1(b1, b1_cert)


@pytest.fixture(scope="session")
def vdp_cert4(vdp):
    return upper_bound_ball(vdp, 4, 4, vdp.beta)


@pytest.fixture(scope="session")
def vdp_cert6(vdp):
    return upper_bound_ball(vdp, 6, 4, vdp.beta)


@pytest.fixture(scope="session")
def vdp_synthesis(vdp, vdp_cert6):
    return solve_O1_ball(vdp, vdp_cert6, vdp.beta, DEFAULT_DEGREES)


# -- acceptance summary -------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Records one PASS/FAIL line per acceptance criterion; a test that dies
    before recording is reported as FAIL."""
    n = request.node.get_closest_marker("criterion").args[0]
    lines = {}

    def record(ok: bool, detail: str):
        lines[n] = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[n])
        return ok

    yield record
    ACCEPTANCE[n] = lines.get(n, f"criterion {n}: FAIL  (error before the check completed)")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
