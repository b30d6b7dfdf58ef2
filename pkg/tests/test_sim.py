import numpy as np
import pytest

from ltac import benchmarks
from ltac.controller_io import Controller
from ltac.poly import Polynomial, PolyVector
from ltac.sim import (
    ClosedLoop,
    SimulationError,
    closed_loop_rhs,
    epsilon_sweep,
    integrate,
    long_time_average,
    settle,
)
from ltac.system import PolySystem

x = Polynomial.variable(1, 0)
HALF = PolyVector([x * -0.5])


def line(C0, C1, u1=HALF):
    return Controller(1, 1, u1, C0, C1)


def test_rhs_plain(b1):
    assert closed_loop_rhs(b1, HALF, 0.2, [0.5])[0] == pytest.approx(0.5 - 0.125 - 0.2 * 0.25)


def test_rhs_eps_zero_is_open_loop(b1):
    assert closed_loop_rhs(b1, HALF, 0.0, [1.5])[0] == 1.5 - 1.5**3


def test_rhs_implicit_scalar():
    # x' = f + eps u1 + eps H u1' x'  =>  x' = (f + eps u1) / (1 - eps H u1')
    bh = benchmarks.load("b1_h")
    u1 = PolyVector([x * -0.5 + x**2 * 0.3])
    eps, p = 0.4, 0.7
    f = p - p**3
    du = -0.5 + 0.6 * p
    expect = (f + eps * (-0.5 * p + 0.3 * p * p)) / (1 - eps * 0.5 * du)
    assert closed_loop_rhs(bh, u1, eps, [p])[0] == pytest.approx(expect, rel=1e-14)


def test_singular_implicit_system():
    bh = benchmarks.load("b1_h")
    # 1 - eps * 0.5 * u1' = 0 for u1 = 2x, eps = 1
    with pytest.raises(SimulationError, match="singular"):
        closed_loop_rhs(bh, PolyVector([x * 2.0]), 1.0, [0.3])
    traj = integrate(bh, PolyVector([x * 2.0]), 1.0, [0.3], 1.0)
    assert traj.singular and "singular" in traj.message


def test_rk4_fourth_order():
    sys = benchmarks.load("decay")
    errs = []
    for dt in (0.1, 0.05):
        traj = integrate(sys, None, 0.0, [1.0], 2.0, dt=dt)
        errs.append(abs(traj.x[-1, 0] - np.exp(-2.0)))
    assert 14 <= errs[0] / errs[1] <= 18


def test_b1_settles_to_one(b1):
    traj = integrate(b1, None, 0.0, [2.0], 20.0)
    assert traj.x[-1, 0] == pytest.approx(1.0, abs=1e-6)
    assert settle(b1, [-0.5], 20.0)[0] == pytest.approx(-1.0, abs=1e-6)


def test_vdp_periodic(vdp):
    traj = integrate(vdp, None, 0.0, settle(vdp, [2.0, 0.0]), 40.0)
    x1 = traj.x[:, 0]
    peaks = np.flatnonzero((x1[1:-1] > x1[:-2]) & (x1[1:-1] >= x1[2:])) + 1
    assert len(peaks) >= 4
    assert np.ptp(x1[peaks]) <= 1e-4
    assert np.ptp(np.diff(traj.t[peaks])) <= 2 * traj.dt


def test_average_of_constant():
    sys = PolySystem.autonomous(PolyVector([Polynomial.zero(1)]), Polynomial.constant(1, 3.0))
    a = long_time_average(integrate(sys, None, 0.0, [0.2], 5.0))
    assert a.phi_bar == pytest.approx(3.0, abs=1e-14)
    assert a.convergence_estimate <= 1e-14


@pytest.mark.parametrize("eps", [0.0, 0.1])
def test_b1_averages(b1, eps):
    a = long_time_average(integrate(b1, HALF, eps, [2.0], 60.0))
    assert a.phi_bar == pytest.approx((1 - eps / 2) * (1 + eps / 4), abs=1e-4)
    assert a.phi0_bar == pytest.approx(1 - eps / 2, abs=1e-4)


def test_penalty_pointwise(b1):
    traj = integrate(b1, HALF, 0.3, [2.0], 5.0)
    u1 = -0.5 * traj.x[:, 0]
    assert np.allclose(traj.u[:, 0], 0.3 * u1, rtol=0, atol=1e-15)
    assert np.allclose(traj.phi - traj.phi0, 0.3 * u1 * u1, rtol=0, atol=1e-14)


def test_penalty_identity(b1):
    a = long_time_average(integrate(b1, HALF, 0.3, [2.0], 20.0))
    assert abs(a.phi_bar - a.phi0_bar - a.penalty_bar) <= 1e-10


def test_deterministic(vdp):
    u1 = PolyVector([Polynomial.variable(2, 1) * -1.0])
    a = integrate(vdp, u1, 0.05, [2.0, 0.0], 10.0)
    b = integrate(vdp, u1, 0.05, [2.0, 0.0], 10.0)
    assert a.to_csv() == b.to_csv()


def test_divergence_flagged():
    sys = PolySystem.autonomous(PolyVector([x**3]), x * x)
    traj = integrate(sys, None, 0.0, [1.0], 2.0)
    assert traj.diverged and not traj.singular
    assert traj.t[-1] <= 0.5
    with pytest.raises(SimulationError):
        long_time_average(traj)


def test_bad_arguments(b1):
    with pytest.raises(ValueError):
        integrate(b1, None, 0.0, [1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        integrate(b1, None, 0.0, [1.0], 1.0, dt=0.0)
    with pytest.raises(ValueError):
        ClosedLoop(b1, PolyVector([x, x]))
    with pytest.raises(ValueError):
        long_time_average(integrate(b1, None, 0.0, [1.0], 1.0), discard_fraction=1.0)


def test_trajectory_csv(b1):
    traj = integrate(b1, HALF, 0.1, [2.0], 0.01)
    rows = traj.to_csv().splitlines()
    assert rows[0] == "t,x1,u1,phi"
    assert len(rows) == len(traj.t) + 1 == 12
    t, x1, u1, phi = (float(v) for v in rows[3].split(","))
    assert (t, x1, u1, phi) == (traj.t[2], traj.x[2, 0], traj.u[2, 0], traj.phi[2])


# -- sweeps -------------------------------------------------------------------------

GRID = [0.0, 0.05, 0.1, 0.2]


def test_b1_sweep(b1):
    res = epsilon_sweep(b1, line(1.0, -0.25), GRID, [2.0], 60.0)
    expect = [1 - e / 4 - e * e / 8 for e in GRID]
    assert np.allclose(res.phi_bar, expect, atol=1e-4)
    assert np.all(res.phi_bar <= 1 - np.array(GRID) / 8 + 1e-6)
    assert res.minimum()[0] == GRID[-1]
    assert np.array_equal(res.bound_line, 1 - 0.25 * np.array(GRID))
    gap = res.phi_bar - res.phi0_bar
    assert np.allclose(gap, np.array(GRID) * 0.25 * (1 - np.array(GRID) / 2), atol=1e-4)


def test_sweep_csv_and_jobs(b1):
    one = epsilon_sweep(b1, line(1.0, -0.25), GRID, [2.0], 20.0)
    many = epsilon_sweep(b1, line(1.0, -0.25), GRID, [2.0], 20.0, jobs=3)
    assert one.to_csv() == many.to_csv()
    rows = one.to_csv().splitlines()
    assert rows[0] == "eps,phi_bar,phi0_bar,bound_line,diverged"
    assert len(rows) == len(GRID) + 1


def test_sweep_flags_divergent_rows(b1):
    # x' = x - x^3 + eps x^3 blows up once eps > 1
    res = epsilon_sweep(b1, line(1.0, 0.0, PolyVector([x**3])), [0.5, 2.0], [2.0], 10.0)
    assert list(res.diverged) == [False, True]
    assert np.isnan(res.phi_bar[1])
    assert res.minimum()[0] == 0.5
    assert res.to_csv().splitlines()[2].endswith(",1")


@pytest.mark.parametrize("grid", [[], [0.1, 0.05], [-0.1, 0.2], [0.1, 0.1]])
def test_sweep_grid_rejected(b1, grid):
    with pytest.raises(ValueError):
        epsilon_sweep(b1, line(1.0, -0.25), grid, [2.0], 1.0)
