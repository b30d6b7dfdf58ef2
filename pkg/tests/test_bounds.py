import numpy as np
import pytest

from ltac import benchmarks
from ltac.bounds import (
    BoundednessError,
    NoCertificateError,
    certify_bounded,
    lower_bound,
    upper_bound,
    upper_bound_ball,
)
from ltac.poly import Polynomial, PolyVector
from ltac.sim import integrate, long_time_average, settle
from ltac.system import PolySystem

from conftest import VDP_PHI0_ORACLE

x = Polynomial.variable(1, 0)


def scalar_system(f, phi0):
    return PolySystem.autonomous(PolyVector([f]), phi0)


def test_b1_upper(b1, b1_cert):
    assert b1_cert.C == pytest.approx(1.0, abs=1e-3)
    assert b1_cert.V.coefficient((2,)) == pytest.approx(0.5, abs=1e-4)
    assert b1_cert.V.coefficient((0,)) == 0.0
    assert b1_cert.replay(b1.f, b1.phi0) <= 1e-6
    # residue of the defining constraint is (x^2 - 1)^2
    residue = b1_cert.constraint_polynomial(b1.f, b1.phi0)
    target = (x * x - 1) ** 2
    assert max(abs(residue.coefficient(m) - target.coefficient(m)) for m in [(0,), (2,), (4,)]) <= 1e-3


def test_b1_lower(b1):
    cert = lower_bound(b1, 2)
    assert cert.C == pytest.approx(0.0, abs=1e-3)
    assert cert.replay(b1.f, b1.phi0) <= 1e-6


def test_decay_bounds():
    sys = benchmarks.load("decay")
    assert upper_bound(sys, 2).C == pytest.approx(0.0, abs=1e-3)
    assert lower_bound(sys, 2).C == pytest.approx(0.0, abs=1e-3)


def test_constant_cost_short_circuits():
    sys = scalar_system(x - x**3, Polynomial.constant(1, 1.0))
    up, lo = upper_bound(sys, 2), lower_bound(sys, 2)
    assert up.C == 1.0 and lo.C == 1.0
    assert up.sdp is None


def test_b1_large_ball_matches_global(b1):
    cert = upper_bound_ball(b1, 2, 2, 50.0)
    assert cert.C == pytest.approx(1.0, abs=1e-3)
    assert cert.replay(b1.f, b1.phi0) <= 1e-6
    assert "S0" in cert.multipliers


def test_relaxation_monotone(b1):
    glob = upper_bound(b1, 4).C
    assert upper_bound_ball(b1, 4, 2, 2.0).C <= glob + 1e-6


def test_degree_monotone_b1(b1, b1_cert):
    assert upper_bound(b1, 4).C <= b1_cert.C + 1e-6


def test_vdp_ball_bounds(vdp, vdp_cert4, vdp_cert6):
    assert vdp_cert6.C >= VDP_PHI0_ORACLE
    assert vdp_cert6.C <= vdp_cert4.C + 1e-6
    for cert in (vdp_cert4, vdp_cert6):
        assert cert.replay(vdp.f, vdp.phi0) <= 1e-6
        assert cert.status in ("optimal", "certified")


def test_vdp_lower_bound_below_average(vdp):
    cert = lower_bound(vdp, 4, d_S=4, beta=vdp.beta)
    assert cert.C <= VDP_PHI0_ORACLE + 1e-4


def test_simulated_average_inside_bounds(b1, b1_cert):
    traj = integrate(b1, None, 0.0, settle(b1, [2.0], 20.0), 50.0)
    avg = long_time_average(traj).phi0_bar
    assert lower_bound(b1, 2).C - 1e-4 <= avg <= b1_cert.C + 1e-4


def test_vdp_trajectory_stays_in_ball(vdp):
    traj = integrate(vdp, None, 0.0, settle(vdp, [2.0, 0.0]), 50.0)
    assert np.max(np.sum(traj.x**2, axis=1)) <= 2 * vdp.beta


def test_odd_degree_rejected(b1):
    with pytest.raises(ValueError):
        upper_bound(b1, 3)


def test_no_certificate_error():
    sys = scalar_system(-x, x**3)
    with pytest.raises(NoCertificateError, match="degree"):
        upper_bound(sys, 2)


def test_certify_bounded_b1():
    cert = certify_bounded(PolyVector([x - x**3]))
    assert cert.beta == pytest.approx(0.5625, abs=0.01)


def test_certify_bounded_decay():
    assert certify_bounded(PolyVector([-x])).beta <= 0.01


def test_certify_bounded_unstable():
    with pytest.raises(BoundednessError):
        certify_bounded(PolyVector([x]), beta_max=100.0)


def test_certify_bounded_tunable_multiplier():
    cert = certify_bounded(PolyVector([x - x**3]), d_S=2)
    # a tunable S can only do better than S = 1
    assert cert.beta <= 0.5625 + 1e-3
