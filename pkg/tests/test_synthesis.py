import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltac import benchmarks
from ltac.bounds import upper_bound, upper_bound_ball
from ltac.poly import Polynomial, PolyVector
from ltac.sim import closed_loop_rhs, integrate, long_time_average, settle
from ltac.synthesis import (
    DEFAULT_DEGREES,
    Degrees,
    SynthesisError,
    build_expansion,
    closed_loop_polynomial,
    direct_F1,
    refine_bound,
    replay_synthesis,
    schur_matrix,
    solve_O1,
    solve_O1_ball,
)
from ltac.system import PolySystem

x = Polynomial.variable(1, 0)


def test_b1_F0(b1):
    pieces = build_expansion(b1, x * x * 0.5, 1.0, Polynomial.zero(1), [Polynomial.zero(1)], 0.0)
    assert pieces.F0 == -((x * x - 1) ** 2)


def test_zero_control_expansion(b1):
    V1 = x**4 * 0.3 - x * x
    pieces = build_expansion(b1, x * x * 0.5, 1.0, V1, [Polynomial.zero(1)], -0.2)
    assert pieces.F1 == b1.f.dot(V1.gradient()) + 0.2


def test_b1_expansion_terms(b1):
    u1 = x * -0.5
    V1 = x * x * 0.25
    p = build_expansion(b1, x * x * 0.5, 1.0, V1, [u1], -0.25)
    # f.V1' + u1 x + u1^2 - C1
    assert p.F1 == (x - x**3) * (x * 0.5) + u1 * x + u1 * u1 + 0.25
    assert p.F1 == p.W1 + p.quad


def test_H_term_enters(b1):
    bh = benchmarks.load("b1_h")
    u1 = x * -0.5
    V0, V1 = x * x * 0.5, x * x * 0.1
    plain = build_expansion(b1, V0, 1.0, V1, [u1], -0.2)
    with_h = build_expansion(bh, V0, 1.0, V1, [u1], -0.2)
    # H du1/dx f . V0' = 0.5 * (-0.5) * (x - x^3) * x
    diff = with_h.F1 - plain.F1 - (x - x**3) * x * -0.25
    assert diff.max_abs_coefficient() <= 1e-15


SYSTEMS = ["b1", "b1_h", "vdp"]


@st.composite
def expansion_case(draw):
    name = draw(st.sampled_from(SYSTEMS))
    sys = benchmarks.load(name)
    n = sys.n
    coef = st.integers(-4, 4)

    def rand_poly(deg, const=True):
        terms = {}
        for i in range(n):
            for j in range(i, n):
                mono = [0] * n
                mono[i] += 1
                mono[j] += 1
                if sum(mono) <= deg:
                    terms[tuple(mono)] = draw(coef)
            mono = [0] * n
            mono[i] = 1
            terms[tuple(mono)] = draw(coef)
        if const:
            terms[(0,) * n] = draw(coef)
        return Polynomial(n, terms)

    V0 = rand_poly(2, False)
    V1 = rand_poly(2, False) * 0.5
    u1 = [rand_poly(2, False) * 0.25 for _ in range(sys.m)]
    C0 = float(draw(coef))
    C1 = float(draw(coef)) * 0.5
    return sys, V0, C0, V1, u1, C1


@settings(max_examples=40, deadline=None)
@given(expansion_case())
def test_F1_matches_direct_expansion(case):
    sys, V0, C0, V1, u1, C1 = case
    p = build_expansion(sys, V0, C0, V1, u1, C1)
    oracle = direct_F1(sys, V0, V1, PolyVector(u1), C1)
    diff = p.F1 - oracle
    assert diff.max_abs_coefficient() <= 1e-6 * (1 + oracle.max_abs_coefficient())
    assert p.F1 == p.W1 + p.quad


@pytest.mark.parametrize("name", SYSTEMS)
def test_schur_equivalence(name):
    sys = benchmarks.load(name)
    n = sys.n
    rng = np.random.default_rng(7)
    xs = [Polynomial.variable(n, i) for i in range(n)]
    V0 = sum((v * v for v in xs), Polynomial.zero(n)) * 0.5
    V1 = xs[0] * xs[0] * 0.3 - xs[-1] * 0.2
    u1 = [xs[0] * -0.7 + xs[-1] * 0.4 for _ in range(sys.m)]
    p = build_expansion(sys, V0, 1.0, V1, u1, -0.1)
    pts = rng.uniform(-2, 2, size=(1000, n))
    agree = 0
    for pt in pts:
        F1 = p.F1.evaluate(pt)
        if abs(F1) < 1e-9:
            continue
        psd = np.linalg.eigvalsh(schur_matrix(sys, p.W1, u1, pt))[0] >= 0
        assert psd == (F1 <= 0)
        agree += 1
    assert agree >= 990


def test_b1_synthesis(b1, b1_synthesis):
    res = b1_synthesis
    assert res.C1 == pytest.approx(-0.25, abs=5e-3)
    assert res.u1[0].coefficient((1,)) == pytest.approx(-0.5, abs=0.02)
    assert res.u1[0].coefficient((0,)) == 0.0
    assert res.C1 <= 1e-9
    assert replay_synthesis(b1, res) <= 1e-6


def test_b1_constant_control(b1, b1_cert):
    res = solve_O1(b1, b1_cert, Degrees(d_u1=0))
    assert res.C1 == pytest.approx(0.0, abs=1e-6)


def test_b1_ball_matches_global(b1, b1_synthesis):
    cert = upper_bound_ball(b1, 2, 2, 50.0)
    res = solve_O1_ball(b1, cert, 50.0)
    assert res.C1 == pytest.approx(b1_synthesis.C1, abs=1e-3)
    assert replay_synthesis(b1, res) <= 1e-6


def test_default_preset():
    assert DEFAULT_DEGREES.as_dict() == {"d_u1": 1, "d_V1": 4, "d_s1": 2, "d_s0": 4}


def test_vdp_synthesis(vdp, vdp_synthesis):
    res = vdp_synthesis
    assert res.C1 < 0
    assert replay_synthesis(vdp, res) <= 1e-6
    assert res.u1[0].degree == 1
    assert res.u1[0].coefficient((0, 0)) == 0.0


def test_no_controls_rejected(b1_cert):
    auto = PolySystem.autonomous(PolyVector([x - x**3]), x * x)
    with pytest.raises(SynthesisError):
        solve_O1(auto, b1_cert)


def test_odd_lifted_degree_rejected(b1, b1_cert):
    with pytest.raises(SynthesisError, match="odd"):
        solve_O1(b1, b1_cert, Degrees(d_u1=1, d_V1=2, d_s1=1))


# -- refinement ---------------------------------------------------------------------


def b1_average(sys, u1, eps):
    traj = integrate(sys, u1, eps, [2.0], 60.0)
    return long_time_average(traj).phi_bar


def test_refine_b1(b1):
    u1 = PolyVector([x * -0.5])
    C = refine_bound(b1, u1, 0.1, 4).C
    phi = b1_average(b1, u1, 0.1)
    assert phi == pytest.approx((1 - 0.05) * (1 + 0.025), abs=1e-6)
    assert C <= 1 - 0.1 / 8
    assert phi - 1e-4 <= C <= phi + 1e-3


def test_refine_at_zero_reproduces_C0(b1, b1_cert):
    C = refine_bound(b1, PolyVector([x * -0.5]), 0.0, 2).C
    assert C == pytest.approx(b1_cert.C, abs=1e-6)


def test_refine_large_eps(b1):
    # closed loop x' = -x^3: algebraic decay, so the finite-T average is ~1/T
    u1 = PolyVector([x * -0.5])
    C = refine_bound(b1, u1, 2.0, 4).C
    traj = integrate(b1, u1, 2.0, [2.0], 4e4, dt=0.02)
    assert C >= long_time_average(traj).phi_bar - 1e-4


def test_refine_with_H():
    bh = benchmarks.load("b1_h")
    u1 = PolyVector([x * -0.5])
    C = refine_bound(bh, u1, 0.2, 4).C
    assert C >= b1_average(bh, u1, 0.2) - 1e-4


def test_closed_loop_polynomial_matches_sim():
    bh = benchmarks.load("b1_h")
    u1 = PolyVector([x * -0.5 + x**3 * 0.1])
    N, D = closed_loop_polynomial(bh, u1, 0.3)
    for pt in (-1.3, 0.2, 0.9):
        exact = closed_loop_rhs(bh, u1, 0.3, [pt])[0]
        assert N[0].evaluate([pt]) / D.evaluate([pt]) == pytest.approx(exact, rel=1e-12)


# -- closed-loop properties -----------------------------------------------------------

GRID = [1e-3, 3e-3, 1e-2, 3e-2]


def test_theorem_property_b1(b1, b1_cert, b1_synthesis):
    u1 = b1_synthesis.u1
    ok = [b1_average(b1, u1, e) <= b1_cert.C + 0.5 * e * b1_synthesis.C1 + 1e-4 for e in GRID]
    assert any(ok)


def test_theorem_property_vdp(vdp, vdp_synthesis):
    start = settle(vdp, [2.0, 0.0])
    res = vdp_synthesis
    ok = []
    for e in GRID:
        phi = long_time_average(integrate(vdp, res.u1, e, start, 200.0)).phi_bar
        ok.append(phi <= res.C0 + 0.5 * e * res.C1 + 1e-4)
    assert any(ok)


def test_slope_property_b1(b1, b1_synthesis):
    u1 = b1_synthesis.u1
    e = 1e-3
    slope = (b1_average(b1, u1, e) - b1_average(b1, u1, 0.0)) / e
    assert slope <= b1_synthesis.C1 + 1e-2
