import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltac.poly import (
    Polynomial,
    PolynomialError,
    PolyMatrix,
    PolyVector,
    format_polynomial,
    parse_polynomial,
    substitute_controls,
)

x1 = Polynomial.variable(2, 0)
x2 = Polynomial.variable(2, 1)


def test_difference_of_squares():
    a = Polynomial.variable(1, 0)
    assert (a + 1) * (a - 1) == a * a - 1


def test_additive_identity():
    p = 3 * x1 * x2 - x2 + 7
    assert p + Polynomial.zero(2) == p
    assert p + 0 == p


def test_binomial():
    assert (x1 + x2) ** 2 == x1 * x1 + 2 * x1 * x2 + x2 * x2


def test_nvars_mismatch_rejected():
    with pytest.raises(PolynomialError):
        Polynomial.variable(1, 0) + x1


def test_no_zero_coefficients_stored():
    p = (x1 + x2) - x2
    assert p.terms == {(1, 0): 1.0}
    assert (x1 - x1).is_zero()


def test_grlex_order():
    p = x2 * x2 + x1 * x2 + x1 * x1 + x2 + x1 + 1
    assert p.monomials() == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_gradient_examples():
    assert (x1 * x1 * 0.5).gradient() == PolyVector([x1, Polynomial.zero(2)])
    assert Polynomial.constant(2, 4.0).gradient() == PolyVector([Polynomial.zero(2)] * 2)
    assert (x1 * x2).gradient() == PolyVector([x2, x1])


def test_evaluate_examples():
    a = Polynomial.variable(1, 0)
    assert (a * a - 1).evaluate([1.0]) == 0.0
    assert (a * a - 1).evaluate([2.0]) == 3.0
    assert (x1 * x2).evaluate([3.0, 4.0]) == 12.0
    with pytest.raises(PolynomialError):
        (x1 * x2).evaluate([1.0])


def test_evaluate_many_matches_evaluate():
    p = 2 * x1**3 * x2 - x2**2 + 0.5
    pts = np.array([[0.1, -2.0], [1.5, 0.3], [0.0, 0.0]])
    assert np.allclose(p.evaluate_many(pts), [p.evaluate(q) for q in pts], rtol=0, atol=1e-14)


def test_substitute_controls():
    a = Polynomial.variable(1, 0)
    f = PolyVector([a - a**3])
    G = PolyMatrix([[Polynomial.constant(1, 1.0)]])
    assert substitute_controls(f, G, PolyVector([a * -0.5])) == PolyVector([a - a**3 - a * 0.5])
    assert substitute_controls(f, G, PolyVector([Polynomial.zero(1)])) == f
    f0 = PolyVector([Polynomial.zero(1)])
    assert substitute_controls(f0, G, PolyVector([a])) == PolyVector([a])
    with pytest.raises(PolynomialError):
        substitute_controls(f, G, PolyVector([a, a]))


def test_text_round_trip():
    p = parse_polynomial("3.5*x1^2*x2 - x3 + 1")
    assert p.nvars == 3
    assert p.coefficient((2, 1, 0)) == 3.5
    assert parse_polynomial(format_polynomial(p), 3) == p


def test_parse_errors_report_column():
    with pytest.raises(PolynomialError, match="column"):
        parse_polynomial("x1 + * x2")
    with pytest.raises(PolynomialError):
        parse_polynomial("x3", 2)


def test_auxiliary_variables():
    p = parse_polynomial("x1*z1 + z2^2", 3, nz=2)
    assert p.coefficient((1, 1, 0)) == 1.0
    assert format_polynomial(p, ["x1", "z1", "z2"]) == "z2^2 + x1*z1"


def test_extend_restrict():
    p = 2 * x1 * x2 + 1
    q = p.extend(4, 1)
    assert q.coefficient((0, 1, 1, 0)) == 2.0
    assert (p.extend(3)).restrict(2) == p


def test_jacobian():
    v = PolyVector([x1 * x2, x2 * x2])
    J = v.jacobian()
    assert J[0, 0] == x2 and J[0, 1] == x1
    assert J[1, 0].is_zero() and J[1, 1] == 2 * x2


# -- properties ----------------------------------------------------------------------

NV = 4


@st.composite
def polys(draw, max_deg=6, max_terms=6):
    k = draw(st.integers(0, max_terms))
    terms = {}
    for _ in range(k):
        mono = draw(st.lists(st.integers(0, 2), min_size=NV, max_size=NV).filter(lambda m: sum(m) <= max_deg))
        terms[tuple(mono)] = float(draw(st.integers(-9, 9)))
    return Polynomial(NV, terms)


@settings(max_examples=60, deadline=None)
@given(polys(max_deg=3), polys(max_deg=3), polys(max_deg=3))
def test_ring_axioms(a, b, c):
    assert (a + b) * c == a * c + b * c
    assert a * b == b * a
    assert (a + b) + c == a + (b + c)
    assert (a * b) * c == a * (b * c)
    assert a - a == Polynomial.zero(NV)


@settings(max_examples=60, deadline=None)
@given(polys(max_deg=3), polys(max_deg=3))
def test_product_rule(p, q):
    lhs = (p * q).gradient()
    rhs = PolyVector(p * dq + q * dp for dp, dq in zip(p.gradient(), q.gradient()))
    assert lhs == rhs


@settings(max_examples=60, deadline=None)
@given(polys(), st.lists(st.floats(-1.5, 1.5), min_size=NV, max_size=NV),
       st.lists(st.floats(-1, 1), min_size=NV, max_size=NV))
def test_gradient_matches_finite_difference(p, point, direction):
    point, d = np.array(point), np.array(direction)
    h = 1e-4
    fd = (p.evaluate(point + h * d) - p.evaluate(point - h * d)) / (2 * h)
    an = float(p.gradient().evaluate(point) @ d)
    # central difference error is O(h^2 * third derivative)
    scale = 1.0 + sum(abs(c) for c in p.terms.values()) * 10.0
    assert abs(fd - an) <= 1e-6 * max(abs(an), scale)


@settings(max_examples=40, deadline=None)
@given(polys())
def test_format_parse_identity(p):
    assert parse_polynomial(format_polynomial(p), NV) == p
