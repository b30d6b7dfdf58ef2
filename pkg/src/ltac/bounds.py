"""Upper and lower bounds on long-time averages of ``Phi0`` along ``x' = f(x)``.

If ``f.grad(V) + Phi0 - C <= 0`` everywhere, averaging along any bounded
trajectory gives ``mean(Phi0) <= C``. With ``V`` polynomial the condition is
relaxed to an SOS constraint and ``C`` minimized. Reversing the inequality
gives lower bounds. A ball multiplier restricts the inequality to
``{x : x.x <= 2*beta}``, which is only meaningful for trajectories that stay
inside that ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial, PolyVector
from .sdp import Residuals, SdpProblem, SolverOptions, Status
from .sos import (
    AffinePoly,
    GramCertificate,
    InfeasibleError,
    SosProgram,
    SosSolution,
    affine_dot,
    compile_program,
    extract_certificate,
    status_label as _status_label,
    solve_program,
)
from .sdp import solve as sdp_solve
from .system import PolySystem


class NoCertificateError(RuntimeError):
    """No certificate exists (or was found) at the requested degrees."""


class BoundednessError(RuntimeError):
    pass


@dataclass
class BoundCertificate:
    """Bound ``C`` with its tunable function ``V`` and S-procedure multipliers."""

    C: float
    V: Polynomial
    multipliers: dict[str, Polynomial]
    direction: str  # "upper" or "lower"
    beta: float | None
    d_V: int
    d_S: int | None
    certificates: dict[str, GramCertificate] = field(default_factory=dict)
    residuals: Residuals | None = None
    status: str = "optimal"
    sdp: SdpProblem | None = field(default=None, repr=False)
    weight: Polynomial | None = field(default=None, repr=False)

    def constraint_polynomial(self, f: PolyVector, phi0: Polynomial) -> Polynomial:
        """The polynomial certified SOS, rebuilt from the numeric pieces."""
        drift = f.dot(self.V.gradient())
        w = self.weight if self.weight is not None else Polynomial.constant(len(f), 1.0)
        core = drift + w * (phi0 - self.C)
        expr = -core if self.direction == "upper" else core
        if self.beta is not None:
            S0 = self.multipliers["S0"]
            x = [Polynomial.variable(len(f), i) for i in range(len(f))]
            ball = 2.0 * self.beta - sum((xi * xi for xi in x), Polynomial.zero(len(f)))
            expr = expr - S0 * ball
        return expr

    def replay(self, f: PolyVector, phi0: Polynomial, match_tol: float = 1e-6) -> float:
        """Re-validate the stored Gram certificates against the numeric data."""
        if "bound" not in self.certificates:
            return 0.0  # constant cost, no SDP was needed
        res = self.certificates["bound"].validate(self.constraint_polynomial(f, phi0), match_tol)
        if "S0" in self.certificates:
            self.certificates["S0"].validate(self.multipliers["S0"], match_tol)
        return res


def ball_polynomial(n: int, beta: float) -> Polynomial:
    """``2*beta - x.x``, nonnegative exactly on the certification ball."""
    total = Polynomial.constant(n, 2.0 * beta)
    for i in range(n):
        xi = Polynomial.variable(n, i)
        total = total - xi * xi
    return total


def _bound(
    f: PolyVector,
    phi0: Polynomial,
    d_V: int,
    direction: str,
    d_S: int | None = None,
    beta: float | None = None,
    weight: Polynomial | None = None,
    opts: SolverOptions | None = None,
) -> BoundCertificate:
    n = len(f)
    if d_V < 1:
        raise ValueError("d_V must be at least 1")
    if beta is not None and not beta > 0:
        raise ValueError("beta must be positive")
    if phi0.is_constant() and beta is None and weight is None:
        value = phi0.coefficient((0,) * n)
        return BoundCertificate(value, Polynomial.zero(n), {}, direction, None, d_V, d_S)

    prog = SosProgram(n)
    C = prog.new_scalar("C")
    V = prog.new_poly("V", d_V, include_constant=False)
    drift = affine_dot(list(f), V.gradient())
    w = weight if weight is not None else Polynomial.constant(n, 1.0)
    core = drift + (C * (-1.0) + phi0) * w
    expr = -core if direction == "upper" else core
    if beta is not None:
        if d_S is None:
            raise ValueError("a ball bound needs the multiplier degree d_S")
        S0 = prog.new_poly("S0", d_S, kind="sos")
        expr = expr - S0 * ball_polynomial(n, beta)
    prog.add_sos(expr, name="bound")
    if direction == "upper":
        prog.minimize(C)
    else:
        prog.maximize(C)

    compiled = compile_program(prog)
    sol = sdp_solve(compiled.sdp, opts)
    where = f"d_V={d_V}" + (f", d_S={d_S}, beta={beta}" if beta is not None else "")
    if sol.status is Status.PRIMAL_INFEASIBLE:
        raise NoCertificateError(f"no {direction}-bound certificate at {where}; try a higher degree")
    if sol.status is Status.DUAL_INFEASIBLE:
        raise NoCertificateError(f"{direction} bound unbounded at {where}")
    try:
        res: SosSolution = extract_certificate(compiled, sol)
    except Exception as exc:
        raise NoCertificateError(f"no valid certificate at {where} (solver status {sol.status}): {exc}") from exc
    mults = {"S0": res.values["S0"]} if beta is not None else {}
    return BoundCertificate(
        C=float(res.values["C"]),
        V=res.values["V"],
        multipliers=mults,
        direction=direction,
        beta=beta,
        d_V=d_V,
        d_S=d_S,
        certificates=res.certificates,
        residuals=res.sdp_solution.residuals,
        status=_status_label(sol.status),
        sdp=compiled.sdp,
        weight=weight,
    )


def upper_bound(sys: PolySystem, d_V: int, opts: SolverOptions | None = None) -> BoundCertificate:
    """Minimize ``C`` subject to ``-(f.grad V + Phi0 - C)`` SOS."""
    _check_even(d_V)
    return _bound(sys.f, sys.phi0, d_V, "upper", opts=opts)


def upper_bound_ball(sys: PolySystem, d_V: int, d_S: int, beta: float,
                     opts: SolverOptions | None = None) -> BoundCertificate:
    """As :func:`upper_bound`, with ``- S0(x) (2 beta - x.x)`` added and ``S0`` SOS."""
    _check_even(d_V)
    return _bound(sys.f, sys.phi0, d_V, "upper", d_S, beta, opts=opts)


def lower_bound(sys: PolySystem, d_V: int, opts: SolverOptions | None = None,
                d_S: int | None = None, beta: float | None = None) -> BoundCertificate:
    """Maximize ``C`` subject to ``f.grad V + Phi0 - C`` SOS."""
    _check_even(d_V)
    return _bound(sys.f, sys.phi0, d_V, "lower", d_S, beta, opts=opts)


def _check_even(d_V: int):
    if d_V % 2:
        raise ValueError(f"d_V must be even, got {d_V}")


# -- boundedness --------------------------------------------------------------------


@dataclass
class BoundednessCertificate:
    beta: float
    S: Polynomial
    d_S: int | None
    solves: int


def _bounded_at(f: PolyVector, beta: float, d_S: int | None, opts) -> Polynomial | None:
    n = len(f)
    x = PolyVector(Polynomial.variable(n, i) for i in range(n))
    flux = x.dot(f)
    half_norm = x.dot(x) * 0.5
    prog = SosProgram(n)
    if d_S is None:
        S = Polynomial.constant(n, 1.0)
        prog.add_sos(-(flux + S * (half_norm - beta)), name="attractor")
    else:
        S = prog.new_poly("S", d_S, kind="sos")
        prog.add_sos(-(S * (half_norm - beta)) - flux, name="attractor")
    try:
        res = solve_program(prog, opts)
    except InfeasibleError:
        return None
    return S if d_S is None else res.values["S"]


def certify_bounded(
    f_closed: PolyVector,
    beta_max: float = 100.0,
    d_S: int | None = None,
    tol: float = 1e-4,
    opts: SolverOptions | None = None,
) -> BoundednessCertificate:
    """Smallest ``beta`` (by bisection on ``(0, beta_max]``) for which
    ``{x : x.x/2 <= beta}`` is certified globally attracting.

    ``d_S=None`` uses the multiplier ``S = 1``, i.e. the plain inequality
    ``x.f(x) <= -(x.x/2 - beta)``; an even ``d_S`` makes ``S`` a tunable SOS
    polynomial of that degree.
    """
    if beta_max <= 0:
        raise ValueError("beta_max must be positive")
    S = _bounded_at(f_closed, beta_max, d_S, opts)
    solves = 1
    if S is None:
        raise BoundednessError(f"no boundedness certificate for any beta <= {beta_max}")
    lo, hi = 0.0, float(beta_max)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        trial = _bounded_at(f_closed, mid, d_S, opts)
        solves += 1
        if trial is None:
            lo = mid
        else:
            hi, S = mid, trial
    return BoundednessCertificate(hi, S, d_S, solves)
