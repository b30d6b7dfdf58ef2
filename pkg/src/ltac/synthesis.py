"""Expensive-control synthesis: ``u = eps*u1`` reducing the bound on ``mean(Phi0)``.

With ``V = V0 + eps V1`` and ``C = C0 + eps C1`` the bound condition expands
as ``F0 + eps F1 + O(eps^2)`` where

    F0 = f.grad V0 + Phi0 - C0
    F1 = f.grad V1 + (G u1 + H (du1/dx) f).grad V0 + u1^T Psi u1 - C1

``F1 <= 0`` is only needed where ``F0 = 0`` (free multiplier on ``F0``). The
quadratic term in ``u1`` is removed by a Schur lift in auxiliary variables
``z = (z0, z1..zm)``: with ``W1 = F1 - u1^T Psi u1``,

    E1 = [[-W1, (L^T u1)^T], [L^T u1, I]]     (Psi = L L^T constant)
    E1 = [[-W1, (Psi u1)^T], [Psi u1, Psi]]   (Psi polynomial)

is PSD exactly when ``F1 <= 0``, and ``z^T E1 z`` is affine in all unknowns.

A finite-degree certificate usually leaves ``F0`` strictly negative on the
whole region, and then the free multiplier makes ``C1`` unbounded below. By
default ``F0`` is therefore formed with ``C0_active = C0 + max F0`` (maximum
over the region, computed numerically), the smallest constant that ``V0``
still proves; the S-procedure then acts near the points where it is tight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundCertificate, NoCertificateError, _bound
from .poly import PolyMatrix, Polynomial, PolyVector
from .sdp import Residuals, SdpProblem, SolverOptions, Status
from .sdp import solve as sdp_solve
from .sos import (
    AffinePoly,
    GramCertificate,
    SosProgram,
    compile_program,
    extract_certificate,
    status_label as _status_label,
)
from .system import PolySystem


class SynthesisError(RuntimeError):
    pass


class SynthesisInfeasibleError(SynthesisError):
    """No controller certificate exists at the requested degrees."""


@dataclass(frozen=True)
class Degrees:
    d_u1: int = 1
    d_V1: int = 4
    d_s1: int = 2  # free multiplier on F0
    d_s0: int = 4  # SOS ball multiplier (ball problems only)
    u1_constant: bool = False

    def as_dict(self) -> dict:
        return {"d_u1": self.d_u1, "d_V1": self.d_V1, "d_s1": self.d_s1, "d_s0": self.d_s0}


# Degree preset used for the ball-restricted problem.
DEFAULT_DEGREES = Degrees(d_u1=1, d_V1=4, d_s1=2, d_s0=4)


# -- expansion ----------------------------------------------------------------------


def _ring_dot(vec, grad):
    """``sum vec[i]*grad[i]`` for mixed Polynomial / AffinePoly entries."""
    total = None
    for a, g in zip(vec, grad):
        term = g * a if isinstance(g, AffinePoly) else a * g
        total = term if total is None else total + term
    return total


def control_drift(sys: PolySystem, u1) -> list:
    """``G u1 + H (du1/dx) f`` as a length-n list (entries may carry unknowns)."""
    n = sys.n
    nv = sys.f[0].nvars
    out = []
    for i in range(n):
        acc = Polynomial.zero(nv)
        for j in range(sys.m):
            g = sys.G[i, j]
            if not g.is_zero():
                acc = (u1[j] * g) + acc if isinstance(u1[j], AffinePoly) else acc + g * u1[j]
            if sys.H is not None and not sys.H[i, j].is_zero():
                # (du1_j/dx) . f
                dj = _ring_dot(list(sys.f), [u1[j].derivative(k) for k in range(n)])
                acc = dj * sys.H[i, j] + acc if isinstance(dj, AffinePoly) else acc + sys.H[i, j] * dj
        out.append(acc)
    return out


def F0_polynomial(sys: PolySystem, V0: Polynomial, C0: float) -> Polynomial:
    return sys.f.dot(V0.gradient()) + sys.phi0 - C0


def region_max(p: Polynomial, beta: float | None = None, radius: float = 3.0,
               samples_log2: int = 12, polish: int = 8) -> tuple[float, np.ndarray]:
    """Numerical maximum of ``p`` over the ball ``x.x <= 2*beta`` (or the cube
    ``[-radius, radius]^n`` when ``beta`` is None).

    Unscrambled Sobol samples followed by SLSQP from the best few; deterministic.
    """
    from scipy.optimize import minimize
    from scipy.stats import qmc

    n = p.nvars
    R = np.sqrt(2.0 * beta) if beta is not None else radius
    pts = (qmc.Sobol(n, scramble=False).random_base2(samples_log2) * 2.0 - 1.0) * R
    if beta is not None:
        pts = pts[(pts**2).sum(axis=1) <= 2.0 * beta]
    vals = p.evaluate_many(pts)
    grad = p.gradient()
    best_v, best_x = -np.inf, np.zeros(n)
    cons = () if beta is None else ({"type": "ineq", "fun": lambda x: 2.0 * beta - x @ x,
                                     "jac": lambda x: -2.0 * x},)
    bounds = [(-R, R)] * n if beta is None else None
    for k in np.argsort(-vals, kind="stable")[:polish]:
        r = minimize(lambda x: -p.evaluate(x), pts[k], jac=lambda x: -grad.evaluate(x),
                     method="SLSQP", bounds=bounds, constraints=cons,
                     options={"ftol": 1e-14, "maxiter": 200})
        x = r.x if (beta is None or r.x @ r.x <= 2.0 * beta * (1 + 1e-9)) else pts[k]
        v = max(p.evaluate(x), vals[k])
        if v > best_v:
            best_v, best_x = v, (x if p.evaluate(x) >= vals[k] else pts[k])
    return float(best_v), best_x


@dataclass
class ExpansionPieces:
    F0: Polynomial
    W1: object  # Polynomial or AffinePoly
    u1: list
    quad: object | None  # u1^T Psi u1 when u1 is numeric, else None
    F1: object | None

    def E1(self, sys: PolySystem, x) -> np.ndarray:
        """Numeric Schur block at the point ``x`` (numeric pieces only)."""
        return schur_matrix(sys, self.W1, self.u1, x)


def build_expansion(sys: PolySystem, V0: Polynomial, C0: float, V1, u1, C1) -> ExpansionPieces:
    """F0, W1 and (for numeric u1) F1 = W1 + u1^T Psi u1.

    ``V1``, ``u1`` entries and ``C1`` may be numeric polynomials / floats, or
    affine decision expressions from an :class:`SosProgram` (then ``F1`` is
    not formed since it is quadratic in the ``u1`` unknowns).
    """
    if len(u1) != sys.m:
        raise ValueError(f"u1 needs {sys.m} entries, got {len(u1)}")
    F0 = F0_polynomial(sys, V0, C0)
    gV0 = list(V0.gradient())
    drift_V1 = _ring_dot(list(sys.f), V1.gradient())
    drive_V0 = _ring_dot(control_drift(sys, u1), gV0)
    if isinstance(drift_V1, AffinePoly) or isinstance(drive_V0, AffinePoly) or isinstance(C1, AffinePoly):
        W1 = AffinePoly.lift(drift_V1, sys.n) + drive_V0 - C1
    else:
        W1 = drift_V1 + drive_V0 - C1
    numeric = all(isinstance(u, Polynomial) for u in u1) and isinstance(W1, Polynomial)
    quad = F1 = None
    if numeric:
        quad = Polynomial.zero(sys.n)
        for a in range(sys.m):
            for b in range(sys.m):
                quad = quad + u1[a] * sys.psi[a, b] * u1[b]
        F1 = W1 + quad
    return ExpansionPieces(F0, W1, list(u1), quad, F1)


def direct_F1(sys: PolySystem, V0, V1, u1: PolyVector, C1: float, eps: float = 1e-4) -> Polynomial:
    """F1 from the eps-expansion of the full bound function, by finite difference
    in eps of ``F(eps) = x'(eps).grad V(eps) + Phi0 + eps u1^T Psi u1 - C(eps)``
    with the first-order closed loop ``x' = f + eps (G u1 + H du1/dx f)``.

    Independent of :func:`build_expansion`; used as a test oracle.
    """
    n = sys.n

    def F(e):
        xdot = [sys.f[i] + drive[i] * e for i in range(n)]
        V = V0 + V1 * e
        quad = Polynomial.zero(n)
        for a in range(sys.m):
            for b in range(sys.m):
                quad = quad + u1[a] * sys.psi[a, b] * u1[b]
        return PolyVector(xdot).dot(V.gradient()) + sys.phi0 + quad * e - C1 * e

    drive = control_drift(sys, list(u1))
    # F is quadratic in e, so the central difference is exact up to rounding
    return (F(eps) - F(-eps)) * (1.0 / (2 * eps))


def schur_matrix(sys: PolySystem, W1: Polynomial, u1, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    m = sys.m
    w = W1.evaluate(x)
    uv = np.array([u.evaluate(x) for u in u1])
    psi = sys.psi.evaluate(x)
    E = np.zeros((m + 1, m + 1))
    E[0, 0] = -w
    if sys.psi.is_constant():
        L = np.linalg.cholesky(psi)
        col = L.T @ uv
        E[1:, 1:] = np.eye(m)
    else:
        col = psi @ uv
        E[1:, 1:] = psi
    E[0, 1:] = col
    E[1:, 0] = col
    return E


# -- O1 problems ----------------------------------------------------------------------


@dataclass
class SynthesisResult:
    C0: float
    C0_active: float  # constant in F0 used for the S-procedure term
    eps_max: float | None  # s1 >= -1/eps_max was imposed
    C1: float
    u1: PolyVector
    V1: Polynomial
    multipliers: dict[str, Polynomial]
    degrees: Degrees
    beta: float | None
    V0: Polynomial
    certificates: dict[str, GramCertificate] = field(default_factory=dict)
    residuals: Residuals | None = None
    status: str = "optimal"
    sdp: SdpProblem | None = field(default=None, repr=False)

    def bound_line(self, eps) -> np.ndarray:
        return self.C0 + np.asarray(eps, dtype=float) * self.C1


def _lift(p: Polynomial, nv: int) -> Polynomial:
    return p.extend(nv, 0)


def _lifted_system(sys: PolySystem, nv: int) -> _LiftedSystem:
    """The system re-expressed in ``nv >= n`` variables (z appended, unused)."""
    f = PolyVector(_lift(p, nv) for p in sys.f)
    G = PolyMatrix([[_lift(p, nv) for p in row] for row in sys.G.rows])
    H = None if sys.H is None else PolyMatrix([[_lift(p, nv) for p in row] for row in sys.H.rows])
    psi = PolyMatrix([[_lift(p, nv) for p in row] for row in sys.psi.rows])
    return _LiftedSystem(sys.n, nv, sys.m, f, G, H, psi, _lift(sys.phi0, nv))


@dataclass
class _LiftedSystem:
    n: int
    nv: int
    m: int
    f: PolyVector
    G: PolyMatrix
    H: PolyMatrix | None
    psi: PolyMatrix
    phi0: Polynomial


def _solve_O1(sys: PolySystem, cert: BoundCertificate, deg: Degrees, beta: float | None,
              opts: SolverOptions | None, tighten: bool = False, radius: float = 3.0,
              eps_max: float | None = 0.1) -> SynthesisResult:
    if sys.m < 1:
        raise SynthesisError("system has no controls (m = 0)")
    if cert.direction != "upper":
        raise SynthesisError("synthesis needs an upper-bound certificate")
    n, m = sys.n, sys.m
    nv = n + 1 + m
    L = _lifted_system(sys, nv)
    prog = SosProgram(nv, nz=1 + m)
    z = [Polynomial.variable(nv, n + k) for k in range(1 + m)]
    zz = Polynomial.zero(nv)
    for zk in z:
        zz = zz + zk * zk

    C1 = prog.new_scalar("C1")
    V1 = prog.new_poly("V1", deg.d_V1, include_constant=False)
    with_const = deg.u1_constant or deg.d_u1 == 0
    u1 = [prog.new_poly(f"u1_{j + 1}" if m > 1 else "u1", deg.d_u1, include_constant=with_const)
          for j in range(m)]
    s1 = prog.new_poly("s1", deg.d_s1)

    C0_active = cert.C
    if tighten:
        # shift F0 so that it touches zero on the region (see module docstring)
        top, _ = region_max(F0_polynomial(sys, cert.V, cert.C), beta, radius)
        C0_active = cert.C + min(top, 0.0)
    V0 = _lift(cert.V, nv)
    F0 = _ring_dot(list(L.f), list(V0.gradient())) + L.phi0 - C0_active
    gV0 = list(V0.gradient())
    W1 = _ring_dot(list(L.f), V1.gradient()) + _ring_dot(control_drift(L, u1), gV0) - C1

    # z^T E1 z
    expr = W1 * (z[0] * z[0] * -1.0)
    if sys.psi.is_constant():
        chol = np.linalg.cholesky(sys.psi.evaluate(np.zeros(n)))
        for k in range(m):
            col = None
            for j in range(m):
                if chol[j, k] != 0.0:
                    term = u1[j] * float(chol[j, k])
                    col = term if col is None else col + term
            if col is not None:
                expr = expr + col * (z[0] * z[k + 1] * 2.0)
            expr = expr + z[k + 1] * z[k + 1]
    else:
        for a in range(m):
            col = None
            for b in range(m):
                if not L.psi[a, b].is_zero():
                    term = u1[b] * L.psi[a, b]
                    col = term if col is None else col + term
            if col is not None:
                expr = expr + col * (z[0] * z[a + 1] * 2.0)
            for b in range(m):
                expr = expr + z[a + 1] * z[b + 1] * L.psi[a, b]
    expr = expr + s1 * (zz * F0)
    mults = ["s1"]
    if beta is not None:
        s0 = prog.new_poly("s0", deg.d_s0, kind="sos")
        ball = Polynomial.constant(nv, 2.0 * beta)
        for i in range(n):
            xi = Polynomial.variable(nv, i)
            ball = ball - xi * xi
        expr = expr - s0 * (zz * ball)
        mults.append("s0")
    top = expr.degree
    if top % 2:
        raise SynthesisError(f"lifted constraint has odd degree {top}; adjust d_V1 / d_s1 / d_s0")
    prog.add_sos(expr, name="lifted")
    if eps_max is not None:
        # s1 >= -1/eps_max on the region keeps F0 + eps F1 <= F0 (1 + eps s1) <= 0
        floor = s1 + 1.0 / eps_max
        if beta is not None and deg.d_s1 >= 2:
            t1 = prog.new_poly("t1", deg.d_s1 - 2 if deg.d_s1 % 2 == 0 else deg.d_s1 - 1, kind="sos")
            floor = floor - t1 * ball
        prog.add_sos(floor, name="s1_floor")
    prog.minimize(C1)

    compiled = compile_program(prog)
    sol = sdp_solve(compiled.sdp, opts)
    if sol.status is Status.PRIMAL_INFEASIBLE:
        raise SynthesisInfeasibleError(f"synthesis infeasible at degrees {deg.as_dict()}")
    if sol.status is Status.DUAL_INFEASIBLE:
        raise SynthesisError("C1 unbounded below; check that psi is positive definite")
    try:
        res = extract_certificate(compiled, sol)
    except Exception as exc:
        raise SynthesisError(f"no valid synthesis certificate (status {sol.status}): {exc}") from exc
    names = [f"u1_{j + 1}" if m > 1 else "u1" for j in range(m)]
    u1_num = PolyVector(res.values[k].restrict(n) for k in names)
    return SynthesisResult(
        C0=cert.C,
        C0_active=C0_active,
        eps_max=eps_max,
        C1=float(res.values["C1"]),
        u1=u1_num,
        V1=res.values["V1"].restrict(n),
        multipliers={k: res.values[k].restrict(n) for k in mults},
        degrees=deg,
        beta=beta,
        V0=cert.V,
        certificates=res.certificates,
        residuals=res.sdp_solution.residuals,
        status=_status_label(sol.status),
        sdp=compiled.sdp,
    )


def solve_O1(sys: PolySystem, cert: BoundCertificate, degrees: Degrees | None = None,
             opts: SolverOptions | None = None, tighten: bool = False,
             radius: float = 3.0, eps_max: float | None = 0.1) -> SynthesisResult:
    """Global problem: ``z^T E1 z + s1(x) z^T z F0`` SOS in ``(x, z)``, ``s1`` free.

    ``tighten`` shifts ``F0`` by its numerical maximum over ``[-radius, radius]^n``.
    """
    deg = degrees or Degrees(d_u1=1, d_V1=4, d_s1=2)
    return _solve_O1(sys, cert, deg, None, opts, tighten, radius, eps_max)


def solve_O1_ball(sys: PolySystem, cert: BoundCertificate, beta: float,
                  degrees: Degrees | None = None, opts: SolverOptions | None = None,
                  tighten: bool = False, eps_max: float | None = 0.1) -> SynthesisResult:
    """Ball problem: adds ``- s0(x) z^T z (2 beta - x.x)`` with ``s0`` SOS.

    ``tighten`` shifts ``F0`` by its numerical maximum over the ball.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    return _solve_O1(sys, cert, degrees or DEFAULT_DEGREES, beta, opts, tighten, eps_max=eps_max)


def replay_synthesis(sys: PolySystem, res: SynthesisResult, match_tol: float = 1e-6) -> float:
    """Rebuild the lifted constraint from numeric pieces and re-validate its Gram certificate."""
    n, m = sys.n, sys.m
    nv = n + 1 + m
    L = _lifted_system(sys, nv)
    z = [Polynomial.variable(nv, n + k) for k in range(1 + m)]
    zz = sum((zk * zk for zk in z), Polynomial.zero(nv))
    u1 = [_lift(u, nv) for u in res.u1]
    V0 = _lift(res.V0, nv)
    F0 = _ring_dot(list(L.f), list(V0.gradient())) + L.phi0 - res.C0_active
    W1 = (_ring_dot(list(L.f), list(_lift(res.V1, nv).gradient()))
          + _ring_dot(control_drift(L, u1), list(V0.gradient())) - res.C1)
    expr = W1 * (z[0] * z[0]) * -1.0
    if sys.psi.is_constant():
        chol = np.linalg.cholesky(sys.psi.evaluate(np.zeros(n)))
        for k in range(m):
            col = sum((u1[j] * float(chol[j, k]) for j in range(m)), Polynomial.zero(nv))
            expr = expr + col * (z[0] * z[k + 1] * 2.0) + z[k + 1] * z[k + 1]
    else:
        for a in range(m):
            col = sum((u1[b] * L.psi[a, b] for b in range(m)), Polynomial.zero(nv))
            expr = expr + col * (z[0] * z[a + 1] * 2.0)
            for b in range(m):
                expr = expr + z[a + 1] * z[b + 1] * L.psi[a, b]
    expr = expr + _lift(res.multipliers["s1"], nv) * zz * F0
    if res.beta is not None:
        ball = Polynomial.constant(nv, 2.0 * res.beta)
        for i in range(n):
            xi = Polynomial.variable(nv, i)
            ball = ball - xi * xi
        expr = expr - _lift(res.multipliers["s0"], nv) * zz * ball
    return res.certificates["lifted"].validate(expr, match_tol)


# -- O_eps refinement ------------------------------------------------------------------


def _det(M: list[list[Polynomial]]) -> Polynomial:
    k = len(M)
    if k == 1:
        return M[0][0]
    if k == 2:
        return M[0][0] * M[1][1] - M[0][1] * M[1][0]
    total = Polynomial.zero(M[0][0].nvars)
    for j in range(k):
        if M[0][j].is_zero():
            continue
        minor = [row[:j] + row[j + 1:] for row in M[1:]]
        term = M[0][j] * _det(minor)
        total = total + term if j % 2 == 0 else total - term
    return total


def _adjugate(M: list[list[Polynomial]]) -> list[list[Polynomial]]:
    k = len(M)
    nv = M[0][0].nvars
    if k == 1:
        return [[Polynomial.constant(nv, 1.0)]]
    adj = [[Polynomial.zero(nv)] * k for _ in range(k)]
    for i in range(k):
        for j in range(k):
            minor = [row[:j] + row[j + 1:] for r, row in enumerate(M) if r != i]
            c = _det(minor)
            adj[j][i] = c if (i + j) % 2 == 0 else -c
    return adj


def closed_loop_polynomial(sys: PolySystem, u1: PolyVector, eps: float):
    """Closed loop as ``x' = N(x) / D(x)`` with polynomial ``N`` and ``D``.

    Without ``H``, ``D = 1`` and ``N = f + eps G u1``. With ``H`` the implicit
    relation ``(I - eps H J) x' = f + eps G u1`` (``J = du1/dx``) is solved via
    ``(I - eps H J)^-1 = I + eps H (I_m - eps J H)^-1 J`` and the adjugate of
    the ``m x m`` matrix, giving ``D = det(I_m - eps J H)``.
    """
    n, m = sys.n, sys.m
    rhs = [sys.f[i] + eps * sum((sys.G[i, j] * u1[j] for j in range(m)), Polynomial.zero(n))
           for i in range(n)]
    if sys.H is None or eps == 0.0:
        return PolyVector(rhs), Polynomial.constant(n, 1.0)
    J = [[u1[a].derivative(k) for k in range(n)] for a in range(m)]
    K = [[(Polynomial.constant(n, 1.0) if a == b else Polynomial.zero(n))
          - eps * sum((J[a][k] * sys.H[k, b] for k in range(n)), Polynomial.zero(n))
          for b in range(m)] for a in range(m)]
    D = _det(K)
    adj = _adjugate(K)
    Jr = [sum((J[a][k] * rhs[k] for k in range(n)), Polynomial.zero(n)) for a in range(m)]
    w = [sum((adj[a][b] * Jr[b] for b in range(m)), Polynomial.zero(n)) for a in range(m)]
    N = [D * rhs[i] + eps * sum((sys.H[i, a] * w[a] for a in range(m)), Polynomial.zero(n))
         for i in range(n)]
    return PolyVector(N), D


def refine_bound(sys: PolySystem, u1: PolyVector, eps: float, d_V: int,
                 d_S: int | None = None, beta: float | None = None,
                 opts: SolverOptions | None = None) -> BoundCertificate:
    """Bound ``C(eps)`` for the concrete closed loop ``u = eps u1``.

    Cost is ``Phi0 + eps u1^T Psi u1``. With ``H`` the condition is multiplied
    through by the denominator ``D > 0`` of the exact closed loop.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if d_V % 2:
        raise ValueError(f"d_V must be even, got {d_V}")
    n, m = sys.n, sys.m
    N, D = closed_loop_polynomial(sys, u1, eps)
    cost = sys.phi0
    for a in range(m):
        for b in range(m):
            cost = cost + eps * (u1[a] * sys.psi[a, b] * u1[b])
    weight = None
    if not D.is_constant():
        from .sos import InfeasibleError, check_sos

        if D.evaluate(np.zeros(n)) <= 0:
            raise NoCertificateError("closed-loop denominator is not positive at the origin")
        try:
            check_sos(D)
        except InfeasibleError:
            raise NoCertificateError("cannot certify the closed-loop denominator is nonnegative") from None
        weight = D
    if beta is not None and d_S is None:
        d_S = max(d_V - 2, 0)
    return _bound(N, cost, d_V, "upper", d_S, beta, weight=weight, opts=opts)
