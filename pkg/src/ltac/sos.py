"""Sum-of-squares programs and their compilation to standard-form SDPs.

An :class:`SosProgram` holds unknowns (free scalars, coefficients of free
decision polynomials, and Gram matrices of SOS-constrained decision
polynomials), constraints "expression is SOS" / "expression == 0" whose
expressions are affine in the unknowns, and a linear objective.

Each SOS constraint ``e(x)`` becomes a PSD Gram block ``Q`` over a monomial
basis ``m(x)`` plus one linear equation per monomial matching the
coefficients of ``e`` and ``m^T Q m``.
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from .poly import Monomial, Polynomial, PolyVector, grlex_key
from .sdp import (
    SdpProblem,
    SdpSolution,
    SolverOptions,
    Status,
    min_eigenvalues,
    polish_primal,
    residuals,
    solve,
)

MATCH_TOL = 1e-6
EIG_TOL = 1e-8

CONST = -1  # key of the unknown-free part in AffinePoly


class SosError(ValueError):
    pass


class NonAffineError(SosError):
    pass


class CompileError(SosError):
    pass


class InfeasibleError(SosError):
    """The SDP solver reported the program infeasible (or failed)."""

    def __init__(self, message: str, status: Status | None = None):
        super().__init__(message)
        self.status = status


class UnboundedError(SosError):
    pass


class CertificateError(SosError):
    """Extracted certificate fails validation."""

    def __init__(self, message: str, residual: float, min_eig: float | None = None):
        super().__init__(message)
        self.residual = residual
        self.min_eig = min_eig


# -- monomial bases ----------------------------------------------------------


def monomial_basis(
    nvars: int,
    max_deg: int,
    parity: str | None = None,
    min_deg: int = 0,
    variables: Sequence[int] | None = None,
) -> list[Monomial]:
    """All monomials of total degree in ``[min_deg, max_deg]``, graded-lex order.

    ``parity`` is ``None``/``"none"`` (no filter), ``"even"`` or ``"odd"``
    (total degree parity). ``variables`` restricts which variables may appear.

    >>> monomial_basis(2, 2, "even")
    [(0, 0), (2, 0), (1, 1), (0, 2)]
    """
    if max_deg < 0:
        return []
    active = list(range(nvars)) if variables is None else sorted(set(variables))
    out = []
    for deg in range(max(min_deg, 0), max_deg + 1):
        if parity == "even" and deg % 2:
            continue
        if parity == "odd" and deg % 2 == 0:
            continue
        for combo in itertools.combinations_with_replacement(active, deg):
            mono = [0] * nvars
            for v in combo:
                mono[v] += 1
            out.append(tuple(mono))
    return sorted(set(out), key=grlex_key)


# -- affine expressions --------------------------------------------------------


class AffinePoly:
    """Polynomial whose coefficients are affine in the program unknowns.

    Stored as ``{unknown_id: Polynomial}`` with key ``CONST`` for the
    unknown-free part, i.e. ``e(x) = e_CONST(x) + sum_u c_u e_u(x)``.
    """

    __slots__ = ("nvars", "parts")

    def __init__(self, nvars: int, parts: dict[int, Polynomial] | None = None):
        self.nvars = nvars
        self.parts = {k: p for k, p in (parts or {}).items() if not p.is_zero()}

    @classmethod
    def lift(cls, value, nvars: int) -> AffinePoly:
        if isinstance(value, AffinePoly):
            if value.nvars != nvars:
                raise SosError(f"nvars mismatch: {value.nvars} vs {nvars}")
            return value
        if isinstance(value, Polynomial):
            if value.nvars != nvars:
                raise SosError(f"nvars mismatch: {value.nvars} vs {nvars}")
            return cls(nvars, {CONST: value})
        if isinstance(value, (int, float, np.floating, np.integer)):
            return cls(nvars, {CONST: Polynomial.constant(nvars, float(value))})
        raise TypeError(f"cannot use {type(value).__name__} in an SOS expression")

    @property
    def constant_part(self) -> Polynomial:
        return self.parts.get(CONST, Polynomial.zero(self.nvars))

    @property
    def unknowns(self) -> list[int]:
        return sorted(k for k in self.parts if k != CONST)

    def has_unknowns(self) -> bool:
        return any(k != CONST for k in self.parts)

    def support(self) -> set[Monomial]:
        out: set[Monomial] = set()
        for p in self.parts.values():
            out.update(p.monomials())
        return out

    @property
    def degree(self) -> int:
        return max((p.degree for p in self.parts.values()), default=-1)

    def __add__(self, other) -> AffinePoly:
        other = AffinePoly.lift(other, self.nvars)
        parts = dict(self.parts)
        for k, p in other.parts.items():
            parts[k] = parts[k] + p if k in parts else p
        return AffinePoly(self.nvars, parts)

    __radd__ = __add__

    def __neg__(self) -> AffinePoly:
        return AffinePoly(self.nvars, {k: -p for k, p in self.parts.items()})

    def __sub__(self, other) -> AffinePoly:
        return self + (-AffinePoly.lift(other, self.nvars))

    def __rsub__(self, other) -> AffinePoly:
        return AffinePoly.lift(other, self.nvars) - self

    def __mul__(self, other) -> AffinePoly:
        if isinstance(other, (int, float, np.floating, np.integer)):
            return AffinePoly(self.nvars, {k: p * float(other) for k, p in self.parts.items()})
        other = AffinePoly.lift(other, self.nvars)
        if self.has_unknowns() and other.has_unknowns():
            raise NonAffineError("product of two expressions with unknowns is not affine")
        if other.has_unknowns():
            self, other = other, self
        factor = other.constant_part
        return AffinePoly(self.nvars, {k: p * factor for k, p in self.parts.items()})

    __rmul__ = __mul__

    def derivative(self, index: int) -> AffinePoly:
        return AffinePoly(self.nvars, {k: p.derivative(index) for k, p in self.parts.items()})

    def gradient(self) -> list[AffinePoly]:
        return [self.derivative(i) for i in range(self.nvars)]

    def coefficient(self, mono: Monomial) -> dict[int, float]:
        out = {}
        for k, p in self.parts.items():
            c = p.coefficient(mono)
            if c != 0.0:
                out[k] = c
        return out

    def instantiate(self, values: dict[int, float]) -> Polynomial:
        """Numeric polynomial obtained by substituting unknown values."""
        total = self.constant_part
        for k, p in self.parts.items():
            if k != CONST:
                total = total + p * values[k]
        return total

    def __repr__(self) -> str:
        return f"AffinePoly(nvars={self.nvars}, unknowns={len(self.unknowns)}, degree={self.degree})"


def affine_dot(vec: Sequence, grad: Sequence[AffinePoly]) -> AffinePoly:
    """``sum_i vec[i] * grad[i]`` with ``vec`` numeric polynomials."""
    if len(vec) != len(grad):
        raise SosError("length mismatch in dot product")
    nvars = grad[0].nvars
    total = AffinePoly(nvars)
    for a, g in zip(vec, grad):
        total = total + g * a
    return total


# -- program -------------------------------------------------------------------


@dataclass(frozen=True)
class _Unknown:
    kind: str  # "free" or "gram"
    owner: str
    index: int  # free index, or position in the owner's upper triangle
    block: int = -1
    i: int = -1
    j: int = -1


class DecisionPoly(AffinePoly):
    """Decision polynomial with unknown coefficients.

    ``kind == "free"``: one free unknown per admitted basis monomial.
    ``kind == "sos"``: Gram-parameterized, ``p = m^T Q m`` with ``Q`` PSD over
    the half-degree basis ``m``.
    """

    __slots__ = ("name", "max_degree", "parity", "kind", "basis", "block")

    def __init__(self, nvars, parts, name, max_degree, parity, kind, basis, block=-1):
        super().__init__(nvars, parts)
        self.name = name
        self.max_degree = max_degree
        self.parity = parity
        self.kind = kind
        self.basis = basis
        self.block = block

    def __repr__(self) -> str:
        return (f"DecisionPoly({self.name!r}, kind={self.kind}, degree<={self.max_degree}, "
                f"parity={self.parity}, basis={len(self.basis)})")


@dataclass
class Constraint:
    expr: AffinePoly
    kind: str  # "sos" or "zero"
    name: str


class SosProgram:
    """Linear objective over unknowns, SOS and zero constraints."""

    def __init__(self, nvars: int, nz: int = 0, parity_split: bool = True, box_reduce: bool = True):
        self.nvars = nvars
        self.nz = nz
        self.parity_split = parity_split
        self.box_reduce = box_reduce
        self._unknowns: list[_Unknown] = []
        self._nfree = 0
        self.decisions: dict[str, DecisionPoly] = {}
        self.scalars: dict[str, int] = {}
        self.constraints: list[Constraint] = []
        self.objective: dict[int, float] = {}
        self.sense = "min"
        self._gram_decisions: list[DecisionPoly] = []

    @property
    def nx(self) -> int:
        return self.nvars - self.nz

    def _new_free(self, owner: str) -> int:
        self._unknowns.append(_Unknown("free", owner, self._nfree))
        self._nfree += 1
        return len(self._unknowns) - 1

    def _check_name(self, name: str):
        if name in self.decisions or name in self.scalars:
            raise SosError(f"duplicate unknown name {name!r}")

    def new_scalar(self, name: str) -> AffinePoly:
        self._check_name(name)
        uid = self._new_free(name)
        self.scalars[name] = uid
        return AffinePoly(self.nvars, {uid: Polynomial.constant(self.nvars, 1.0)})

    def new_poly(
        self,
        name: str,
        degree: int,
        kind: str = "free",
        parity: str | None = None,
        include_constant: bool = True,
        variables: Sequence[int] | None = None,
    ) -> DecisionPoly:
        """Declare a decision polynomial of total degree <= ``degree``.

        ``variables`` defaults to the state variables (auxiliary ``z``
        variables excluded).
        """
        self._check_name(name)
        if variables is None:
            variables = range(self.nx)
        if kind == "free":
            basis = monomial_basis(self.nvars, degree, parity, 0 if include_constant else 1, variables)
            parts = {}
            for mono in basis:
                uid = self._new_free(name)
                parts[uid] = Polynomial.monomial(mono)
            dp = DecisionPoly(self.nvars, parts, name, degree, parity, kind, basis)
        elif kind == "sos":
            if degree < 0 or degree % 2:
                raise SosError(f"SOS decision {name!r} needs an even degree, got {degree}")
            half_parity = None
            if parity == "even":
                # m^T Q m even needs both parities of m; keep full basis
                half_parity = None
            basis = monomial_basis(self.nvars, degree // 2, half_parity, 0, variables)
            if not basis:
                raise CompileError(f"empty basis for {name!r}")
            block = len(self._gram_decisions)
            parts = {}
            k = 0
            for i in range(len(basis)):
                for j in range(i, len(basis)):
                    self._unknowns.append(_Unknown("gram", name, k, block, i, j))
                    uid = len(self._unknowns) - 1
                    mono = tuple(a + b for a, b in zip(basis[i], basis[j]))
                    parts[uid] = Polynomial.monomial(mono, 1.0 if i == j else 2.0)
                    k += 1
            dp = DecisionPoly(self.nvars, parts, name, degree, parity, kind, basis, block)
            self._gram_decisions.append(dp)
        else:
            raise SosError(f"unknown decision kind {kind!r}")
        self.decisions[name] = dp
        return dp

    def add_sos(self, expr, name: str | None = None) -> Constraint:
        expr = AffinePoly.lift(expr, self.nvars)
        c = Constraint(expr, "sos", name or f"sos{len(self.constraints)}")
        self.constraints.append(c)
        return c

    def add_zero(self, expr, name: str | None = None) -> Constraint:
        expr = AffinePoly.lift(expr, self.nvars)
        c = Constraint(expr, "zero", name or f"zero{len(self.constraints)}")
        self.constraints.append(c)
        return c

    def _set_objective(self, expr, sense: str):
        expr = AffinePoly.lift(expr, self.nvars)
        if expr.support() - {(0,) * self.nvars}:
            raise SosError("objective must be a constant (x-free) affine expression")
        zero = (0,) * self.nvars
        self.objective = {k: p.coefficient(zero) for k, p in expr.parts.items() if k != CONST}
        self.sense = sense

    def minimize(self, expr):
        self._set_objective(expr, "min")

    def maximize(self, expr):
        self._set_objective(expr, "max")

    def s_procedure(
        self,
        f0,
        h: Sequence = (),
        f: Sequence = (),
        S_free: Sequence[AffinePoly] = (),
        S_sos: Sequence[DecisionPoly] = (),
        name: str | None = None,
    ) -> Constraint:
        """Add ``f0 + sum S_free[i] h[i] - sum S_sos[i] f[i]`` is SOS.

        SOS-kind multipliers are Gram-parameterized and hence SOS by
        construction; a free-kind multiplier passed in ``S_sos`` gets an extra
        SOS constraint.
        """
        if len(h) != len(S_free) or len(f) != len(S_sos):
            raise SosError("one multiplier per h and per f required")
        expr = AffinePoly.lift(f0, self.nvars)
        for s, hi in zip(S_free, h):
            expr = expr + s * hi
        for s, fi in zip(S_sos, f):
            expr = expr - s * fi
            if not (isinstance(s, DecisionPoly) and s.kind == "sos"):
                self.add_sos(s, name=f"{name or 'sproc'}:mult{len(self.constraints)}")
        top = expr.degree
        if top >= 0 and top % 2 == 1:
            raise SosError(
                f"S-procedure expression has odd top degree {top}; choose multiplier degrees "
                "so the combined degree is even"
            )
        return self.add_sos(expr, name)


# -- compilation ----------------------------------------------------------------


@dataclass
class GramBlockInfo:
    owner: str  # constraint or decision name
    basis: list[Monomial]
    block: int


@dataclass
class CompiledProgram:
    program: SosProgram
    sdp: SdpProblem
    free_map: list[int]  # free-variable column -> unknown id
    gram_blocks: list[GramBlockInfo]
    constraint_blocks: dict[str, list[int]]  # sos constraint name -> block indices
    row_monomials: list[tuple[str, Monomial]] = field(default_factory=list)


def _constraint_basis(expr: AffinePoly, prog: SosProgram) -> list[list[Monomial]]:
    """Gram basis (possibly split by parity) for an SOS constraint."""
    nvars = prog.nvars
    support = expr.support()
    if not support:
        return [[(0,) * nvars]]
    deg = max(sum(m) for m in support)
    half = deg // 2
    zidx = list(range(prog.nx, nvars))
    zdeg = {sum(m[i] for i in zidx) for m in support} if zidx else {0}
    basis = monomial_basis(nvars, half)
    if zidx and len(zdeg) == 1 and next(iter(zdeg)) % 2 == 0:
        k = next(iter(zdeg)) // 2
        xmax = max(sum(m[: prog.nx]) for m in support)
        basis = [b for b in basis if sum(b[i] for i in zidx) == k and sum(b[: prog.nx]) <= xmax // 2]
    if prog.box_reduce:
        maxexp = [max(m[i] for m in support) for i in range(nvars)]
        basis = [b for b in basis if all(2 * b[i] <= maxexp[i] for i in range(nvars))]
    if not basis:
        raise CompileError("empty Gram basis for SOS constraint")
    if prog.parity_split and all(sum(m) % 2 == 0 for m in support):
        even = [b for b in basis if sum(b) % 2 == 0]
        odd = [b for b in basis if sum(b) % 2 == 1]
        return [blk for blk in (even, odd) if blk]
    return [basis]


def compile_program(prog: SosProgram) -> CompiledProgram:
    """Translate ``prog`` into an :class:`SdpProblem`. Deterministic."""
    if not any(c.kind == "sos" for c in prog.constraints) and not prog.constraints:
        raise CompileError("program has no constraints")
    nvars = prog.nvars
    # blocks: SOS decisions first, then constraint Gram blocks
    blocks: list[GramBlockInfo] = [
        GramBlockInfo(d.name, d.basis, d.block) for d in prog._gram_decisions
    ]
    constraint_blocks: dict[str, list[int]] = {}
    for c in prog.constraints:
        if c.kind != "sos":
            continue
        if c.name in constraint_blocks:
            raise CompileError(f"duplicate constraint name {c.name!r}")
        idxs = []
        for basis in _constraint_basis(c.expr, prog):
            idxs.append(len(blocks))
            blocks.append(GramBlockInfo(c.name, basis, len(blocks)))
        constraint_blocks[c.name] = idxs

    free_map = [uid for uid, u in enumerate(prog._unknowns) if u.kind == "free"]
    free_col = {uid: k for k, uid in enumerate(free_map)}

    rows_blocks: list[dict[int, dict[tuple[int, int], float]]] = []
    rows_free: list[dict[int, float]] = []
    rhs: list[float] = []
    row_monos: list[tuple[str, Monomial]] = []

    def unknown_terms(coefs: dict[int, float], sign: float, rb, rf):
        for uid, val in coefs.items():
            if uid == CONST:
                continue
            u = prog._unknowns[uid]
            if u.kind == "free":
                col = free_col[uid]
                rf[col] = rf.get(col, 0.0) + sign * val
            else:
                ent = rb.setdefault(u.block, {})
                if u.i == u.j:
                    ent[(u.i, u.i)] = ent.get((u.i, u.i), 0.0) + sign * val
                else:
                    ent[(u.i, u.j)] = ent.get((u.i, u.j), 0.0) + sign * val / 2.0

    for c in prog.constraints:
        support = c.expr.support()
        gram_pairs: dict[Monomial, list[tuple[int, int, int]]] = {}
        if c.kind == "sos":
            for bidx in constraint_blocks[c.name]:
                basis = blocks[bidx].basis
                for i in range(len(basis)):
                    for j in range(i, len(basis)):
                        mono = tuple(a + b for a, b in zip(basis[i], basis[j]))
                        gram_pairs.setdefault(mono, []).append((bidx, i, j))
            support = support | set(gram_pairs)
        for mono in sorted(support, key=grlex_key):
            rb: dict[int, dict[tuple[int, int], float]] = {}
            rf: dict[int, float] = {}
            for bidx, i, j in gram_pairs.get(mono, ()):
                ent = rb.setdefault(bidx, {})
                ent[(i, j)] = ent.get((i, j), 0.0) + 1.0
            coefs = c.expr.coefficient(mono)
            unknown_terms(coefs, -1.0, rb, rf)
            rows_blocks.append(rb)
            rows_free.append(rf)
            rhs.append(coefs.get(CONST, 0.0))
            row_monos.append((c.name, mono))

    m = len(rhs)
    sizes = tuple(len(b.basis) for b in blocks)
    A = [np.zeros((m, n, n)) for n in sizes]
    Af = np.zeros((m, len(free_map)))
    # rb entries hold the value placed at (i, j) and, off the diagonal, at (j, i)
    for r, (rb, rf) in enumerate(zip(rows_blocks, rows_free)):
        for bidx, ent in rb.items():
            for (i, j), val in ent.items():
                A[bidx][r, i, j] += val
                if i != j:
                    A[bidx][r, j, i] += val
        for col, val in rf.items():
            Af[r, col] += val

    sign = 1.0 if prog.sense == "min" else -1.0
    C = [np.zeros((n, n)) for n in sizes]
    cf = np.zeros(len(free_map))
    for uid, w in prog.objective.items():
        u = prog._unknowns[uid]
        if u.kind == "free":
            cf[free_col[uid]] += sign * w
        else:
            if u.i == u.j:
                C[u.block][u.i, u.i] += sign * w
            else:
                C[u.block][u.i, u.j] += sign * w / 2.0
                C[u.block][u.j, u.i] += sign * w / 2.0
    if not sizes:
        raise CompileError("program has no PSD blocks (no SOS constraint or decision)")
    sdp = SdpProblem(sizes, tuple(A), tuple(C), np.array(rhs), Af, cf)
    return CompiledProgram(prog, sdp, free_map, blocks, constraint_blocks, row_monos)


# -- certificates ----------------------------------------------------------------


def gram_polynomial(basis: Sequence[Monomial], Q: np.ndarray) -> Polynomial:
    """``m^T Q m`` as a polynomial."""
    nvars = len(basis[0])
    terms: dict[Monomial, float] = {}
    for i, a in enumerate(basis):
        for j, b in enumerate(basis):
            if Q[i, j] != 0.0:
                mono = tuple(p + q for p, q in zip(a, b))
                terms[mono] = terms.get(mono, 0.0) + float(Q[i, j])
    return Polynomial(nvars, terms)


def gram_residual(expr: Polynomial, basis: Sequence[Monomial], Q: np.ndarray) -> float:
    """Max-abs coefficient of ``expr - m^T Q m``."""
    return (expr - gram_polynomial(basis, Q)).max_abs_coefficient()


@dataclass
class GramCertificate:
    """``expr = m^T Q m`` with ``Q`` PSD, up to ``residual`` per coefficient."""

    name: str
    basis: list[Monomial]
    Q: np.ndarray
    residual: float
    min_eig: float

    def polynomial(self) -> Polynomial:
        return gram_polynomial(self.basis, self.Q)

    def validate(self, expr: Polynomial | None = None, match_tol: float = MATCH_TOL,
                 eig_tol: float = EIG_TOL) -> float:
        """Re-check against ``expr`` (or the stored residual); return the residual."""
        residual = self.residual if expr is None else gram_residual(expr, self.basis, self.Q)
        min_eig = float(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))[0]) if len(self.basis) else 0.0
        if residual > match_tol:
            raise CertificateError(
                f"{self.name}: Gram coefficient mismatch {residual:.3e} > {match_tol:.1e}", residual, min_eig)
        if min_eig < -eig_tol:
            raise CertificateError(
                f"{self.name}: Gram matrix not PSD (min eigenvalue {min_eig:.3e})", residual, min_eig)
        return residual


@dataclass
class SosSolution:
    """Numeric values of all unknowns plus validated Gram certificates."""

    status: Status
    objective: float
    values: dict[str, Polynomial | float]
    certificates: dict[str, GramCertificate]
    zero_residuals: dict[str, float]
    sdp_solution: SdpSolution
    compiled: CompiledProgram

    @property
    def max_residual(self) -> float:
        vals = [c.residual for c in self.certificates.values()] + list(self.zero_residuals.values())
        return max(vals, default=0.0)


def _blockdiag(mats: Sequence[np.ndarray]) -> np.ndarray:
    n = sum(m.shape[0] for m in mats)
    out = np.zeros((n, n))
    k = 0
    for m in mats:
        out[k : k + m.shape[0], k : k + m.shape[0]] = m
        k += m.shape[0]
    return out


def unknown_values(compiled: CompiledProgram, sol: SdpSolution) -> dict[int, float]:
    prog = compiled.program
    vals: dict[int, float] = {}
    free_col = {uid: k for k, uid in enumerate(compiled.free_map)}
    for uid, u in enumerate(prog._unknowns):
        if u.kind == "free":
            vals[uid] = float(sol.x_free[free_col[uid]])
        else:
            vals[uid] = float(sol.X[u.block][u.i, u.j])
    return vals


def extract_certificate(
    compiled: CompiledProgram,
    sol: SdpSolution,
    match_tol: float = MATCH_TOL,
    eig_tol: float = EIG_TOL,
) -> SosSolution:
    """Reconstruct decision polynomials and validate every Gram certificate.

    Raises :class:`InfeasibleError` / :class:`UnboundedError` for infeasible
    exits and :class:`CertificateError` when a residual exceeds ``match_tol``
    (or a Gram matrix has an eigenvalue below ``-eig_tol``). Runs that stopped
    on ``max-iters`` or ``numerical-failure`` are accepted only when their
    certificates validate.
    """
    if sol.status is Status.PRIMAL_INFEASIBLE:
        raise InfeasibleError("SOS program is infeasible", sol.status)
    if sol.status is Status.DUAL_INFEASIBLE:
        raise UnboundedError("SOS program objective is unbounded")
    try:
        return _extract(compiled, sol, match_tol, eig_tol)
    except CertificateError as first:
        # project onto the matching equations and re-check; PSD is still enforced
        X, w = polish_primal(compiled.sdp, sol.X, sol.x_free)
        polished = replace(sol, X=tuple(X), x_free=w,
                           residuals=residuals(compiled.sdp, X, sol.y, sol.S, w))
        try:
            return _extract(compiled, polished, match_tol, eig_tol)
        except CertificateError:
            raise first from None


def _extract(compiled: CompiledProgram, sol: SdpSolution, match_tol: float, eig_tol: float) -> SosSolution:
    prog = compiled.program
    vals = unknown_values(compiled, sol)

    values: dict[str, Polynomial | float] = {}
    for name, uid in prog.scalars.items():
        values[name] = vals[uid]
    certificates: dict[str, GramCertificate] = {}
    for name, dp in prog.decisions.items():
        values[name] = dp.instantiate(vals)
        if dp.kind == "sos":
            Q = np.array(sol.X[dp.block])
            cert = GramCertificate(name, list(dp.basis), Q, 0.0,
                                   float(np.linalg.eigvalsh(Q)[0]))
            certificates[name] = cert

    zero_residuals: dict[str, float] = {}
    for c in prog.constraints:
        expr = c.expr.instantiate(vals)
        if c.kind == "zero":
            res = expr.max_abs_coefficient()
            zero_residuals[c.name] = res
            if res > match_tol:
                raise CertificateError(f"{c.name}: equality residual {res:.3e}", res)
            continue
        bidx = compiled.constraint_blocks[c.name]
        basis = [m for b in bidx for m in compiled.gram_blocks[b].basis]
        Q = _blockdiag([np.array(sol.X[b]) for b in bidx])
        res = gram_residual(expr, basis, Q)
        cert = GramCertificate(c.name, basis, Q, res, float(np.linalg.eigvalsh(Q)[0]))
        certificates[c.name] = cert
    for cert in certificates.values():
        cert.validate(None, match_tol, eig_tol)

    objective = sum(w * vals[uid] for uid, w in prog.objective.items())
    return SosSolution(sol.status, float(objective), values, certificates, zero_residuals, sol, compiled)


def status_label(status: Status) -> str:
    """``optimal``, or ``certified`` for a stalled run whose certificate validated."""
    return "optimal" if status is Status.OPTIMAL else "certified"


def solve_program(prog: SosProgram, opts: SolverOptions | None = None, **kw) -> SosSolution:
    """Compile, solve and extract; raises on infeasibility or invalid certificates."""
    compiled = compile_program(prog)
    sol = solve(compiled.sdp, opts, **kw)
    if sol.status in (Status.MAX_ITERS, Status.NUMERICAL_FAILURE):
        try:
            return extract_certificate(compiled, sol)
        except CertificateError as exc:
            raise InfeasibleError(
                f"solver stopped with status {sol.status} and no valid certificate "
                f"(residual {exc.residual:.2e})", sol.status) from exc
    return extract_certificate(compiled, sol)


def check_sos(p: Polynomial, opts: SolverOptions | None = None, **prog_kw) -> SosSolution:
    """Feasibility check ``p is SOS``; raises :class:`InfeasibleError` if not."""
    prog = SosProgram(p.nvars, **prog_kw)
    prog.add_sos(p, name="p")
    return solve_program(prog, opts)
