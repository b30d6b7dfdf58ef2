"""Dense primal-dual interior-point solver for small semidefinite programs.

Standard form, with PSD blocks ``X_k`` and a block of free variables ``w``::

    minimize    sum_k <C_k, X_k> + c_free . w
    subject to  sum_k <A_ik, X_k> + (A_free w)_i = b_i     i = 1..m
                X_k PSD

Dual::

    maximize    b . y
    subject to  sum_i y_i A_ik + S_k = C_k,   A_free^T y = c_free,   S_k PSD

The method is the infeasible-start HKM path-following scheme with a
Mehrotra predictor-corrector. Free variables are kept as such: the Newton
system is the saddle-point system ``[[M, A_free], [A_free^T, 0]]`` where
``M_ij = tr(A_i X A_j S^-1)`` is the HKM Schur complement.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12


class SdpError(ValueError):
    pass


class Status(str, Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal-infeasible"
    DUAL_INFEASIBLE = "dual-infeasible"
    MAX_ITERS = "max-iters"
    NUMERICAL_FAILURE = "numerical-failure"

    def __str__(self) -> str:
        return self.value


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SdpProblem:
    """Standard-form SDP. Arrays are copied and made read-only.

    ``A[k]`` has shape ``(m, n_k, n_k)``; ``C[k]`` has shape ``(n_k, n_k)``;
    ``A_free`` has shape ``(m, n_free)``.
    """

    block_sizes: tuple[int, ...]
    A: tuple[np.ndarray, ...]
    C: tuple[np.ndarray, ...]
    b: np.ndarray
    A_free: np.ndarray
    c_free: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        b = _frozen(self.b).reshape(-1)
        m = b.shape[0]
        A = tuple(_frozen(a) for a in self.A)
        C = tuple(_frozen(c) for c in self.C)
        A_free = _frozen(self.A_free).reshape(m, -1) if m else _frozen(self.A_free)
        c_free = _frozen(self.c_free).reshape(-1)
        if len(A) != len(sizes) or len(C) != len(sizes):
            raise SdpError("one A and one C array per block required")
        for n, a, c in zip(sizes, A, C):
            if n <= 0:
                raise SdpError("PSD block sizes must be positive")
            if a.shape != (m, n, n) or c.shape != (n, n):
                raise SdpError(f"bad block shapes {a.shape}, {c.shape} for size {n}")
            if np.abs(a - a.transpose(0, 2, 1)).max(initial=0.0) > SYMMETRY_TOL:
                raise SdpError("constraint matrices must be symmetric")
            if np.abs(c - c.T).max(initial=0.0) > SYMMETRY_TOL:
                raise SdpError("objective matrices must be symmetric")
        if A_free.size == 0:
            A_free = _frozen(np.zeros((m, c_free.shape[0])))
        if A_free.shape != (m, c_free.shape[0]):
            raise SdpError(f"A_free shape {A_free.shape} inconsistent with c_free")
        object.__setattr__(self, "block_sizes", sizes)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "A_free", A_free)
        object.__setattr__(self, "c_free", c_free)

    @property
    def n_constraints(self) -> int:
        return self.b.shape[0]

    @property
    def n_free(self) -> int:
        return self.c_free.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SdpProblem):
            return NotImplemented
        return (
            self.block_sizes == other.block_sizes
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.A_free, other.A_free)
            and np.array_equal(self.c_free, other.c_free)
            and all(np.array_equal(x, y) for x, y in zip(self.A, other.A))
            and all(np.array_equal(x, y) for x, y in zip(self.C, other.C))
        )

    __hash__ = None

    # -- linear maps --------------------------------------------------------

    def apply_A(self, X, w) -> np.ndarray:
        out = self.A_free @ w if self.n_free else np.zeros(self.n_constraints)
        for a, x in zip(self.A, X):
            out = out + np.einsum("mij,ij->m", a, x)
        return out

    def apply_At(self, y) -> list[np.ndarray]:
        return [np.einsum("m,mij->ij", y, a) for a in self.A]

    def objective(self, X, w) -> float:
        val = float(self.c_free @ w) if self.n_free else 0.0
        for c, x in zip(self.C, X):
            val += float(np.sum(c * x))
        return val


@dataclass(frozen=True)
class Residuals:
    primal: float
    dual: float
    gap: float


@dataclass(frozen=True, eq=False)
class SdpSolution:
    status: Status
    X: tuple[np.ndarray, ...]
    x_free: np.ndarray
    y: np.ndarray
    S: tuple[np.ndarray, ...]
    residuals: Residuals
    primal_objective: float
    dual_objective: float
    iterations: int
    history: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iters: int = 200
    infeas_tol: float = 1e-8
    presolve_tol: float = 1e-10
    step_fraction: float = 0.98
    stall_iters: int = 25
    recenter: float = 0.3

    @classmethod
    def from_env(cls, **overrides) -> SolverOptions:
        """Defaults, with ``LTAC_SOLVER_TOL`` overriding ``gap_tol`` when set."""
        env = os.environ.get("LTAC_SOLVER_TOL")
        if env and "gap_tol" not in overrides:
            overrides["gap_tol"] = float(env)
        return cls(**overrides)


def residuals(p: SdpProblem, sol_or_X, y=None, S=None, x_free=None) -> Residuals:
    """Absolute residuals ``||A(X) - b||_inf``, ``||A^T y + S - C||_inf`` and
    the relative gap ``|<C,X> - b.y| / (1 + |b.y|)``.

    Accepts either an :class:`SdpSolution` or the raw ``(X, y, S, x_free)``.
    """
    if isinstance(sol_or_X, SdpSolution):
        X, y, S, x_free = sol_or_X.X, sol_or_X.y, sol_or_X.S, sol_or_X.x_free
    else:
        X = sol_or_X
    x_free = np.zeros(p.n_free) if x_free is None else np.asarray(x_free, float)
    y = np.zeros(p.n_constraints) if y is None else np.asarray(y, float)
    if S is None:
        S = [np.zeros_like(c) for c in p.C]
    if len(X) != len(p.block_sizes) or len(S) != len(p.block_sizes):
        raise SdpError("solution blocks do not match problem")
    rp = p.apply_A(X, x_free) - p.b
    primal = float(np.abs(rp).max(initial=0.0))
    dual = 0.0
    for aty, s, c in zip(p.apply_At(y), S, p.C):
        dual = max(dual, float(np.abs(aty + s - c).max(initial=0.0)))
    if p.n_free:
        dual = max(dual, float(np.abs(p.A_free.T @ y - p.c_free).max()))
    dobj = float(p.b @ y)
    gap = abs(p.objective(X, x_free) - dobj) / (1.0 + abs(dobj))
    return Residuals(primal, dual, gap)


# -- presolve ----------------------------------------------------------------


def _constraint_rows(p: SdpProblem) -> np.ndarray:
    cols = []
    for a, n in zip(p.A, p.block_sizes):
        iu = np.triu_indices(n)
        scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
        cols.append(a[:, iu[0], iu[1]] * scale)
    cols.append(p.A_free)
    return np.hstack(cols) if cols else np.zeros((p.n_constraints, 0))


def _presolve(p: SdpProblem, tol: float):
    """Drop linearly dependent equality rows (pivoted QR).

    Returns ``(keep, consistent)`` where ``keep`` are the retained row indices
    in ascending order; ``consistent`` is False when a dropped row's right-hand
    side contradicts the retained rows.
    """
    m = p.n_constraints
    if m == 0:
        return np.arange(0), True
    rows = _constraint_rows(p)
    norms = np.linalg.norm(rows, axis=1)
    nonzero = norms > 0
    if np.any(np.abs(p.b[~nonzero]) > tol):
        return np.flatnonzero(nonzero), False
    idx = np.flatnonzero(nonzero)
    if idx.size == 0:
        return idx, True
    scaled = rows[idx] / norms[idx, None]
    _, R, piv = sla.qr(scaled.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * diag[0])) if diag.size else 0
    keep = np.sort(idx[piv[:rank]])
    drop = np.setdiff1d(idx, keep)
    consistent = True
    if drop.size:
        lam, *_ = np.linalg.lstsq(rows[keep].T, rows[drop].T, rcond=None)
        mismatch = p.b[drop] - lam.T @ p.b[keep]
        scale = 1.0 + np.abs(p.b).max()
        consistent = bool(np.abs(mismatch).max() <= 1e3 * tol * scale)
    return keep, consistent


def _subproblem(p: SdpProblem, keep: np.ndarray) -> SdpProblem:
    return SdpProblem(
        p.block_sizes,
        tuple(a[keep] for a in p.A),
        p.C,
        p.b[keep],
        p.A_free[keep],
        p.c_free,
    )


# -- core iteration ----------------------------------------------------------


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha (capped at a big number) with X + alpha dX PSD."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Linv = sla.solve_triangular(L, np.eye(X.shape[0]), lower=True)
    W = Linv @ dX @ Linv.T
    lam = np.linalg.eigvalsh(_sym(W))[0]
    if lam >= 0:
        return 1e30
    return -1.0 / lam


class _Kkt:
    """Factorization of the saddle-point Newton matrix."""

    def __init__(self, M: np.ndarray, Af: np.ndarray):
        self.m = M.shape[0]
        self.nf = Af.shape[1]
        K = M
        if self.nf:
            K = np.block([[M, Af], [Af.T, np.zeros((self.nf, self.nf))]])
        self.lu = sla.lu_factor(K, check_finite=True)
        self.K = K

    def solve(self, h: np.ndarray, rf: np.ndarray):
        rhs = np.concatenate([h, rf]) if self.nf else h
        sol = sla.lu_solve(self.lu, rhs)
        # one step of iterative refinement
        sol = sol + sla.lu_solve(self.lu, rhs - self.K @ sol)
        return sol[: self.m], sol[self.m :]


def _initial_point(p: SdpProblem):
    X, S = [], []
    for n, a, c in zip(p.block_sizes, p.A, p.C):
        anorm = np.sqrt(np.einsum("mij,mij->m", a, a)) if p.n_constraints else np.zeros(0)
        xi = max(10.0, np.sqrt(n))
        if anorm.size:
            xi = max(xi, np.sqrt(n) * float(np.max((1.0 + np.abs(p.b)) / (1.0 + anorm))))
        eta = max(10.0, np.sqrt(n), float(np.linalg.norm(c)), float(anorm.max(initial=0.0)))
        X.append(xi * np.eye(n))
        S.append(eta * np.eye(n))
    return X, S


def solve(p: SdpProblem, opts: SolverOptions | None = None, **kwargs) -> SdpSolution:
    """Solve ``p``; see the module docstring for the form.

    Status ``optimal`` means the absolute primal and dual residuals are below
    ``feas_tol`` and the relative gap is below ``gap_tol``. Infeasibility is
    declared from approximate Farkas rays: a dual iterate with ``b.y > 0``
    whose normalized dual residual is below ``infeas_tol`` (primal
    infeasible), or the symmetric test on primal iterates (dual infeasible).
    """
    opts = opts or SolverOptions.from_env(**kwargs)
    keep, consistent = _presolve(p, opts.presolve_tol)
    m_full = p.n_constraints
    if not consistent:
        return _trivial_infeasible(p)
    q = _subproblem(p, keep) if keep.size != m_full else p
    sol = _solve_core(q, opts)

    y = np.zeros(m_full)
    y[keep] = sol["y"]
    X, S, w = sol["X"], sol["S"], sol["w"]
    res = residuals(p, X, y, S, w)
    return SdpSolution(
        status=sol["status"],
        X=tuple(X),
        x_free=w,
        y=y,
        S=tuple(S),
        residuals=res,
        primal_objective=p.objective(X, w),
        dual_objective=float(p.b @ y),
        iterations=sol["iterations"],
        history=sol["history"],
    )


def _trivial_infeasible(p: SdpProblem) -> SdpSolution:
    X = tuple(np.zeros((n, n)) for n in p.block_sizes)
    S = tuple(np.zeros((n, n)) for n in p.block_sizes)
    w = np.zeros(p.n_free)
    y = np.zeros(p.n_constraints)
    return SdpSolution(
        Status.PRIMAL_INFEASIBLE, X, w, y, S, residuals(p, X, y, S, w),
        p.objective(X, w), 0.0, 0,
    )


def _solve_core(p: SdpProblem, opts: SolverOptions) -> dict:
    m, nf = p.n_constraints, p.n_free
    N = sum(p.block_sizes)
    X, S = _initial_point(p)
    y = np.zeros(m)
    w = np.zeros(nf)
    Af = p.A_free
    bnorm = 1.0 + float(np.abs(p.b).max(initial=0.0))
    cnorm = 1.0 + max([float(np.abs(c).max(initial=0.0)) for c in p.C] + [float(np.abs(p.c_free).max(initial=0.0))])
    history = []
    status = Status.MAX_ITERS
    stall = 0
    best_merit = np.inf
    ap_last = ad_last = 0.0
    best = None  # (error, X, S, y, w) of the most accurate iterate so far
    it = 0

    def finish(st):
        out = {"status": st, "X": [x.copy() for x in X], "S": [s.copy() for s in S],
               "y": y.copy(), "w": w.copy(), "iterations": it, "history": history}
        # a stalled run reports its most accurate iterate rather than the last one
        if st in (Status.MAX_ITERS, Status.NUMERICAL_FAILURE) and best is not None:
            out.update(X=best[1], S=best[2], y=best[3], w=best[4])
        return out

    for it in range(opts.max_iters + 1):
        AtY = p.apply_At(y)
        Rd = [c - s - aty for c, s, aty in zip(p.C, S, AtY)]
        rf = p.c_free - Af.T @ y if nf else np.zeros(0)
        AX = p.apply_A(X, w)
        rp = p.b - AX
        pobj = p.objective(X, w)
        dobj = float(p.b @ y)
        pres = float(np.abs(rp).max(initial=0.0))
        dres = max([float(np.abs(r).max(initial=0.0)) for r in Rd] + [float(np.abs(rf).max(initial=0.0))])
        gap = abs(pobj - dobj) / (1.0 + abs(dobj))
        mu = sum(float(np.sum(x * s)) for x, s in zip(X, S)) / max(N, 1)
        history.append({"iter": it, "pobj": pobj, "dobj": dobj, "pres": pres, "dres": dres, "gap": gap, "mu": mu,
                        "ap": ap_last, "ad": ad_last})
        log.debug("it %3d pobj %+.8e dobj %+.8e pres %.1e dres %.1e gap %.1e mu %.1e",
                  it, pobj, dobj, pres, dres, gap, mu)

        if pres <= opts.feas_tol and dres <= opts.feas_tol and gap <= opts.gap_tol:
            return finish(Status.OPTIMAL)
        err = max(pres / bnorm, dres / cnorm, gap)
        if np.isfinite(err) and (best is None or err < best[0]):
            best = (err, [x.copy() for x in X], [s.copy() for s in S], y.copy(), w.copy())

        # approximate Farkas rays
        if dobj > 0:
            ray = max([float(np.abs(c - r).max(initial=0.0)) for c, r in zip(p.C, Rd)]
                      + [float(np.abs(p.c_free - rf).max(initial=0.0))])
            if ray / dobj <= opts.infeas_tol or (dobj > 1e10 * cnorm and dres <= opts.feas_tol * max(1.0, dobj / bnorm)):
                return finish(Status.PRIMAL_INFEASIBLE)
        if pobj < 0:
            ray = float(np.abs(AX).max(initial=0.0))
            if ray / -pobj <= opts.infeas_tol:
                return finish(Status.DUAL_INFEASIBLE)

        if it == opts.max_iters:
            break

        merit = mu + pres / bnorm + dres / cnorm
        if merit < best_merit * (1 - 1e-6):
            best_merit = merit
            stall = 0
        else:
            stall += 1
            if stall >= opts.stall_iters:
                return finish(_fallback_status(p, X, S, y, w, Rd, rf, AX))

        try:
            Sinv = []
            for s in S:
                Ls = np.linalg.cholesky(s)
                Li = sla.solve_triangular(Ls, np.eye(s.shape[0]), lower=True)
                Sinv.append(Li.T @ Li)
            M = np.zeros((m, m))
            for a, x, si in zip(p.A, X, Sinv):
                G = np.matmul(np.matmul(x, a), si)  # X A_j S^-1
                M += np.einsum("iab,jba->ij", a, G)
            M = _sym(M)
            kkt = _Kkt(M, Af)
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.debug("factorization failed: %s", exc)
            return finish(_fallback_status(p, X, S, y, w, Rd, rf, AX))

        def direction(sigma_mu, corr):
            Z = []
            for x, si, rd, k in zip(X, Sinv, Rd, range(len(X))):
                z = sigma_mu * si - x - x @ rd @ si
                if corr is not None:
                    z = z - corr[0][k] @ corr[1][k] @ si
                Z.append(_sym(z))
            h = rp - p.apply_A(Z, np.zeros(nf))
            dy, dw = kkt.solve(h, rf)
            AtdY = p.apply_At(dy)
            dS = [rd - atdy for rd, atdy in zip(Rd, AtdY)]
            dX = [_sym(z + x @ atdy @ si) for z, x, atdy, si in zip(Z, X, AtdY, Sinv)]
            return dX, dS, dy, dw

        if not np.all(np.isfinite(M)):
            return finish(Status.NUMERICAL_FAILURE)

        # predictor
        dXa, dSa, dya, dwa = direction(0.0, None)
        ap = min(1.0, min((_max_step(x, d) for x, d in zip(X, dXa)), default=1.0))
        ad = min(1.0, min((_max_step(s, d) for s, d in zip(S, dSa)), default=1.0))
        mu_aff = sum(float(np.sum((x + ap * dx) * (s + ad * ds)))
                     for x, dx, s, ds in zip(X, dXa, S, dSa)) / max(N, 1)
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        if min(ap_last, ad_last) < 0.2 and it > 0:
            # short steps mean poor centrality: lean towards the central path
            sigma = max(sigma, opts.recenter)

        # corrector
        dX, dS, dy, dw = direction(sigma * mu, (dXa, dSa))
        gamma = opts.step_fraction
        ap = min(1.0, gamma * min((_max_step(x, d) for x, d in zip(X, dX)), default=1e30))
        ad = min(1.0, gamma * min((_max_step(s, d) for s, d in zip(S, dS)), default=1e30))
        if ap < 1e-12 and ad < 1e-12:
            return finish(_fallback_status(p, X, S, y, w, Rd, rf, AX))

        ap_last, ad_last = ap, ad
        X = [x + ap * d for x, d in zip(X, dX)]
        w = w + ap * dw
        S = [s + ad * d for s, d in zip(S, dS)]
        y = y + ad * dy

    return finish(status)


def _fallback_status(p, X, S, y, w, Rd, rf, AX) -> Status:
    """Classify a stalled run using looser ray tests."""
    dobj = float(p.b @ y)
    pobj = p.objective(X, w)
    loose = 1e-6
    if dobj > 0:
        ray = max([float(np.abs(c - r).max(initial=0.0)) for c, r in zip(p.C, Rd)]
                  + [float(np.abs(p.c_free - rf).max(initial=0.0))])
        if ray / dobj <= loose:
            return Status.PRIMAL_INFEASIBLE
    if pobj < 0 and float(np.abs(AX).max(initial=0.0)) / -pobj <= loose:
        return Status.DUAL_INFEASIBLE
    return Status.NUMERICAL_FAILURE


def polish_primal(p: SdpProblem, X, w) -> tuple[list[np.ndarray], np.ndarray]:
    """Minimum-norm correction of ``(X, w)`` onto ``A(X) + A_free w = b``.

    The correction is measured in the metric of ``X`` itself:
    ``dX = R D R^T`` with ``X = R R^T``, so ``X + dX`` stays PSD while
    ``||D|| < 1``. Callers re-check eigenvalues afterwards.
    """
    roots = []
    for x in X:
        lam, Q = np.linalg.eigh(_sym(np.asarray(x)))
        roots.append(Q * np.sqrt(np.clip(lam, 0.0, None)))
    scaled = SdpProblem(
        p.block_sizes,
        tuple(np.einsum("ab,kbc,cd->kad", R.T, a, R) for R, a in zip(roots, p.A)),
        p.C, p.b, p.A_free, p.c_free,
    )
    rows = _constraint_rows(scaled)
    r = p.b - p.apply_A(X, w)
    dv, *_ = np.linalg.lstsq(rows, r, rcond=1e-12)
    out, k = [], 0
    for x, R, n in zip(X, roots, p.block_sizes):
        iu = np.triu_indices(n)
        cnt = iu[0].size
        seg = dv[k : k + cnt]
        k += cnt
        d = np.zeros((n, n))
        d[iu] = np.where(iu[0] == iu[1], seg, seg / np.sqrt(2.0))
        d = d + np.triu(d, 1).T
        out.append(_sym(np.asarray(x) + R @ d @ R.T))
    return out, np.asarray(w) + dv[k:]


def min_eigenvalues(blocks) -> list[float]:
    return [float(np.linalg.eigvalsh(_sym(np.asarray(b)))[0]) for b in blocks]
