"""Independent SDP oracle: the same standard-form problem solved through cvxpy."""

from __future__ import annotations

import numpy as np

try:
    import cvxpy as cp
except ImportError:  # pragma: no cover
    cp = None


def solve_with_cvxpy(p, solver: str | None = None):
    """Returns ``(status, objective)`` for ``min <C,X> + c_f.w`` s.t. ``A(X) + A_f w = b``."""
    Xs = [cp.Variable((n, n), PSD=True) for n in p.block_sizes]
    w = cp.Variable(p.n_free) if p.n_free else None
    lhs = []
    for i in range(p.n_constraints):
        expr = 0
        for X, A in zip(Xs, p.A):
            if np.any(A[i]):
                expr = expr + cp.trace(A[i] @ X)
        if w is not None and np.any(p.A_free[i]):
            expr = expr + p.A_free[i] @ w
        lhs.append(expr == p.b[i])
    obj = sum(cp.trace(C @ X) for X, C in zip(Xs, p.C) if np.any(C))
    if w is not None and np.any(p.c_free):
        obj = obj + p.c_free @ w
    prob = cp.Problem(cp.Minimize(obj if not isinstance(obj, int) else 0), lhs)
    prob.solve(solver=solver or "CLARABEL")
    return prob.status, prob.value
