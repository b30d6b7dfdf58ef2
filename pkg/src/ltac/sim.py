"""Closed-loop integration and long-time averages.

The control is ``u = eps * u1(x)``. With a ``H u'`` term in the model the
state derivative is defined implicitly; it is eliminated exactly by solving
``(I - eps H(x) J(x)) x' = f(x) + eps G(x) u1(x)`` with ``J`` the Jacobian of
``u1``, at every Runge-Kutta stage.

Polynomials are flattened into exponent/coefficient arrays and the whole RK4
loop runs in a numba kernel.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .poly import Polynomial, PolyVector
from .system import PolySystem

DIVERGENCE_NORM = 1e6
COND_LIMIT = 1e12

# kernel exit codes
OK, DIVERGED, SINGULAR = 0, 1, 2


class SimulationError(RuntimeError):
    pass


@dataclass
class Trajectory:
    """Uniform-grid trajectory. ``phi`` is ``Phi0 + u.Psi.u / eps``."""

    t: np.ndarray
    x: np.ndarray  # (steps, n)
    u: np.ndarray  # (steps, m)
    phi: np.ndarray
    phi0: np.ndarray
    eps: float
    diverged: bool = False
    singular: bool = False
    message: str = ""

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n, m = self.x.shape[1], self.u.shape[1]
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)] + ["phi"])
        for k in range(len(self.t)):
            w.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.x[k]]
                       + [repr(float(v)) for v in self.u[k]] + [repr(float(self.phi[k]))])
        return buf.getvalue()


# -- polynomial flattening ----------------------------------------------------------


class _Compiled:
    """Concatenated term arrays for a list of polynomials in ``n`` variables."""

    def __init__(self, polys: list[Polynomial], n: int):
        exps, coefs, starts = [], [], [0]
        for p in polys:
            for mono, c in p.items():
                exps.append(mono[:n] if len(mono) >= n else mono + (0,) * (n - len(mono)))
                coefs.append(c)
            starts.append(len(coefs))
        self.exps = np.array(exps, dtype=np.int64).reshape(-1, n)
        self.coefs = np.array(coefs, dtype=float)
        self.starts = np.array(starts, dtype=np.int64)
        self.maxdeg = int(self.exps.max(initial=0))


@numba.njit(cache=True, nogil=True)
def _eval_all(x, exps, coefs, starts, maxdeg, out):
    n = x.shape[0]
    pw = np.empty((n, maxdeg + 1))
    for i in range(n):
        pw[i, 0] = 1.0
        for d in range(1, maxdeg + 1):
            pw[i, d] = pw[i, d - 1] * x[i]
    for p in range(starts.shape[0] - 1):
        s = 0.0
        for t in range(starts[p], starts[p + 1]):
            term = coefs[t]
            for i in range(n):
                e = exps[t, i]
                if e:
                    term *= pw[i, e]
            s += term
        out[p] = s


@numba.njit(cache=True, nogil=True)
def _rhs(x, eps, n, m, has_h, exps, coefs, starts, maxdeg, vals, dx):
    """Fills ``dx``; returns the condition number of the implicit system (1 if none)."""
    _eval_all(x, exps, coefs, starts, maxdeg, vals)
    # layout: f(n) G(n*m) H(n*m) u1(m) J(m*n) phi0(1) psi(m*m)
    oG = n
    oH = oG + n * m
    oU = oH + n * m
    oJ = oU + m
    for i in range(n):
        s = vals[i]
        for j in range(m):
            s += eps * vals[oG + i * m + j] * vals[oU + j]
        dx[i] = s
    if not has_h or eps == 0.0:
        return 1.0
    M = np.eye(n)
    for i in range(n):
        for k in range(n):
            s = 0.0
            for j in range(m):
                s += vals[oH + i * m + j] * vals[oJ + j * n + k]
            M[i, k] -= eps * s
    c = np.linalg.cond(M)
    if not c < 1e12:
        return c
    sol = np.linalg.solve(M, dx.copy())
    for i in range(n):
        dx[i] = sol[i]
    return c


@numba.njit(cache=True, nogil=True)
def _record(x, eps, n, m, exps, coefs, starts, maxdeg, vals, k, xs, us, phis, phi0s):
    _eval_all(x, exps, coefs, starts, maxdeg, vals)
    oU = n + 2 * n * m
    oP = oU + m + m * n
    oS = oP + 1
    for i in range(n):
        xs[k, i] = x[i]
    pen = 0.0
    for a in range(m):
        us[k, a] = eps * vals[oU + a]
        for b in range(m):
            pen += vals[oU + a] * vals[oS + a * m + b] * vals[oU + b]
    phi0s[k] = vals[oP]
    # u.Psi.u / eps with u = eps*u1
    phis[k] = vals[oP] + eps * pen


@numba.njit(cache=True, nogil=True)
def _rk4(x0, eps, dt, steps, n, m, has_h, exps, coefs, starts, maxdeg, xs, us, phis, phi0s):
    """Returns (exit code, number of recorded points, last condition number)."""
    nv = starts.shape[0] - 1
    vals = np.empty(nv)
    x = x0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    _record(x, eps, n, m, exps, coefs, starts, maxdeg, vals, 0, xs, us, phis, phi0s)
    for step in range(1, steps + 1):
        c = _rhs(x, eps, n, m, has_h, exps, coefs, starts, maxdeg, vals, k1)
        if not c < 1e12:
            return 2, step, c
        for i in range(n):
            tmp[i] = x[i] + 0.5 * dt * k1[i]
        c = _rhs(tmp, eps, n, m, has_h, exps, coefs, starts, maxdeg, vals, k2)
        if not c < 1e12:
            return 2, step, c
        for i in range(n):
            tmp[i] = x[i] + 0.5 * dt * k2[i]
        c = _rhs(tmp, eps, n, m, has_h, exps, coefs, starts, maxdeg, vals, k3)
        if not c < 1e12:
            return 2, step, c
        for i in range(n):
            tmp[i] = x[i] + dt * k3[i]
        c = _rhs(tmp, eps, n, m, has_h, exps, coefs, starts, maxdeg, vals, k4)
        if not c < 1e12:
            return 2, step, c
        norm2 = 0.0
        for i in range(n):
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            norm2 += x[i] * x[i]
        if not norm2 <= 1e12:  # ||x|| > 1e6 or non-finite
            return 1, step, 1.0
        _record(x, eps, n, m, exps, coefs, starts, maxdeg, vals, step, xs, us, phis, phi0s)
    return 0, steps + 1, 1.0


# -- public API ---------------------------------------------------------------------


@dataclass
class ClosedLoop:
    """A system with a fixed feedback ``u1``, compiled for the kernel."""

    sys: PolySystem
    u1: PolyVector | None
    _c: _Compiled = field(init=False, repr=False)

    def __post_init__(self):
        sys, n, m = self.sys, self.sys.n, self.sys.m
        zero = Polynomial.zero(n)
        u1 = list(self.u1) if self.u1 is not None else [zero] * m
        if len(u1) != m:
            raise ValueError(f"controller has {len(u1)} components, system has m={m}")
        u1 = [p.restrict(n) if p.nvars > n else p for p in u1]
        if any(p.nvars != n for p in u1):
            raise ValueError("controller must be a polynomial in the state variables")
        G = [sys.G[i, j] for i in range(n) for j in range(m)]
        H = [sys.H[i, j] if sys.H is not None else zero for i in range(n) for j in range(m)]
        J = [u1[j].derivative(k) for j in range(m) for k in range(n)]
        psi = [sys.psi[a, b] for a in range(m) for b in range(m)]
        self._c = _Compiled(list(sys.f) + G + H + u1 + J + [sys.phi0] + psi, n)
        self.has_h = sys.H is not None and any(not p.is_zero() for p in J)

    def rhs(self, x, eps: float) -> np.ndarray:
        """``x'`` at a single point. Raises on a singular implicit system."""
        c = self._c
        x = np.asarray(x, dtype=float)
        dx = np.empty(self.sys.n)
        vals = np.empty(len(c.starts) - 1)
        cond = _rhs(x, float(eps), self.sys.n, self.sys.m, self.has_h, c.exps, c.coefs, c.starts,
                    c.maxdeg, vals, dx)
        if not cond < COND_LIMIT:
            raise SimulationError(f"implicit system singular at x={x.tolist()} (condition {cond:.3g})")
        return dx

    def integrate(self, eps: float, x0, T: float, dt: float = 1e-3) -> Trajectory:
        if not dt > 0:
            raise ValueError("dt must be positive")
        if not T > dt:
            raise ValueError("T must exceed dt")
        n, m = self.sys.n, self.sys.m
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape != (n,) or not np.all(np.isfinite(x0)):
            raise ValueError(f"x0 must be a finite {n}-vector")
        steps = int(round(T / dt))
        xs = np.empty((steps + 1, n))
        us = np.empty((steps + 1, m))
        phis = np.empty(steps + 1)
        phi0s = np.empty(steps + 1)
        c = self._c
        code, count, cond = _rk4(x0, float(eps), float(dt), steps, n, m, self.has_h, c.exps, c.coefs,
                                 c.starts, c.maxdeg, xs, us, phis, phi0s)
        msg = ""
        if code == DIVERGED:
            msg = f"diverged (|x| > {DIVERGENCE_NORM:g}) at t={count * dt:g}"
        elif code == SINGULAR:
            msg = f"implicit system singular (condition {cond:.3g}) at t={(count - 1) * dt:g}"
        t = np.arange(count) * dt
        return Trajectory(t, xs[:count], us[:count], phis[:count], phi0s[:count], float(eps),
                          diverged=code == DIVERGED, singular=code == SINGULAR, message=msg)


def closed_loop_rhs(sys: PolySystem, u1: PolyVector | None, eps: float, x) -> np.ndarray:
    return ClosedLoop(sys, u1).rhs(x, eps)


def integrate(sys: PolySystem, u1: PolyVector | None, eps: float, x0, T: float,
              dt: float = 1e-3) -> Trajectory:
    """Classical RK4 on the closed loop. Divergence or a singular implicit
    system truncates the trajectory and sets a flag instead of raising."""
    return ClosedLoop(sys, u1).integrate(eps, x0, T, dt)


def settle(sys: PolySystem, x0, T: float = 100.0, dt: float = 1e-3) -> np.ndarray:
    """Final state of an uncontrolled run, used to start on the attractor."""
    traj = integrate(sys, None, 0.0, x0, T, dt)
    if traj.diverged or traj.singular:
        raise SimulationError(f"settling run failed: {traj.message}")
    return traj.x[-1].copy()


@dataclass
class Averages:
    phi_bar: float
    phi0_bar: float
    penalty_bar: float
    convergence_estimate: float


def _trapz_mean(y: np.ndarray, dt: float) -> float:
    if len(y) < 2:
        return float(y[0])
    return float(np.trapezoid(y, dx=dt) / (dt * (len(y) - 1)))


def long_time_average(traj: Trajectory, discard_fraction: float = 0.5) -> Averages:
    """Trapezoidal averages over the final ``1 - discard_fraction`` of the run.

    ``convergence_estimate`` is the gap between the average of ``phi`` over
    the last half of the retained window and over the whole window.
    """
    if traj.diverged or traj.singular:
        raise SimulationError(f"cannot average a truncated trajectory: {traj.message}")
    if not 0 <= discard_fraction < 1:
        raise ValueError("discard_fraction must lie in [0, 1)")
    dt = traj.dt
    start = int(round(discard_fraction * (len(traj.t) - 1)))
    phi = traj.phi[start:]
    phi0 = traj.phi0[start:]
    full = _trapz_mean(phi, dt)
    half = _trapz_mean(phi[(len(phi) - 1) // 2:], dt)
    phi0_bar = _trapz_mean(phi0, dt)
    pen = _trapz_mean(phi - phi0, dt)
    return Averages(full, phi0_bar, pen, abs(half - full))


# -- epsilon sweeps -----------------------------------------------------------------


@dataclass
class SweepResult:
    eps: np.ndarray
    phi_bar: np.ndarray
    phi0_bar: np.ndarray
    bound_line: np.ndarray
    diverged: np.ndarray
    convergence: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "phi_bar", "phi0_bar", "bound_line", "diverged"])
        for row in zip(self.eps, self.phi_bar, self.phi0_bar, self.bound_line, self.diverged):
            e, p, p0, b, d = row
            w.writerow([repr(float(e)), repr(float(p)), repr(float(p0)), repr(float(b)), int(bool(d))])
        return buf.getvalue()

    def minimum(self) -> tuple[float, float]:
        """Grid point with the smallest finite ``phi_bar``."""
        ok = ~self.diverged & np.isfinite(self.phi_bar)
        if not ok.any():
            raise SimulationError("every run diverged")
        k = np.flatnonzero(ok)[np.argmin(self.phi_bar[ok])]
        return float(self.eps[k]), float(self.phi_bar[k])


def epsilon_sweep(sys: PolySystem, synthesis, eps_grid, x0, T: float, dt: float = 1e-3,
                  discard_fraction: float = 0.5, jobs: int = 1) -> SweepResult:
    """One independent closed-loop run per ``eps``. ``synthesis`` supplies
    ``u1`` and the line ``C0 + eps*C1`` (a :class:`SynthesisResult`)."""
    grid = np.asarray(eps_grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("eps grid must be nonnegative and strictly ascending")
    loop = ClosedLoop(sys, synthesis.u1)

    def run(eps):
        traj = loop.integrate(eps, x0, T, dt)
        if traj.diverged or traj.singular:
            return np.nan, np.nan, True, np.nan
        a = long_time_average(traj, discard_fraction)
        return a.phi_bar, a.phi0_bar, False, a.convergence_estimate

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run, grid))
    else:
        rows = [run(e) for e in grid]
    phi, phi0, div, conv = (np.array(col) for col in zip(*rows))
    line = np.array([synthesis.bound_line(e) for e in grid])
    return SweepResult(grid, phi.astype(float), phi0.astype(float), line, div.astype(bool), conv.astype(float))
