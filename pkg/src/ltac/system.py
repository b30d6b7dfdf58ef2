"""Controlled polynomial systems and the ``.sys`` text format.

A system is ``x' = f(x) + G(x) u + H(x) u'`` with cost
``Phi0(x) + u^T Psi(x) u / eps``. File layout::

    # comments start with '#'
    vars 1 1          # state dimension n, control dimension m
    f:
      x1 - x1^3       # n lines
    G:
      1               # n lines of m comma-separated entries
    H:                # optional, default zero
      0
    phi0: x1^2        # value may follow the colon or sit on the next line
    psi:              # optional m x m, default identity
      1
    ball: beta 50     # optional; ball {x : x.x <= 2*beta}
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .poly import (
    PolyMatrix,
    Polynomial,
    PolynomialError,
    PolyVector,
    format_polynomial,
    parse_polynomial,
)


class SystemFileError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)
        self.line = line
        self.column = column


@dataclass(frozen=True, eq=False)
class PolySystem:
    n: int
    m: int
    f: PolyVector
    G: PolyMatrix
    phi0: Polynomial
    psi: PolyMatrix
    H: PolyMatrix | None = None
    beta: float | None = None
    name: str = ""

    def __post_init__(self):
        n, m = self.n, self.m
        if len(self.f) != n or any(p.nvars != n for p in self.f):
            raise ValueError(f"f must have {n} entries in {n} variables")
        if m and self.G.shape != (n, m):
            raise ValueError(f"G must be {n}x{m}, got {self.G.shape}")
        if self.phi0.nvars != n:
            raise ValueError("phi0 must be a polynomial in the state variables")
        H = self.H
        if H is None or (m and H.is_zero()):
            H = None
        elif H.shape != (n, m):
            raise ValueError(f"H must be {n}x{m}, got {H.shape}")
        object.__setattr__(self, "H", H)
        if m:
            if self.psi.shape != (m, m):
                raise ValueError(f"psi must be {m}x{m}")
            if not self.psi.is_symmetric():
                raise ValueError("psi must be symmetric")
            psi0 = self.psi.evaluate(np.zeros(n))
            if np.linalg.eigvalsh(psi0)[0] <= 0:
                raise ValueError("psi must be positive definite at the origin")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("ball beta must be positive")

    @classmethod
    def autonomous(cls, f: PolyVector, phi0: Polynomial, beta: float | None = None, name: str = "") -> PolySystem:
        n = len(f)
        return cls(n, 0, f, PolyMatrix([[] for _ in range(n)]), phi0, PolyMatrix([]), None, beta, name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolySystem):
            return NotImplemented
        return (
            self.n == other.n and self.m == other.m and self.f == other.f
            and self.G == other.G and self.phi0 == other.phi0 and self.psi == other.psi
            and self.H == other.H and self.beta == other.beta
        )

    __hash__ = None

    @property
    def has_H(self) -> bool:
        return self.H is not None

    @property
    def ball_radius_sq(self) -> float | None:
        """``2*beta``: the ball is ``{x : x.x <= 2*beta}``."""
        return None if self.beta is None else 2.0 * self.beta

    def with_beta(self, beta: float | None) -> PolySystem:
        return PolySystem(self.n, self.m, self.f, self.G, self.phi0, self.psi, self.H, beta, self.name)

    def uncontrolled(self) -> PolySystem:
        return PolySystem.autonomous(self.f, self.phi0, self.beta, self.name)


# -- file format ----------------------------------------------------------------

_SECTIONS = ("f", "G", "H", "phi0", "psi", "ball")


def _parse_poly(text: str, n: int, lineno: int, col0: int) -> Polynomial:
    try:
        return parse_polynomial(text, n)
    except PolynomialError as exc:
        raise SystemFileError(str(exc), lineno, col0) from exc


def parse_system(text: str, name: str = "") -> PolySystem:
    """Parse the ``.sys`` format; errors carry line and column numbers."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].rstrip()
        if body.strip():
            lines.append((lineno, body))
    if not lines:
        raise SystemFileError("empty system file")
    lineno, first = lines[0]
    parts = first.split()
    if len(parts) != 3 or parts[0] != "vars":
        raise SystemFileError("first line must be 'vars <n> <m>'", lineno, 1)
    try:
        n, m = int(parts[1]), int(parts[2])
    except ValueError:
        raise SystemFileError("vars expects two integers", lineno, 1) from None
    if n < 1 or m < 0:
        raise SystemFileError("need n >= 1 and m >= 0", lineno, 1)

    sections: dict[str, list[tuple[int, int, str]]] = {}
    current = None
    for lineno, body in lines[1:]:
        stripped = body.strip()
        head = stripped.split(":", 1)[0].strip()
        if ":" in stripped and head in _SECTIONS:
            if head in sections:
                raise SystemFileError(f"duplicate section {head!r}", lineno, 1)
            current = head
            sections[current] = []
            rest = stripped.split(":", 1)[1]
            if rest.strip():
                col = body.index(":") + 2 + (len(rest) - len(rest.lstrip()))
                sections[current].append((lineno, col, rest.strip()))
            continue
        if current is None:
            raise SystemFileError(f"expected a section header, got {stripped!r}", lineno, 1)
        col = len(body) - len(body.lstrip()) + 1
        sections[current].append((lineno, col, stripped))

    for req in ("f", "phi0"):
        if req not in sections:
            raise SystemFileError(f"missing section {req!r}")
    if m and "G" not in sections:
        raise SystemFileError("missing section 'G'")

    def vector(key, count):
        rows = sections[key]
        if len(rows) != count:
            where = rows[-1][0] if rows else None
            raise SystemFileError(f"section {key!r} needs {count} lines, got {len(rows)}", where)
        return [_parse_poly(t, n, ln, c) for ln, c, t in rows]

    def matrix(key, nrows, ncols):
        rows = sections[key]
        if len(rows) != nrows:
            where = rows[-1][0] if rows else None
            raise SystemFileError(f"section {key!r} needs {nrows} rows, got {len(rows)}", where)
        out = []
        for ln, c, t in rows:
            cells = t.split(",")
            if len(cells) != ncols:
                raise SystemFileError(f"section {key!r} needs {ncols} entries per row", ln, c)
            row, offset = [], c
            for cell in cells:
                row.append(_parse_poly(cell.strip(), n, ln, offset))
                offset += len(cell) + 1
            out.append(row)
        return PolyMatrix(out)

    f = PolyVector(vector("f", n))
    phi0 = vector("phi0", 1)[0]
    if m:
        G = matrix("G", n, m)
        H = matrix("H", n, m) if "H" in sections else None
        psi = matrix("psi", m, m) if "psi" in sections else PolyMatrix.from_constant(np.eye(m), n)
    else:
        G, H, psi = PolyMatrix([[] for _ in range(n)]), None, PolyMatrix([])
    beta = None
    if "ball" in sections:
        rows = sections["ball"]
        ln, c, t = rows[0]
        toks = t.split()
        if len(rows) != 1 or len(toks) != 2 or toks[0] != "beta":
            raise SystemFileError("ball section must read 'beta <value>'", ln, c)
        try:
            beta = float(toks[1])
        except ValueError:
            raise SystemFileError(f"bad beta value {toks[1]!r}", ln, c) from None
    try:
        return PolySystem(n, m, f, G, phi0, psi, H, beta, name)
    except ValueError as exc:
        raise SystemFileError(str(exc)) from exc


def read_system(path) -> PolySystem:
    from pathlib import Path

    path = Path(path)
    return parse_system(path.read_text(), name=path.stem)


def format_system(sys: PolySystem) -> str:
    """Inverse of :func:`parse_system` (coefficients round-trip exactly)."""
    out = [f"vars {sys.n} {sys.m}", "f:"]
    out += [f"  {format_polynomial(p)}" for p in sys.f]
    if sys.m:
        out.append("G:")
        out += ["  " + ", ".join(format_polynomial(p) for p in row) for row in sys.G.rows]
        if sys.H is not None:
            out.append("H:")
            out += ["  " + ", ".join(format_polynomial(p) for p in row) for row in sys.H.rows]
    out.append(f"phi0: {format_polynomial(sys.phi0)}")
    if sys.m:
        out.append("psi:")
        out += ["  " + ", ".join(format_polynomial(p) for p in row) for row in sys.psi.rows]
    if sys.beta is not None:
        out.append(f"ball: beta {sys.beta!r}")
    return "\n".join(out) + "\n"


def write_system(sys: PolySystem, path) -> None:
    from pathlib import Path

    Path(path).write_text(format_system(sys))
