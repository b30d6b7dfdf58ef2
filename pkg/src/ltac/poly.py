"""Sparse multivariate polynomials with real coefficients.

Monomials are tuples of nonnegative exponents. Terms are kept in graded
lexicographic order (total degree first, then lexicographic with x1 > x2 > ...),
so iteration, formatting and everything compiled from a polynomial is
deterministic.
"""

from __future__ import annotations

import math
import re
from collections.abc import Iterable, Iterator, Mapping, Sequence
from typing import Union

import numpy as np

Monomial = tuple[int, ...]
Number = Union[int, float]


class PolynomialError(ValueError):
    pass


def grlex_key(m: Monomial) -> tuple:
    """Sort key for ascending graded-lex order ([1, x1, x2, x1^2, x1*x2, ...])."""
    return (sum(m), tuple(-e for e in m))


def monomial_degree(m: Monomial) -> int:
    return sum(m)


def _mul_mono(a: Monomial, b: Monomial) -> Monomial:
    return tuple(i + j for i, j in zip(a, b))


class Polynomial:
    """Immutable sparse polynomial in ``nvars`` variables.

    Zero coefficients are never stored. Arithmetic with plain numbers is
    supported on either side.
    """

    __slots__ = ("nvars", "_terms", "_hash")

    def __init__(self, nvars: int, terms: Mapping[Monomial, Number] | None = None):
        if nvars < 0:
            raise PolynomialError("nvars must be nonnegative")
        self.nvars = nvars
        clean: dict[Monomial, float] = {}
        for mono, coef in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != nvars:
                raise PolynomialError(
                    f"monomial {mono} has length {len(mono)}, expected {nvars}"
                )
            if any(e < 0 for e in mono):
                raise PolynomialError(f"negative exponent in {mono}")
            coef = float(coef)
            if not math.isfinite(coef):
                raise PolynomialError(f"non-finite coefficient {coef}")
            if coef != 0.0:
                clean[mono] = clean.get(mono, 0.0) + coef
        self._terms = {
            m: clean[m] for m in sorted(clean, key=grlex_key) if clean[m] != 0.0
        }
        self._hash = None

    # -- constructors ---------------------------------------------------

    @classmethod
    def constant(cls, nvars: int, value: Number) -> Polynomial:
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def zero(cls, nvars: int) -> Polynomial:
        return cls(nvars)

    @classmethod
    def variable(cls, nvars: int, index: int) -> Polynomial:
        if not 0 <= index < nvars:
            raise PolynomialError(f"variable index {index} out of range")
        mono = [0] * nvars
        mono[index] = 1
        return cls(nvars, {tuple(mono): 1.0})

    @classmethod
    def monomial(cls, mono: Monomial, coef: Number = 1.0) -> Polynomial:
        return cls(len(mono), {tuple(mono): coef})

    # -- basic queries --------------------------------------------------

    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def items(self) -> Iterator[tuple[Monomial, float]]:
        return iter(self._terms.items())

    def monomials(self) -> list[Monomial]:
        return list(self._terms)

    def coefficient(self, mono: Monomial) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(sum(m) == 0 for m in self._terms)

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self._terms), default=-1)

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def is_even(self) -> bool:
        """True when every term has even total degree, i.e. p(-x) = p(x)."""
        return all(sum(m) % 2 == 0 for m in self._terms)

    # -- arithmetic -----------------------------------------------------

    def _coerce(self, other) -> Polynomial:
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise PolynomialError(
                    f"nvars mismatch: {self.nvars} vs {other.nvars}"
                )
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        return NotImplemented

    def __add__(self, other) -> Polynomial:
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial(self.nvars, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other) -> Polynomial:
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other) -> Polynomial:
        return (-self) + other

    def __mul__(self, other) -> Polynomial:
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Monomial, float] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = _mul_mono(ma, mb)
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __truediv__(self, other: Number) -> Polynomial:
        return self.scale(1.0 / float(other))

    def __pow__(self, k: int) -> Polynomial:
        if not isinstance(k, int) or k < 0:
            raise PolynomialError("only nonnegative integer powers are supported")
        result = Polynomial.constant(self.nvars, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def scale(self, factor: Number) -> Polynomial:
        factor = float(factor)
        return Polynomial(self.nvars, {m: c * factor for m, c in self._terms.items()})

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.nvars, tuple(self._terms.items())))
        return self._hash

    # -- calculus and evaluation ----------------------------------------

    def derivative(self, index: int) -> Polynomial:
        out: dict[Monomial, float] = {}
        for m, c in self._terms.items():
            e = m[index]
            if e:
                dm = list(m)
                dm[index] = e - 1
                out[tuple(dm)] = c * e
        return Polynomial(self.nvars, out)

    def gradient(self) -> PolyVector:
        return PolyVector([self.derivative(i) for i in range(self.nvars)])

    def evaluate(self, point: Sequence[float]) -> float:
        point = np.asarray(point, dtype=float)
        if point.shape != (self.nvars,):
            raise PolynomialError(
                f"point has shape {point.shape}, expected ({self.nvars},)"
            )
        total = 0.0
        for m, c in self._terms.items():
            term = c
            for x, e in zip(point, m):
                if e:
                    term *= x**e
            total += term
        return float(total)

    __call__ = evaluate

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape ``(k, nvars)``)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.nvars:
            raise PolynomialError("point dimension mismatch")
        out = np.zeros(points.shape[0])
        for m, c in self._terms.items():
            out += c * np.prod(points ** np.asarray(m), axis=1)
        return out

    # -- variable bookkeeping -------------------------------------------

    def extend(self, nvars: int, offset: int = 0) -> Polynomial:
        """Embed into a ring with ``nvars`` variables, shifting indices by ``offset``."""
        if offset + self.nvars > nvars:
            raise PolynomialError("target ring too small")
        out = {}
        for m, c in self._terms.items():
            mono = [0] * nvars
            mono[offset : offset + self.nvars] = m
            out[tuple(mono)] = c
        return Polynomial(nvars, out)

    def restrict(self, nvars: int) -> Polynomial:
        """Drop trailing variables, which must not appear in any term."""
        out = {}
        for m, c in self._terms.items():
            if any(m[nvars:]):
                raise PolynomialError("polynomial depends on dropped variables")
            out[m[:nvars]] = c
        return Polynomial(nvars, out)

    def substitute(self, values: Sequence[Polynomial]) -> Polynomial:
        """Compose: replace variable i by ``values[i]`` (all in a common ring)."""
        if len(values) != self.nvars:
            raise PolynomialError("need one polynomial per variable")
        if not values:
            return self
        target = values[0].nvars
        powers: list[dict[int, Polynomial]] = [dict() for _ in values]
        total = Polynomial.zero(target)
        for m, c in self._terms.items():
            term = Polynomial.constant(target, c)
            for i, e in enumerate(m):
                if e:
                    if e not in powers[i]:
                        powers[i][e] = values[i] ** e
                    term = term * powers[i][e]
            total = total + term
        return total

    def prune(self, tol: float) -> Polynomial:
        """Copy with coefficients of magnitude <= tol removed."""
        return Polynomial(
            self.nvars, {m: c for m, c in self._terms.items() if abs(c) > tol}
        )

    # -- text -------------------------------------------------------------

    def to_text(self, names: Sequence[str] | None = None) -> str:
        return format_polynomial(self, names)

    def __str__(self) -> str:
        return self.to_text()

    def __repr__(self) -> str:
        return f"Polynomial({self.nvars}, {self.to_text()!r})"


class PolyVector:
    """Fixed-length vector of polynomials sharing one variable count."""

    __slots__ = ("entries",)

    def __init__(self, entries: Iterable[Polynomial]):
        entries = tuple(entries)
        if len({p.nvars for p in entries}) > 1:
            raise PolynomialError("entries must share nvars")
        self.entries = entries

    @property
    def nvars(self) -> int:
        return self.entries[0].nvars if self.entries else 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Polynomial]:
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, PolyVector) and self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    def __add__(self, other: PolyVector) -> PolyVector:
        if len(other) != len(self):
            raise PolynomialError("length mismatch")
        return PolyVector(a + b for a, b in zip(self, other))

    def __sub__(self, other: PolyVector) -> PolyVector:
        if len(other) != len(self):
            raise PolynomialError("length mismatch")
        return PolyVector(a - b for a, b in zip(self, other))

    def scale(self, factor) -> PolyVector:
        return PolyVector(p * factor for p in self)

    def dot(self, other: PolyVector) -> Polynomial:
        if len(other) != len(self):
            raise PolynomialError("length mismatch in dot product")
        total = Polynomial.zero(self.nvars)
        for a, b in zip(self, other):
            total = total + a * b
        return total

    def evaluate(self, point) -> np.ndarray:
        return np.array([p.evaluate(point) for p in self])

    def jacobian(self) -> PolyMatrix:
        return PolyMatrix([p.gradient().entries for p in self])

    @property
    def degree(self) -> int:
        return max((p.degree for p in self), default=-1)

    def __repr__(self) -> str:
        return f"PolyVector([{', '.join(p.to_text() for p in self)}])"


class PolyMatrix:
    """Row-major matrix of polynomials."""

    __slots__ = ("rows",)

    def __init__(self, rows: Iterable[Iterable[Polynomial]]):
        rows = tuple(tuple(r) for r in rows)
        if rows and len({len(r) for r in rows}) > 1:
            raise PolynomialError("ragged matrix")
        if len({p.nvars for r in rows for p in r}) > 1:
            raise PolynomialError("entries must share nvars")
        self.rows = rows

    @classmethod
    def from_constant(cls, array, nvars: int) -> PolyMatrix:
        array = np.atleast_2d(np.asarray(array, dtype=float))
        return cls(
            [[Polynomial.constant(nvars, v) for v in row] for row in array]
        )

    @classmethod
    def zeros(cls, shape: tuple[int, int], nvars: int) -> PolyMatrix:
        return cls([[Polynomial.zero(nvars)] * shape[1] for _ in range(shape[0])])

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.rows), len(self.rows[0]) if self.rows else 0)

    @property
    def nvars(self) -> int:
        return self.rows[0][0].nvars if self.rows and self.rows[0] else 0

    def __getitem__(self, ij):
        i, j = ij
        return self.rows[i][j]

    def __eq__(self, other) -> bool:
        return isinstance(other, PolyMatrix) and self.rows == other.rows

    def __hash__(self) -> int:
        return hash(self.rows)

    def matvec(self, v: PolyVector) -> PolyVector:
        if self.shape[1] != len(v):
            raise PolynomialError(f"shape mismatch: {self.shape} @ ({len(v)},)")
        return PolyVector(PolyVector(row).dot(v) for row in self.rows)

    def transpose(self) -> PolyMatrix:
        return PolyMatrix(zip(*self.rows)) if self.rows else self

    def is_zero(self) -> bool:
        return all(p.is_zero() for r in self.rows for p in r)

    def is_constant(self) -> bool:
        return all(p.is_constant() for r in self.rows for p in r)

    def is_symmetric(self) -> bool:
        n, m = self.shape
        return n == m and all(
            self.rows[i][j] == self.rows[j][i] for i in range(n) for j in range(i)
        )

    def is_diagonal(self) -> bool:
        n, m = self.shape
        return all(
            self.rows[i][j].is_zero() for i in range(n) for j in range(m) if i != j
        )

    def evaluate(self, point) -> np.ndarray:
        return np.array([[p.evaluate(point) for p in row] for row in self.rows])

    @property
    def degree(self) -> int:
        return max((p.degree for r in self.rows for p in r), default=-1)

    def __repr__(self) -> str:
        body = "; ".join(", ".join(p.to_text() for p in r) for r in self.rows)
        return f"PolyMatrix([{body}])"


def substitute_controls(f: PolyVector, G: PolyMatrix, u: PolyVector) -> PolyVector:
    """Return ``f(x) + G(x) u(x)``.

    The derivative-of-control term ``H u'`` is not included; simulation
    eliminates it exactly (see ``ltac.sim.closed_loop_rhs``).
    """
    n, m = G.shape
    if len(f) != n:
        raise PolynomialError(f"f has {len(f)} entries, G has {n} rows")
    if len(u) != m:
        raise PolynomialError(f"u has {len(u)} entries, G has {m} columns")
    if u.nvars != f.nvars:
        raise PolynomialError("u must be a polynomial in the state variables")
    return f + G.matvec(u)


# -- text syntax -----------------------------------------------------------


def variable_names(nvars: int, nz: int = 0) -> list[str]:
    """Default names: x1..x(n) followed by the Schur auxiliaries z1..z(nz)."""
    nx = nvars - nz
    return [f"x{i + 1}" for i in range(nx)] + [f"z{j + 1}" for j in range(nz)]


def _format_coef(c: float) -> str:
    if c == int(c) and abs(c) < 1e15:
        return str(int(c))
    return repr(c)


def format_polynomial(p: Polynomial, names: Sequence[str] | None = None) -> str:
    """Text form, highest-degree terms first, e.g. ``3.5*x1^2*x2 - x3 + 1``.

    Coefficients use the shortest repr that round-trips, so
    ``parse_polynomial(format_polynomial(p)) == p`` exactly.
    """
    names = list(names) if names is not None else variable_names(p.nvars)
    if p.is_zero():
        return "0"
    pieces = []
    for m, c in reversed(list(p.items())):
        factors = []
        for name, e in zip(names, m):
            if e == 1:
                factors.append(name)
            elif e > 1:
                factors.append(f"{name}^{e}")
        mag = abs(c)
        if factors:
            body = "*".join(factors) if mag == 1.0 else _format_coef(mag) + "*" + "*".join(factors)
        else:
            body = _format_coef(mag)
        sign = "-" if c < 0 else "+"
        pieces.append((sign, body))
    first_sign, first = pieces[0]
    out = ("-" if first_sign == "-" else "") + first
    for sign, body in pieces[1:]:
        out += f" {sign} {body}"
    return out


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<var>[xz]\d+)|(?P<op>[-+*^()]))"
)


class _Parser:
    def __init__(self, text: str, nvars: int, nz: int):
        self.text = text
        self.nvars = nvars
        self.nz = nz
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        text = text.rstrip()
        while pos < len(text):
            mt = _TOKEN.match(text, pos)
            if not mt or mt.end() == pos:
                raise PolynomialError(f"unexpected character at column {pos + 1}: {text[pos:pos + 10]!r}")
            kind = mt.lastgroup
            self.tokens.append((kind, mt.group(kind), mt.start(kind) + 1))
            pos = mt.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, len(self.text) + 1)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def parse(self) -> Polynomial:
        if not self.tokens:
            raise PolynomialError("empty expression")
        p = self.expr()
        kind, val, col = self.peek()
        if kind is not None:
            raise PolynomialError(f"unexpected {val!r} at column {col}")
        return p

    def expr(self) -> Polynomial:
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            p = self.term()
            if val == "-":
                p = -p
        else:
            p = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                q = self.term()
                p = p + q if val == "+" else p - q
            else:
                return p

    def term(self) -> Polynomial:
        p = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.take()
                p = p * self.factor()
            elif kind in ("num", "var") or (kind == "op" and val == "("):
                p = p * self.factor()  # implicit multiplication, e.g. 2x1
            else:
                return p

    def factor(self) -> Polynomial:
        base = self.atom()
        kind, val, col = self.peek()
        if kind == "op" and val == "^":
            self.take()
            kind, val, col = self.take()
            if kind != "num" or not val.isdigit():
                raise PolynomialError(f"exponent must be a nonnegative integer at column {col}")
            base = base ** int(val)
        return base

    def atom(self) -> Polynomial:
        kind, val, col = self.take()
        if kind == "num":
            return Polynomial.constant(self.nvars, float(val))
        if kind == "var":
            idx = int(val[1:])
            if idx < 1:
                raise PolynomialError(f"bad variable {val!r} at column {col}")
            if val[0] == "x":
                if idx > self.nvars - self.nz:
                    raise PolynomialError(f"variable {val!r} out of range at column {col}")
                return Polynomial.variable(self.nvars, idx - 1)
            if idx > self.nz:
                raise PolynomialError(f"variable {val!r} out of range at column {col}")
            return Polynomial.variable(self.nvars, self.nvars - self.nz + idx - 1)
        if kind == "op" and val == "(":
            p = self.expr()
            kind, val, col2 = self.take()
            if val != ")":
                raise PolynomialError(f"missing ')' for '(' at column {col}")
            return p
        if kind == "op" and val == "-":
            return -self.factor()
        if kind is None:
            raise PolynomialError("unexpected end of expression")
        raise PolynomialError(f"unexpected {val!r} at column {col}")


def parse_polynomial(text: str, nvars: int | None = None, nz: int = 0) -> Polynomial:
    """Parse the text syntax (``x1..xn`` state variables, ``z1..zm`` auxiliaries).

    When ``nvars`` is omitted it is inferred from the highest ``x`` index
    (plus ``nz``).
    """
    if nvars is None:
        found = [int(v[1:]) for v in re.findall(r"x\d+", text)]
        nvars = max(found, default=0) + nz
    return _Parser(text, nvars, nz).parse()


def infer_nvars(texts: Iterable[str]) -> int:
    found = [int(v[1:]) for t in texts for v in re.findall(r"x\d+", t)]
    return max(found, default=0)
