"""Controller files.

Each component of ``u1`` is stored as ``u1 = k.x + x.M.x + rest`` with ``M``
symmetric (off-diagonal entries are half the cross-term coefficients) and
``rest`` holding any constant or cubic-and-higher terms in the polynomial
text syntax::

    controller
    vars 2 1
    C0 4.73
    C1 -3.81
    u1 1:
      k: 0.39 -1.23
      M:
        0 0
        0 0
      poly: 0

Lines starting with ``#`` are comments. ``C0``/``C1`` are optional.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .poly import Polynomial, PolynomialError, PolyVector, format_polynomial, parse_polynomial


class ControllerFileError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass(eq=True)
class Controller:
    n: int
    m: int
    u1: PolyVector
    C0: float | None = None
    C1: float | None = None
    name: str = ""

    def bound_line(self, eps: float) -> float:
        if self.C0 is None or self.C1 is None:
            raise ValueError("controller file carries no C0/C1")
        return self.C0 + eps * self.C1


def split_quadratic(p: Polynomial) -> tuple[np.ndarray, np.ndarray, Polynomial]:
    """``(k, M, rest)`` with ``p = k.x + x.M.x + rest``."""
    n = p.nvars
    k = np.zeros(n)
    M = np.zeros((n, n))
    rest = {}
    for mono, c in p.items():
        d = sum(mono)
        idx = [i for i, e in enumerate(mono) for _ in range(e)]
        if d == 1:
            k[idx[0]] = c
        elif d == 2:
            i, j = idx
            if i == j:
                M[i, i] = c
            else:
                M[i, j] = M[j, i] = 0.5 * c
        else:
            rest[mono] = c
    return k, M, Polynomial(n, rest)


def join_quadratic(k, M, rest: Polynomial | None = None) -> Polynomial:
    k = np.asarray(k, dtype=float)
    M = np.asarray(M, dtype=float)
    n = k.shape[0]
    if M.shape != (n, n):
        raise ValueError(f"M must be {n}x{n}")
    terms: dict[tuple, float] = {}
    for i in range(n):
        mono = [0] * n
        mono[i] = 1
        terms[tuple(mono)] = k[i]
        for j in range(i, n):
            mono = [0] * n
            mono[i] += 1
            mono[j] += 1
            terms[tuple(mono)] = M[i, i] if i == j else M[i, j] + M[j, i]
    p = Polynomial(n, terms)
    return p + rest if rest is not None else p


def from_synthesis(res, name: str = "") -> Controller:
    u1 = PolyVector(list(res.u1))
    return Controller(u1.nvars, len(u1), u1, float(res.C0), float(res.C1), name)


def _num(v) -> str:
    return repr(float(v))


def format_controller(c: Controller) -> str:
    out = ["controller"]
    if c.name:
        out.append(f"name {c.name}")
    out.append(f"vars {c.n} {c.m}")
    if c.C0 is not None:
        out.append(f"C0 {_num(c.C0)}")
    if c.C1 is not None:
        out.append(f"C1 {_num(c.C1)}")
    for j, p in enumerate(c.u1, start=1):
        k, M, rest = split_quadratic(p)
        out.append(f"u1 {j}:")
        out.append("  k: " + " ".join(_num(v) for v in k))
        out.append("  M:")
        for row in M:
            out.append("    " + " ".join(_num(v) for v in row))
        if not rest.is_zero():
            out.append("  poly: " + format_polynomial(rest))
    return "\n".join(out) + "\n"


def parse_controller(text: str) -> Controller:
    lines = [(i, raw.split("#", 1)[0].strip()) for i, raw in enumerate(text.splitlines(), start=1)]
    lines = [(i, s) for i, s in lines if s]
    pos = 0

    def nxt(what):
        nonlocal pos
        if pos >= len(lines):
            raise ControllerFileError(f"unexpected end of file, expected {what}",
                                      lines[-1][0] if lines else None)
        pos += 1
        return lines[pos - 1]

    def floats(s, ln, count, what):
        try:
            vals = [float(t) for t in s.split()]
        except ValueError:
            raise ControllerFileError(f"non-numeric entry in {what}", ln) from None
        if len(vals) != count:
            raise ControllerFileError(f"{what} needs {count} values, got {len(vals)}", ln)
        return vals

    ln, s = nxt("'controller'")
    if s != "controller":
        raise ControllerFileError("file must start with 'controller'", ln)
    name, n, m, meta = "", None, None, {}
    while pos < len(lines) and not lines[pos][1].startswith("u1"):
        ln, s = nxt("a header line")
        key, _, val = s.partition(" ")
        if key == "name":
            name = val.strip()
        elif key == "vars":
            try:
                n, m = (int(t) for t in val.split())
            except ValueError:
                raise ControllerFileError("expected 'vars n m'", ln) from None
            if n < 1 or m < 1:
                raise ControllerFileError("n and m must be positive", ln)
        elif key in ("C0", "C1"):
            meta[key] = floats(val, ln, 1, key)[0]
        else:
            raise ControllerFileError(f"unknown header key {key!r}", ln)
    if n is None:
        raise ControllerFileError("missing 'vars n m' line", ln)

    comps = []
    for j in range(1, m + 1):
        ln, s = nxt(f"'u1 {j}:'")
        if s.replace(" ", "") != f"u1{j}:":
            raise ControllerFileError(f"expected 'u1 {j}:'", ln)
        k = np.zeros(n)
        M = np.zeros((n, n))
        rest = None
        while pos < len(lines) and not lines[pos][1].startswith("u1"):
            ln, s = nxt("a controller section")
            key, _, val = s.partition(":")
            key = key.strip()
            if key == "k":
                k = np.array(floats(val, ln, n, "k"))
            elif key == "M":
                for r in range(n):
                    rl, rs = nxt(f"row {r + 1} of M")
                    M[r] = floats(rs, rl, n, f"row {r + 1} of M")
                if not np.array_equal(M, M.T):
                    raise ControllerFileError("M must be symmetric", rl)
            elif key == "poly":
                try:
                    rest = parse_polynomial(val.strip(), n)
                except PolynomialError as exc:
                    raise ControllerFileError(str(exc), ln) from None
            else:
                raise ControllerFileError(f"unknown section {key!r}", ln)
        comps.append(join_quadratic(k, M, rest))
    if pos < len(lines):
        raise ControllerFileError("trailing content after the last component", lines[pos][0])
    return Controller(n, m, PolyVector(comps), meta.get("C0"), meta.get("C1"), name)


def read_controller(path) -> Controller:
    return parse_controller(Path(path).read_text())


def write_controller(c: Controller, path) -> None:
    Path(path).write_text(format_controller(c))


def ten_mode_path() -> Path:
    return Path(__file__).parent / "data" / "ten_mode.txt"


def load_ten_mode_controller() -> Controller:
    """The quadratic controller for the ten-mode flow model (data only)."""
    return read_controller(ten_mode_path())
