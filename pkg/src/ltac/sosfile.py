"""Text format for SOS programs, one statement per line::

    # upper bound for x' = x - x^3, Phi0 = x^2
    vars 1
    scalar C
    decision V deg 2 free noconst
    sos: -((x1 - x1^3)*d(V, x1) + x1^2 - C)
    min: C

Statements: ``vars n`` (optional, inferred from ``x`` indices otherwise),
``scalar NAME``, ``decision NAME deg D free|sos [even] [noconst]``,
``sos: EXPR``, ``zero: EXPR``, ``min: EXPR`` / ``max: EXPR``.  Expressions
use the polynomial syntax plus declared names and ``d(EXPR, xi)`` for partial
derivatives; products of two unknown-carrying factors are rejected.
"""

from __future__ import annotations

import re

from .poly import Polynomial
from .sos import AffinePoly, NonAffineError, SosProgram


class SosFileError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)
        self.line = line
        self.column = column


_TOK = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<var>[xz]\d+\b)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*^(),]))"
)
_NAME = re.compile(r"[A-Za-z_][A-Za-z_0-9]*$")


class _ExprParser:
    def __init__(self, text: str, prog: SosProgram, names: dict, line: int, offset: int = 0):
        self.prog, self.names, self.line, self.offset = prog, names, line, offset
        self.toks = []
        pos, text = 0, text.rstrip()
        while pos < len(text):
            mt = _TOK.match(text, pos)
            if not mt or mt.end() == pos:
                raise SosFileError(f"unexpected character {text[pos:pos + 8]!r}", line, offset + pos + 1)
            self.toks.append((mt.lastgroup, mt.group(mt.lastgroup), mt.start(mt.lastgroup) + 1))
            pos = mt.end()
        self.i = 0

    def err(self, msg, col):
        return SosFileError(msg, self.line, None if col is None else col + self.offset)

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, None)

    def take(self):
        t = self.peek()
        self.i += 1
        return t

    def parse(self) -> AffinePoly:
        if not self.toks:
            raise self.err("empty expression", None)
        e = self.expr()
        kind, val, col = self.peek()
        if kind is not None:
            raise self.err(f"unexpected {val!r}", col)
        return e

    def const(self, v: float) -> AffinePoly:
        return AffinePoly.lift(float(v), self.prog.nvars)

    def expr(self):
        kind, val, _ = self.peek()
        neg = False
        if kind == "op" and val in "+-":
            self.take()
            neg = val == "-"
        e = self.term()
        if neg:
            e = -e
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                t = self.term()
                e = e + t if val == "+" else e - t
            else:
                return e

    def term(self):
        e = self.factor()
        while True:
            kind, val, col = self.peek()
            if kind == "op" and val == "*":
                self.take()
                rhs = self.factor()
            elif kind in ("num", "var", "name") or (kind == "op" and val == "("):
                rhs = self.factor()
            else:
                return e
            try:
                e = e * rhs
            except NonAffineError as exc:
                raise self.err(str(exc), col) from None

    def factor(self):
        base = self.atom()
        kind, val, col = self.peek()
        if kind == "op" and val == "^":
            self.take()
            kind, val, col = self.take()
            if kind != "num" or not val.isdigit():
                raise self.err("exponent must be a nonnegative integer", col)
            k = int(val)
            if base.has_unknowns() and k > 1:
                raise self.err("power of an expression with unknowns is not affine", col)
            if k == 0:
                return self.const(1.0)
            out = base
            for _ in range(k - 1):
                out = out * base
            return out
        return base

    def atom(self):
        kind, val, col = self.take()
        if kind == "num":
            return self.const(float(val))
        if kind == "var":
            idx = int(val[1:])
            nx, nz = self.prog.nx, self.prog.nvars - self.prog.nx
            if val[0] == "x" and 1 <= idx <= nx:
                return AffinePoly.lift(Polynomial.variable(self.prog.nvars, idx - 1), self.prog.nvars)
            if val[0] == "z" and 1 <= idx <= nz:
                return AffinePoly.lift(Polynomial.variable(self.prog.nvars, nx + idx - 1), self.prog.nvars)
            raise self.err(f"variable {val!r} out of range", col)
        if kind == "name":
            if val == "d" and self.peek()[1] == "(":
                self.take()
                inner = self.expr()
                kind2, val2, col2 = self.take()
                if val2 != ",":
                    raise self.err("expected ',' in d(expr, variable)", col2)
                kind2, var, col2 = self.take()
                if kind2 != "var" or var[0] != "x" or not 1 <= int(var[1:]) <= self.prog.nx:
                    raise self.err("second argument of d() must be a state variable", col2)
                if self.take()[1] != ")":
                    raise self.err("missing ')' after d(...)", col)
                return inner.derivative(int(var[1:]) - 1)
            if val not in self.names:
                raise self.err(f"undeclared name {val!r}", col)
            return self.names[val]
        if kind == "op" and val == "(":
            e = self.expr()
            if self.take()[1] != ")":
                raise self.err("missing ')'", col)
            return e
        if kind == "op" and val == "-":
            return -self.factor()
        if kind is None:
            raise self.err("unexpected end of expression", None)
        raise self.err(f"unexpected {val!r}", col)


def looks_like_program(text: str) -> bool:
    return any(re.match(r"\s*(sos|zero|min|max)\s*:", ln) for ln in text.splitlines())


def parse_program(text: str) -> SosProgram:
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        s = body.strip()
        if s:
            lines.append((lineno, s, len(body) - len(body.lstrip())))
    nvars = None
    for lineno, s, _ in lines:
        if s.split()[0] == "vars":
            parts = s.split()
            if len(parts) != 2 or not parts[1].isdigit():
                raise SosFileError("expected 'vars n'", lineno)
            nvars = int(parts[1])
    if nvars is None:
        found = [int(v) for _, s, _ in lines for v in re.findall(r"\bx(\d+)\b", s)]
        nvars = max(found, default=1)
    prog = SosProgram(nvars)
    names: dict[str, AffinePoly] = {}
    objective = False
    for lineno, s, indent in lines:
        head, sep, rest = s.partition(":")
        if sep and head.strip() in ("sos", "zero", "min", "max"):
            key = head.strip()
            expr = _ExprParser(rest, prog, names, lineno, indent + len(head) + 1).parse()
            try:
                if key == "sos":
                    prog.add_sos(expr, name=f"line{lineno}")
                elif key == "zero":
                    prog.add_zero(expr, name=f"line{lineno}")
                else:
                    if objective:
                        raise SosFileError("more than one objective", lineno)
                    objective = True
                    (prog.minimize if key == "min" else prog.maximize)(expr)
            except SosFileError:
                raise
            except ValueError as exc:
                raise SosFileError(str(exc), lineno) from None
            continue
        words = s.split()
        if words[0] == "vars":
            continue
        if words[0] == "scalar":
            if len(words) != 2 or not _NAME.match(words[1]):
                raise SosFileError("expected 'scalar NAME'", lineno)
            _declare(names, words[1], lineno)
            names[words[1]] = prog.new_scalar(words[1])
        elif words[0] == "decision":
            if len(words) < 5 or words[2] != "deg" or not words[3].isdigit() or words[4] not in ("free", "sos"):
                raise SosFileError("expected 'decision NAME deg D free|sos [even] [noconst]'", lineno)
            name = words[1]
            if not _NAME.match(name):
                raise SosFileError(f"bad name {name!r}", lineno)
            flags = set(words[5:])
            if flags - {"even", "noconst"}:
                raise SosFileError(f"unknown option(s) {sorted(flags - {'even', 'noconst'})}", lineno)
            _declare(names, name, lineno)
            try:
                names[name] = prog.new_poly(name, int(words[3]), kind=words[4],
                                            parity="even" if "even" in flags else None,
                                            include_constant="noconst" not in flags)
            except ValueError as exc:
                raise SosFileError(str(exc), lineno) from None
        else:
            raise SosFileError(f"unknown statement {words[0]!r}", lineno)
    if not prog.constraints:
        raise SosFileError("program has no constraints", lines[-1][0] if lines else None)
    return prog


def _declare(names, name, lineno):
    if name in names or name == "d" or re.fullmatch(r"[xz]\d+", name):
        raise SosFileError(f"name {name!r} is reserved or already declared", lineno)
