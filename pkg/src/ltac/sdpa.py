"""SDPA sparse (``.dat-s``) export and import.

SDPA reads the pair ``min c.x  s.t.  sum_i x_i F_i - F_0 >= 0`` and its dual
``max <F_0, Y>  s.t.  <F_i, Y> = c_i``. Our standard form
``min <C, X>  s.t.  <A_i, X> = b_i`` is the second, with ``F_i = A_i``,
``c = b`` and ``F_0 = -C``.

Free variables are written as one trailing block with a negative size (the
slot SDPA uses for diagonal LP blocks): free variable ``j`` occupies the
diagonal entry ``(j+1, j+1)`` of that block. The block is omitted when empty.
"""

from __future__ import annotations

import re

import numpy as np

from .sdp import SdpProblem


class SdpaParseError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def _fmt(v: float) -> str:
    return "%.17g" % v


def export_sdpa(p: SdpProblem) -> str:
    sizes = list(p.block_sizes)
    if p.n_free:
        sizes.append(-p.n_free)
    out = [str(p.n_constraints), str(len(sizes)), " ".join(str(s) for s in sizes),
           " ".join(_fmt(v) for v in p.b)]

    def entries(cons: int, mats, free_vec):
        for k, a in enumerate(mats, start=1):
            n = a.shape[0]
            for i in range(n):
                for j in range(i, n):
                    if a[i, j] != 0.0:
                        out.append(f"{cons} {k} {i + 1} {j + 1} {_fmt(a[i, j])}")
        k = len(mats) + 1
        for j, v in enumerate(free_vec):
            if v != 0.0:
                out.append(f"{cons} {k} {j + 1} {j + 1} {_fmt(v)}")

    entries(0, [-c for c in p.C], -p.c_free)
    for i in range(p.n_constraints):
        entries(i + 1, [a[i] for a in p.A], p.A_free[i] if p.n_free else ())
    return "\n".join(out) + "\n"


_SEP = re.compile(r"[\s,{}()]+")


def _tokens(line: str) -> list[str]:
    return [t for t in _SEP.split(line) if t]


def _number(tok: str, lineno: int, kind=float):
    try:
        return kind(tok)
    except ValueError:
        raise SdpaParseError(f"expected {'an integer' if kind is int else 'a number'}, got {tok!r}", lineno) from None


def import_sdpa(text: str) -> SdpProblem:
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "%*\"":
            continue
        lines.append((lineno, _tokens(s)))
    stream = [(lineno, t) for lineno, toks in lines for t in toks]
    pos = 0

    def take(kind, what):
        nonlocal pos
        if pos >= len(stream):
            last = lines[-1][0] if lines else 1
            raise SdpaParseError(f"unexpected end of file while reading {what}", last)
        lineno, tok = stream[pos]
        pos += 1
        return _number(tok, lineno, kind), lineno

    m, ln = take(int, "the constraint count")
    if m < 0:
        raise SdpaParseError("negative constraint count", ln)
    nb, ln = take(int, "the block count")
    if nb < 0:
        raise SdpaParseError("negative block count", ln)
    sizes = []
    for _ in range(nb):
        s, ln = take(int, "block sizes")
        if s == 0:
            raise SdpaParseError("block size 0", ln)
        sizes.append(s)
    if sum(1 for s in sizes if s < 0) > 1 or any(s < 0 for s in sizes[:-1]):
        raise SdpaParseError("only one free (negative-size) block, placed last, is supported", ln)
    b = np.array([take(float, "the right-hand side")[0] for _ in range(m)], dtype=float)

    # entries start on the line after the last header token
    header_end = stream[pos - 1][0] if pos else 0
    psd = [s for s in sizes if s > 0]
    n_free = -sizes[-1] if sizes and sizes[-1] < 0 else 0
    A = [np.zeros((m, n, n)) for n in psd]
    C = [np.zeros((n, n)) for n in psd]
    A_free = np.zeros((m, n_free))
    c_free = np.zeros(n_free)
    for lineno, toks in lines:
        if lineno <= header_end:
            continue
        if len(toks) != 5:
            raise SdpaParseError(f"expected 5 fields 'constraint block i j value', got {len(toks)}", lineno)
        cons, blk, i, j = (_number(t, lineno, int) for t in toks[:4])
        val = _number(toks[4], lineno)
        if not 0 <= cons <= m:
            raise SdpaParseError(f"constraint index {cons} out of range 0..{m}", lineno)
        if not 1 <= blk <= len(sizes):
            raise SdpaParseError(f"block index {blk} out of range 1..{len(sizes)}", lineno)
        size = abs(sizes[blk - 1])
        if not (1 <= i <= size and 1 <= j <= size):
            raise SdpaParseError(f"entry ({i}, {j}) outside block {blk} of size {size}", lineno)
        i, j = min(i, j) - 1, max(i, j) - 1
        if sizes[blk - 1] < 0:
            if i != j:
                raise SdpaParseError("off-diagonal entry in the free block", lineno)
            if cons == 0:
                c_free[i] = -val
            else:
                A_free[cons - 1, i] = val
            continue
        target = C[blk - 1] if cons == 0 else A[blk - 1][cons - 1]
        v = -val if cons == 0 else val
        target[i, j] = v
        target[j, i] = v
    return SdpProblem(tuple(psd), tuple(A), tuple(C), b, A_free, c_free)


def write_sdpa(p: SdpProblem, path) -> None:
    with open(path, "w") as fh:
        fh.write(export_sdpa(p))


def read_sdpa(path) -> SdpProblem:
    with open(path) as fh:
        return import_sdpa(fh.read())
