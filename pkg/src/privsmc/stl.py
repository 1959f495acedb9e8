"""Signal temporal logic: formulas, sampled signals, parsing and boolean monitoring.

Formulas are built from four node types (``Atom``, ``Not``, ``And``, ``Until``);
``Or``, ``Eventually``, ``Always``, ``TRUE`` and ``FALSE`` are rewrites into them.
An atom is the affine predicate ``sum(c_i * x_i) + b >= 0`` evaluated at the
first sample of the (shifted) signal.

Signals are uniformly sampled; temporal operators quantify over grid points.
Windows that extend past the end of a finite trace are clipped, so an
``Until``/``Eventually`` whose window starts after the horizon is false and the
dual ``Always`` is vacuously true.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

__all__ = [
    "Atom", "Not", "And", "Until", "Formula", "TRUE", "FALSE",
    "Or", "Eventually", "Always", "Signal", "StlSyntaxError", "StlBoundError",
    "parse_stl", "format_stl", "shift", "satisfies", "trace",
    "read_signal_csv", "write_signal_csv",
]


class StlSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class StlBoundError(ValueError):
    pass


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Atom:
    """``sum(coef * var) + const >= 0``; ``coeffs`` is a tuple of ``(var, coef)``."""

    coeffs: tuple[tuple[str, float], ...]
    const: float

    def __post_init__(self):
        if not math.isfinite(self.const) or any(not math.isfinite(c) for _, c in self.coeffs):
            raise ValueError("atom coefficients must be finite")


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Until:
    lower: float
    upper: float
    left: "Formula"
    right: "Formula"

    def __post_init__(self):
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise StlBoundError("interval bounds must be numbers")
        if not (0 <= self.lower < self.upper):
            raise StlBoundError(
                f"interval [{self.lower}, {self.upper}] must satisfy 0 <= lower < upper"
            )
        if math.isinf(self.lower):
            raise StlBoundError("interval lower bound must be finite")


Formula = Union[Atom, Not, And, Until]

TRUE = Atom((), 0.0)
FALSE = Not(TRUE)


def Or(left: Formula, right: Formula) -> Formula:
    return Not(And(Not(left), Not(right)))


def Eventually(lower: float, upper: float, child: Formula) -> Formula:
    return Until(lower, upper, TRUE, child)


def Always(lower: float, upper: float, child: Formula) -> Formula:
    return Not(Eventually(lower, upper, Not(child)))


# --------------------------------------------------------------------------
# Signals


@dataclass(frozen=True, eq=False)
class Signal:
    """Uniformly sampled trace; row ``k`` holds the sample at time ``k * dt``."""

    values: np.ndarray
    dt: float = 1.0
    names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("a signal needs at least one sample of dimension >= 1")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"sample period must be positive, got {self.dt}")
        names = tuple(self.names) or tuple(f"x{i}" for i in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise ValueError(f"{len(names)} channel names for dimension {values.shape[1]}")
        if len(set(names)) != len(names):
            raise ValueError("channel names must be unique")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return (len(self) - 1) * self.dt

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)]
        except ValueError:
            raise KeyError(f"signal has no channel {name!r} (channels: {', '.join(self.names)})")

    def __eq__(self, other):
        if not isinstance(other, Signal):
            return NotImplemented
        return (self.dt == other.dt and self.names == other.names
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.dt, self.names, self.values.tobytes()))


def _grid_steps(t: float, dt: float) -> int:
    """Nearest grid index for a time bound; exact midpoints are ambiguous."""
    q = t / dt
    k = round(q)
    if abs(q - k) >= 0.5 - 1e-9:
        raise StlBoundError(f"time {t} lies midway between grid points (dt={dt})")
    return int(k)


def shift(signal: Signal, t: float) -> Signal:
    """The t-shift ``s(t + .)``; ``t`` must be a grid time inside the horizon."""
    if t < 0:
        raise ValueError(f"shift must be non-negative, got {t}")
    q = t / signal.dt
    k = round(q)
    if abs(q - k) > 1e-9 * max(1.0, abs(q)):
        raise ValueError(f"shift {t} is not a multiple of dt={signal.dt}")
    if k > len(signal) - 1:
        raise ValueError(f"shift {t} exceeds the horizon {signal.horizon}")
    if k == 0:
        return signal
    return Signal(signal.values[k:], signal.dt, signal.names)


# --------------------------------------------------------------------------
# Monitoring


def _until_trace(phi: np.ndarray, psi: np.ndarray, lo: int, hi: float) -> np.ndarray:
    n = len(phi)
    idx = np.arange(n)
    # run[k]: number of consecutive phi-true samples starting at k
    next_false = np.where(~phi, idx, n)
    next_false = np.minimum.accumulate(next_false[::-1])[::-1]
    run = next_false - idx
    last = np.minimum(n - 1 - idx, run)
    if not math.isinf(hi):
        last = np.minimum(last, int(hi))
    ok = last >= lo
    prefix = np.concatenate([[0], np.cumsum(psi, dtype=np.int64)])
    start = np.minimum(idx + lo, n)
    stop = np.clip(idx + last + 1, 0, n)
    hits = prefix[stop] - prefix[np.minimum(start, stop)]
    return ok & (hits > 0)


def trace(formula: Formula, signal: Signal) -> np.ndarray:
    """Boolean array whose entry ``k`` is the satisfaction of ``formula`` by the k-th shift."""
    if isinstance(formula, Atom):
        acc = np.full(len(signal), formula.const)
        for name, coef in formula.coeffs:
            acc = acc + coef * signal.channel(name)
        return acc >= 0
    if isinstance(formula, Not):
        return ~trace(formula.child, signal)
    if isinstance(formula, And):
        return trace(formula.left, signal) & trace(formula.right, signal)
    if isinstance(formula, Until):
        lo = _grid_steps(formula.lower, signal.dt)
        hi = math.inf if math.isinf(formula.upper) else _grid_steps(formula.upper, signal.dt)
        return _until_trace(trace(formula.left, signal), trace(formula.right, signal), lo, hi)
    raise TypeError(f"not an STL formula: {formula!r}")


def satisfies(formula: Formula, signal: Signal) -> bool:
    return bool(trace(formula, signal)[0])


# --------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>>=|<=|[<>!&|()\[\],+\-*])
    """,
    re.VERBOSE,
)
_KEYWORDS = {"U", "F", "G", "true", "false", "inf"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise StlSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "ws":
            for i, ch in enumerate(m.group(), start=pos):
                if ch == "\n":
                    line += 1
                    line_start = i + 1
        else:
            word = m.group()
            if kind == "ident" and word in _KEYWORDS:
                kind = word
            elif kind == "op":
                kind = word
            toks.append(_Tok(kind, word, line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, message: str, tok: _Tok | None = None):
        tok = tok or self.tok
        found = tok.text or "end of input"
        raise StlSyntaxError(f"{message}, found {found!r}", tok.line, tok.col)

    def take(self, kind: str) -> _Tok:
        if self.tok.kind != kind:
            self.error(f"expected {kind!r}")
        tok = self.tok
        self.i += 1
        return tok

    def accept(self, kind: str) -> bool:
        if self.tok.kind == kind:
            self.i += 1
            return True
        return False

    def parse(self) -> Formula:
        f = self.disjunction()
        if self.tok.kind != "eof":
            self.error("unexpected token")
        return f

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.accept("|"):
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.until()
        while self.accept("&"):
            f = And(f, self.until())
        return f

    def until(self) -> Formula:
        left = self.unary()
        if self.tok.kind == "U":
            tok = self.take("U")
            lo, hi = self.interval(tok)
            return Until(lo, hi, left, self.until())
        return left

    def unary(self) -> Formula:
        kind = self.tok.kind
        if kind == "!":
            self.i += 1
            return Not(self.unary())
        if kind in ("F", "G"):
            tok = self.take(kind)
            lo, hi = self.interval(tok)
            child = self.unary()
            return Eventually(lo, hi, child) if kind == "F" else Always(lo, hi, child)
        return self.primary()

    def interval(self, op: _Tok) -> tuple[float, float]:
        self.take("[")
        lo = self.bound(allow_inf=False)
        self.take(",")
        hi = self.bound(allow_inf=True)
        self.take("]")
        if not lo < hi:
            raise StlBoundError(
                f"interval [{lo:g}, {hi:g}] of {op.text!r} at line {op.line}, "
                f"column {op.col} needs lower < upper"
            )
        return lo, hi

    def bound(self, allow_inf: bool) -> float:
        if allow_inf and self.accept("inf"):
            return math.inf
        return float(self.take("num").text)

    def primary(self) -> Formula:
        if self.accept("true"):
            return TRUE
        if self.accept("false"):
            return FALSE
        if self.tok.kind == "(":
            self.i += 1
            f = self.disjunction()
            self.take(")")
            return f
        return self.atom()

    def atom(self) -> Formula:
        lhs = self.affine()
        op = self.tok
        if op.kind not in (">=", "<=", ">", "<"):
            self.error("expected a comparison operator")
        self.i += 1
        rhs = self.affine()
        diff = _combine(lhs, rhs, -1.0)
        neg = _combine(({}, 0.0), diff, -1.0)
        if op.kind == ">=":
            return _atom(diff)
        if op.kind == "<=":
            return _atom(neg)
        if op.kind == ">":
            return Not(_atom(neg))
        return Not(_atom(diff))

    def affine(self) -> tuple[dict, float]:
        coeffs: dict[str, float] = {}
        const = 0.0
        sign = -1.0 if self.accept("-") else 1.0
        while True:
            var, value = self.term()
            if var is None:
                const += sign * value
            else:
                coeffs[var] = coeffs.get(var, 0.0) + sign * value
            if self.accept("+"):
                sign = 1.0
            elif self.accept("-"):
                sign = -1.0
            else:
                return coeffs, const

    def term(self) -> tuple[str | None, float]:
        if self.tok.kind == "num":
            value = float(self.take("num").text)
            if self.accept("*"):
                return self.take("ident").text, value
            return None, value
        if self.tok.kind == "ident":
            return self.take("ident").text, 1.0
        self.error("expected a number or variable")


def _combine(a, b, scale):
    coeffs = dict(a[0])
    for var, c in b[0].items():
        coeffs[var] = coeffs.get(var, 0.0) + scale * c
    return coeffs, a[1] + scale * b[1]


def _atom(aff) -> Atom:
    coeffs = tuple((v, c + 0.0) for v, c in aff[0].items() if c != 0)
    return Atom(coeffs, aff[1] + 0.0)


def parse_stl(text: str) -> Formula:
    """Parse specification text.

    Grammar, loosest binding first: ``|``, ``&``, ``U[a,b]`` (right
    associative), prefix ``!``/``F[a,b]``/``G[a,b]``. Atoms compare affine
    expressions over channel names, e.g. ``2*x0 - e >= 0.5``.
    """
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# Printing


def _num(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return repr(float(x) + 0.0)


def _format_atom(a: Atom) -> str:
    parts = []
    for var, c in a.coeffs:
        mag = abs(c)
        body = var if mag == 1 else f"{_num(mag)}*{var}"
        if not parts:
            parts.append(body if c > 0 else f"-{body}")
        else:
            parts.append(f"+ {body}" if c > 0 else f"- {body}")
    lhs = " ".join(parts) if parts else "0"
    return f"({lhs} >= {_num(-a.const)})"


def format_stl(f: Formula) -> str:
    """Canonical text; ``parse_stl(format_stl(f)) == f`` for every formula."""
    if f == TRUE:
        return "true"
    if f == FALSE:
        return "false"
    if isinstance(f, Atom):
        return _format_atom(f)
    if isinstance(f, Until):
        iv = f"[{_num(f.lower)},{_num(f.upper)}]"
        if f.left == TRUE:
            return f"F{iv} {format_stl(f.right)}"
        return f"({format_stl(f.left)} U{iv} {format_stl(f.right)})"
    if isinstance(f, And):
        return f"({format_stl(f.left)} & {format_stl(f.right)})"
    if isinstance(f, Not):
        c = f.child
        if isinstance(c, Until) and c.left == TRUE and isinstance(c.right, Not):
            return f"G[{_num(c.lower)},{_num(c.upper)}] {format_stl(c.right.child)}"
        if isinstance(c, And) and isinstance(c.left, Not) and isinstance(c.right, Not):
            return f"({format_stl(c.left.child)} | {format_stl(c.right.child)})"
        return f"!{format_stl(c)}"
    raise TypeError(f"not an STL formula: {f!r}")


# --------------------------------------------------------------------------
# CSV traces


def read_signal_csv(path: str | Path, rel_tol: float = 1e-9) -> Signal:
    """Load a trace with header ``t,<channel>,...`` and uniform sample times from 0."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ValueError(f"{path}: empty trace file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "t":
        raise ValueError(f"{path}: header must be 't,<channel>,...', got {','.join(header)}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric value ({exc})") from None
    if data.size == 0:
        raise ValueError(f"{path}: no samples")
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: every row needs {len(header)} fields")
    t = data[:, 0]
    if abs(t[0]) > rel_tol:
        raise ValueError(f"{path}: first sample must be at t=0, got {t[0]}")
    dt = 1.0
    if len(t) > 1:
        steps = np.diff(t)
        dt = float(t[-1] / (len(t) - 1))
        if dt <= 0 or np.any(np.abs(steps - dt) > rel_tol * dt):
            raise ValueError(f"{path}: sample times are not uniformly spaced")
    return Signal(data[:, 1:], dt, tuple(header[1:]))


def write_signal_csv(signal: Signal, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *signal.names])
        for k, row in enumerate(signal.values):
            w.writerow([repr(k * signal.dt), *(repr(float(v)) for v in row)])
