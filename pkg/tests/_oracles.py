"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

from privsmc.stl import And, Atom, Not, Signal, Until


def brute_sat(formula, values, dt, k=0) -> bool:
    """Direct recursive reading of the boolean semantics at sample ``k``.

    ``U[a,b]`` holds iff some grid offset ``j`` with ``a <= j*dt <= b`` inside
    the trace has ``psi`` at ``k+j`` and ``phi`` at every earlier offset.
    """
    n = len(values)
    if isinstance(formula, Atom):
        total = formula.const
        for name, coef in formula.coeffs:
            total += coef * values[k][int(name[1:])]
        return total >= 0
    if isinstance(formula, Not):
        return not brute_sat(formula.child, values, dt, k)
    if isinstance(formula, And):
        return brute_sat(formula.left, values, dt, k) and brute_sat(formula.right, values, dt, k)
    if isinstance(formula, Until):
        for j in range(n - k):
            t = j * dt
            if t < formula.lower - 1e-9 or t > formula.upper + 1e-9:
                continue
            if brute_sat(formula.right, values, dt, k + j) and all(
                brute_sat(formula.left, values, dt, k + i) for i in range(j)
            ):
                return True
        return False
    raise TypeError(formula)


def random_formula(rng: np.random.Generator, depth: int, dims: int, dt: float):
    """Random formula over channels ``x0..x{dims-1}`` with integer atoms and grid bounds."""
    if depth == 0 or rng.random() < 0.25:
        used = sorted(rng.choice(dims, size=rng.integers(1, dims + 1), replace=False))
        coeffs = tuple((f"x{i}", float(rng.integers(-2, 3))) for i in used)
        return Atom(coeffs, float(rng.integers(-3, 4)))
    kind = rng.integers(0, 3)
    if kind == 0:
        return Not(random_formula(rng, depth - 1, dims, dt))
    if kind == 1:
        return And(random_formula(rng, depth - 1, dims, dt), random_formula(rng, depth - 1, dims, dt))
    lo = int(rng.integers(0, 6))
    hi = math.inf if rng.random() < 0.15 else lo + int(rng.integers(1, 8))
    return Until(lo * dt, hi if math.isinf(hi) else hi * dt,
                 random_formula(rng, depth - 1, dims, dt), random_formula(rng, depth - 1, dims, dt))


def random_signal(rng: np.random.Generator, dims: int, dt: float) -> Signal:
    n = int(rng.integers(1, 13))
    return Signal(rng.integers(-3, 4, size=(n, dims)).astype(float), dt)


def rademacher_exact(column) -> float:
    """``E max_f |(1/N) sum eta_i phi_f(i)|`` by enumerating all sign vectors (rows = members)."""
    m = np.atleast_2d(np.asarray(column, dtype=float))
    n = m.shape[1]
    total = Fraction(0)
    for signs in itertools.product((-1, 1), repeat=n):
        best = max(abs(sum(Fraction(int(s)) * Fraction(v) for s, v in zip(signs, row))) for row in m)
        total += best
    return float(total / (2**n * n))


def walk_reference(bits, s_plus, s_minus, bound, cap):
    """Plain-loop walk on an explicit bit list; returns ``(n, k, code)``."""
    n = k = 0
    for b in bits:
        if n >= cap:
            break
        n += 1
        k += int(b)
        lam = k * s_plus - (n - k) * s_minus
        if lam >= bound:
            return n, k, 1
        if lam <= -bound:
            return n, k, -1
    return n, k, 0
