"""Confidence-interval checking of ``min_f P(sigma |= phi_f) > p`` over a formula family.

The family is a template formula with ``{theta_i}`` holes instantiated on a
finite parameter grid. After ``N`` draws the empirical minimum satisfaction
frequency is bracketed by ``+-d_N`` with ``d_N = 2 R_N + sqrt(-9 ln(alpha) / (2N))``,
where ``R_N`` is the empirical Rademacher average of the family's
satisfaction matrix, estimated by Monte Carlo over sign vectors.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from privsmc import streams
from privsmc.sprt import Hypothesis, RunRecord
from privsmc.stl import Formula, Not, parse_stl, satisfies


@dataclass(frozen=True)
class FamilySpec:
    template: str
    grid: tuple[tuple[float, ...], ...]
    labels: tuple[str, ...] = ()
    negate: bool = False
    members: tuple[Formula, ...] = field(init=False, repr=False)

    def __post_init__(self):
        grid = tuple(tuple(float(v) for v in row) for row in self.grid)
        if not grid:
            raise ValueError("parameter grid is empty")
        width = len(grid[0])
        if any(len(row) != width for row in grid):
            raise ValueError("grid rows must all have the same length")
        members = []
        for row in grid:
            text = self.template.format(**{f"theta_{i}": repr(v) for i, v in enumerate(row)})
            f = parse_stl(text)
            members.append(Not(f) if self.negate else f)
        labels = tuple(self.labels) or tuple(",".join(repr(v) for v in row) for row in grid)
        if len(labels) != len(grid):
            raise ValueError("one label per grid row required")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "members", tuple(members))

    def __len__(self) -> int:
        return len(self.members)

    @classmethod
    def from_files(cls, template_path: str | Path, grid_path: str | Path,
                   negate: bool = False) -> "FamilySpec":
        """Template text file plus a CSV grid with header ``theta_0,theta_1,...``."""
        template = Path(template_path).read_text(encoding="utf-8").strip()
        return cls.from_grid_csv(template, grid_path, negate)

    @classmethod
    def from_grid_csv(cls, template: str, grid_path: str | Path,
                      negate: bool = False) -> "FamilySpec":
        """An optional ``label`` column names the members."""
        with Path(grid_path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{grid_path}: empty parameter grid")
        keys = [k for k in rows[0] if k.startswith("theta_")]
        keys.sort(key=lambda k: int(k.split("_", 1)[1]))
        grid = tuple(tuple(float(r[k]) for k in keys) for r in rows)
        labels = tuple(r["label"] for r in rows) if "label" in rows[0] else ()
        return cls(template, grid, labels, negate)


def empirical_min(counts: Sequence[int], n: int) -> float:
    if n < 1:
        raise ValueError("need at least one sample")
    counts = np.asarray(counts)
    if counts.size == 0:
        raise ValueError("no family members")
    if np.any(counts > n) or np.any(counts < 0):
        raise ValueError("counts must lie in [0, N]")
    return float(counts.min()) / n


def rademacher_average(matrix: np.ndarray, n_eta: int, rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of ``E max_f |(1/N) sum_i eta_i phi_f(sigma_i)|``.

    ``matrix`` is members x samples (booleans); the sign vectors do not depend
    on the number of members, so duplicating a member leaves the estimate
    unchanged for a fixed generator state.
    """
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if m.size == 0:
        raise ValueError("empty satisfaction matrix")
    if n_eta < 1:
        raise ValueError("need at least one sign vector")
    n = m.shape[1]
    eta = 2.0 * rng.integers(0, 2, size=(n_eta, n), dtype=np.int8) - 1.0
    sums = np.abs(eta @ m.T) / n
    return float(sums.max(axis=1).mean())


def interval_radius(rademacher: float, alpha: float, n: int) -> float:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 1:
        raise ValueError("need at least one sample")
    if rademacher < 0:
        raise ValueError("Rademacher average is non-negative")
    return 2 * rademacher + math.sqrt(-9 * math.log(alpha) / (2 * n))


@dataclass
class CiState:
    """Append-only satisfaction matrix and the current interval."""

    members: int
    n: int = 0
    counts: np.ndarray = None
    p_lower: float = math.nan
    rademacher: float = math.nan
    radius: float = math.inf
    _data: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.members, dtype=np.int64)
        if self._data is None:
            self._data = np.zeros((self.members, 64))

    def add(self, column: np.ndarray) -> None:
        if self.n == self._data.shape[1]:
            grown = np.zeros((self.members, 2 * self.n))
            grown[:, :self.n] = self._data
            self._data = grown
        self._data[:, self.n] = column
        self.counts += column
        self.n += 1

    def matrix(self) -> np.ndarray:
        return self._data[:, :self.n]


def run_ci_smc(source, family: FamilySpec, p: float, alpha: float, cap: int = 100_000,
               seed: int = 0, index: int = 0, n_eta: int = 200,
               recompute_every: int = 10) -> RunRecord:
    """Sequential interval test; ``H_null`` once ``p_lower - d_N > p``, ``H_alt`` once ``p_lower + d_N < p``.

    With ``family.negate`` the members are negated and the verdict refers to
    the maximal satisfaction probability of the original family against ``p``
    (``max_f p_f < p`` iff ``min_f p_(!f) > 1 - p``), so the test runs at ``1 - p``
    and the label is flipped.
    """
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if cap < 1 or recompute_every < 1:
        raise ValueError("cap and recompute_every must be positive")
    target = 1 - p if family.negate else p
    data = streams.stream(seed, streams.DATA, index)
    signs = streams.stream(seed, streams.RADEMACHER, index)
    state = CiState(len(family))
    outcome = None
    for _ in range(cap):
        sig = source.next_signal(data)
        state.add(np.fromiter((satisfies(f, sig) for f in family.members), dtype=np.int64,
                              count=len(family)))
        n = state.n
        if n == 1 or n % recompute_every == 0:
            state.rademacher = rademacher_average(state.matrix(), n_eta, signs)
        state.p_lower = empirical_min(state.counts, n)
        state.radius = interval_radius(state.rademacher, alpha, n)
        if state.p_lower - state.radius > target:
            outcome = Hypothesis.NULL
            break
        if state.p_lower + state.radius < target:
            outcome = Hypothesis.ALT
            break
    if outcome is not None and family.negate:
        outcome = outcome.flipped()
    return RunRecord(
        outcome, state.n, int(state.counts.min()), seed, index,
        config={"template": family.template, "grid": [list(r) for r in family.grid],
                "negate": family.negate, "p": p, "alpha": alpha, "cap": cap,
                "n_eta": n_eta, "recompute_every": recompute_every},
        algorithm="ci-rademacher",
        extra={
            "member_counts": dict(zip(family.labels, state.counts.tolist())),
            "p_lower": state.p_lower,
            "rademacher": state.rademacher,
            "radius": state.radius,
        },
    )
