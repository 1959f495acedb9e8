"""Sequential probability ratio test for ``P(sigma |= phi) > p``.

The test compares the simple hypotheses ``p_phi = p + delta`` (null) and
``p_phi = p - delta`` (alternative). The log-likelihood ratio after ``n``
draws with ``k`` satisfying ones is ``k * s_plus - (n - k) * s_minus`` and the
test stops once it leaves ``(-B, B)`` with ``B = ln((1 - alpha) / alpha)``.
Reaching the bound exactly counts as crossing it.
"""
from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Iterable, Iterator

import numpy as np

from privsmc import __version__, kernels, streams
from privsmc.stl import Formula, Not, format_stl, satisfies


class Hypothesis(str, enum.Enum):
    NULL = "H_null"
    ALT = "H_alt"

    def flipped(self) -> "Hypothesis":
        return Hypothesis.ALT if self is Hypothesis.NULL else Hypothesis.NULL


UNDECIDED = "undecided"
_CODES = {1: Hypothesis.NULL, -1: Hypothesis.ALT, 0: None}


@dataclass(frozen=True)
class SprtConfig:
    """Threshold ``p``, indifference ``delta``, significance ``alpha`` and a draw cap.

    With ``negate`` set the checker tests ``!phi`` against ``1 - p`` and maps
    the verdict back, which is how lower-tail claims ``p_phi < p`` are checked.
    """

    p: float
    delta: float
    alpha: float
    cap: int = 1_000_000
    negate: bool = False

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not (self.p - self.delta > 0 and self.p + self.delta < 1):
            raise ValueError(f"need 0 < p - delta and p + delta < 1 (p={self.p}, delta={self.delta})")
        if not 0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if int(self.cap) != self.cap or self.cap < 1:
            raise ValueError(f"cap must be a positive integer, got {self.cap}")

    @property
    def s_plus(self) -> float:
        return math.log((self.p + self.delta) / (self.p - self.delta))

    @property
    def s_minus(self) -> float:
        return math.log((1 - self.p + self.delta) / (1 - self.p - self.delta))

    @property
    def bound(self) -> float:
        return math.log((1 - self.alpha) / self.alpha)

    @property
    def tested_config(self) -> "SprtConfig":
        """The configuration the walk actually runs on."""
        return replace(self, p=1 - self.p, negate=False) if self.negate else self

    def tested(self, formula: Formula) -> tuple[Formula, "SprtConfig"]:
        return (Not(formula) if self.negate else formula), self.tested_config

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SprtState:
    n: int
    k: int
    s_plus: float
    s_minus: float
    log_ratio: float = 0.0

    @classmethod
    def start(cls, cfg: SprtConfig) -> "SprtState":
        return cls(0, 0, cfg.s_plus, cfg.s_minus, 0.0)


def step(state: SprtState, bit: bool) -> SprtState:
    """Advance by one observation.

    The ratio is re-derived from the counts rather than accumulated, which
    keeps it consistent with the compiled kernels to the last bit.
    """
    n, k = state.n + 1, state.k + int(bool(bit))
    lam = k * state.s_plus - (n - k) * state.s_minus
    return SprtState(n, k, state.s_plus, state.s_minus, lam)


def likelihood_ratio(k: int, n: int, cfg: SprtConfig) -> float:
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= K <= N, got K={k}, N={n}")
    return math.exp(k * cfg.s_plus - (n - k) * cfg.s_minus)


@dataclass
class RunRecord:
    """Observable result of one sequential check: verdict and termination time."""

    outcome: Hypothesis | None
    tau: int
    k: int
    seed: int
    index: int
    config: dict
    algorithm: str = "sprt-deterministic"
    epsilon: float | None = None
    L: float | None = None
    rate: float | None = None
    trajectory: list[float] | None = None
    extra: dict = field(default_factory=dict)
    rng: str = streams.RNG_ALGORITHM
    version: str = __version__

    @property
    def decided(self) -> bool:
        return self.outcome is not None

    def to_dict(self) -> dict[str, Any]:
        d = {
            "outcome": self.outcome.value if self.outcome is not None else UNDECIDED,
            "tau": self.tau,
            "k": self.k,
            "seed": self.seed,
            "index": self.index,
            "algorithm": self.algorithm,
            "version": self.version,
            "rng": self.rng,
            "config": self.config,
        }
        if self.epsilon is not None:
            d.update(epsilon=self.epsilon, L=self.L, rate=self.rate)
        if self.trajectory is not None:
            d["trajectory"] = self.trajectory
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=False)


def _walk(source, formula: Formula, cfg: SprtConfig, rng, upper: float, lower: float,
          trajectory: bool = False):
    """Run the bounded walk; returns ``(outcome, n, k, path)``."""
    s_plus, s_minus = cfg.s_plus, cfg.s_minus
    table = getattr(source, "bit_table", None)
    if table is not None and not trajectory:
        p, hit, miss = table(formula)
        n, k, code = kernels.bernoulli_walk(rng, p, hit, miss, s_plus, s_minus, upper, lower, cfg.cap)
        return _CODES[code], n, k, None
    state = SprtState.start(cfg)
    path = [] if trajectory else None
    for _ in range(cfg.cap):
        state = step(state, satisfies(formula, source.next_signal(rng)))
        if path is not None:
            path.append(state.log_ratio)
        if state.log_ratio >= upper:
            return Hypothesis.NULL, state.n, state.k, path
        if state.log_ratio <= lower:
            return Hypothesis.ALT, state.n, state.k, path
    return None, state.n, state.k, path


def _label(outcome: Hypothesis | None, cfg: SprtConfig) -> Hypothesis | None:
    if outcome is not None and cfg.negate:
        return outcome.flipped()
    return outcome


def run_sprt(source, formula: Formula, cfg: SprtConfig, seed: int = 0, index: int = 0,
             trajectory: bool = False) -> RunRecord:
    """Deterministic sequential test on draws from ``source``.

    Draws come from the data stream ``(seed, index)``, so a given ``(seed,
    index)`` always sees the same signals.
    """
    tested, tcfg = cfg.tested(formula)
    rng = streams.stream(seed, streams.DATA, index)
    outcome, n, k, path = _walk(source, tested, tcfg, rng, tcfg.bound, -tcfg.bound, trajectory)
    return RunRecord(
        _label(outcome, cfg), n, k, seed, index,
        config={**cfg.to_dict(), "formula": format_stl(formula)},
        trajectory=path,
    )


def run_bits(bits: Iterable[int], cfg: SprtConfig, upper: float | None = None) -> RunRecord:
    """Run the test on an explicit sequence of satisfaction bits (at most ``cap`` read)."""
    upper = cfg.bound if upper is None else upper
    arr = np.fromiter(itertools.islice(bits, cfg.cap), dtype=np.uint8)
    n, k, code = kernels.bits_walk(arr, cfg.s_plus, cfg.s_minus, upper, -upper, cfg.cap)
    if code == 0 and n < cfg.cap:
        raise ValueError(f"bit sequence ended after {n} entries without a decision")
    return RunRecord(_CODES[code], n, k, seed=0, index=0, config=cfg.to_dict())


def k1_threshold(cfg: SprtConfig) -> int:
    """Largest ``K1`` whose run of ``K1`` satisfying draws stays below the upper bound.

    Equivalently ``K1 * s_plus < B <= (K1 + 1) * s_plus``.
    """
    b, s = cfg.bound, cfg.s_plus
    k = max(int(math.floor(b / s)), 0)
    while k > 0 and k * s >= b:
        k -= 1
    while (k + 1) * s < b:
        k += 1
    return k


def _alternating() -> Iterator[int]:
    return itertools.cycle((0, 1))


def counterexample_pair(cfg: SprtConfig) -> tuple[Iterator[int], Iterator[int]]:
    """Two adjacent bit sequences with unbounded termination-time gap.

    Both open with ``K1`` ones followed by ``0, 1, 0, 1, ...``; they differ
    only at position ``K1 + 1``, which is 1 in the first sequence (the test
    stops right there) and 0 in the second (the walk then oscillates below the
    bound, and at ``p = 0.5`` never leaves the continuation region).
    """
    k1 = k1_threshold(cfg)
    first = itertools.chain(itertools.repeat(1, k1), (1,), _alternating())
    second = itertools.chain(itertools.repeat(1, k1), (0,), _alternating())
    return first, second
