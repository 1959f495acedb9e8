"""Expectedly differentially private sequential checking.

The deterministic test leaks its input through the termination time. Here
both stopping bounds are pushed outwards by one exponential draw ``L`` per run,
with rate ``epsilon / (s_plus + s_minus)``, so the termination time of a run is
randomized on the scale of the walk's expected sensitivity.

Also collected here: the walk's drift, the approximate expected termination
time, the expected sensitivity, and the textbook exponential mechanism kept
as a reference for why plain differential privacy is out of reach.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from privsmc import streams
from privsmc.sprt import RunRecord, SprtConfig, _label, _walk
from privsmc.stl import Formula, format_stl


class ZeroDriftError(ValueError):
    """The walk has zero drift; its expected termination time is unbounded."""


@dataclass(frozen=True)
class EdpConfig:
    base: SprtConfig
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def rate(self) -> float:
        base = self.base.tested_config
        return self.epsilon / (base.s_plus + base.s_minus)

    def to_dict(self) -> dict:
        return {**self.base.to_dict(), "epsilon": self.epsilon}


@dataclass(frozen=True)
class NoiseDraw:
    L: float
    rate: float


def noise_from_uniform(u: float, rate: float) -> float:
    """Inverse CDF of ``Exp(rate)`` at ``1 - u`` for ``u in (0, 1]``; ``u = 1`` gives 0."""
    if math.isinf(rate) or u == 1.0:
        return 0.0
    return -math.log(u) / rate


def sample_noise(cfg: EdpConfig, rng: np.random.Generator) -> NoiseDraw:
    rate = cfg.rate
    u = 1.0 - rng.random()  # uniform on (0, 1]
    return NoiseDraw(noise_from_uniform(u, rate), rate)


def run_edp(source, formula: Formula, cfg: EdpConfig, seed: int = 0, index: int = 0,
            noise: float | None = None, trajectory: bool = False) -> RunRecord:
    """One run with bounds ``+-(B + L)``.

    ``L`` comes from the noise stream ``(seed, index)`` and the draws from the
    same data stream :func:`~privsmc.sprt.run_sprt` uses, so ``L = 0`` replays
    the deterministic run exactly. Pass ``noise`` to fix ``L``.
    """
    tested, tcfg = cfg.base.tested(formula)
    rate = cfg.rate
    if noise is None:
        L = sample_noise(cfg, streams.stream(seed, streams.NOISE, index)).L
    else:
        if noise < 0:
            raise ValueError(f"noise must be non-negative, got {noise}")
        L = float(noise)
    rng = streams.stream(seed, streams.DATA, index)
    b = tcfg.bound + L
    outcome, n, k, path = _walk(source, tested, tcfg, rng, b, -b, trajectory)
    return RunRecord(
        _label(outcome, cfg.base), n, k, seed, index,
        config={**cfg.to_dict(), "formula": format_stl(formula)},
        algorithm="sprt-edp",
        epsilon=cfg.epsilon, L=L, rate=rate, trajectory=path,
    )


def average_step(cfg: SprtConfig, p_phi: float) -> float:
    """Drift ``p_phi * s_plus - (1 - p_phi) * s_minus`` of the log-likelihood walk."""
    if not 0 <= p_phi <= 1:
        raise ValueError(f"p_phi must lie in [0, 1], got {p_phi}")
    return p_phi * cfg.s_plus - (1 - p_phi) * cfg.s_minus


def drift_balance(cfg: SprtConfig) -> float:
    """The ``p_phi`` at which the drift vanishes."""
    return cfg.s_minus / (cfg.s_plus + cfg.s_minus)


def expected_termination(upper: float, lower: float, drift: float) -> float:
    """Approximate mean exit time of a walk started at 0 between ``upper`` and ``-lower``.

    Uses ``(A (1 - e^-B) - B e^-B) / D`` for positive drift, treating the lower
    bound as hit with probability ``e^-B``; a negative drift is handled by
    mirroring the walk. Only accurate when both bounds are large compared with
    a single step.
    """
    if upper <= 0 or lower <= 0:
        raise ValueError("bounds must be positive magnitudes")
    if drift == 0:
        raise ZeroDriftError("expected termination time is unbounded at zero drift")
    if drift < 0:
        upper, lower, drift = lower, upper, -drift
    if math.isinf(lower):
        return upper / drift
    tail = math.exp(-lower)
    return (upper * (1 - tail) - lower * tail) / drift


def expected_sensitivity(cfg: SprtConfig, p_phi: float) -> float:
    """Expected sensitivity ``(s_plus + s_minus) / |D|`` of the termination time."""
    d = average_step(cfg, p_phi)
    if d == 0 or abs(d) < 1e-15 * (cfg.s_plus + cfg.s_minus):
        raise ZeroDriftError(f"zero drift at p_phi={p_phi}: sensitivity is unbounded")
    return (cfg.s_plus + cfg.s_minus) / abs(d)


def exponential_mechanism_pmf(tau_true: float, sensitivity: float, epsilon: float,
                              support: Iterable[int]) -> dict[int, float]:
    """Standard exponential mechanism over termination times.

    ``P(k)`` is proportional to ``exp(-epsilon |tau_true - k| / sensitivity)``.
    ``epsilon = inf`` puts all mass on the support points nearest ``tau_true``.
    """
    support = sorted(set(int(h) for h in support))
    if not support:
        raise ValueError("support must be non-empty")
    if not sensitivity > 0:
        raise ValueError(f"sensitivity must be positive, got {sensitivity}")
    dist = np.abs(np.asarray(support, dtype=float) - tau_true)
    if math.isinf(epsilon):
        weights = (dist == dist.min()).astype(float)
    else:
        # shift by the minimum distance for stability; cancels in the normalization
        weights = np.exp(-epsilon * (dist - dist.min()) / sensitivity)
    probs = weights / weights.sum()
    return dict(zip(support, probs.tolist()))
