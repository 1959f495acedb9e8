"""Empirical privacy audit of the randomized stopping rule.

For every noise draw ``L`` the audit runs ``pairs`` adjacent walk pairs that
share all satisfaction bits except the one at ``flip_index`` (1 in the first
walk, 0 in the second) and averages each class's termination times into an
ATT. The two ATT populations are histogrammed on shared bins anchored at 0
and compared bin by bin against the ``e^(2 epsilon)`` bound.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from privsmc import __version__, kernels, streams
from privsmc.edp import EdpConfig, sample_noise
from privsmc.sprt import Hypothesis, UNDECIDED


def accuracy(outcomes: Sequence[Hypothesis | None], truth: Hypothesis = Hypothesis.NULL) -> float:
    """Fraction of outcomes equal to ``truth``; undecided runs count as misses."""
    if len(outcomes) == 0:
        raise ValueError("accuracy of an empty outcome list is undefined")
    return sum(o == truth for o in outcomes) / len(outcomes)


@dataclass(frozen=True)
class AuditConfig:
    edp: EdpConfig
    p_phi: float
    pairs: int = 500
    l_samples: int = 10_000
    flip_index: int = 1
    bin_width: float = 130.0
    min_count: int = 5
    slack: float = 1.25
    seed: int = 0

    def __post_init__(self):
        if self.pairs < 1 or self.l_samples < 1:
            raise ValueError("need at least one pair and one noise sample")
        if not self.bin_width > 0:
            raise ValueError(f"bin width must be positive, got {self.bin_width}")
        if self.flip_index < 1:
            raise ValueError("flip_index is 1-based")
        if not 0 <= self.p_phi <= 1:
            raise ValueError(f"p_phi must lie in [0, 1], got {self.p_phi}")

    @property
    def truth(self) -> Hypothesis:
        return Hypothesis.NULL if self.p_phi > self.edp.base.p else Hypothesis.ALT

    def to_dict(self) -> dict:
        return {
            **self.edp.to_dict(), "p_phi": self.p_phi, "pairs": self.pairs,
            "l_samples": self.l_samples, "flip_index": self.flip_index,
            "bin_width": self.bin_width, "min_count": self.min_count,
            "slack": self.slack, "seed": self.seed,
        }


def pair_runs(cfg: AuditConfig, L: float, index: int):
    """Termination times and outcome codes of the ``pairs`` adjacent pairs for noise ``L``."""
    base = cfg.edp.base
    b = base.bound + L
    rng = streams.stream(cfg.seed, streams.AUDIT, index)
    return kernels.pair_walks(
        rng, cfg.pairs, cfg.p_phi, 1, 0, base.s_plus, base.s_minus, b, -b,
        base.cap, cfg.flip_index,
    )


def att(flip: int, L: float, cfg: AuditConfig, index: int = 0) -> float:
    """Average termination time of the class whose flipped bit equals ``flip``."""
    if flip not in (0, 1):
        raise ValueError("flip must be 0 or 1")
    tau1, tau0, _, _ = pair_runs(cfg, L, index)
    return float(np.mean(tau1 if flip == 1 else tau0))


@dataclass
class AuditReport:
    config: dict
    L: np.ndarray
    att1: np.ndarray
    att0: np.ndarray
    edges: np.ndarray
    counts1: np.ndarray
    counts0: np.ndarray
    censored1: int
    censored0: int
    accuracy: float
    mean_tau: float
    threshold: float
    max_ratio: float | None
    passed: bool
    degenerate: bool
    version: str = __version__
    rng: str = streams.RNG_ALGORITHM

    @property
    def mass1(self) -> np.ndarray:
        return self.counts1 / self.counts1.sum()

    @property
    def mass0(self) -> np.ndarray:
        return self.counts0 / self.counts0.sum()

    @property
    def qualifies(self) -> np.ndarray:
        floor = self.config["min_count"]
        return (self.counts1 >= floor) & (self.counts0 >= floor)

    @property
    def ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.mass1 / self.mass0
        return np.where((self.counts1 > 0) & (self.counts0 > 0), r, np.nan)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "version": self.version,
            "rng": self.rng,
            "accuracy": self.accuracy,
            "mean_tau": self.mean_tau,
            "mean_att_flip1": float(self.att1.mean()),
            "mean_att_flip0": float(self.att0.mean()),
            "censored_flip1": self.censored1,
            "censored_flip0": self.censored0,
            "threshold": self.threshold,
            "max_ratio": self.max_ratio,
            "qualifying_bins": int(self.qualifies.sum()),
            "passed": self.passed,
            "degenerate": self.degenerate,
            "bins": [
                {"bin_left": float(lo), "bin_right": float(hi), "count_flip1": int(c1),
                 "count_flip0": int(c0)}
                for lo, hi, c1, c0 in zip(self.edges[:-1], self.edges[1:], self.counts1, self.counts0)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False)

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "mass_flip1", "mass_flip0", "ratio", "qualifies"])
        for lo, hi, m1, m0, r, q in zip(self.edges[:-1], self.edges[1:], self.mass1,
                                        self.mass0, self.ratios, self.qualifies):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(m1)), repr(float(m0)),
                        "" if math.isnan(r) else repr(float(r)), int(q)])
        return buf.getvalue()

    def att_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample", "L", "att_flip1", "att_flip0"])
        for i, (L, a1, a0) in enumerate(zip(self.L, self.att1, self.att0)):
            w.writerow([i, repr(float(L)), repr(float(a1)), repr(float(a0))])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [
            f"noise samples   {len(self.L)}   pairs per ATT {self.config['pairs']}",
            f"mean ATT        flip=1 {self.att1.mean():.2f}   flip=0 {self.att0.mean():.2f}",
            f"accuracy        {self.accuracy:.4f}   mean tau {self.mean_tau:.2f}",
            f"censored runs   flip=1 {self.censored1}   flip=0 {self.censored0}",
        ]
        width = 40
        top = max(self.mass1.max(), self.mass0.max())
        for lo, m1, m0, q in zip(self.edges[:-1], self.mass1, self.mass0, self.qualifies):
            if m1 == 0 and m0 == 0:
                continue
            bar1 = "#" * int(round(width * m1 / top))
            bar0 = "=" * int(round(width * m0 / top))
            mark = " " if q else "~"
            lines.append(f"{lo:>9.0f} {mark} 1 {bar1}")
            lines.append(f"{'':>9} {mark} 0 {bar0}")
        ratio = "n/a" if self.max_ratio is None else f"{self.max_ratio:.4f}"
        verdict = "PASS" if self.passed else "FAIL"
        flag = " (degenerate histogram)" if self.degenerate else ""
        lines.append(f"max bin ratio   {ratio}   bound {self.threshold:.4f}   {verdict}{flag}")
        return "\n".join(lines)


def _audit_block(cfg: AuditConfig, start: int, stop: int):
    L = np.empty(stop - start)
    att1 = np.empty(stop - start)
    att0 = np.empty(stop - start)
    cens1 = cens0 = correct = 0
    tau_sum = 0
    truth_code = 1 if cfg.truth is Hypothesis.NULL else -1
    for j, i in enumerate(range(start, stop)):
        L[j] = sample_noise(cfg.edp, streams.stream(cfg.seed, streams.NOISE, i)).L
        tau1, tau0, c1, c0 = pair_runs(cfg, L[j], i)
        att1[j], att0[j] = tau1.mean(), tau0.mean()
        cens1 += int((c1 == 0).sum())
        cens0 += int((c0 == 0).sum())
        correct += int((c1 == truth_code).sum() + (c0 == truth_code).sum())
        tau_sum += int(tau1.sum() + tau0.sum())
    return L, att1, att0, cens1, cens0, correct, tau_sum


def run_audit(cfg: AuditConfig, jobs: int = 1) -> AuditReport:
    """Run the audit; ``jobs > 1`` spreads noise samples over processes without changing results."""
    n = cfg.l_samples
    if jobs > 1 and n > 1:
        cuts = np.linspace(0, n, min(jobs * 4, n) + 1).astype(int)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_audit_block, [cfg] * (len(cuts) - 1), cuts[:-1], cuts[1:]))
    else:
        parts = [_audit_block(cfg, 0, n)]
    L = np.concatenate([p[0] for p in parts])
    att1 = np.concatenate([p[1] for p in parts])
    att0 = np.concatenate([p[2] for p in parts])
    cens1, cens0, correct, tau_sum = (sum(p[i] for p in parts) for i in range(3, 7))
    runs = 2 * n * cfg.pairs

    top = max(att1.max(), att0.max())
    nbins = int(math.floor(top / cfg.bin_width)) + 1
    edges = cfg.bin_width * np.arange(nbins + 1)
    counts1 = np.histogram(att1, edges)[0]
    counts0 = np.histogram(att0, edges)[0]

    eps = cfg.edp.epsilon
    threshold = math.exp(2 * eps) * cfg.slack
    qualifies = (counts1 >= cfg.min_count) & (counts0 >= cfg.min_count)
    if qualifies.any():
        r = (counts1[qualifies] / n) / (counts0[qualifies] / n)
        max_ratio = float(np.max(np.maximum(r, 1 / r)))
        passed = max_ratio <= threshold
    else:
        max_ratio, passed = None, True
    degenerate = bool((counts1 > 0).sum() == 1 or (counts0 > 0).sum() == 1 or not qualifies.any())
    return AuditReport(
        config=cfg.to_dict(), L=L, att1=att1, att0=att0, edges=edges,
        counts1=counts1, counts0=counts0, censored1=cens1, censored0=cens0,
        accuracy=correct / runs, mean_tau=tau_sum / runs,
        threshold=threshold, max_ratio=max_ratio, passed=bool(passed), degenerate=degenerate,
    )
