"""Black-box sample sources.

A source hands out one :class:`~privsmc.stl.Signal` per ``next_signal(rng)``
call, drawing all randomness from the generator it is given. Sources whose
signals take only two values can additionally describe themselves through
``bit_table`` so the checkers can run the compiled walk kernel instead of
monitoring each signal.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from privsmc import streams
from privsmc.stl import Formula, Signal, parse_stl, read_signal_csv, satisfies


@runtime_checkable
class SampleSource(Protocol):
    def next_signal(self, rng: np.random.Generator) -> Signal: ...


# --------------------------------------------------------------------------
# Bernoulli


BERNOULLI_ATOM = parse_stl("x0 >= 0.5")

_ZERO = Signal([[0.0]])
_ONE = Signal([[1.0]])


@dataclass(frozen=True)
class BernoulliOracle:
    """One-sample signals ``x0 in {0, 1}`` with ``P(x0 = 1) = p_phi``.

    ``x0 = 1`` exactly when the step's uniform draw is below ``p_phi``, so the
    reference atom ``x0 >= 0.5`` is satisfied with probability ``p_phi``.
    """

    p_phi: float

    def __post_init__(self):
        if not 0.0 <= self.p_phi <= 1.0:
            raise ValueError(f"p_phi must lie in [0, 1], got {self.p_phi}")

    def next_signal(self, rng: np.random.Generator) -> Signal:
        return _ONE if rng.random() < self.p_phi else _ZERO

    def bit_table(self, formula: Formula) -> tuple[float, int, int]:
        """``(p, hit, miss)``: the satisfaction bit is ``hit`` if ``u < p`` else ``miss``."""
        return self.p_phi, int(satisfies(formula, _ONE)), int(satisfies(formula, _ZERO))


def bernoulli_next(oracle: BernoulliOracle, rng: np.random.Generator) -> Signal:
    return oracle.next_signal(rng)


@dataclass(frozen=True)
class UniformSource:
    """One-sample signals with ``x0 ~ Uniform[0, 1)``.

    Threshold atoms ``x0 >= theta`` hold with probability ``1 - theta``, which
    makes nested families with a known minimum satisfaction probability.
    """

    def next_signal(self, rng: np.random.Generator) -> Signal:
        return Signal([[rng.random()]])


# --------------------------------------------------------------------------
# Traffic surrogate

TRAFFIC_DEFAULTS = {
    # decision: (speed limit, speed std-dev, threshold p)
    "right": (13.0, 3.0, 0.50),
    "straight": (50.0, 10.0, 0.35),
    "left": (15.0, 5.0, 0.34),
}

TRAFFIC_SPEC = "F[0,240] ((e < 0.20) & (e > -0.20))"


@dataclass(frozen=True)
class TrafficSurrogate:
    """Speed-deviation traces ``e(t) = (v - v_lim) / v_lim`` for one vehicle.

    A single speed ``v ~ N(v_lim, sigma_v^2)`` is drawn per trace and held over
    the whole horizon.
    """

    v_lim: float
    sigma_v: float
    horizon: float = 240.0
    dt: float = 1.0
    decision: str | None = None

    def __post_init__(self):
        if self.v_lim <= 0 or self.sigma_v < 0:
            raise ValueError("need v_lim > 0 and sigma_v >= 0")
        steps = self.horizon / self.dt
        if self.dt <= 0 or self.horizon < 0 or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"dt={self.dt} must divide the horizon T={self.horizon}")

    @classmethod
    def for_decision(cls, decision: str, **overrides) -> "TrafficSurrogate":
        try:
            v_lim, sigma_v, _ = TRAFFIC_DEFAULTS[decision]
        except KeyError:
            raise ValueError(
                f"unknown decision {decision!r}; expected one of {', '.join(TRAFFIC_DEFAULTS)}"
            ) from None
        params = {"v_lim": v_lim, "sigma_v": sigma_v, "decision": decision}
        params.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**params)

    @property
    def samples(self) -> int:
        return int(round(self.horizon / self.dt)) + 1

    def band_probability(self, width: float = 0.20) -> float:
        """``P(|e| < width)`` for the constant-speed surrogate."""
        if self.sigma_v == 0:
            return 1.0 if width > 0 else 0.0
        return math.erf(width * self.v_lim / (self.sigma_v * math.sqrt(2.0)))

    def next_signal(self, rng: np.random.Generator) -> Signal:
        v = self.v_lim + self.sigma_v * rng.standard_normal()
        e = (v - self.v_lim) / self.v_lim
        return Signal(np.full((self.samples, 1), e), self.dt, ("e",))


def traffic_next(model: TrafficSurrogate, rng: np.random.Generator) -> Signal:
    return model.next_signal(rng)


# --------------------------------------------------------------------------
# Replay


class ReplayExhausted(LookupError):
    pass


@dataclass
class ReplaySource:
    """Replays CSV traces from a directory in a seed-fixed shuffled order.

    Every trace is handed out at most once; drawing past the end of the pool
    raises :class:`ReplayExhausted`. The generator passed to ``next_signal``
    is ignored since the order is fixed at construction.
    """

    directory: Path
    seed: int = 0
    _cursor: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        self.directory = Path(self.directory)
        if not self.directory.is_dir():
            raise NotADirectoryError(f"{self.directory} is not a directory")
        files = sorted(self.directory.glob("*.csv"))
        order = streams.stream(self.seed, streams.REPLAY).permutation(len(files))
        self.files = [files[i] for i in order]

    def __len__(self) -> int:
        return len(self.files)

    def replay_next(self, index: int) -> Signal:
        if not 0 <= index < len(self.files):
            raise ReplayExhausted(
                f"trace pool in {self.directory} has {len(self.files)} traces, requested #{index}"
            )
        return read_signal_csv(self.files[index])

    def next_signal(self, rng=None) -> Signal:
        sig = self.replay_next(self._cursor)
        self._cursor += 1
        return sig


def replay_next(path: str | Path, index: int, seed: int = 0) -> Signal:
    return ReplaySource(Path(path), seed).replay_next(index)


# --------------------------------------------------------------------------
# Configuration


class ConfigError(ValueError):
    pass


def read_config(path: str | Path) -> dict[str, str]:
    """Read a plain ``key = value`` file (``#`` comments, also after a value; no sections)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=", ":"),
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string("[config]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(parser["config"])


def _num(cfg, key, default=None, kind=float):
    raw = cfg.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"missing config key {key!r}")
        return default
    try:
        value = kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None
    if kind is float and math.isnan(value):
        raise ConfigError(f"config key {key!r} is NaN")
    return value


def source_from_config(cfg: dict[str, str], base_dir: Path | None = None):
    """Build a source from config keys ``source``, ``p_phi``, ``v_lim``, ``sigma_v``, ``T``, ``dt``."""
    kind = cfg.get("source", "bernoulli").strip().lower()
    try:
        if kind == "bernoulli":
            return BernoulliOracle(_num(cfg, "p_phi"))
        if kind == "uniform":
            return UniformSource()
        if kind == "traffic":
            decision = cfg.get("decision")
            if decision:
                return TrafficSurrogate.for_decision(
                    decision.strip(),
                    v_lim=_num(cfg, "v_lim", 0.0) or None,
                    sigma_v=_num(cfg, "sigma_v", -1.0) if "sigma_v" in cfg else None,
                    horizon=_num(cfg, "t", 240.0),
                    dt=_num(cfg, "dt", 1.0),
                )
            return TrafficSurrogate(
                _num(cfg, "v_lim"), _num(cfg, "sigma_v"),
                _num(cfg, "t", 240.0), _num(cfg, "dt", 1.0),
            )
        if kind == "replay":
            trace_dir = Path(cfg.get("trace_dir", ""))
            if base_dir is not None and not trace_dir.is_absolute():
                trace_dir = base_dir / trace_dir
            return ReplaySource(trace_dir, _num(cfg, "seed", 0, int))
    except (ValueError, NotADirectoryError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown source kind {kind!r}")
