"""Command-line entry point: ``privsmc check | ci | audit | demo-traffic``.

Every command writes machine-readable files into ``--out`` and prints a short
rendering of them. Each file carries the run manifest (command, config, seed,
version, timestamp); re-running with the same manifest reproduces every byte
except the timestamp.

Exit codes: 0 success, 2 configuration error, 3 runtime/source error,
4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from privsmc import __version__, streams
from privsmc.audit import AuditConfig, run_audit
from privsmc.edp import EdpConfig, run_edp
from privsmc.models import (
    BERNOULLI_ATOM, TRAFFIC_DEFAULTS, TRAFFIC_SPEC, BernoulliOracle, ConfigError,
    ReplayExhausted, ReplaySource, TrafficSurrogate, _num, read_config, source_from_config,
)
from privsmc.parametrized import FamilySpec, run_ci_smc
from privsmc.sprt import Hypothesis, RunRecord, SprtConfig, UNDECIDED, run_sprt
from privsmc.stl import StlBoundError, format_stl, parse_stl

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INVARIANT = 0, 2, 3, 4

SUMMARY_COLUMNS = ["runs", "algorithm", "truth", "h_null", "h_alt", "undecided",
                   "accuracy", "mean_tau", "std_tau"]
RUN_COLUMNS = ["index", "outcome", "tau", "k", "L"]


class InvariantError(RuntimeError):
    pass


class RuntimeFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# plumbing


def _manifest(args, config: dict) -> dict:
    return {
        "subcommand": args.command,
        "config_path": str(args.config) if getattr(args, "config", None) else None,
        "config": config,
        "seed": args.seed,
        "out": str(args.out),
        "version": __version__,
        "rng": streams.RNG_ALGORITHM,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def _num_text(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def _csv_text(manifest: dict, header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write("# manifest " + json.dumps(manifest, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num_text(v) for v in row])
    return buf.getvalue()


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")


def _load(args) -> tuple[dict, Path | None]:
    if getattr(args, "config", None) is None:
        return {}, None
    path = Path(args.config)
    return read_config(path), path.parent


def _flag(cfg, key) -> bool:
    raw = cfg.get(key, "false").strip().lower()
    if raw in ("1", "true", "yes", "on"):
        return True
    if raw in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")


def _pick(flag, cfg, key, default, kind=float):
    return flag if flag is not None else _num(cfg, key, default, kind)


def _formula(cfg, base_dir, default):
    if "formula_file" in cfg:
        path = Path(cfg["formula_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read formula file {path}: {exc.strerror or exc}") from None
    elif "formula" in cfg:
        text = cfg["formula"]
    elif default is not None:
        return default
    else:
        raise ConfigError("config needs 'formula' or 'formula_file'")
    try:
        return parse_stl(text.strip())
    except ValueError as exc:
        raise ConfigError(f"formula: {exc}") from None


def _truth(source, formula, p: float, cfg: dict):
    """Ground-truth hypothesis when it is known, else ``None``."""
    if "truth" in cfg:
        try:
            return Hypothesis(cfg["truth"].strip())
        except ValueError:
            raise ConfigError(f"truth must be H_null or H_alt, got {cfg['truth']!r}") from None
    p_sat = None
    if isinstance(source, BernoulliOracle):
        q, hit, miss = source.bit_table(formula)
        p_sat = q * hit + (1 - q) * miss
    elif isinstance(source, TrafficSurrogate) and formula == parse_stl(TRAFFIC_SPEC) \
            and source.horizon >= 240:
        p_sat = source.band_probability(0.20)
    if p_sat is None or p_sat == p:
        return None
    return Hypothesis.NULL if p_sat > p else Hypothesis.ALT


def _run_block(job, start: int, stop: int) -> list[RunRecord]:
    kind, source, target, cfg, seed = job
    out = []
    for i in range(start, stop):
        if kind == "sprt":
            out.append(run_sprt(source, target, cfg, seed, i))
        elif kind == "edp":
            out.append(run_edp(source, target, cfg, seed, i))
        else:
            p, alpha, cap, n_eta, every = cfg
            out.append(run_ci_smc(source, target, p, alpha, cap, seed, i, n_eta, every))
    return out


def _run_reps(job, reps: int, jobs: int) -> list[RunRecord]:
    source = job[1]
    if jobs <= 1 or reps <= 1 or isinstance(source, ReplaySource):
        # replay sources hand out a shared pool in order, so they stay sequential
        return _run_block(job, 0, reps)
    cuts = np.linspace(0, reps, min(jobs * 4, reps) + 1).astype(int)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = pool.map(_run_block, [job] * (len(cuts) - 1), cuts[:-1], cuts[1:])
        return [r for part in parts for r in part]


def _summary(records: list[RunRecord], algorithm: str, truth) -> list:
    if not records:
        return []
    outcomes = [r.outcome for r in records]
    taus = np.array([r.tau for r in records], dtype=float)
    acc = None if truth is None else sum(o == truth for o in outcomes) / len(outcomes)
    return [[
        len(records), algorithm, "" if truth is None else truth.value,
        outcomes.count(Hypothesis.NULL), outcomes.count(Hypothesis.ALT), outcomes.count(None),
        acc, float(taus.mean()), float(taus.std(ddof=1)) if len(taus) > 1 else None,
    ]]


def _check_records(records: list[RunRecord], cap: int) -> None:
    for i, r in enumerate(records):
        if r.index != i:
            raise InvariantError(f"record {i} carries index {r.index}")
        if not 1 <= r.tau <= cap or not 0 <= r.k <= r.tau:
            raise InvariantError(f"record {i}: tau={r.tau}, k={r.k} outside [1, cap={cap}]")
        if r.outcome is None and r.tau != cap:
            raise InvariantError(f"record {i}: undecided before the cap")


def _emit_runs(args, config: dict, records: list[RunRecord], algorithm: str, truth) -> None:
    manifest = _manifest(args, config)
    summary = _summary(records, algorithm, truth)
    summary_dict = dict(zip(SUMMARY_COLUMNS, summary[0])) if summary else None
    payload = {
        "manifest": manifest,
        "summary": summary_dict,
        "records": [r.to_dict() for r in records],
    }
    out = Path(args.out)
    _write(out, "records.json", json.dumps(payload, sort_keys=True, indent=1, allow_nan=False) + "\n")
    run_rows = ([r.index, r.outcome.value if r.outcome else UNDECIDED, r.tau, r.k, r.L]
                for r in records)
    _write(out, "runs.csv", _csv_text(manifest, RUN_COLUMNS, run_rows))
    _write(out, "summary.csv", _csv_text(manifest, SUMMARY_COLUMNS, summary))
    if summary_dict is None:
        print(f"{algorithm}: no repetitions")
        return
    acc = summary_dict["accuracy"]
    std = summary_dict["std_tau"]
    print(f"{algorithm}  runs {summary_dict['runs']}  "
          f"H_null {summary_dict['h_null']}  H_alt {summary_dict['h_alt']}  "
          f"undecided {summary_dict['undecided']}")
    print(f"accuracy {'n/a' if acc is None else f'{acc:.4f}'}  "
          f"mean tau {summary_dict['mean_tau']:.2f}  std tau {'n/a' if std is None else f'{std:.2f}'}")
    print(f"wrote {out / 'records.json'}, runs.csv, summary.csv")


# --------------------------------------------------------------------------
# commands


def _sprt_config(args, cfg, default_p=None, default_delta=None, default_alpha=None):
    p = _num(cfg, "p", default_p)
    delta = _num(cfg, "delta", default_delta)
    alpha = _num(cfg, "alpha", default_alpha)
    cap = _pick(args.cap, cfg, "cap", 1_000_000, int)
    try:
        return SprtConfig(p, delta, alpha, cap, _flag(cfg, "negate"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _batch(args, cfg, source, formula, base) -> int:
    eps = args.epsilon if args.epsilon is not None else (
        _num(cfg, "epsilon", None) if "epsilon" in cfg else None)
    reps = _pick(args.reps, cfg, "reps", 1, int)
    if reps < 0:
        raise ConfigError(f"reps must be non-negative, got {reps}")
    if eps is None:
        job, algorithm = ("sprt", source, formula, base, args.seed), "sprt-deterministic"
    else:
        try:
            job, algorithm = ("edp", source, formula, EdpConfig(base, eps), args.seed), "sprt-edp"
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    config = {**base.to_dict(), "epsilon": eps, "reps": reps, "formula": format_stl(formula),
              "source": _describe(source)}
    truth = _truth(source, formula, base.p, cfg)
    records = _execute(job, reps, args.jobs)
    _check_records(records, base.cap)
    _emit_runs(args, config, records, algorithm, truth)
    return EXIT_OK


def _describe(source) -> dict:
    if isinstance(source, ReplaySource):
        return {"kind": "replay", "traces": len(source), "directory": str(source.directory)}
    d = {"kind": type(source).__name__}
    d.update({k: v for k, v in vars(source).items() if not k.startswith("_")})
    return d


def _execute(job, reps, jobs):
    try:
        return _run_reps(job, reps, jobs)
    except StlBoundError as exc:
        # a time bound that misses the trace grid is a formula/config mismatch
        raise ConfigError(str(exc)) from None
    except (ReplayExhausted, OSError, ValueError) as exc:
        raise RuntimeFailure(str(exc)) from exc


def cmd_check(args) -> int:
    cfg, base_dir = _load(args)
    if args.config is None:
        raise ConfigError("check needs --config")
    source = source_from_config(cfg, base_dir)
    default = BERNOULLI_ATOM if isinstance(source, BernoulliOracle) else (
        parse_stl(TRAFFIC_SPEC) if isinstance(source, TrafficSurrogate) else None)
    formula = _formula(cfg, base_dir, default)
    return _batch(args, cfg, source, formula, _sprt_config(args, cfg))


def cmd_demo_traffic(args) -> int:
    cfg, _ = _load(args)
    if args.decision not in TRAFFIC_DEFAULTS:
        raise ConfigError(f"unknown decision {args.decision!r}; expected one of "
                          f"{', '.join(TRAFFIC_DEFAULTS)}")
    source = TrafficSurrogate.for_decision(args.decision)
    p = TRAFFIC_DEFAULTS[args.decision][2]
    base = _sprt_config(args, cfg, default_p=p, default_delta=0.03, default_alpha=0.01)
    if args.epsilon is None and "epsilon" not in cfg:
        args.epsilon = 0.05
    if args.reps is None and "reps" not in cfg:
        args.reps = 200
    return _batch(args, cfg, source, parse_stl(TRAFFIC_SPEC), base)


def cmd_ci(args) -> int:
    cfg, base_dir = _load(args)
    if args.config is None:
        raise ConfigError("ci needs --config")
    source = source_from_config(cfg, base_dir)

    def resolve(key):
        path = Path(cfg[key])
        return base_dir / path if base_dir is not None and not path.is_absolute() else path

    negate = _flag(cfg, "negate")
    try:
        if "template_file" in cfg:
            family = FamilySpec.from_files(resolve("template_file"), resolve("grid_file"), negate)
        else:
            template = cfg.get("template")
            if template is None or "grid_file" not in cfg:
                raise ConfigError("ci needs 'template' or 'template_file' plus 'grid_file'")
            family = FamilySpec.from_grid_csv(template, resolve("grid_file"), negate)
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"family: {exc}") from None
    p = _num(cfg, "p")
    alpha = _num(cfg, "alpha")
    if not (0 < p < 1 and 0 < alpha < 1):
        raise ConfigError("need 0 < p < 1 and 0 < alpha < 1")
    cap = _pick(args.cap, cfg, "cap", 100_000, int)
    reps = _pick(args.reps, cfg, "reps", 1, int)
    n_eta = _num(cfg, "n_eta", 200, int)
    every = _num(cfg, "recompute_every", 10, int)
    if cap < 1 or reps < 0 or n_eta < 1 or every < 1:
        raise ConfigError("cap, n_eta and recompute_every must be positive, reps non-negative")
    config = {"template": family.template, "grid": [list(r) for r in family.grid],
              "labels": list(family.labels), "negate": negate, "p": p, "alpha": alpha,
              "cap": cap, "reps": reps, "n_eta": n_eta, "recompute_every": every,
              "source": _describe(source)}
    truth = None
    if "truth" in cfg:
        truth = _truth(source, None, p, cfg)
    records = _execute(("ci", source, family, (p, alpha, cap, n_eta, every), args.seed),
                       reps, args.jobs)
    _check_records(records, cap)
    _emit_runs(args, config, records, "ci-rademacher", truth)
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg, _ = _load(args)
    if args.config is None:
        raise ConfigError("audit needs --config")
    base = _sprt_config(args, cfg)
    eps = args.epsilon if args.epsilon is not None else _num(cfg, "epsilon")
    try:
        acfg = AuditConfig(
            EdpConfig(base, eps), _num(cfg, "p_phi"),
            pairs=_num(cfg, "pairs", 500, int),
            l_samples=_pick(args.reps, cfg, "l_samples", 10_000, int),
            flip_index=_num(cfg, "flip_index", 1, int),
            bin_width=_num(cfg, "bin_width", 130.0),
            min_count=_num(cfg, "min_count", 5, int),
            slack=_num(cfg, "slack", 1.25),
            seed=args.seed,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    report = run_audit(acfg, jobs=args.jobs)
    if report.max_ratio is not None and report.passed != (report.max_ratio <= report.threshold):
        raise InvariantError("pass flag disagrees with the ratio test")
    if not 0 <= report.accuracy <= 1:
        raise InvariantError(f"accuracy {report.accuracy} outside [0, 1]")
    manifest = _manifest(args, acfg.to_dict())
    out = Path(args.out)
    body = report.to_dict()
    body["manifest"] = manifest
    _write(out, "report.json", json.dumps(body, sort_keys=True, indent=1, allow_nan=False) + "\n")
    _write(out, "histogram.csv", "# manifest " + json.dumps(manifest, sort_keys=True) + "\n"
           + report.histogram_csv())
    _write(out, "att.csv", "# manifest " + json.dumps(manifest, sort_keys=True) + "\n"
           + report.att_csv())
    print(report.summary())
    print(f"wrote {out / 'report.json'}, histogram.csv, att.csv")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits: {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="plain key = value config file")
    common.add_argument("--seed", type=_u64, default=0, help="master seed (default 0)")
    common.add_argument("--out", type=Path, default=Path("privsmc-out"), help="output directory")
    common.add_argument("--jobs", type=_positive, default=1, help="worker processes")
    common.add_argument("--epsilon", type=float, help="privacy parameter; omit for the plain test")
    common.add_argument("--reps", type=_nonneg, help="repetitions (audit: noise samples)")
    common.add_argument("--cap", type=_positive, help="draw cap per run")

    parser = argparse.ArgumentParser(prog="privsmc", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="repeated sequential checks of one formula")
    sub.add_parser("ci", parents=[common], help="confidence-interval check over a formula family")
    sub.add_parser("audit", parents=[common], help="empirical privacy audit of the noisy test")
    demo = sub.add_parser("demo-traffic", parents=[common], help="intersection case study")
    demo.add_argument("--decision", default="right", help="right, straight or left")
    return parser


COMMANDS = {"check": cmd_check, "ci": cmd_ci, "audit": cmd_audit, "demo-traffic": cmd_demo_traffic}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"privsmc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, ReplayExhausted, OSError) as exc:
        print(f"privsmc: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except InvariantError as exc:
        print(f"privsmc: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
