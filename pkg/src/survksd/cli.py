"""Command-line interface.

Subcommands::

    survksd test --input data.csv --null exp:rate=1 --op m --op p
    survksd simulate --model weibull:shape=1.5,rate=1 --n 100 --censoring 0.3 --output d.csv
    survksd power --preset fig2-periodic --reps 50 --output power.csv
    survksd identity-check --null exp:rate=1 --op m

Exit codes: 0 success, 1 statistical-precondition failure (or a failed
identity check), 2 I/O or parse failure.  The default worker count for
``power`` comes from the ``SURVKSD_WORKERS`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from dataclasses import dataclass, field

from . import __version__
from .data import read_csv, write_csv
from .errors import ConfigError, DataFormatError, InputError, StatisticalPreconditionError
from .models import parse_model_spec
from .simulation import (
    PRESETS,
    ExperimentSpec,
    calibrate_censoring,
    default_workers,
    generate_censored,
    identity_check,
    run_power_study,
)
from .stein import canonical_operator
from .testing import DEFAULT_ALPHA, DEFAULT_BOOTSTRAP, run_test, weighted_logrank

log = logging.getLogger("survksd")

EXIT_OK, EXIT_PRECONDITION, EXIT_IO = 0, 1, 2
RESULT_FIELDS = ("operator", "n", "n_events", "bandwidth", "statistic", "p_value",
                 "reject", "alpha", "n_bootstrap", "seed")


@dataclass
class RunConfig:
    subcommand: str
    input: str | None = None
    null: str | None = None
    operators: list = field(default_factory=list)
    alpha: float = DEFAULT_ALPHA
    n_bootstrap: int = DEFAULT_BOOTSTRAP
    bandwidth: float | str = "median"
    seed: int = 0
    output: str | None = None
    format: str = "json"

    def __post_init__(self):
        if self.subcommand == "test" and not self.input:
            raise ConfigError("test requires --input")
        if self.subcommand in ("test", "identity-check") and not self.null:
            raise ConfigError(f"{self.subcommand} requires --null")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"unknown output format {self.format!r}")
        if not (0 < self.alpha < 1):
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n_bootstrap < 1:
            raise ConfigError("--bootstrap must be a positive integer")
        if self.seed < 0:
            raise ConfigError("--seed must be nonnegative")


def _bandwidth(text: str):
    if text == "median":
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bandwidth must be 'median' or a number, got {text!r}")
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"bandwidth must be positive, got {text!r}")
    return value


def _emit(text: str, output: str | None) -> None:
    if output is None or output == "-":
        sys.stdout.write(text)
    else:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def result_document(cfg: RunConfig, results: list) -> dict:
    return {"input": cfg.input, "null": cfg.null, "results": results}


def decision(record: dict) -> bool:
    """Recompute the reject bit from a result record."""
    return record["p_value"] < record["alpha"]


def load_results(path) -> list:
    """Read a ``test`` JSON document and check every stored decision."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for rec in doc["results"]:
        if decision(rec) != rec["reject"]:
            raise ValueError(f"inconsistent decision in record {rec}")
    return doc["results"]


def cmd_test(cfg: RunConfig) -> int:
    try:
        sample = read_csv(cfg.input)
    except StatisticalPreconditionError as exc:
        # an unreadable or empty file is an input failure, not a statistical one
        raise DataFormatError(str(exc)) from exc
    model = parse_model_spec(cfg.null)
    kernel = None if cfg.bandwidth == "median" else cfg.bandwidth
    records = []
    for tag in cfg.operators or ["m"]:
        low = tag.lower()
        if low in ("lr1", "lr2"):
            lr = weighted_logrank(sample, model, low.upper())
            records.append({
                "operator": low, "n": sample.n, "n_events": sample.n_events,
                "bandwidth": None, "statistic": lr.z, "p_value": lr.p_value,
                "reject": lr.p_value < cfg.alpha, "alpha": cfg.alpha,
                "n_bootstrap": None, "seed": None,
            })
            continue
        op = canonical_operator(tag)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = run_test(sample, model, op, kernel=kernel, alpha=cfg.alpha,
                           n_bootstrap=cfg.n_bootstrap, seed=cfg.seed)
        for w in caught:
            log.warning("%s", w.message)
        records.append({k: getattr(res, k) for k in RESULT_FIELDS})
    if cfg.format == "json":
        text = _dump_json(result_document(cfg, records))
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for rec in records:
            w.writerow(["" if rec[k] is None else rec[k] for k in RESULT_FIELDS])
        text = buf.getvalue()
    _emit(text, cfg.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    model = parse_model_spec(args.model)
    rate = calibrate_censoring(model, args.censoring)
    sample = generate_censored(model, args.n, rate, args.seed)
    if args.output in (None, "-"):
        buf = io.StringIO()
        buf.write("time,status\n")
        for t, d in zip(sample.times, sample.events):
            buf.write(f"{float(t)!r},{int(d)}\n")
        sys.stdout.write(buf.getvalue())
    else:
        write_csv(sample, args.output)
    return EXIT_OK


def load_experiment(path: str | None, preset: str | None) -> ExperimentSpec:
    if path is None and preset is None:
        raise ConfigError("power requires --config or --preset")
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    if preset is not None:
        data.setdefault("preset", preset)
    return ExperimentSpec.from_dict(data)


def cmd_power(args) -> int:
    spec = load_experiment(args.config, args.preset)
    overrides = {}
    if args.reps is not None:
        overrides["n_repetitions"] = args.reps
    if args.bootstrap is not None:
        overrides["n_bootstrap"] = args.bootstrap
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        spec = ExperimentSpec(**{**spec.to_dict(), **overrides})
    workers = args.workers if args.workers is not None else default_workers()
    report = run_power_study(spec, workers=workers)
    if args.format == "json":
        rows = [{"operator": r.operator, "n": r.n, "param": r.param, "censoring": r.censoring,
                 "alpha": r.alpha, "rejections": r.rejections, "reps": r.reps,
                 "rate": None if math.isnan(r.rate) else r.rate,
                 "se": None if math.isnan(r.se) else r.se, "errors": r.errors,
                 "error": r.error} for r in report.rows]
        text = _dump_json({"spec": spec.to_dict(), "rows": rows})
    else:
        text = report.to_csv()
    _emit(text, args.output)
    return EXIT_OK


def cmd_identity_check(args) -> int:
    model = parse_model_spec(args.null)
    data_model = parse_model_spec(args.data_model) if args.data_model else None
    if args.censoring_rate is not None:
        rate = args.censoring_rate
    else:
        rate = calibrate_censoring(data_model or model, args.censoring)
    report = identity_check(args.op, model, args.bandwidth, rate, data_model=data_model)
    report["tolerance"] = args.tol
    report["passed"] = report["max_abs_deviation"] < args.tol
    _emit(_dump_json(report), args.output)
    return EXIT_OK if report["passed"] else EXIT_PRECONDITION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="survksd", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="subcommand", required=True)

    t = sub.add_parser("test", help="goodness-of-fit tests on a time,status CSV")
    t.add_argument("--input", required=True)
    t.add_argument("--null", required=True, help="e.g. exp:rate=1, weibull:shape=2,rate=1")
    t.add_argument("--op", action="append", default=[],
                   help="s, m, mu, p, lr1 or lr2; repeatable (default m)")
    t.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    t.add_argument("--bootstrap", type=int, default=DEFAULT_BOOTSTRAP)
    t.add_argument("--bandwidth", type=_bandwidth, default="median")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--output")
    t.add_argument("--format", choices=("json", "csv"), default="json")

    s = sub.add_parser("simulate", help="write a simulated censored dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--censoring", type=float, default=0.3, help="target censored fraction")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output")

    w = sub.add_parser("power", help="run a power/size study")
    w.add_argument("--config", help="JSON experiment file")
    w.add_argument("--preset", choices=sorted(PRESETS))
    w.add_argument("--reps", type=int)
    w.add_argument("--bootstrap", type=int)
    w.add_argument("--seed", type=int)
    w.add_argument("--workers", type=int)
    w.add_argument("--output")
    w.add_argument("--format", choices=("csv", "json"), default="csv")

    i = sub.add_parser("identity-check", help="quadrature check of the Stein identity")
    i.add_argument("--null", required=True)
    i.add_argument("--op", default="m")
    i.add_argument("--data-model", help="integrate against this law instead of the null")
    i.add_argument("--censoring", type=float, default=0.3, help="target censored fraction")
    i.add_argument("--censoring-rate", type=float, help="exponential censoring rate (overrides)")
    i.add_argument("--bandwidth", type=float, default=1.0)
    i.add_argument("--tol", type=float, default=1e-6)
    i.add_argument("--output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.subcommand == "test":
            cfg = RunConfig("test", input=args.input, null=args.null, operators=args.op,
                            alpha=args.alpha, n_bootstrap=args.bootstrap,
                            bandwidth=args.bandwidth, seed=args.seed, output=args.output,
                            format=args.format)
            return cmd_test(cfg)
        if args.subcommand == "simulate":
            return cmd_simulate(args)
        if args.subcommand == "power":
            return cmd_power(args)
        return cmd_identity_check(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StatisticalPreconditionError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
