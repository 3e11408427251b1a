"""Command-line interface.

Four subcommands: `simulate` grows one tree and dumps its trace as JSON,
`experiment` runs a JSON-configured experiment and emits CSV + manifest,
`verify` runs a named verification suite, and `analyze` fits beta/nu curves
from a previously emitted CSV.  Exit codes: 0 success, 1 verification
failure, 2 configuration error (argparse uses 2 for bad arguments too).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys

from . import __version__
from .errors import ConfigError
from .experiments import (
    ExperimentConfig,
    emit,
    estimate_beta,
    run_experiment,
)
from .growth import grow_profile
from .verify import SUITES, verify
from .weights import WeightSpec

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_CONFIG = 2


def _parse_param(pairs) -> dict:
    params: dict = {}
    for pair in pairs or ():
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"--param expects key=value, got {pair!r}")
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            try:
                params[key] = float(raw)
            except ValueError as exc:
                raise ConfigError(f"--param {key} has unreadable value {raw!r}") from exc
    return params


def _parse_checkpoints(text: str | None):
    if not text:
        return None
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise ConfigError(f"--checkpoints expects comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dwtree",
        description="depth-weighted random tree simulation and analytics",
    )
    parser.add_argument("--version", action="version", version=f"dwtree {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="grow one tree and dump the trace as JSON")
    sim.add_argument("--family", required=True, help="weight family name")
    sim.add_argument(
        "--param",
        action="append",
        metavar="KEY=VALUE",
        help="family parameter (repeatable); values parse as JSON, then float",
    )
    sim.add_argument("--scale-log2", type=int, default=0, help="power-of-two weight scale")
    sim.add_argument("-n", "--n", type=int, required=True, help="number of vertices")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--stream", type=int, default=0)
    sim.add_argument("--track-tau", action="store_true", help="record the embedded clock")
    sim.add_argument("--track-j", action="store_true", help="record descent indicators")
    sim.add_argument("--checkpoints", help="comma-separated vertex counts to snapshot")
    sim.add_argument("--out", help="write JSON here instead of stdout")

    exp = sub.add_parser("experiment", help="run a JSON-configured experiment")
    exp.add_argument("config", help="path to the experiment config JSON")
    exp.add_argument("--seed", type=int, help="override the config seed")
    exp.add_argument("--samples", type=int, help="override the config sample count")
    exp.add_argument("--threads", type=int, help="override the worker count")
    exp.add_argument(
        "--out", help="override the output stem (<stem>.csv, <stem>.manifest.json)"
    )

    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("suite", choices=sorted(SUITES), help="suite name")
    ver.add_argument("--seed", type=int, default=0)

    ana = sub.add_parser("analyze", help="fit beta/nu curves from an emitted CSV")
    ana.add_argument("fit", choices=("beta", "nu"), help="which fit to run")
    ana.add_argument("csv", help="path to a CSV emitted by `experiment`")
    return parser


def _cmd_simulate(args) -> int:
    spec = WeightSpec(args.family, _parse_param(args.param), args.scale_log2)
    trace = grow_profile(
        spec,
        args.n,
        args.seed,
        stream=args.stream,
        track_tau=args.track_tau,
        track_j=args.track_j,
        checkpoints=_parse_checkpoints(args.checkpoints),
    )
    payload = trace.to_json_dict()
    payload["spec"] = {
        "family": spec.family,
        "params": dict(spec.params),
        "scale_log2": spec.scale_log2,
    }
    if trace.checkpoints:
        payload["checkpoints"] = [
            {"n": cp.n, "d": cp.d, "z": cp.z, "tau": cp.tau} for cp in trace.checkpoints
        ]
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_experiment(args) -> int:
    config = ExperimentConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.samples is not None:
        overrides["samples"] = args.samples
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.out is not None:
        overrides["out"] = args.out
    if overrides:
        config = dataclasses.replace(config, **overrides)
    result = run_experiment(config)
    for row in result.rows:
        s = row.summary
        print(
            f"{row.param}\tn={row.n}\t{row.statistic}\t"
            f"mean={s.mean:.6g}\tstderr={s.stderr:.3g}\tsamples={s.count}"
        )
    if result.verify_report is not None:
        print(result.verify_report.to_text(), end="")
    if config.out:
        csv_path, manifest_path = emit(result, config.out)
        print(f"wrote {csv_path}")
        print(f"wrote {manifest_path}")
    return EXIT_OK if result.ok else EXIT_VERIFY_FAIL


def _cmd_verify(args) -> int:
    report = verify(args.suite, seed=args.seed)
    print(report.to_text(), end="")
    return EXIT_OK if report.passed else EXIT_VERIFY_FAIL


def _read_rows(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _cmd_analyze(args) -> int:
    rows = _read_rows(args.csv)
    if args.fit == "beta":
        series = []
        for row in rows:
            n = int(row["n"])
            mean = float(row["mean"])
            if row["statistic"] == "depth":
                series.append((n, mean))
            elif row["statistic"] == "d_over_ln_n":
                series.append((n, mean * math.log(n)))
        if not series:
            raise ConfigError(
                "no usable rows: beta needs statistic 'depth' or 'd_over_ln_n'"
            )
        fit = estimate_beta(series)
        print(
            json.dumps(
                {"slope": fit.slope, "intercept": fit.intercept, "residual": fit.residual},
                sort_keys=True,
            )
        )
        return EXIT_OK
    # nu: per-parameter means, plus a smoothed monotonicity verdict
    pts = [
        (float(row["param"]), float(row["mean"]), float(row["stderr"]))
        for row in rows
        if row["statistic"] == "d_over_n"
    ]
    if not pts:
        raise ConfigError("no usable rows: nu needs statistic 'd_over_n'")
    pts.sort()
    for c, mean, se in pts:
        print(f"{c!r},{mean!r},{se!r}")
    means = [m for _, m, _ in pts]
    smooth = [
        sum(means[max(0, i - 1) : i + 2]) / len(means[max(0, i - 1) : i + 2])
        for i in range(len(means))
    ]
    non_decreasing = all(b >= a for a, b in zip(smooth, smooth[1:]))
    print(f"non-decreasing after 3-point smoothing: {non_decreasing}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "experiment": _cmd_experiment,
        "verify": _cmd_verify,
        "analyze": _cmd_analyze,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
