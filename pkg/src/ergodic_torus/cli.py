"""Command-line interface.

Exit codes: 0 success, 2 precondition or configuration error, 3 a requested
acceptance threshold was missed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_THRESHOLD = 0, 2, 3

_GLOBAL_DEFAULTS = {"config": None, "seed": None, "threads": None, "out": None}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _range(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected MIN:MAX")
    lo = float(parts[0]) if parts[0] else float("-inf")
    hi = float(parts[1]) if parts[1] else float("inf")
    return lo, hi


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _add_globals(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON sweep configuration")
    g.add_argument("--seed", type=_u64, default=argparse.SUPPRESS, help="master seed (u64)")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    g.add_argument("--out", default=argparse.SUPPRESS, help="output directory")


def _add_sweep_opts(p: argparse.ArgumentParser, time_grid: bool = False) -> None:
    p.add_argument("--problem")
    p.add_argument("--scheme")
    p.add_argument("--noise", choices=["gaussian", "rademacher", "three_point"])
    p.add_argument("--observable", action="append", help="repeatable")
    if time_grid:
        p.add_argument("--delta", type=float)
        p.add_argument("--horizons", type=_floats)
    else:
        p.add_argument("--deltas", type=_floats)
        p.add_argument("--horizon", type=float)
    p.add_argument("--repeats", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--expect-slope", type=_range, metavar="MIN:MAX",
                   help="exit 3 unless the fitted slope lies in [MIN, MAX]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergodic-torus", description=__doc__.splitlines()[0])
    _add_globals(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oracle", help="stationary average, Poisson residual, asymptotic variance")
    _add_globals(p)
    p.add_argument("--problem", required=True)
    p.add_argument("--observable", required=True)
    p.add_argument("--cutoff", type=int)

    p = sub.add_parser("simulate", help="one time-averaged trajectory, one CSV row")
    _add_globals(p)
    p.add_argument("--problem", required=True)
    p.add_argument("--scheme", required=True)
    p.add_argument("--observable", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--blocks", type=int, default=32)
    p.add_argument("--burnin", type=int, default=0)
    p.add_argument("--noise", choices=["gaussian", "rademacher", "three_point"])
    p.add_argument("--x0", type=_floats)
    p.add_argument("--stream", type=_u64, default=0)
    p.add_argument("--header", action="store_true", help="print the column names first")

    p = sub.add_parser("check-order", help="Monte-Carlo weak-order certificate")
    _add_globals(p)
    p.add_argument("--scheme", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--p", type=int)
    p.add_argument("--deltas", type=_floats, default=[0.4, 0.2, 0.1])
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--noise", choices=["gaussian", "rademacher", "three_point"])
    p.add_argument("--substeps", type=int, default=512)

    for name, helptext in (("sweep-delta", "bias vs time step"),
                           ("extrapolate", "Richardson-extrapolated bias vs time step")):
        p = sub.add_parser(name, help=helptext)
        _add_globals(p)
        _add_sweep_opts(p)
    p = sub.add_parser("sweep-time", help="mean-square error vs horizon")
    _add_globals(p)
    _add_sweep_opts(p, time_grid=True)

    p = sub.add_parser("distance", help="max error over a normalized dictionary per time step")
    _add_globals(p)
    _add_sweep_opts(p)
    p.add_argument("--expect-ratio", type=_range, metavar="MIN:MAX",
                   help="exit 3 unless max-error(delta_1)/max-error(delta_2) lies in [MIN, MAX]")
    return parser


def _globals(args) -> dict:
    return {k: getattr(args, k, v) for k, v in _GLOBAL_DEFAULTS.items()}


def _emit(payload: dict, out: str | None, name: str) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text + "\n")


def _sweep_config(args, g: dict):
    from .experiments import ConfigError, SweepConfig

    data = {}
    if g["config"]:
        try:
            data = json.loads(Path(g["config"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    overrides = {
        "problem_id": args.problem, "scheme_id": args.scheme, "noise": args.noise,
        "observables": args.observable, "repeats": args.repeats, "n_blocks": args.blocks,
        "burnin": args.burnin, "seed": g["seed"], "output": g["out"],
        "delta_grid": getattr(args, "deltas", None), "horizon": getattr(args, "horizon", None),
        "delta": getattr(args, "delta", None), "horizon_grid": getattr(args, "horizons", None),
    }
    data = dict(data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return SweepConfig.from_dict(data)


def _check_range(value, bounds, what: str) -> int:
    if bounds is None:
        return EXIT_OK
    lo, hi = bounds
    if value is None or not lo <= value <= hi:
        print(f"{what} {value} outside [{lo}, {hi}]", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def _cmd_oracle(args, g) -> int:
    from .observables import parse_observable
    from .oracle import oracle_summary
    from .torus import get_problem

    problem = get_problem(args.problem)
    summary = oracle_summary(problem, parse_observable(args.observable, problem.d), args.cutoff)
    _emit(summary.to_json(), g["out"], "oracle.json")
    return EXIT_OK


SIMULATE_COLUMNS = ("problem", "scheme", "observable", "delta", "steps", "horizon", "value",
                    "variance", "ci_halfwidth", "seed")


def _cmd_simulate(args, g) -> int:
    import numpy as np

    from .estimators import run_time_average
    from .noise import RngStream
    from .observables import parse_observable
    from .schemes import SchemeConfig
    from .torus import get_problem

    problem = get_problem(args.problem)
    seed = g["seed"] or 0
    x0 = np.zeros(problem.d) if args.x0 is None else np.asarray(args.x0)
    res = run_time_average(problem, SchemeConfig(args.scheme), parse_observable(args.observable, problem.d),
                           x0, args.delta, args.steps, args.blocks, RngStream(seed, args.stream),
                           args.noise, args.burnin)
    row = [problem.catalog_id, args.scheme, args.observable, repr(args.delta), args.steps,
           repr(res.horizon), repr(res.value), repr(res.sampled_variance), repr(res.ci_halfwidth), seed]
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.header:
        w.writerow(SIMULATE_COLUMNS)
    w.writerow(row)
    if g["out"]:
        Path(g["out"]).mkdir(parents=True, exist_ok=True)
        with open(Path(g["out"]) / "simulate.csv", "w", newline="") as fh:
            fw = csv.writer(fh, lineterminator="\n")
            fw.writerow(SIMULATE_COLUMNS)
            fw.writerow(row)
    return EXIT_OK


def _cmd_check_order(args, g) -> int:
    from .noise import RngStream, derive_stream_id
    from .schemes import SchemeConfig, weak_order_check
    from .torus import get_problem

    cfg = SchemeConfig(args.scheme)
    p = args.p or cfg.claimed_weak_order
    stream = RngStream(g["seed"] or 0, derive_stream_id("check-order", args.problem))
    report = weak_order_check(cfg, get_problem(args.problem), args.deltas, p, args.samples, stream,
                              args.noise, args.substeps)
    _emit(report.to_json(), g["out"], "check-order.json")
    return EXIT_OK if report.passed else EXIT_THRESHOLD


def _cmd_sweep(args, g) -> int:
    from .experiments import (delta_reports, extrapolate_reports, run_delta_sweep, sweep_time,
                              write_report)

    cfg = _sweep_config(args, g)
    if args.command == "sweep-time":
        reports = [sweep_time(cfg)]
    else:
        sweep = run_delta_sweep(cfg)
        reports = delta_reports(sweep) if args.command == "sweep-delta" else extrapolate_reports(sweep)
    out = cfg.output or "."
    payload = {}
    for rep in reports:
        stem = f"{args.command}_{rep.observable}".replace("[", "_").replace("]", "").replace(",", "_")
        write_report(rep, out, stem)
        payload[rep.observable] = rep.to_json()
    first = reports[0].to_json()
    print(json.dumps(first if len(reports) == 1 else payload, indent=2, sort_keys=True))
    return _check_range(None if reports[0].degenerate else reports[0].slope, args.expect_slope, "slope")


def _cmd_distance(args, g) -> int:
    from .experiments import distance_report

    cfg = _sweep_config(args, g)
    rep = distance_report(cfg.problem, cfg.scheme, cfg.delta_grid, None, cfg.horizon, cfg.seed,
                          cfg.repeats, cfg.noise, cfg.start, cfg.n_blocks, cfg.c_multiplier, cfg.cutoff)
    out = Path(cfg.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    labels = list(rep.rows[0].errors)
    with open(out / "distance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "max_error", "argmax"] + labels)
        for r in rep.rows:
            w.writerow([repr(r.delta), repr(r.max_error), r.argmax] + [repr(r.errors[k]) for k in labels])
    _emit(rep.to_json(), str(out), "distance.json")
    code = _check_range(rep.slope, args.expect_slope, "slope")
    if args.expect_ratio is not None:
        if len(rep.rows) < 2:
            return EXIT_CONFIG
        ratio = rep.rows[0].max_error / rep.rows[1].max_error
        code = max(code, _check_range(ratio, args.expect_ratio, "ratio"))
    return code


_COMMANDS = {
    "oracle": _cmd_oracle, "simulate": _cmd_simulate, "check-order": _cmd_check_order,
    "sweep-delta": _cmd_sweep, "sweep-time": _cmd_sweep, "extrapolate": _cmd_sweep,
    "distance": _cmd_distance,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    g = _globals(args)
    if g["threads"] is not None:
        if g["threads"] < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        # must happen before numba is first imported
        os.environ.setdefault("NUMBA_NUM_THREADS", str(g["threads"]))
    try:
        import numba

        from . import _numba_setup  # noqa: F401  (threading layer, before any parallel launch)

        if g["threads"] is not None:
            numba.set_num_threads(min(g["threads"], numba.config.NUMBA_NUM_THREADS))
        return _COMMANDS[args.command](args, g)
    except (ValueError, KeyError, FloatingPointError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
