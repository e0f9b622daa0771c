"""Command-line entry point: run, exact, compare and check."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import config as config_mod
from .checks import model_phase_point, run_battery
from .errors import ConfigError, FBSCError, ModelError, NumericalFailure
from .exact import build_normal_modes, exact_position_expectation
from .propagator import ObservableSeries, expectation_position, trace_deviation

OUTPUT_DIR_ENV = "FBSC_OUTPUT_DIR"
CSV_HEADER = ("t", "s_expect", "trace_re", "trace_im", "dropped")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("fbsc.cli")


def _versions():
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"fbsc": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def output_path(cfg: dict, override: str | None) -> Path:
    """CSV location: ``--output`` or the config's path, with the directory replaced by the env var if set."""
    path = Path(override if override is not None else cfg["output"]["path"])
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        path = Path(env_dir) / path.name
    return path


def manifest_path(csv_path: Path) -> Path:
    return csv_path.with_name(csv_path.stem + ".manifest.json")


def _fmt(x) -> str:
    return repr(float(x))


def write_series(path: Path, series: ObservableSeries):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in zip(series.times, series.values, series.norm_trace, series.trace_imag, series.dropped):
            w.writerow([_fmt(row[0]), _fmt(row[1]), _fmt(row[2]), _fmt(row[3]), str(int(row[4]))])


def read_series(path) -> dict:
    """Columns of a series CSV as float arrays; raises ``ConfigError`` on a malformed file."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ConfigError(f"{path}: expected header {','.join(CSV_HEADER)}")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(CSV_HEADER))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return dict(zip(CSV_HEADER, data.T))


def _write_manifest(path: Path, command, cfg, series: ObservableSeries, status, extra=None):
    body = {
        "command": command,
        "status": status,
        "config_hash": config_mod.config_hash(cfg),
        "seed": cfg["numerics"]["seed"],
        "versions": _versions(),
        "csv": path.name,
        "drop_counts": {
            "dropped": int(np.sum(series.dropped)),
            "converged": int(np.sum(series.converged)),
            "dropped_weight_fraction": series.drop_fraction,
            "dropped_count_fraction": series.drop_count_fraction,
            "per_time": [int(d) for d in series.dropped],
        },
        "config": cfg,
    }
    body.update(extra or {})
    manifest_path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _load(args):
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg["numerics"]["seed"] = int(args.seed)
    return cfg, config_mod.build(cfg)


def cmd_run(args) -> int:
    cfg, setup = _load(args)
    out = output_path(cfg, args.output)
    prop = setup.propagation
    series = expectation_position(setup.state, setup.system, setup.bath, setup.t_grid, prop,
                                  threads=args.threads, strict=False)
    trace_dev = trace_deviation(series)
    problems = []
    if series.drop_fraction > prop.max_drop_fraction:
        problems.append(f"dropped weight fraction {series.drop_fraction:.4f} exceeds {prop.max_drop_fraction}")
    if not trace_dev <= prop.trace_tolerance:
        problems.append(f"trace deviation {trace_dev:.4f} exceeds {prop.trace_tolerance}")
    if not np.all(series.valid):
        problems.append(f"{int(np.sum(~series.valid))} time points have no usable configurations")
    write_series(out, series)
    status = "numerical_failure" if problems else "ok"
    _write_manifest(out, "run", cfg, series, status,
                    {"trace_deviation": trace_dev, "problems": problems, "n_steps": series.n_steps.tolist(),
                     "standard_error": series.standard_error.tolist()})
    for p in problems:
        print(f"fbsc run: {p}", file=sys.stderr)
    print(f"wrote {out}")
    return EXIT_NUMERICAL if problems else EXIT_OK


def cmd_exact(args) -> int:
    cfg, setup = _load(args)
    out = output_path(cfg, args.output)
    decomp = build_normal_modes(setup.system, setup.bath)
    series = exact_position_expectation(decomp, setup.state, setup.t_grid)
    write_series(out, series)
    _write_manifest(out, "exact", cfg, series, "ok")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    a, b = read_series(args.a), read_series(args.b)
    if a["t"].shape != b["t"].shape or not np.array_equal(a["t"], b["t"]):
        print("fbsc compare: time grids differ", file=sys.stderr)
        return EXIT_INVALID
    diff = np.abs(a["s_expect"] - b["s_expect"])
    max_abs = float(np.max(diff)) if diff.size else 0.0
    scale = float(np.max(np.abs(b["s_expect"]))) if diff.size else 0.0
    max_rel = max_abs / scale if scale > 0 else (0.0 if max_abs == 0 else math.inf)
    if np.any(np.isnan(diff)):
        max_abs = max_rel = math.nan
    print(f"max_abs_deviation={max_abs!r}")
    print(f"max_rel_deviation={max_rel!r}")
    ok = max_abs <= args.tol
    print("within tolerance" if ok else f"exceeds tolerance {args.tol!r}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_check(args) -> int:
    cfg, setup = _load(args)
    system, state = setup.system, setup.state
    init = cfg["initial_state"]
    phase = model_phase_point(system, setup.bath, init["bath_init"], setup.propagation.beta,
                              setup.propagation.seed, state.center, setup.propagation.hbar)
    duration = 2.0 * math.pi / system.frequency if system.frequency > 0 else float(setup.t_grid.max() or 1.0)
    results = run_battery(system, setup.bath, phase, state.center, max(abs(state.center), state.sigma),
                          duration, seed=setup.propagation.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.value:.3e} <= {r.tolerance:.0e}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override numerics.seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    common.add_argument("--output", default=argparse.SUPPRESS, help="CSV output path")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="fbsc", parents=[common],
                                     description="Forward-backward semiclassical reduced dynamics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (("run", cmd_run, "semiclassical <s>(t) for a config"),
                           ("exact", cmd_exact, "normal-mode reference for a harmonic config"),
                           ("check", cmd_check, "self-verification battery for the configured model")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("config")
        p.set_defaults(func=fn)
    p = sub.add_parser("compare", parents=[common], help="deviation between two series CSVs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tol", type=float, required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    for name, default in (("seed", None), ("threads", 1), ("output", None), ("verbose", 0)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.threads < 1:
        print("fbsc: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ModelError) as exc:
        print(f"fbsc {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalFailure as exc:
        print(f"fbsc {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FBSCError as exc:
        print(f"fbsc {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
