"""hammersim command line.

Exit status: 0 on success, 1 on any error, and for ``simulate`` 2 when at
least one flip landed in a row the attacker does not own.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analysis import WindowModel, max_hammers_per_window, min_safe_multiplier, para_table
from .config import dumps_report, load_config, run_config, with_override
from .disturbance import generate_profile
from .dram import Geometry
from .errors import HammerSimError

log = logging.getLogger("hammersim")

EXIT_OK, EXIT_ERROR, EXIT_BREACH = 0, 1, 2

SUMMARY_COLUMNS = [
    "activations", "periodic_refreshes", "para_refreshes", "flips",
    "flips_in_victim_pages", "simulated_time", "trace_requests",
]
SWEEP_COLUMNS = ["value", "seed", "flips", "breaches", "activations", "periodic_refreshes", "para_refreshes"]
ANALYZE_COLUMNS = ["p", "N", "analytic", "empirical", "abs_error", "trials", "log10_analytic", "sigma3", "within_3sigma"]
MULTIPLIER_COLUMNS = ["t_min", "k", "max_hammers_at_k", "max_hammers_at_k_minus_1"]


def _csv_list(text: str, kind=float) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a non-empty comma-separated list")
    try:
        return [kind(t) for t in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def _emit(text: str, out: str | Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _csv_text(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    report, breach = run_config(cfg)
    out = args.out if args.out is not None else cfg.output.path
    if cfg.output.format == "csv":
        row = report.to_dict()
        row["flips"] = len(report.flips)
        text = _csv_text(SUMMARY_COLUMNS, [{c: row[c] for c in SUMMARY_COLUMNS}])
    else:
        text = dumps_report(report, breach)
    _emit(text, out)
    breaches = breach.breaches if breach is not None else 0
    log.info("%d activations, %d flips, %d breaches", report.activations, len(report.flips), breaches)
    return EXIT_BREACH if breaches else EXIT_OK


def _sweep_point(cfg, param, value, seed) -> dict:
    report, breach = run_config(with_override(cfg, param, value, seed))
    return {
        "value": value,
        "seed": seed,
        "flips": len(report.flips),
        "breaches": breach.breaches if breach is not None else 0,
        "activations": report.activations,
        "periodic_refreshes": report.periodic_refreshes,
        "para_refreshes": report.para_refreshes,
    }


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    kind = float if args.param == "para_p" else int
    try:
        values = [kind(v) for v in _csv_list(args.values, str)]
        seeds = _csv_list(args.seeds, int)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise HammerSimError(f"--values/--seeds: {exc}") from None
    points = [(v, s) for v in values for s in seeds]
    # validate the override once up front so a bad param fails before any work
    with_override(cfg, args.param, values[0], seeds[0])
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, *zip(*[(cfg, args.param, v, s) for v, s in points])))
    else:
        rows = [_sweep_point(cfg, args.param, v, s) for v, s in points]
    _emit(_csv_text(SWEEP_COLUMNS, rows), args.out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    if args.trials < 1:
        raise HammerSimError("--trials must be >= 1")
    if args.t_min is not None:
        w = WindowModel(args.t_refw, args.t_rc)
        rows = []
        for t_min in args.t_min:
            k = min_safe_multiplier(w, t_min)
            rows.append({
                "t_min": t_min,
                "k": k,
                "max_hammers_at_k": max_hammers_per_window(WindowModel(w.t_refw, w.t_rc, k)),
                "max_hammers_at_k_minus_1": (
                    max_hammers_per_window(WindowModel(w.t_refw, w.t_rc, k - 1)) if k > 1 else ""
                ),
            })
        _emit(_csv_text(MULTIPLIER_COLUMNS, rows), args.out)
        return EXIT_OK
    for p in args.p:
        if not 0.0 <= p <= 1.0:
            raise HammerSimError(f"p={p} outside [0, 1]")
    for n in args.n:
        if n < 0:
            raise HammerSimError(f"N={n} is negative")
    table = para_table(args.p, args.n, args.trials, args.seed)
    _emit(_csv_text(ANALYZE_COLUMNS, [v.to_row() for v in table]), args.out)
    return EXIT_OK


def cmd_gen_profile(args) -> int:
    geometry = Geometry(banks=args.banks, rows_per_bank=args.rows, row_size_bits=args.row_bits)
    profile = generate_profile(geometry, args.cells, args.t_min, args.t_max, args.seed)
    profile.dump(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hammersim", description="DRAM read-disturb (RowHammer) simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configuration and write a JSON (or CSV) report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="report path (overrides output.path; default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "sweep",
        help="run a configuration over parameter values and seeds",
        description="CSV columns: " + ",".join(SWEEP_COLUMNS) + ". Rows are value-major in input order.",
    )
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, choices=["para_p", "refresh_k", "iterations"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds (default 0)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser(
        "analyze",
        help="PARA closed form vs Monte Carlo, or a refresh-multiplier table with --t-min",
        description=(
            "PARA table columns: p,N (closes), analytic=(1-p)^N, empirical zero-refresh frequency, "
            "abs_error, trials, log10_analytic, sigma3 (3-sigma binomial band), within_3sigma (0/1). "
            "With --t-min: t_min,k (smallest safe refresh multiplier),max_hammers_at_k,max_hammers_at_k_minus_1."
        ),
    )
    p.add_argument("--p", type=_csv_list, default=[0.001, 0.01, 0.1])
    p.add_argument("--n", type=lambda s: _csv_list(s, int), default=[10, 100, 1000])
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-min", type=lambda s: _csv_list(s, int), help="hammer thresholds for the multiplier table")
    p.add_argument("--t-refw", type=int, default=64_000_000, help="refresh window in ns (multiplier table)")
    p.add_argument("--t-rc", type=int, default=50, help="row cycle in ns (multiplier table)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-profile", help="write a random vulnerable-cell profile")
    p.add_argument("--cells", type=int, required=True)
    p.add_argument("--t-min", type=int, default=32)
    p.add_argument("--t-max", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--banks", type=int, default=1)
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--row-bits", type=int, default=8192)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_profile)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for breaches here
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (HammerSimError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"hammersim: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
