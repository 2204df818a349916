"""Command-line entry point and metrics writer.

Usage::

    flsim run --job JOB.yaml [--metrics-out metrics.csv] [--ledger-out ledger.jsonl]
              [--seed N] [--deterministic]

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 every round aborted.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import ConfigError
from .jobconfig import load_job_config, runtime_settings
from .ledger import HashChainLedger
from .sync import ExperimentReport, RunOptions, run_experiment

log = logging.getLogger("flsim")

METRICS_COLUMNS = ("round", "accuracy", "loss", "elapsed_ms", "bytes_sent", "bytes_received", "global_digest")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ALL_ABORTED = 0, 2, 3, 4


def format_real(x: float) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return format(x, ".17g")


def metrics_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in report.rounds:
        w.writerow([
            r.round,
            format_real(r.accuracy),
            format_real(r.loss),
            r.elapsed_ms,
            r.bytes_sent,
            r.bytes_received,
            r.global_digest,
        ])
    return buf.getvalue()


def write_metrics(report: ExperimentReport, path: str | Path) -> None:
    Path(path).write_text(metrics_csv(report), encoding="ascii")


def summary_text(report: ExperimentReport) -> str:
    lines = [
        f"job digest       {report.job_digest}",
        f"seed             {report.seed} (deterministic={str(report.deterministic).lower()})",
        f"rounds completed {len(report.rounds)}/{report.total_rounds}",
    ]
    for rnd, reason in report.aborted_rounds:
        lines.append(f"round {rnd} aborted: {reason}")
    if report.rounds:
        last = report.rounds[-1]
        lines.append(f"final accuracy   {last.accuracy:.4f}  loss {last.loss:.4f}")
    lines.append(f"final global     {report.final_global_digest}")
    lines.append(f"bytes sent/recv  {report.bytes_sent}/{report.bytes_received}")
    if report.ledger_summary:
        s = report.ledger_summary
        lines.append(f"ledger           {s['entries']} entries, verified={str(s['verified']).lower()}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flsim", description="Deterministic federated-learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a job configuration")
    run.add_argument("--job", required=True, help="path to the job configuration (YAML)")
    run.add_argument("--metrics-out", help="write per-round metrics CSV here")
    run.add_argument("--ledger-out", help="export the provenance ledger here (one JSON entry per line)")
    run.add_argument("--seed", type=int, help="master seed (overrides RANDOM_SEED and the config)")
    run.add_argument(
        "--deterministic", action="store_true", default=None,
        help="serialize nodes in id order (overrides DETERMINISTIC)",
    )
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    job = Path(args.job)
    if not job.is_file():
        print(f"flsim: job file not found: {job}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_job_config(job)
        seed, deterministic = runtime_settings(cfg, seed=args.seed, deterministic=args.deterministic)
    except ConfigError as exc:
        print(f"flsim: configuration error in {job}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    ledger = HashChainLedger()
    try:
        report = run_experiment(cfg, RunOptions(seed=seed, deterministic=deterministic, ledger=ledger))
    except ConfigError as exc:
        print(f"flsim: configuration error in {job}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # surfaced as a runtime failure with a diagnostic
        log.debug("run failed", exc_info=True)
        print(f"flsim: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    if args.metrics_out:
        write_metrics(report, args.metrics_out)
    if args.ledger_out:
        ledger.export(args.ledger_out)
    print(summary_text(report))
    if not report.rounds:
        print("flsim: every round was aborted", file=sys.stderr)
        return EXIT_ALL_ABORTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
