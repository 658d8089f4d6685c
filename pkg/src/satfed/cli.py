"""Command line entry point: ``satfed simulate | sweep-topology | partition-report``.

Log verbosity comes from ``SATFED_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...;
default WARNING).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from .data import label_histograms, label_skew
from .errors import ConfigurationError
from .experiment import EXIT_CONFIG, atomic_write, run_experiment
from .runtime import device_pool
from .sweep import run_topology_sweep, sweep_csv

LOG_ENV = "SATFED_LOG_LEVEL"


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _int_list(text: str) -> List[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="satfed", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one scenario and write metrics, transfer log, graphs, manifest")
    sim.add_argument("--scenario", required=True, help="scenario TOML file")
    sim.add_argument("--method", default=None,
                     help="method name, comma-separated list, or 'all' (default: the scenario's method)")
    sim.add_argument("--seed", type=int, default=None, help="override master_seed")
    sim.add_argument("--out", required=True, help="output directory")

    sw = sub.add_parser("sweep-topology", help="own-only coverage and flood redundancy over an orbit x coverage grid")
    sw.add_argument("--orbits", type=_int_list, required=True)
    sw.add_argument("--coverage", type=_int_list, required=True)
    sw.add_argument("--m", type=int, required=True)
    sw.add_argument("--seeds", type=int, default=5)
    sw.add_argument("--out", required=True)

    pr = sub.add_parser("partition-report", help="print per-device class histograms of a Dirichlet split")
    pr.add_argument("--alpha", type=float, required=True)
    pr.add_argument("--m", type=int, required=True)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--classes", type=int, default=10)
    return p


def cmd_sweep(args) -> int:
    if args.m < 1 or args.seeds < 1:
        print("error: --m and --seeds must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    for c in args.coverage:
        if not 1 <= c <= args.m:
            print(f"error: coverage: {c} outside [1, m={args.m}]", file=sys.stderr)
            return EXIT_CONFIG
    if min(args.orbits) < 1:
        print("error: orbits: counts must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    rows = run_topology_sweep(args.orbits, args.coverage, args.m, args.seeds)
    text = sweep_csv(rows)
    atomic_write(Path(args.out) / "topology_sweep.csv", text)
    sys.stdout.write(text)
    return 0


def cmd_partition(args) -> int:
    try:
        if args.alpha <= 0 or args.m < 1 or args.classes < 2:
            raise ConfigurationError("need --alpha > 0, --m >= 1 and --classes >= 2")
        _, labels, parts = device_pool(args.m, args.alpha, args.seed, n_classes=args.classes)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    hist = label_histograms(labels, parts, args.classes)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["device"] + [f"class_{c}" for c in range(args.classes)] + ["total"])
    for i, row in enumerate(hist):
        w.writerow([i, *row.tolist(), int(row.sum())])
    print(f"# label_skew={label_skew(labels, parts, args.classes):.4f}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return run_experiment(args.scenario, args.out, args.method, args.seed)
    if args.command == "sweep-topology":
        return cmd_sweep(args)
    return cmd_partition(args)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
