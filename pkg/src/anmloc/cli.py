"""Command-line entry point: ``anmloc run | crlb | calibrate-epsilon``.

Log verbosity comes from ``ANMLOC_LOG_LEVEL`` (default ``WARNING``).
Exit codes: 0 on success, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import bench

EXIT_CONFIG = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anmloc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte-Carlo SNR sweep with RMSE and CRLB aggregation")
    run.add_argument("--config", help="experiment JSON (default: built-in reference setup)")
    run.add_argument("--out", help="output directory (default: the config's output_dir)")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--trials", type=int, help="override trials per SNR point")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")

    crlb = sub.add_parser("crlb", help="bounds only, averaged over the per-trial draws")
    crlb.add_argument("--config")
    crlb.add_argument("--out", help="CSV path (default: stdout)")
    crlb.add_argument("--seed", type=int)
    crlb.add_argument("--trials", type=int)

    cal = sub.add_parser("calibrate-epsilon", help="sweep the regularization scale at one SNR")
    cal.add_argument("--config")
    cal.add_argument("--snr-db", type=float, default=10.0)
    cal.add_argument("--trials", type=int, default=20)
    cal.add_argument("--base", type=float, default=bench.CALIBRATION_BASE)
    cal.add_argument("--seed", type=int)
    cal.add_argument("--out", help="CSV path (default: stdout)")
    return p


def _load(args) -> bench.ExperimentConfig:
    cfg = bench.load_config(args.config)
    d = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "trials", None) is not None and args.command != "calibrate-epsilon":
        d["trials"] = args.trials
    return bench.ExperimentConfig.from_dict(d)


def _emit(rows, out) -> None:
    if out:
        bench.write_csv(Path(out), rows)
    else:
        if rows:
            keys = list(rows[0])
            print(",".join(bench._unit_header(k) for k in keys))
            for r in rows:
                print(",".join(bench._fmt(r[k]) for k in keys))


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ANMLOC_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "calibrate-epsilon" and args.trials < 1:
            raise bench.ConfigError("trials must be >= 1")
    except bench.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run":
        _, rows = bench.run_experiment(cfg, args.out, jobs=args.jobs)
        _emit(rows, None)
    elif args.command == "crlb":
        _emit(bench.crlb_table(cfg), args.out)
    else:
        rows = bench.calibrate_epsilon(cfg, args.snr_db, args.trials, args.base)
        _emit(rows, args.out)
        best = min(rows, key=lambda r: r["median_toa_rmse"])
        print(f"best epsilon_scale: {best['epsilon_scale']!r}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
