"""``mwlab <experiment> --config <path> [--out <dir>] [--seed <u64>] [--refine]``."""
import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import harness


def build_parser():
    p = argparse.ArgumentParser(prog="mwlab", description=__doc__)
    p.add_argument("experiment", choices=sorted(harness.RUNNERS))
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="root seed (overrides config)")
    p.add_argument("--refine", action="store_true", help="also run the doubled-resolution stability check")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = harness.ExperimentConfig.load(args.config)
        if cfg["experiment"] != args.experiment:
            raise harness.ConfigError(f"config is for {cfg['experiment']!r}, not {args.experiment!r}")
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise harness.ConfigError("seed must fit in an unsigned 64-bit integer")
            cfg = cfg.with_overrides(seed=args.seed)
    except harness.ConfigError as exc:
        print(f"mwlab: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    out = Path(args.out or cfg["output"]["dir"])
    status = harness.run(cfg, out)
    if args.refine and status == harness.EXIT_OK:
        report = harness.stability_check(cfg)
        (out / "stability.json").write_text(json.dumps(asdict(report), indent=2, sort_keys=True) + "\n")
        print(f"stability: max drift {report.max_drift:.3e} ({'pass' if report.passed else 'fail'})")
    print(f"mwlab {args.experiment}: status {status}, outputs in {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
