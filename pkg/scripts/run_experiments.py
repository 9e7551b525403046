#!/usr/bin/env python3
"""Run the built-in scenarios and write one CSV per scenario.

    python3 scripts/run_experiments.py --out results [--full] [--threads 4] [--scenarios ...]
"""
import argparse
import sys
from pathlib import Path

from besov_mlmc.cli import main as cli_main
from besov_mlmc.experiments import SCENARIOS


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--scenarios", nargs="+", default=list(SCENARIOS), choices=SCENARIOS)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--full", action="store_true")
    args = ap.parse_args(argv)
    status = 0
    for name in args.scenarios:
        cmd = ["run", "--scenario", name, "--threads", str(args.threads),
               "--out", str(Path(args.out) / f"{name}.csv")]
        if args.full:
            cmd.append("--full")
        if args.seed is not None:
            cmd += ["--seed", str(args.seed)]
        print(f"== {name}", flush=True)
        status = max(status, cli_main(cmd))
    return status


if __name__ == "__main__":
    sys.exit(main())
