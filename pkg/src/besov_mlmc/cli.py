"""Command line entry point: run scenarios, dump field samples, summarize CSVs."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import (SCENARIOS, ConfigError, dump_field_sample, load_config,
                          parse_number, progress_printer, read_run, run_scenario, scenario,
                          summarize, write_run)
from .fem import SolverError
from .mlmc import MlmcAbort
from .prior import DegenerateSample

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _config(args):
    name = args.scenario
    overrides = {}
    try:
        if getattr(args, "eps_list", None):
            overrides["eps_list"] = tuple(parse_number(e) for e in args.eps_list)
        if getattr(args, "eps_ref", None) is not None:
            overrides["eps_ref"] = parse_number(args.eps_ref)
    except ValueError as exc:
        raise ConfigError(f"bad accuracy value: {exc}") from None
    for key in ("n_ml", "n_ref", "seed"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    full = getattr(args, "full", False)
    if name in SCENARIOS:
        return scenario(name, full, **overrides)
    if Path(name).is_file():
        from dataclasses import replace

        return replace(load_config(name, full), **overrides)
    raise ConfigError(f"{name!r} is neither a built-in scenario ({', '.join(SCENARIOS)}) "
                      "nor a config file")


def cmd_run(args) -> int:
    cfg = _config(args)
    progress = None if args.quiet else progress_printer(sys.stderr)
    run = run_scenario(cfg, workers=args.threads, progress=progress)
    out = Path(args.out or f"results/{cfg.name}_seed{cfg.seed}.csv")
    write_run(run, out)
    meta, records = read_run(out)
    print(summarize(meta, records))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_dump(args) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else cfg.seed
    paths = dump_field_sample(cfg, args.resolution, args.truncation, seed, args.out_dir,
                              beta=args.beta, fmt=args.format)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        meta, records = read_run(args.input)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read {args.input}: {exc}") from None
    print(summarize(meta, records))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="besov-mlmc", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="reference run plus MLMC replicates per eps")
    run.add_argument("--scenario", required=True, help="built-in name or YAML config file")
    run.add_argument("--eps-list", nargs="+", help="target accuracies, e.g. 2^-3 0.0625")
    run.add_argument("--eps-ref")
    run.add_argument("--n-ml", type=int)
    run.add_argument("--n-ref", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int, default=1, help="worker processes")
    run.add_argument("--full", action="store_true", help="paper-scale replicate counts")
    run.add_argument("--out")
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=cmd_run)

    dump = sub.add_parser("dump-field", help="write one field sample and its PDE solution")
    dump.add_argument("--scenario", required=True)
    dump.add_argument("--resolution", "-R", type=int, required=True)
    dump.add_argument("--truncation", "-N", type=int, required=True)
    dump.add_argument("--seed", type=int)
    dump.add_argument("--beta", type=float)
    dump.add_argument("--format", choices=("csv", "bin"), default="csv")
    dump.add_argument("--out-dir", default="fields")
    dump.set_defaults(func=cmd_dump)

    rep = sub.add_parser("report", help="RMSE and cost summary of a run CSV")
    rep.add_argument("--in", dest="input", required=True)
    rep.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; that is a configuration error here
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MlmcAbort, SolverError, DegenerateSample, OSError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
