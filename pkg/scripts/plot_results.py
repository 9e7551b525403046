#!/usr/bin/env python3
"""RMSE and work against eps for one or more run CSVs (needs matplotlib).

    python3 scripts/plot_results.py results/*.csv --out results/summary.png
"""
import argparse
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from besov_mlmc.experiments import predicted_cost, read_run, rmse_table  # noqa: E402
from besov_mlmc.mlmc import RateParams  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv", nargs="+")
    ap.add_argument("--out", default="summary.png")
    args = ap.parse_args(argv)
    fig, (ax_err, ax_work) = plt.subplots(1, 2, figsize=(10, 4))
    for path in args.csv:
        meta, records = read_run(path)
        cfg = meta["config"]
        name = cfg["name"]
        mlmc = [r for r in records if r.kind == "mlmc"]
        eps = sorted({r.eps for r in mlmc}, reverse=True)
        try:
            table = rmse_table(records)
            ax_err.loglog(*zip(*table), "o-", label=name)
        except ValueError:
            pass
        work = [np.mean([r.work for r in mlmc if r.eps == e]) for e in eps]
        line, = ax_work.loglog(eps, work, "o-", label=name)
        # predicted rate through the finest point
        expo, k, _ = predicted_cost(RateParams(cfg["t"], cfg["r"], cfg["theta"]), cfg["d"])
        shape = [e ** expo * abs(math.log(e)) ** k for e in eps]
        scale = work[-1] / shape[-1]
        ax_work.loglog(eps, [scale * s for s in shape], "--", color=line.get_color(), lw=0.8)
    lims = ax_err.get_xlim()
    ax_err.loglog(lims, lims, "k:", lw=0.8, label="rmse = eps")
    ax_err.set(xlabel="eps", ylabel="RMSE", title="realized error")
    ax_work.set(xlabel="eps", ylabel="work units", title="cost (dashed: predicted rate)")
    for ax in (ax_err, ax_work):
        ax.invert_xaxis()
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
