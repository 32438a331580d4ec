#!/usr/bin/env python3
"""Convergence curves from run traces: one series per trace file, log-scale
metric versus iteration.

    plots/convergence.py --metric neg_elbo --out fig.png trace1.csv trace2.csv
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import matplotlib.pyplot as plt

from reader import MissingColumn, SchemaError, fail, read_table, series, trace_label
from style import apply_style


def build_figure(trace_paths, metric):
    apply_style()
    fig, ax = plt.subplots()
    for path in trace_paths:
        _, rows = read_table(path)
        xs, ys, skipped = series(rows, metric, path=str(path))
        if skipped:
            print(f"warning: {path}: skipped {skipped} rows without {metric}", file=sys.stderr)
        if not xs:
            raise SchemaError(f"{path}: no usable rows for {metric!r}")
        ax.plot(xs, ys, label=trace_label(path))
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("traces", nargs="+")
    parser.add_argument("--metric", default="neg_elbo")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        fig = build_figure(args.traces, args.metric)
    except (MissingColumn, SchemaError) as exc:
        fail(str(exc))
    fig.savefig(args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
