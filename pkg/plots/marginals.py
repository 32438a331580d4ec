#!/usr/bin/env python3
"""Per-coordinate marginal panels from a marginal-curve export.

    plots/marginals.py --out fig.png marginals.csv
"""

import argparse
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import matplotlib.pyplot as plt

from reader import SchemaError, fail, read_table
from style import apply_style

REQUIRED = ("coord", "x", "target_marginal", "approx_marginal")


def build_figure(marginals_path):
    apply_style()
    header, rows = read_table(marginals_path)
    for col in REQUIRED:
        if col not in header:
            raise SchemaError(f"{marginals_path}: missing column {col!r}")
    coords = sorted({int(row["coord"]) for row in rows})
    side = math.ceil(math.sqrt(len(coords)))
    rows_n = math.ceil(len(coords) / side)
    fig, axes = plt.subplots(rows_n, side, figsize=(2.6 * side, 2.2 * rows_n), squeeze=False)
    for panel, coord in enumerate(coords):
        ax = axes[panel // side][panel % side]
        sub = [r for r in rows if int(r["coord"]) == coord]
        xs = [r["x"] for r in sub]
        ax.plot(xs, [r["target_marginal"] for r in sub], label="target")
        ax.plot(xs, [r["approx_marginal"] for r in sub], "--", label="approx")
        ax.set_title(f"z{coord}", fontsize=9)
        ax.set_yticks([])
    for panel in range(len(coords), rows_n * side):
        axes[panel // side][panel % side].axis("off")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("marginals")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        fig = build_figure(args.marginals)
    except SchemaError as exc:
        fail(str(exc))
    fig.savefig(args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
