#!/usr/bin/env python3
"""Contour overlay from a density-grid export: filled contours for the target
log-density with approximation contours on top.

    plots/contour.py --out fig.png grid.csv
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import matplotlib.pyplot as plt
import numpy as np

from reader import SchemaError, fail, read_table
from style import apply_style

REQUIRED = ("x", "y", "target_logdensity", "approx_logdensity")


def build_figure(grid_path):
    apply_style()
    header, rows = read_table(grid_path)
    for col in REQUIRED:
        if col not in header:
            raise SchemaError(f"{grid_path}: missing column {col!r}")
    xs = sorted({row["x"] for row in rows})
    ys = sorted({row["y"] for row in rows})
    if len(xs) * len(ys) != len(rows):
        raise SchemaError(f"{grid_path}: rows do not form a full grid")
    index = {v: i for i, v in enumerate(xs)}
    jndex = {v: j for j, v in enumerate(ys)}
    target = np.full((len(ys), len(xs)), np.nan)
    approx = np.full((len(ys), len(xs)), np.nan)
    for row in rows:
        i, j = index[row["x"]], jndex[row["y"]]
        target[j, i] = row["target_logdensity"]
        approx[j, i] = row["approx_logdensity"]
    fig, ax = plt.subplots()
    grid_x, grid_y = np.meshgrid(xs, ys)
    filled = ax.contourf(grid_x, grid_y, target - target.max(), levels=18, cmap="viridis")
    fig.colorbar(filled, ax=ax, label="target log-density (shifted)")
    ax.contour(grid_x, grid_y, approx - approx.max(), levels=8, colors="white", linewidths=1.0)
    ax.set_xlabel("z1")
    ax.set_ylabel("z2")
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("grid")
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        fig = build_figure(args.grid)
    except SchemaError as exc:
        fail(str(exc))
    fig.savefig(args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
