"""Shared deterministic rendering style for the figure scripts."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

DPI = 150

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": DPI,
    "savefig.dpi": DPI,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.6,
    "legend.frameon": False,
}


def apply_style():
    plt.rcParams.update(STYLE)
