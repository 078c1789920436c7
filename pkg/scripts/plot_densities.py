"""Plot density curves from plot-data tables (needs matplotlib, not a package dependency).

    python scripts/plot_densities.py results/default/plot --out densities.png
"""

import argparse
from pathlib import Path

import numpy as np


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("plot_dir", type=Path)
    ap.add_argument("--out", type=Path, default=Path("densities.png"))
    args = ap.parse_args()
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = sorted(args.plot_dir.glob("plot_group*.csv"))
    fig, axes = plt.subplots(1, len(files), figsize=(4.5 * len(files), 3.5), squeeze=False)
    for ax, f in zip(axes[0], files):
        header = f.read_text().splitlines()[0].split(",")
        data = np.loadtxt(f, delimiter=",", skiprows=1)
        s = data[:, header.index("s")]
        ax.plot(s, data[:, header.index("estimated")], ".", ms=1, label="estimated")
        if "analytic" in header:
            ax.plot(s, data[:, header.index("analytic")], "-", lw=1, label="analytic")
        ax.set_xlabel("group sum")
        ax.set_title(f.stem)
        ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
