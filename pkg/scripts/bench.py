"""Training-time table for the primal and dual solvers.

    python scripts/bench.py --out results/bench [--cells 10x1,10x3,100x1] [--epochs 20]

Prints one row per (N, h) cell. Large N at full epochs takes hours on a
single core; pass --epochs and --m for a quick table.
"""

import argparse
import json
from pathlib import Path

from sysrisk.cli import main as sysrisk


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/bench"))
    ap.add_argument("--cells", default="10x1,10x3,100x1")
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--m", type=int, default=None)
    args = ap.parse_args()
    argv = ["bench", "--out", str(args.out), "--cells", args.cells]
    if args.epochs is not None:
        argv += ["--epochs", str(args.epochs)]
    if args.m is not None:
        argv += ["--m", str(args.m)]
    code = sysrisk(argv)
    if code:
        raise SystemExit(code)
    table = json.loads((args.out / "bench.json").read_text())
    print(f"{'N':>5} {'h':>3} {'primal s':>10} {'dual s':>10}")
    for row in table["cells"]:
        print(f"{row['n']:>5} {row['h']:>3} {row['primal_seconds']:>10.1f} {row['dual_seconds']:>10.1f}")


if __name__ == "__main__":
    main()
