"""Run the bundled experiments (default, multigroup, nonneg) and write plot tables.

    python scripts/run_experiments.py --out results [--only default multigroup]

Each experiment lands in <out>/<name>/ with report.json, density CSVs and
network parameters; plot tables go to <out>/<name>/plot/.
"""

import argparse
import json
import sys
from pathlib import Path

from sysrisk.cli import main as sysrisk

NAMES = ("default", "multigroup", "nonneg")


def summarize(report_path: Path) -> str:
    metrics = json.loads(report_path.read_text())["metrics"]
    return "\n".join(f"  {k}: {v}" for k, v in sorted(metrics.items()))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--only", nargs="+", choices=NAMES, default=list(NAMES))
    ap.add_argument("--no-timing", action="store_true")
    args = ap.parse_args()
    for name in args.only:
        out = args.out / name
        argv = ["run", "--config", name, "--out", str(out)]
        if args.no_timing:
            argv.append("--no-timing")
        code = sysrisk(argv)
        if code:
            sys.exit(code)
        sysrisk(["plot-data", "--report", str(out / "report.json"), "--out", str(out / "plot"), "--quiet"])
        print(f"{name}:\n{summarize(out / 'report.json')}")


if __name__ == "__main__":
    main()
