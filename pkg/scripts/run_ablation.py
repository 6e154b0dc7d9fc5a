"""Run the variant x loss x seed grid and print the seed-averaged summary.

    python3 scripts/run_ablation.py --out runs/ablation --seeds 0 1 2 --set total_steps=1500
"""
import argparse
import csv
from pathlib import Path

from sstlab import config as cfgmod
from sstlab.cli import cmd_ablate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--config", help="optional key = value file; --out and --seeds win over it")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    text = Path(args.config).read_text() if args.config else ""
    overrides = [f"output_dir={args.out}", "seeds=" + ",".join(map(str, args.seeds)), *args.overrides]
    values = cfgmod.parse(text, overrides)
    _, summary = cmd_ablate(values)
    rows = list(csv.reader(summary.read_text().splitlines()[1:]))
    widths = [max(len(r[i]) if i < 3 else 8 for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        cells = [c if i < 3 else (f"{float(c):.4f}" if c and c[0].isdigit() else c) for i, c in enumerate(r)]
        print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))


if __name__ == "__main__":
    main()
