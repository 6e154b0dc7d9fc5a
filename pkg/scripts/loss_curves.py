"""Per-step loss curves and prototype-entry histograms for conventional and SST training.

Writes <out>/curves.csv (step, one loss column per arm) and one histogram CSV
per arm, the raw material for loss-oscillation and collapse plots.

    python3 scripts/loss_curves.py --out runs/curves --loss am_softmax --steps 3000
"""
import argparse
import csv
from pathlib import Path

from sstlab.data import GenSpec, generate
from sstlab.losses import LossConfig
from sstlab.trainer import TrainConfig, oscillation_metric, train, write_histogram_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/curves")
    ap.add_argument("--loss", default="am_softmax")
    ap.add_argument("--variants", nargs="+", default=["Org", "SST"])
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate(GenSpec(seed=args.seed))
    curves = {}
    for v in args.variants:
        cfg = TrainConfig(variant=v, loss=LossConfig(args.loss), total_steps=args.steps,
                          milestones=(int(0.6 * args.steps), int(0.9 * args.steps)), seed=args.seed)
        res = train(cfg, ds)
        curves[v] = res.log.losses
        write_histogram_csv(res.log.histograms["prototypes"], out / f"{v}_histogram.csv")
        print(f"{v}: final loss {curves[v][-50:].mean():.4f}, oscillation {oscillation_metric(curves[v], min(50, args.steps)):.4f}, "
              f"zero-fraction {res.log.histograms['prototypes']['zero_fraction']:.4f}")
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", *curves])
        for step in range(args.steps):
            w.writerow([step, *[repr(float(c[step])) for c in curves.values()]])


if __name__ == "__main__":
    main()
