#!/usr/bin/env python3
"""Plot reconstruction-loss curves from one or more pre-training runs.

Reads the `loss_log.csv` written by the pre-training loop and saves a
single PNG overlaying the curves, labelled by run directory name.
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_log(path: Path) -> tuple[list[int], list[float]]:
    steps, mses = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            steps.append(int(row["step"]))
            mses.append(float(row["mse"]))
    return steps, mses


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("runs", type=Path, nargs="+",
                    help="run directories containing loss_log.csv")
    ap.add_argument("--out", type=Path, default=Path("loss.png"))
    ap.add_argument("--log-scale", action="store_true")
    args = ap.parse_args()

    fig, ax = plt.subplots(figsize=(7, 4))
    for run in args.runs:
        log = run / "loss_log.csv" if run.is_dir() else run
        steps, mses = read_log(log)
        ax.plot(steps, mses, label=run.name, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("masked reconstruction MSE")
    if args.log_scale:
        ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
