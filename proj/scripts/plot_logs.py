#!/usr/bin/env python3
"""Plot validation curves from a `gridflow train` output directory.

Usage: plot_logs.py RUN_DIR [RUN_DIR ...] [--out curves.png]
Draws the median CR and QL with the 25-75% band for each run directory.
"""
import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("runs", nargs="+", type=Path)
    ap.add_argument("--out", type=Path, default=Path("curves.png"))
    args = ap.parse_args()

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for run in args.runs:
        s = pd.read_csv(run / "summary.csv")
        if s.empty:
            continue
        for ax, metric in zip(axes, ["cr", "ql"]):
            ax.plot(s["episode"], s[f"{metric}_median"], label=run.name)
            ax.fill_between(s["episode"], s[f"{metric}_q25"], s[f"{metric}_q75"], alpha=0.25)
    axes[0].set_ylabel("CR (%)")
    axes[1].set_ylabel("QL")
    for ax in axes:
        ax.set_xlabel("episode")
        ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)


if __name__ == "__main__":
    main()
