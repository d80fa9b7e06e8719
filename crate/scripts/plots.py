#!/usr/bin/env python3
"""Plots ROC curves, calibration and the embedding map from fdna outputs.

    python3 scripts/plots.py --evaluate ev --calibrate cal --map map
"""
import argparse
import csv
import glob
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_tsv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    return rows[0], rows[1:]


def roc(directory):
    fig, ax = plt.subplots(figsize=(6, 6))
    for path in sorted(glob.glob(os.path.join(directory, "roc.*.tsv"))):
        _, rows = read_tsv(path)
        label = os.path.basename(path)[len("roc."):-len(".tsv")]
        ax.plot([float(r[0]) for r in rows], [float(r[1]) for r in rows], label=label)
    ax.plot([0, 1], [0, 1], "--", color="gray", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(fontsize="small")
    fig.savefig(os.path.join(directory, "roc.png"), dpi=120)


def calibration(directory):
    _, rows = read_tsv(os.path.join(directory, "calibration.tsv"))
    rows = [r for r in rows if int(r[3]) > 0 and float(r[2]) > 0]
    p = [float(r[1]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.loglog(p, [float(r[2]) for r in rows], "o-", markersize=3, label="bins")
    ax.loglog([min(p), max(p)], [min(p), max(p)], "--", color="gray", label="ideal")
    ax.set_xlabel("mean predicted probability")
    ax.set_ylabel("empirical purchase rate")
    ax.legend()
    fig.savefig(os.path.join(directory, "calibration.png"), dpi=120)


def embedding_map(directory):
    _, rows = read_tsv(os.path.join(directory, "map.tsv"))
    fig, ax = plt.subplots(figsize=(7, 7))
    ax.scatter([float(r[1]) for r in rows], [float(r[2]) for r in rows], s=2)
    ax.set_axis_off()
    fig.savefig(os.path.join(directory, "map.png"), dpi=120)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--evaluate", help="output directory of `fdna evaluate`")
    parser.add_argument("--calibrate", help="output directory of `fdna calibrate`")
    parser.add_argument("--map", help="output directory of `fdna map`")
    args = parser.parse_args()
    if args.evaluate:
        roc(args.evaluate)
    if args.calibrate:
        calibration(args.calibrate)
    if args.map:
        embedding_map(args.map)


if __name__ == "__main__":
    main()
