"""Plot the CSV/JSON artifacts of a geowarp run directory.

    python docs/plot_run.py geowarp-run [out.png]

Needs numpy and matplotlib. Panels are drawn for whatever files exist:
data.csv, generated.csv, geodesic_*.csv and trajectories.csv.
"""
import glob
import json
import os
import sys

import matplotlib.pyplot as plt
import numpy as np


def load(path):
    with open(path) as f:
        header = f.readline().strip().split(",")
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def xyz(header, rows):
    cols = [i for i, h in enumerate(header) if h.startswith("x")][:3]
    return rows[:, cols]


def main():
    run = sys.argv[1] if len(sys.argv) > 1 else os.environ.get("GEOWARP_RUN_DIR", "geowarp-run")
    out = sys.argv[2] if len(sys.argv) > 2 else os.path.join(run, "overview.png")
    fig = plt.figure(figsize=(12, 4))

    ax = fig.add_subplot(1, 3, 1, projection="3d")
    ax.set_title("data / generated")
    if os.path.exists(os.path.join(run, "data.csv")):
        p = xyz(*load(os.path.join(run, "data.csv")))
        ax.scatter(*p.T, s=2, alpha=0.3, label="data")
    if os.path.exists(os.path.join(run, "generated.csv")):
        g = xyz(*load(os.path.join(run, "generated.csv")))
        ax.scatter(*g.T, s=3, c="crimson", label="generated")
    ax.legend(loc="upper left")

    ax = fig.add_subplot(1, 3, 2, projection="3d")
    ax.set_title("geodesics")
    for path in sorted(glob.glob(os.path.join(run, "geodesic_*.csv"))):
        header, rows = load(path)
        ax.plot(*rows[:, 1:4].T, lw=1)
    summary = os.path.join(run, "geodesics.json")
    if os.path.exists(summary):
        with open(summary) as f:
            s = json.load(f)
        ax.text2D(0.0, 0.0, f"{len(s)} curves", transform=ax.transAxes)

    ax = fig.add_subplot(1, 3, 3, projection="3d")
    ax.set_title("transport trajectories")
    path = os.path.join(run, "trajectories.csv")
    if os.path.exists(path):
        header, rows = load(path)
        ids = rows[:, 0].astype(int)
        for k in np.unique(ids)[:100]:
            ax.plot(*rows[ids == k][:, 2:5].T, lw=0.5)

    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
