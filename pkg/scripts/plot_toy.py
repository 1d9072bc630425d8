#!/usr/bin/env python3
"""Plot snapshots of a toy run: points coloured by LP posterior, gradient arrows per loss."""

import argparse
import json
from pathlib import Path

import numpy as np

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError as e:  # plotting is optional
    raise SystemExit(f"matplotlib is required for plotting: {e}")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("run_dir")
    p.add_argument("--max-panels", type=int, default=8)
    p.add_argument("--arrow-scale", type=float, default=200.0)
    p.add_argument("--out", default=None)
    args = p.parse_args()

    run = Path(args.run_dir)
    traj = json.loads((run / "trajectory.json").read_text())
    snaps = traj["snapshots"]
    pick = np.unique(np.linspace(0, len(snaps) - 1, min(args.max_panels, len(snaps))).astype(int))
    n_l = traj["n_labeled"]
    fig, axs = plt.subplots(1, len(pick), figsize=(3.2 * len(pick), 3.4), squeeze=False)
    for ax, k in zip(axs[0], pick):
        s = snaps[k]
        z = np.array(s["z"])
        colour = np.array(s["phi"])[:, 1] if s["phi"] is not None else np.array(traj["labels"])
        ax.scatter(z[:, 0], z[:, 1], c=colour, cmap="coolwarm", vmin=0, vmax=1, s=10)
        ax.scatter(z[:n_l, 0], z[:n_l, 1], c=traj["labels"][:n_l], cmap="coolwarm", marker="*",
                   s=120, edgecolors="k")
        for key, col in (("grad_sup", "gold"), ("grad_reg", "k")):
            g = -np.array(s[key]) * args.arrow_scale
            ax.quiver(z[:, 0], z[:, 1], g[:, 0], g[:, 1], color=col, angles="xy",
                      scale_units="xy", scale=1, width=0.004)
        w, b = np.array(s["w"]), np.array(s["b"])
        nrm, off = w[:, 1] - w[:, 0], b[0, 1] - b[0, 0]
        xs = np.linspace(*ax.get_xlim(), 2)
        if abs(nrm[1]) > 1e-12:
            ax.plot(xs, -(nrm[0] * xs + off) / nrm[1], "g--", lw=1)
        ax.set_title(f"iteration {s['iteration']}")
        ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    out = args.out or str(run / "snapshots.png")
    fig.savefig(out, dpi=90)
    print(out)


if __name__ == "__main__":
    main()
