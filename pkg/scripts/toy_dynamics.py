#!/usr/bin/env python3
"""Free-embedding dynamics on two circles and two moons over several seeds.

Writes one CLI toy run per (layout, regulariser, S, seed) below --out and
prints a summary table. Plot a run with scripts/plot_toy.py.
"""

import argparse
import json
from pathlib import Path

from cclp.cli import main as cli_main

RUNS = [
    ("circles", "cclp", 10),
    ("circles", "cer", 10),
    ("moons", "cclp", 10),
    ("moons", "cclp", 1),
]


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--snapshot-every", type=int, default=250)
    p.add_argument("--out", default="out/toy_dynamics")
    return p.parse_args()


def main():
    args = parse_args()
    root = Path(args.out)
    print("layout   reg   S  seed  separable  preservation")
    for layout, reg, s in RUNS:
        for seed in range(args.seeds):
            out = root / f"{layout}_{reg}_S{s}_seed{seed}"
            code = cli_main(["toy", "--layout", layout, "--reg", reg, "--steps", str(s),
                             "--iters", str(args.iters), "--seed", str(seed),
                             "--snapshot-every", str(args.snapshot_every), "--out", str(out)])
            if code:
                raise SystemExit(code)
            summ = json.loads((out / "summary.json").read_text())
            print(f"{layout:8s} {reg:5s} {s:2d} {seed:5d}  {str(summ['linearly_separable']):9s}  "
                  f"{summ['cluster_preservation']:.3f}")


if __name__ == "__main__":
    main()
