#!/usr/bin/env python3
"""Wall-clock of one CCLP evaluation (forward and backward) against batch size."""

import argparse
import time

import numpy as np

from cclp import autograd as ad
from cclp import objectives as ob
from cclp.numkit import make_rng


def time_cclp(n: int, d: int = 32, c: int = 10, steps: int = 3, repeats: int = 3) -> float:
    rng = make_rng(n)
    n_l = n // 2
    y = np.eye(c)[np.arange(n_l) % c]
    z0 = rng.standard_normal((n, d)) / np.sqrt(d)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        t = ad.Tape()
        z = t.leaf(z0)
        ad.grad(ob.cclp(z, y, steps).loss, [z])
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", default="100,200,400,800")
    p.add_argument("--steps", type=int, default=3)
    args = p.parse_args()
    time_cclp(50)  # compile the kernels
    prev = None
    for n in (int(v) for v in args.sizes.split(",")):
        sec = time_cclp(n, steps=args.steps)
        ratio = "" if prev is None else f"  x{sec / prev:.2f}"
        print(f"N={n:5d}  {sec:.4f}s{ratio}")
        prev = sec


if __name__ == "__main__":
    main()
