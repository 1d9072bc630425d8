#!/usr/bin/env python3
"""S-ablation on the small two-moons task, with a no-regulariser baseline."""

import argparse

from cclp.cli import main as cli_main


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--s-values", default="1,2,3,6,10,20")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--out", default="out/ablation")
    args = p.parse_args()
    raise SystemExit(cli_main(["-v", "ablate", "--s-values", args.s_values, "--repeats",
                               str(args.repeats), "--iters", str(args.iters), "--baseline",
                               "--out", args.out]))


if __name__ == "__main__":
    main()
