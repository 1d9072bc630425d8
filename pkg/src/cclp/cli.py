"""Command-line front end.

Exit codes: 0 success, 1 gradient check failed, 2 usage error,
3 data / parse / output error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import autograd as ad
from . import objectives as ob
from .data import IdxError, InsufficientSamplesError
from .experiments import SSL_DEFAULTS, idx_task, run_ssl, synthetic_task, toy_summary
from .loss import DegenerateBatchError
from .numkit import NumericalError, make_rng
from .trainer import TrainConfig, free_embedding_train, toy_problem

log = logging.getLogger("cclp")

EXIT_OK, EXIT_GRAD, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

# Toy defaults: negative squared distance, kernel width per layout. Circles need a
# narrow kernel for LP to separate the rings at the start.
TOY_GAMMA = {"circles": 16.0, "moons": 4.0}
TOY_WEIGHT = 8.0


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int
    input_hash: str
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    version: str = __version__


def git_blob_hash(data: bytes) -> str:
    """SHA-1 over ``blob <len>\\0<data>``, as git names file contents."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _input_hash(config: dict, files=()) -> str:
    parts = [json.dumps(config, sort_keys=True).encode()]
    parts += [Path(f).read_bytes() for f in files if f]
    return git_blob_hash(b"\0".join(parts))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    # json.dumps emits floats via repr, which round-trips exactly
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, allow_nan=True)
        f.write("\n")


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as e:
        raise OSError(f"output directory {out} is not writable: {e}") from e
    return out


def _finish(args, out: Path, config: dict, outputs: dict, t0: float, files=()) -> None:
    manifest = RunManifest(
        command=args.command,
        argv=list(args.argv),
        config=config,
        seed=args.seed,
        input_hash=_input_hash(config, files),
        outputs={k: str(out / v) for k, v in outputs.items()},
        timings={"wall_seconds": time.perf_counter() - t0},
    )
    write_json(out / "manifest.json", asdict(manifest))


# ---------------------------------------------------------------------------
# toy


def cmd_toy(args) -> int:
    t0 = time.perf_counter()
    if args.snapshot_every < 0:
        raise UsageError("--snapshot-every must be >= 0")
    cfg = TrainConfig(steps=args.steps, weight=args.w, lr=args.lr, iterations=args.iters,
                      seed=args.seed, regularizer=args.reg, stop_grad_phi=args.stop_grad_phi,
                      self_loops=args.self_loops, similarity=args.similarity,
                      gamma=TOY_GAMMA[args.layout] if args.gamma is None else args.gamma)
    out = _out_dir(args.out)
    prob = toy_problem(args.layout, args.seed)
    run = free_embedding_train(prob.z0, prob.labels, prob.n_labeled, prob.n_classes, cfg,
                               snapshot_every=args.snapshot_every)
    trajectory = {
        "layout": args.layout,
        "labels": prob.labels.tolist(),
        "n_labeled": prob.n_labeled,
        "snapshots": [s.to_dict() for s in run.snapshots],
    }
    write_json(out / "trajectory.json", trajectory)
    write_csv(out / "metrics.csv", ["iteration", "l_sup", "l_reg", "l_total", "train_acc"],
              [(r.iteration, r.l_sup, r.l_reg, r.l_total, r.train_acc) for r in run.records])
    summary = toy_summary(run, cfg)
    write_json(out / "summary.json", summary)
    config = {"layout": args.layout, **cfg.to_dict(), "snapshot_every": args.snapshot_every}
    _finish(args, out, config, {"trajectory": "trajectory.json", "metrics": "metrics.csv",
                                "summary": "summary.json"}, t0)
    print(f"linearly_separable={str(summary['linearly_separable']).lower()} "
          f"cluster_preservation={summary['cluster_preservation']!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / ablate


def _train_config(args, steps=None, seed=None, reg=None) -> TrainConfig:
    return TrainConfig(
        n_l=args.nl if args.nl is not None else args.n_labeled,
        n_u=args.nu,
        steps=args.steps if steps is None else steps,
        weight=args.w,
        lr=args.lr,
        iterations=args.iters,
        seed=args.seed if seed is None else seed,
        regularizer=args.reg if reg is None else reg,
        stop_grad_phi=args.stop_grad_phi,
        self_loops=args.self_loops,
        similarity=args.similarity,
        gamma=args.gamma,
        momentum=args.momentum,
        hidden=tuple(args.hidden),
        embed_dim=args.embed_dim,
    )


def _task(args, seed: int):
    if args.data == "idx":
        if not args.idx_images or not args.idx_labels:
            raise UsageError("--data idx needs --idx-images and --idx-labels")
        return idx_task(args.idx_images, args.idx_labels, seed, args.n_labeled, args.holdout,
                        args.n_classes)
    return synthetic_task(args.data, seed, args.n_points, args.n_labeled, args.holdout)


def _data_files(args):
    return (args.idx_images, args.idx_labels) if args.data == "idx" else ()


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = _train_config(args)
    out = _out_dir(args.out)
    task = _task(args, args.seed)
    res, err = run_ssl(task, cfg)
    write_csv(out / "metrics.csv", ["iteration", "l_sup", "l_reg", "l_total", "train_acc"],
              [(r.iteration, r.l_sup, r.l_reg, r.l_total, r.train_acc) for r in res.records])
    params = {
        "extractor": {"weights": [w.tolist() for w in res.extractor.weights],
                      "biases": [b.tolist() for b in res.extractor.biases]},
        "classifier": {"w": res.classifier.w.tolist(), "b": res.classifier.b.tolist()},
    }
    write_json(out / "params.json", params)
    summary = {"holdout_error": err, "final": asdict(res.records[-1]) if res.records else None}
    write_json(out / "summary.json", summary)
    config = {"data": args.data, "n_points": args.n_points, "n_labeled": args.n_labeled,
              "holdout": args.holdout, **cfg.to_dict()}
    _finish(args, out, config, {"metrics": "metrics.csv", "params": "params.json",
                                "summary": "summary.json"}, t0, _data_files(args))
    if err is not None:
        print(f"holdout_error={err!r}")
    return EXIT_OK


def _parse_s_values(text: str) -> list:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise UsageError(f"--s-values must be comma-separated integers: {text!r}") from e
    if not vals or min(vals) < 1:
        raise UsageError("--s-values needs at least one integer >= 1")
    return vals


def cmd_ablate(args) -> int:
    t0 = time.perf_counter()
    s_values = _parse_s_values(args.s_values)
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    out = _out_dir(args.out)
    cells = [(s, "cclp") for s in s_values]
    if args.baseline:
        cells.append(("none", "none"))
    rows, by_s = [], {}
    for s, reg in cells:
        for r in range(args.repeats):
            seed = args.seed + r
            cfg = _train_config(args, steps=1 if s == "none" else s, seed=seed, reg=reg)
            _, err = run_ssl(_task(args, seed), cfg)
            rows.append((s, r, seed, err))
            by_s.setdefault(s, []).append(err)
            log.info("S=%s repeat=%d error=%r", s, r, err)
    write_csv(out / "table.csv", ["steps", "repeat", "seed", "holdout_error"], rows)
    summary = [(s, float(np.mean(v)), float(np.std(v)), len(v)) for s, v in by_s.items()]
    write_csv(out / "summary.csv", ["steps", "mean_error", "sd_error", "n"], summary)
    config = {"data": args.data, "n_points": args.n_points, "n_labeled": args.n_labeled,
              "holdout": args.holdout, "s_values": s_values, "repeats": args.repeats,
              "baseline": args.baseline, **_train_config(args).to_dict()}
    _finish(args, out, config, {"table": "table.csv", "summary": "summary.csv"}, t0,
            _data_files(args))
    for s, mean, sd, _ in summary:
        print(f"S={s} error={mean:.4f} +- {sd:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# checkgrad


def _checkgrad_instance(args):
    rng = make_rng(args.seed)
    n, d, c = args.n, args.d, args.c
    if n < c + 1:
        raise UsageError("--n must exceed --c so that unlabeled rows exist")
    n_l = max(c, n // 2)
    labels = np.concatenate([np.arange(c), rng.integers(0, c, n_l - c)])
    y = np.eye(c)[labels]
    z0 = 0.7 * rng.standard_normal((n, d))
    w0, b0 = rng.standard_normal((d, c)), 0.1 * rng.standard_normal((1, c))
    return z0, w0, b0, y, n_l


def _checkgrad_loss(args, y, n_l, opts):
    def f(t, z, w, b):
        if args.loss == "sup":
            return ob.supervised(ob.classify(z[:n_l, :], w, b), y)
        if args.loss == "cer":
            return ob.cer(ob.classify(z[n_l:, :], w, b))
        if args.loss == "1step":
            return ob.one_step(z, y, opts)
        return ob.cclp(z, y, args.s, opts).loss

    return f


def cmd_checkgrad(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args.out)
    z0, w0, b0, y, n_l = _checkgrad_instance(args)
    opts = ob.GraphOptions(args.similarity, args.gamma, args.self_loops)
    loss = _checkgrad_loss(args, y, n_l, opts)
    at = [z0, w0, b0]

    def f(z, w, b):
        t = ad.Tape()
        return loss(t, t.leaf(z), t.leaf(w), t.leaf(b)).item()

    def analytic(z, w, b):
        t = ad.Tape()
        leaves = [t.leaf(z), t.leaf(w), t.leaf(b)]
        return ad.grad(loss(t, *leaves), leaves)

    names = ["z", "w", "b"]

    def check_all():
        reports = []
        for k in range(3):
            def fk(v, k=k):
                vals = list(at)
                vals[k] = v
                return f(*vals)

            reports.append(ad.finite_diff_check(fk, at[k], h=args.h, analytic=analytic(*at)[k],
                                                tol=args.tol))
        return reports

    reports = _with_corruption(args.corrupt_adjoint, check_all)
    max_err = max(r.max_rel_err for r in reports)
    passed = max_err < args.tol
    worst = sorted(((names[k], idx, a, nm, e) for k, r in enumerate(reports)
                    for idx, a, nm, e in r.worst), key=lambda w: -w[4])[:5]
    doc = {
        "loss": args.loss,
        "max_rel_err": max_err,
        "tol": args.tol,
        "passed": passed,
        "worst": [{"param": p, "index": list(idx), "analytic": a, "numeric": nm, "rel_err": e}
                  for p, idx, a, nm, e in worst],
    }
    write_json(out / "report.json", doc)
    config = {k: getattr(args, k) for k in ("loss", "n", "d", "c", "s", "tol", "h",
                                            "similarity", "gamma")}
    config["self_loops"] = args.self_loops
    _finish(args, out, config, {"report": "report.json"}, t0)
    print(f"{'PASS' if passed else 'FAIL'} loss={args.loss} max_rel_err={max_err:.3e} "
          f"tol={args.tol:g}")
    return EXIT_OK if passed else EXIT_GRAD


def _with_corruption(name, fn):
    if not name:
        return fn()
    if name not in ad.registered():
        raise UsageError(f"no primitive named {name!r}")
    orig = ad.adjoint_of(name)

    def corrupted(*a, **kw):
        return [None if g is None else 1.5 * g for g in orig(*a, **kw)]

    with ad.override_adjoint(name, corrupted):
        return fn()


# ---------------------------------------------------------------------------
# rerun


def cmd_rerun(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        argv = list(manifest["argv"])
    except (OSError, ValueError, KeyError) as e:
        raise ValueError(f"cannot read manifest {args.manifest}: {e}") from e
    if args.out:
        argv += ["--out", args.out]
    return main(argv)


# ---------------------------------------------------------------------------
# parser


def _add_graph_flags(p, gamma: float, similarity: str, self_loops: bool = True) -> None:
    p.add_argument("--similarity", choices=["dot", "negeuclid", "negsqeuclid"], default=similarity)
    p.add_argument("--gamma", type=float, default=gamma,
                   help="scale applied to the similarity score"
                        + (" (default depends on --layout)" if gamma is None else ""))
    p.add_argument("--self-loops", action=argparse.BooleanOptionalAction, default=self_loops,
                   help="keep the diagonal of the transition matrix")


def _add_train_flags(p) -> None:
    p.add_argument("--data", choices=["moons", "circles", "idx"], default="moons")
    p.add_argument("--idx-images")
    p.add_argument("--idx-labels")
    p.add_argument("--n-classes", type=int, default=10, help="class count of IDX data")
    p.add_argument("--n-points", type=int, default=120, help="training points (synthetic data)")
    p.add_argument("--holdout", type=int, default=200)
    p.add_argument("--n-labeled", type=int, default=2, help="total labeled samples")
    p.add_argument("--nl", type=int, default=None, help="labeled batch size (default: n-labeled)")
    p.add_argument("--nu", type=int, default=100)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--w", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=SSL_DEFAULTS["lr"])
    p.add_argument("--iters", type=int, default=SSL_DEFAULTS["iterations"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reg", choices=["cclp", "cer", "none"], default="cclp")
    p.add_argument("--stop-grad-phi", action="store_true")
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--hidden", type=int, nargs="*", default=[128, 64])
    p.add_argument("--embed-dim", type=int, default=32)
    _add_graph_flags(p, gamma=SSL_DEFAULTS["gamma"], similarity=SSL_DEFAULTS["similarity"],
                     self_loops=SSL_DEFAULTS["self_loops"])
    p.add_argument("--out", default="out/train")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cclp", description="Compact clustering via label propagation")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    toy = sub.add_parser("toy", help="free-embedding dynamics on a 2-D layout")
    toy.add_argument("--layout", choices=["circles", "moons"], default="circles")
    toy.add_argument("--reg", choices=["cclp", "cer", "none"], default="cclp")
    toy.add_argument("--steps", type=int, default=10)
    toy.add_argument("--w", type=float, default=TOY_WEIGHT)
    toy.add_argument("--lr", type=float, default=0.1)
    toy.add_argument("--iters", type=int, default=3000)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--snapshot-every", type=int, default=100)
    toy.add_argument("--stop-grad-phi", action="store_true")
    _add_graph_flags(toy, gamma=None, similarity="negsqeuclid")
    toy.add_argument("--out", default="out/toy")

    tr = sub.add_parser("train", help="SSL training of an MLP extractor")
    _add_train_flags(tr)

    ab = sub.add_parser("ablate", help="sweep the number of chain steps")
    _add_train_flags(ab)
    ab.add_argument("--s-values", default="1,2,3,6,10,20")
    ab.add_argument("--repeats", type=int, default=10)
    ab.add_argument("--baseline", action="store_true", help="also run without a regulariser")
    ab.set_defaults(out="out/ablate")

    cg = sub.add_parser("checkgrad", help="compare analytic and finite-difference gradients")
    cg.add_argument("--loss", choices=["sup", "cclp", "cer", "1step"], default="cclp")
    cg.add_argument("--n", type=int, default=8)
    cg.add_argument("--d", type=int, default=3)
    cg.add_argument("--c", type=int, default=2)
    cg.add_argument("--s", type=int, default=3)
    cg.add_argument("--seed", type=int, default=0)
    cg.add_argument("--tol", type=float, default=1e-5)
    cg.add_argument("--h", type=float, default=1e-5)
    _add_graph_flags(cg, gamma=1.0, similarity="dot")
    cg.add_argument("--corrupt-adjoint", default=None, help=argparse.SUPPRESS)
    cg.add_argument("--out", default="out/checkgrad")

    rr = sub.add_parser("rerun", help="repeat a run from its manifest")
    rr.add_argument("manifest")
    rr.add_argument("--out", default=None)
    rr.set_defaults(seed=0)
    return p


COMMANDS = {"toy": cmd_toy, "train": cmd_train, "ablate": cmd_ablate,
            "checkgrad": cmd_checkgrad, "rerun": cmd_rerun}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    args.argv = [a for a in argv if a not in ("-v", "--verbose")]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"cclp {args.command}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DegenerateBatchError, FloatingPointError) as e:
        print(f"cclp {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IdxError, InsufficientSamplesError, OSError, ValueError) as e:
        print(f"cclp {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
