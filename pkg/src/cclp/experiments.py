"""Task builders and metrics shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, apply_whitening, read_idx, two_circles, two_moons, whiten
from .graph import build_graph, laplacian_energy
from .labelprop import propagate_closed_form
from .model import classify, extract
from .numkit import make_rng
from .trainer import (
    FreeRun,
    TrainConfig,
    TrainResult,
    cluster_preservation,
    linearly_separated,
    train,
)

# Settings for the small two-moons SSL task; the train CLI uses the same defaults.
SSL_DEFAULTS = dict(n_l=2, n_u=100, lr=0.1, iterations=500, similarity="dot",
                    gamma=0.3, self_loops=False)


@dataclass
class SslTask:
    labeled: Dataset
    unlabeled: Dataset
    holdout: Dataset | None


def _pick_per_class(y, n_classes: int, per_class: int, rng) -> np.ndarray:
    picks = []
    for c in range(n_classes):
        pool = np.flatnonzero(y == c)
        if pool.size < per_class:
            raise ValueError(f"class {c} has {pool.size} samples, need {per_class}")
        picks.append(np.sort(rng.choice(pool, size=per_class, replace=False)))
    return np.concatenate(picks)


def split_task(train_set: Dataset, holdout: Dataset | None, n_labeled: int,
               rng: np.random.Generator) -> SslTask:
    """Pick ``n_labeled`` class-balanced labels; every training sample is also unlabeled data.

    Features are standardised with statistics of the training set.
    """
    c = train_set.n_classes
    if n_labeled % c:
        raise ValueError(f"n_labeled={n_labeled} is not divisible by the class count {c}")
    x, mean, sd = whiten(train_set.x)
    idx = _pick_per_class(train_set.y, c, n_labeled // c, rng)
    rest = np.setdiff1d(np.arange(len(train_set)), idx)
    labeled = Dataset(x[idx], train_set.y[idx], c)
    unlabeled = Dataset(x[rest], train_set.y[rest], c).unlabel()
    if holdout is not None:
        holdout = Dataset(apply_whitening(holdout.x, mean, sd), holdout.y, c)
    return SslTask(labeled, unlabeled, holdout)


def synthetic_task(kind: str, seed: int, n_points: int = 120, n_labeled: int = 2,
                   holdout: int = 200, noise_sd: float | None = None) -> SslTask:
    """Two-moons or two-circles SSL task with an independent holdout sample."""
    rng = make_rng(seed)
    if kind == "moons":
        gen = two_moons
        kw = {} if noise_sd is None else {"noise_sd": noise_sd}
        train_set = gen(n_points // 2, rng=rng, **kw)
        test = gen(holdout // 2, rng=rng, **kw) if holdout else None
    elif kind == "circles":
        kw = {} if noise_sd is None else {"noise_sd": noise_sd}
        train_set = two_circles(n_points // 2, rng=rng, **kw)
        test = two_circles(holdout // 2, rng=rng, **kw) if holdout else None
    else:
        raise ValueError(f"unknown synthetic data {kind!r}")
    return split_task(train_set, test, n_labeled, rng)


def idx_task(images, labels, seed: int, n_labeled: int, holdout: int,
             n_classes: int = 10) -> SslTask:
    """IDX files: shuffle with ``seed``, hold out the last ``holdout`` samples."""
    ds = read_idx(images, labels, n_classes)
    rng = make_rng(seed)
    order = rng.permutation(len(ds))
    if holdout >= len(ds):
        raise ValueError(f"holdout={holdout} leaves no training data ({len(ds)} samples)")
    train_idx = order[: len(ds) - holdout]
    test = ds.subset(order[len(ds) - holdout:]) if holdout else None
    return split_task(ds.subset(train_idx), test, n_labeled, rng)


def holdout_error(result: TrainResult, holdout: Dataset) -> float:
    probs = classify(extract(holdout.x, result.extractor), result.classifier)
    return float(np.mean(np.argmax(probs, axis=1) != holdout.y))


def run_ssl(task: SslTask, cfg: TrainConfig) -> tuple[TrainResult, float | None]:
    n_u = min(cfg.n_u, len(task.unlabeled))
    if n_u != cfg.n_u:
        cfg = TrainConfig(**{**cfg.to_dict(), "hidden": cfg.hidden, "n_u": n_u})
    res = train(task.labeled, task.unlabeled, cfg)
    err = holdout_error(res, task.holdout) if task.holdout is not None else None
    return res, err


def lp_energy(z, n_labeled: int, phi, cfg: TrainConfig) -> float:
    """Graph-Laplacian energy of the class-1 LP posterior on the embedding graph."""
    g = build_graph(np.sqrt(cfg.gamma) * np.asarray(z), n_labeled, cfg.self_loops, cfg.similarity)
    return laplacian_energy(g.a, np.asarray(phi)[:, -1])


def toy_summary(run: FreeRun, cfg: TrainConfig) -> dict:
    z = run.embeddings.z
    g = build_graph(np.sqrt(cfg.gamma) * z, run.n_labeled, cfg.self_loops, cfg.similarity)
    y_l = np.eye(2)[run.labels[: run.n_labeled]]
    phi = propagate_closed_form(g, y_l).phi
    pred = run.predictions()
    return {
        "linearly_separable": linearly_separated(run),
        "cluster_preservation": cluster_preservation(run),
        "accuracy_all": float(np.mean(pred == run.labels)),
        "lp_accuracy_unlabeled": float(np.mean(np.argmax(phi[run.n_labeled:], axis=1)
                                               == run.labels[run.n_labeled:])),
        "laplacian_energy": laplacian_energy(g.a, phi[:, -1]),
        "class_spread": [float(np.mean(np.linalg.norm(z[run.labels == c] - z[run.labels == c].mean(0),
                                                        axis=1))) for c in range(2)],
        "final_l_sup": run.snapshots[-1].l_sup,
        "final_l_reg": run.snapshots[-1].l_reg,
        "iterations": run.snapshots[-1].iteration,
    }
