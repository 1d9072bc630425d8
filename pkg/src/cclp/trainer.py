"""Training loops: SSL with a regulariser on a network, and free 2-D embeddings.

Gradient routing follows the CCLP training algorithm: the feature extractor
(or the free coordinates) descends the total loss ``L_sup + w * L_reg``, the
linear classifier descends ``L_sup`` alone.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autograd as ad
from . import objectives as ob
from .autograd import Tape
from .data import Dataset, InputBatch, SamplerState, one_hot, sample_batch
from .model import FreeEmbeddings, LinearClassifier, MlpExtractor, accuracy
from .numkit import make_rng

log = logging.getLogger(__name__)

REGULARIZERS = ("cclp", "cer", "none")


@dataclass(frozen=True)
class TrainConfig:
    n_l: int = 100
    n_u: int = 100
    steps: int = 3
    weight: float = 1.0
    lr: float = 0.1
    iterations: int = 1000
    seed: int = 0
    regularizer: str = "cclp"
    stop_grad_phi: bool = False
    self_loops: bool = True
    similarity: str = "dot"
    gamma: float = 1.0
    momentum: float = 0.0
    hidden: tuple = (128, 64)
    embed_dim: int = 32

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")

    @property
    def graph(self) -> ob.GraphOptions:
        return ob.GraphOptions(self.similarity, self.gamma, self.self_loops)

    @property
    def active(self) -> bool:
        """Whether the regulariser contributes at all."""
        return self.regularizer != "none" and self.weight > 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class IterationRecord:
    iteration: int
    l_sup: float
    l_reg: float
    l_total: float
    train_acc: float
    snapshot: dict | None = None


class Sgd:
    """Plain SGD, optionally with heavy-ball momentum."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[int, np.ndarray] = {}

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], key: int = 0):
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            if self.momentum:
                v = self.momentum * self.velocity.get((key, i), 0.0) + g
                self.velocity[(key, i)] = v
                g = v
            out.append(p - self.lr * g)
        return out


def _regulariser(emb, probs_u, y_l, cfg: TrainConfig):
    if cfg.regularizer == "cclp":
        return ob.cclp(emb, y_l, cfg.steps, cfg.graph, cfg.stop_grad_phi).loss
    return ob.cer(probs_u)


@dataclass
class StepResult:
    record: IterationRecord
    grads_z: list
    grads_g: list


def compute_step(x: np.ndarray, y_labels, n_classes: int, extractor: MlpExtractor,
                 classifier: LinearClassifier, cfg: TrainConfig) -> StepResult:
    """Forward both losses and route their gradients; parameters are not touched."""
    y_l = one_hot(y_labels, n_classes)
    n_l = y_l.shape[0]
    t = Tape()
    z_params = [t.leaf(p) for p in extractor.params()]
    k = len(extractor.weights)
    g_params = [t.leaf(p) for p in classifier.params()]
    emb = ob.mlp(t.const(x), z_params[:k], z_params[k:])
    probs = ob.classify(emb, *g_params)
    l_sup = ob.supervised(probs[:n_l, :], y_l)
    sup_grads = ad.grad(l_sup, z_params + g_params)
    grads_z = sup_grads[: len(z_params)]
    grads_g = sup_grads[len(z_params):]
    l_reg_val = 0.0
    if cfg.active:
        l_reg = _regulariser(emb, probs[n_l:, :], y_l, cfg)
        l_reg_val = l_reg.item()
        reg_grads = ad.grad(l_reg, z_params)
        grads_z = [gs + cfg.weight * gr for gs, gr in zip(grads_z, reg_grads)]
    l_sup_val = l_sup.item()
    rec = IterationRecord(
        iteration=-1,
        l_sup=l_sup_val,
        l_reg=l_reg_val,
        l_total=l_sup_val + cfg.weight * l_reg_val,
        train_acc=accuracy(probs.value[:n_l], y_labels),
    )
    return StepResult(rec, grads_z, grads_g)


def train_step(batch: InputBatch, extractor: MlpExtractor, classifier: LinearClassifier,
               cfg: TrainConfig, n_classes: int, opt: Sgd | None = None,
               iteration: int = 0):
    """One SGD iteration; returns ``(record, new_extractor, new_classifier)``.

    Inputs are never mutated, so a failure leaves the caller's state intact.
    """
    opt = opt or Sgd(cfg.lr, cfg.momentum)
    res = compute_step(batch.x, batch.y, n_classes, extractor, classifier, cfg)
    new_z = extractor.with_params(opt.step(extractor.params(), res.grads_z, key=0))
    new_g = classifier.with_params(opt.step(classifier.params(), res.grads_g, key=1))
    res.record.iteration = iteration
    return res.record, new_z, new_g


def init_models(input_dim: int, n_classes: int, cfg: TrainConfig):
    rng = make_rng(cfg.seed)
    extractor = MlpExtractor.init((input_dim, *cfg.hidden, cfg.embed_dim), rng)
    classifier = LinearClassifier.init(cfg.embed_dim, n_classes, rng)
    return extractor, classifier


@dataclass
class TrainResult:
    extractor: MlpExtractor
    classifier: LinearClassifier
    records: list = field(default_factory=list)


def train(labeled: Dataset, unlabeled: Dataset | None, cfg: TrainConfig,
          extractor: MlpExtractor | None = None,
          classifier: LinearClassifier | None = None) -> TrainResult:
    """Run ``cfg.iterations`` SGD steps; a pure function of the inputs and ``cfg.seed``."""
    if extractor is None or classifier is None:
        extractor, classifier = init_models(labeled.x.shape[1], labeled.n_classes, cfg)
    sampler = SamplerState.for_datasets(labeled, unlabeled, make_rng(cfg.seed + 1))
    opt = Sgd(cfg.lr, cfg.momentum)
    records = []
    n_u = cfg.n_u if unlabeled is not None else 0
    for it in range(cfg.iterations):
        batch = sample_batch(labeled, unlabeled, cfg.n_l, n_u, sampler)
        rec, extractor, classifier = train_step(batch, extractor, classifier, cfg,
                                                labeled.n_classes, opt, it)
        records.append(rec)
        if log.isEnabledFor(logging.DEBUG) and it % 100 == 0:
            log.debug("it %d sup %.4f reg %.4f acc %.3f", it, rec.l_sup, rec.l_reg, rec.train_acc)
    return TrainResult(extractor, classifier, records)


# ---------------------------------------------------------------------------
# free embeddings


@dataclass
class Snapshot:
    iteration: int
    z: np.ndarray
    w: np.ndarray
    b: np.ndarray
    grad_sup: np.ndarray
    grad_reg: np.ndarray
    phi: np.ndarray | None
    l_sup: float
    l_reg: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "z": self.z.tolist(),
            "w": self.w.tolist(),
            "b": self.b.tolist(),
            "grad_sup": self.grad_sup.tolist(),
            "grad_reg": self.grad_reg.tolist(),
            "phi": None if self.phi is None else self.phi.tolist(),
            "l_sup": self.l_sup,
            "l_reg": self.l_reg,
        }


@dataclass
class FreeRun:
    embeddings: FreeEmbeddings
    classifier: LinearClassifier
    labels: np.ndarray
    n_labeled: int
    snapshots: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def predictions(self) -> np.ndarray:
        logits = self.embeddings.z @ self.classifier.w + self.classifier.b
        return np.argmax(logits, axis=1)


def _free_forward(z, clf: LinearClassifier, y_l, cfg: TrainConfig, want_phi: bool):
    n_l = y_l.shape[0]
    t = Tape()
    zv = t.leaf(z)
    wv, bv = t.leaf(clf.w), t.leaf(clf.b)
    l_sup = ob.supervised(ob.classify(zv[:n_l, :], wv, bv), y_l)
    g_sup = ad.grad(l_sup, [zv, wv, bv])
    g_reg = [np.zeros_like(z), np.zeros_like(clf.w), np.zeros_like(clf.b)]
    phi = None
    l_reg_val = 0.0
    l_reg = None
    if cfg.regularizer == "cclp":
        terms = ob.cclp(zv, y_l, cfg.steps, cfg.graph, cfg.stop_grad_phi)
        l_reg = terms.loss
        phi = terms.phi.value
    elif cfg.regularizer == "cer":
        l_reg = ob.cer(ob.classify(zv[n_l:, :], wv, bv))
    if l_reg is not None:
        g_reg = ad.grad(l_reg, [zv, wv, bv])
        l_reg_val = l_reg.item()
    if phi is None and want_phi:
        phi = ob.label_propagation(ob.transition(zv, cfg.graph), y_l).value
    return l_sup.item(), l_reg_val, g_sup, g_reg, phi


def free_embedding_train(z0, labels, n_labeled: int, n_classes: int, cfg: TrainConfig,
                         snapshot_every: int = 0, classifier: LinearClassifier | None = None,
                         classifier_scale: float = 0.1, on_iteration=None) -> FreeRun:
    """Optimise 2-D coordinates directly alongside a linear classifier.

    Rows ``[:n_labeled]`` of ``z0`` are the labeled samples. ``labels`` holds
    the class of every row; only the labeled part is used for training, the
    rest is kept for evaluation. Both losses update the coordinates and the
    classifier (CCLP has no classifier gradient, CER does). Snapshots hold
    coordinates, classifier, per-loss coordinate gradients and LP posteriors;
    they are taken at iteration 0, every ``snapshot_every`` iterations and at
    the end. ``on_iteration(it, z, classifier, grad_sup_z, grad_reg_z)`` is
    called before every update.
    """
    z = np.array(z0, dtype=np.float64, copy=True)
    labels = np.asarray(labels, dtype=np.int64)
    y_l = one_hot(labels[:n_labeled], n_classes)
    if classifier is None:
        rng = make_rng(cfg.seed)
        classifier = LinearClassifier.init(z.shape[1], n_classes, rng, scale=classifier_scale)
    clf = classifier.copy()
    weight = cfg.weight if cfg.regularizer != "none" else 0.0
    run = FreeRun(FreeEmbeddings(z), clf, labels, n_labeled)
    for it in range(cfg.iterations + 1):
        last = it == cfg.iterations
        take = last or it == 0 or (snapshot_every > 0 and it % snapshot_every == 0)
        l_sup, l_reg, g_sup, g_reg, phi = _free_forward(z, clf, y_l, cfg, take)
        if take:
            run.snapshots.append(Snapshot(it, z.copy(), clf.w.copy(), clf.b.copy(),
                                          g_sup[0], g_reg[0], phi, l_sup, l_reg))
        if last:
            break
        if on_iteration is not None:
            on_iteration(it, z, clf, g_sup[0], g_reg[0])
        step = [gs + weight * gr for gs, gr in zip(g_sup, g_reg)]
        z = z - cfg.lr * step[0]
        clf = LinearClassifier(clf.w - cfg.lr * step[1], clf.b - cfg.lr * step[2])
        acc = float(np.mean(np.argmax(z[:n_labeled] @ clf.w + clf.b, axis=1) == labels[:n_labeled]))
        run.records.append(IterationRecord(it, l_sup, l_reg, l_sup + weight * l_reg, acc))
    run.embeddings = FreeEmbeddings(z)
    run.classifier = clf
    return run


@dataclass
class ToyProblem:
    z0: np.ndarray
    labels: np.ndarray
    n_labeled: int
    n_classes: int


def toy_problem(layout: str, seed: int, n_per_class: int | None = None,
                noise_sd: float | None = None, tip_fraction: float = 0.1) -> ToyProblem:
    """Initial 2-D coordinates with one labeled point per class stacked first.

    Circles draw the labeled point uniformly from each circle. Moons draw it
    from the outer ``tip_fraction`` of each moon (largest t), far from the
    other class.
    """
    from .data import two_circles, two_moons

    rng = make_rng(seed)
    if layout == "circles":
        kw = {} if n_per_class is None else {"n_per_circle": n_per_class}
        if noise_sd is not None:
            kw["noise_sd"] = noise_sd
        ds = two_circles(rng=rng, **kw)
        n = ds.x.shape[0] // 2
        picks = [int(rng.integers(0, n)) + c * n for c in range(2)]
    elif layout == "moons":
        kw = {} if n_per_class is None else {"n_per_moon": n_per_class}
        if noise_sd is not None:
            kw["noise_sd"] = noise_sd
        ds = two_moons(rng=rng, **kw)
        n = ds.x.shape[0] // 2
        k = max(1, int(round(tip_fraction * n)))
        picks = [c * n + n - 1 - int(rng.integers(0, k)) for c in range(2)]
    else:
        raise ValueError(f"unknown layout {layout!r}")
    rest = [i for i in range(ds.x.shape[0]) if i not in picks]
    order = np.array(picks + rest)
    return ToyProblem(ds.x[order].copy(), ds.y[order].copy(), 2, 2)


def linearly_separated(run: FreeRun) -> bool:
    """True when the trained classifier puts every point on its class's side."""
    return bool(np.all(run.predictions() == run.labels))


def cluster_preservation(run: FreeRun) -> float:
    """Fraction of unlabeled points predicted as their class of origin."""
    pred = run.predictions()[run.n_labeled:]
    return float(np.mean(pred == run.labels[run.n_labeled:]))
