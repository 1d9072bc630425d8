import numpy as np
import pytest

from cclp import autograd as ad
from cclp import objectives as ob
from cclp.data import Dataset, SamplerState, sample_batch, two_moons
from cclp.model import LinearClassifier, MlpExtractor
from cclp.numkit import SingularMatrixError, make_rng
from cclp.trainer import (
    Sgd,
    TrainConfig,
    compute_step,
    free_embedding_train,
    init_models,
    toy_problem,
    train,
    train_step,
)


def _setup(seed=0, n_l=4, n_u=8, hidden=(6,), d=3):
    rng = make_rng(seed)
    lab = Dataset(rng.standard_normal((12, 2)), np.repeat([0, 1], 6), 2)
    unl = Dataset(rng.standard_normal((20, 2)), np.full(20, -1), 2)
    cfg = TrainConfig(n_l=n_l, n_u=n_u, hidden=hidden, embed_dim=d, lr=0.05, seed=seed,
                      similarity="negsqeuclid")
    batch = sample_batch(lab, unl, n_l, n_u, SamplerState.for_datasets(lab, unl, rng))
    ext, clf = init_models(2, 2, cfg)
    return batch, ext, clf, cfg


def _flat(params):
    return np.concatenate([p.ravel() for p in params])


def test_config_validation():
    for bad in ({"steps": 0}, {"weight": -1.0}, {"lr": 0.0}, {"regularizer": "x"},
                {"iterations": -1}, {"momentum": 1.0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_zero_weight_matches_supervised_bitwise():
    batch, ext, clf, cfg = _setup()
    _, e0, c0 = train_step(batch, ext, clf, TrainConfig(**{**cfg.to_dict(), "hidden": cfg.hidden,
                                                          "weight": 0.0}), 2)
    _, e1, c1 = train_step(batch, ext, clf, TrainConfig(**{**cfg.to_dict(), "hidden": cfg.hidden,
                                                          "regularizer": "none"}), 2)
    assert _flat(e0.params()).tobytes() == _flat(e1.params()).tobytes()
    assert _flat(c0.params()).tobytes() == _flat(c1.params()).tobytes()


@pytest.mark.parametrize("reg", ["cclp", "cer"])
def test_classifier_update_ignores_regulariser(reg):
    batch, ext, clf, cfg = _setup(1)
    base = {**cfg.to_dict(), "hidden": cfg.hidden, "regularizer": reg}
    _, e0, c0 = train_step(batch, ext, clf, TrainConfig(**{**base, "weight": 0.0}), 2)
    _, e1, c1 = train_step(batch, ext, clf, TrainConfig(**{**base, "weight": 1.0}), 2)
    assert _flat(c0.params()).tobytes() == _flat(c1.params()).tobytes()
    assert not np.array_equal(_flat(e0.params()), _flat(e1.params()))


def test_classifier_update_is_exactly_minus_lr_sup_grad():
    batch, ext, clf, cfg = _setup(2)
    t = ad.Tape()
    zp = [t.leaf(p) for p in ext.params()]
    gp = [t.leaf(p) for p in clf.params()]
    k = len(ext.weights)
    emb = ob.mlp(t.const(batch.x), zp[:k], zp[k:])
    probs = ob.classify(emb, *gp)
    y = np.eye(2)[batch.y]
    gw, gb = ad.grad(ob.supervised(probs[:4, :], y), gp)
    _, _, c1 = train_step(batch, ext, clf, cfg, 2)
    assert c1.w.tobytes() == (clf.w - cfg.lr * gw).tobytes()
    assert c1.b.tobytes() == (clf.b - cfg.lr * gb).tobytes()


def test_record_total_decomposition():
    batch, ext, clf, cfg = _setup(3)
    cfg = TrainConfig(**{**cfg.to_dict(), "hidden": cfg.hidden, "weight": 0.7})
    rec, _, _ = train_step(batch, ext, clf, cfg, 2)
    assert abs(rec.l_total - (rec.l_sup + 0.7 * rec.l_reg)) <= 1e-12
    assert rec.l_reg > 0


def test_inputs_unchanged_on_solver_error():
    batch, ext, clf, cfg = _setup(4)
    before = _flat(ext.params()).copy(), _flat(clf.params()).copy()
    with ad.override_adjoint("lu_solve", _raise_singular):
        with pytest.raises(SingularMatrixError):
            train_step(batch, ext, clf, cfg, 2)
    assert _flat(ext.params()).tobytes() == before[0].tobytes()
    assert _flat(clf.params()).tobytes() == before[1].tobytes()


def _raise_singular(*_args, **_kw):
    raise SingularMatrixError("forced")


def test_single_step_descends_on_most_seeds():
    wins = 0
    for seed in range(100):
        batch, ext, clf, cfg = _setup(seed)
        cfg = TrainConfig(**{**cfg.to_dict(), "hidden": cfg.hidden, "lr": 1e-3})
        rec, e1, c1 = train_step(batch, ext, clf, cfg, 2)
        after = compute_step(batch.x, batch.y, 2, e1, c1, cfg).record
        wins += after.l_total < rec.l_total
    assert wins >= 95


def test_train_zero_iterations_and_determinism():
    rng = make_rng(0)
    ds = two_moons(n_per_moon=20, rng=rng)
    lab = ds.subset(np.r_[0:4, 20:24])
    unl = ds.subset(np.r_[4:20, 24:40]).unlabel()
    cfg = TrainConfig(n_l=4, n_u=10, iterations=0, hidden=(8,), embed_dim=4)
    ext, clf = init_models(2, 2, cfg)
    res = train(lab, unl, cfg, ext.copy(), clf.copy())
    assert res.records == []
    assert _flat(res.extractor.params()).tobytes() == _flat(ext.params()).tobytes()
    cfg = TrainConfig(n_l=4, n_u=10, iterations=15, hidden=(8,), embed_dim=4)
    a, b = train(lab, unl, cfg), train(lab, unl, cfg)
    assert [vars(r) for r in a.records] == [vars(r) for r in b.records]


def test_train_reaches_full_labeled_accuracy():
    ds = two_moons(rng=make_rng(1))
    cfg = TrainConfig(n_l=10, n_u=20, iterations=300, hidden=(32,), embed_dim=8, lr=0.1,
                      steps=3, seed=1)
    lab = ds.subset(np.r_[0:5, 60:65])
    res = train(lab, ds.unlabel(), cfg)
    assert res.records[-1].train_acc == 1.0


def test_momentum_sgd_accumulates():
    opt = Sgd(0.1, momentum=0.5)
    p = [np.zeros(2)]
    p = opt.step(p, [np.ones(2)])
    p = opt.step(p, [np.ones(2)])
    np.testing.assert_allclose(p[0], -0.1 - 0.15)


def test_free_embedding_none_keeps_unlabeled_fixed():
    p = toy_problem("circles", 0)
    cfg = TrainConfig(regularizer="none", iterations=20, lr=0.1)
    run = free_embedding_train(p.z0, p.labels, 2, 2, cfg, snapshot_every=5)
    for s in run.snapshots:
        assert s.z[2:].tobytes() == p.z0[2:].tobytes()
    assert not np.array_equal(run.embeddings.z[:2], p.z0[:2])
    assert [s.iteration for s in run.snapshots] == [0, 5, 10, 15, 20]


def test_free_embedding_zero_iterations_single_snapshot():
    p = toy_problem("moons", 0)
    run = free_embedding_train(p.z0, p.labels, 2, 2, TrainConfig(iterations=0, steps=2),
                               snapshot_every=1)
    assert len(run.snapshots) == 1 and run.snapshots[0].phi is not None


def test_cclp_coordinate_gradient_independent_of_classifier():
    p = toy_problem("moons", 3)
    cfg = TrainConfig(iterations=0, steps=4, similarity="negsqeuclid", gamma=4.0)
    a = free_embedding_train(p.z0, p.labels, 2, 2, cfg)
    other = LinearClassifier(make_rng(9).standard_normal((2, 2)), np.array([[3.0, -1.0]]))
    b = free_embedding_train(p.z0, p.labels, 2, 2, cfg, classifier=other)
    assert a.snapshots[0].grad_reg.tobytes() == b.snapshots[0].grad_reg.tobytes()


def test_free_embedding_record_decomposition():
    p = toy_problem("circles", 1)
    cfg = TrainConfig(iterations=5, steps=3, weight=2.5, similarity="negsqeuclid", gamma=4.0)
    run = free_embedding_train(p.z0, p.labels, 2, 2, cfg)
    for r in run.records:
        assert abs(r.l_total - (r.l_sup + 2.5 * r.l_reg)) <= 1e-12


def test_toy_problem_layout():
    p = toy_problem("circles", 5)
    assert p.z0.shape == (80, 2) and p.labels[:2].tolist() == [0, 1]
    m = toy_problem("moons", 5)
    assert m.labels[:2].tolist() == [0, 1]
    # labeled moon points sit near the outer tips
    assert m.z0[0, 0] < -0.8 and m.z0[1, 0] > 1.8
    with pytest.raises(ValueError):
        toy_problem("spiral", 0)
