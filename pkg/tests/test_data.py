import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cclp.data import (
    UNLABELED,
    Dataset,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    InsufficientSamplesError,
    SamplerState,
    apply_whitening,
    one_hot,
    read_idx,
    sample_batch,
    two_circles,
    two_moons,
    whiten,
    write_idx,
)
from cclp.numkit import make_rng


def test_circles_noise_free_radius():
    ds = two_circles(noise_sd=0.0, rng=make_rng(0))
    r = np.linalg.norm(ds.x, axis=1)
    # cos^2 + sin^2 rounds, so "exact" means within one ulp of the radius
    assert np.all(np.abs(r[ds.y == 0] - 1.0) <= np.spacing(1.0))
    assert np.all(np.abs(r[ds.y == 1] - 2.0) <= np.spacing(2.0))


def test_circles_deterministic():
    a = two_circles(rng=make_rng(3))
    b = two_circles(rng=make_rng(3))
    assert a.x.tobytes() == b.x.tobytes()


def test_circles_mean_radius_within_mc_bound():
    n, sd = 2000, 0.02
    ds = two_circles(n_per_circle=n, noise_sd=sd, rng=make_rng(11))
    r = np.linalg.norm(ds.x[ds.y == 1], axis=1)
    assert abs(r.mean() - 2.0) < 3 * sd / np.sqrt(n)


def test_circles_bad_radii():
    with pytest.raises(ValueError):
        two_circles(r_inner=2.0, r_outer=1.0)
    with pytest.raises(ValueError):
        two_circles(r_inner=0.0)


def test_moons_endpoint_and_determinism():
    ds = two_moons(noise_sd=0.0, rng=make_rng(0))
    np.testing.assert_allclose(ds.x[0], [1.0, 0.0], atol=1e-15)
    a, b = two_moons(rng=make_rng(5)), two_moons(rng=make_rng(5))
    assert a.x.tobytes() == b.x.tobytes()
    with pytest.raises(ValueError):
        two_moons(n_per_moon=1)


def _in_triangle(p, a, b, c):
    def cross(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])

    d1, d2, d3 = cross(a, b, p), cross(b, c, p), cross(c, a, p)
    return (d1 > 0 and d2 > 0 and d3 > 0) or (d1 < 0 and d2 < 0 and d3 < 0)


def _nearest(x, target):
    return x[np.argmin(np.linalg.norm(x - target, axis=1))]


@pytest.mark.parametrize("seed", range(10))
def test_moons_linearly_inseparable_certificate(seed):
    # A class-1 point inside a triangle of class-0 points rules out any separating line.
    ds = two_moons(n_per_moon=50, noise_sd=0.05, rng=make_rng(seed))
    upper, lower = ds.x[ds.y == 0], ds.x[ds.y == 1]
    tri = [_nearest(upper, t) for t in ([-1.0, 0.0], [1.0, 0.0], [0.0, 1.0])]
    assert any(_in_triangle(p, *tri) for p in lower)


def test_moons_perceptron_never_converges():
    ds = two_moons(n_per_moon=50, noise_sd=0.05, rng=make_rng(0))
    x = np.column_stack([ds.x, np.ones(len(ds))])
    s = np.where(ds.y == 1, 1.0, -1.0)
    w = np.zeros(3)
    best = len(ds)
    for _ in range(2000):
        wrong = np.flatnonzero(s * (x @ w) <= 0)
        best = min(best, wrong.size)
        if wrong.size == 0:
            break
        w += s[wrong[0]] * x[wrong[0]]
    assert best > 0


def _pool(c=10, per=5, d=3, seed=0):
    rng = make_rng(seed)
    return Dataset(rng.standard_normal((c * per, d)), np.repeat(np.arange(c), per), c)


def test_sample_batch_one_per_class():
    lab = _pool()
    st_ = SamplerState.for_datasets(lab, None, make_rng(1))
    b = sample_batch(lab, None, 10, 0, st_)
    assert sorted(b.y.tolist()) == list(range(10))
    assert b.x.shape == (10, 3) and b.n_unlabeled == 0


def test_sample_batch_counting_oracle_10000_draws():
    lab = _pool(c=4, per=6)
    unl = _pool(c=4, per=10, seed=1).unlabel()
    st_ = SamplerState.for_datasets(lab, unl, make_rng(2))
    for _ in range(10000):
        b = sample_batch(lab, unl, 8, 12, st_)
        counts = np.bincount(b.y, minlength=4)
        assert (counts == 2).all()
        assert len(set(b.labeled_idx.tolist())) == 8
        assert len(set(b.unlabeled_idx.tolist())) == 12
        assert b.n_labeled == 8 and b.x.shape[0] == 20


def test_sample_batch_rows_follow_indices():
    lab = _pool()
    unl = _pool(seed=4).unlabel()
    b = sample_batch(lab, unl, 20, 7, SamplerState.for_datasets(lab, unl, make_rng(0)))
    np.testing.assert_array_equal(b.x[:20], lab.x[b.labeled_idx])
    np.testing.assert_array_equal(b.x[20:], unl.x[b.unlabeled_idx])


def test_sample_batch_errors():
    lab = _pool(c=3, per=2)
    st_ = SamplerState.for_datasets(lab, None, make_rng(0))
    with pytest.raises(ValueError, match="divisible"):
        sample_batch(lab, None, 4, 0, st_)
    with pytest.raises(InsufficientSamplesError):
        sample_batch(lab, None, 9, 0, st_)
    with pytest.raises(InsufficientSamplesError):
        sample_batch(lab, None, 3, 1, st_)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), [0, 2], 2)
    Dataset(np.zeros((2, 1)), [0, UNLABELED], 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), [0], 2)


def test_one_hot():
    np.testing.assert_array_equal(one_hot([1, 0], 3), [[0, 1, 0], [1, 0, 0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_whiten_recomputed_stats(n, d, seed):
    rng = make_rng(seed)
    x = rng.standard_normal((n, d)) * rng.uniform(0.1, 10, d) + rng.uniform(-5, 5, d)
    xw, mean, sd = whiten(x)
    np.testing.assert_allclose(xw.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(xw.std(axis=0), 1.0, atol=1e-9)
    np.testing.assert_allclose(apply_whitening(x, mean, sd), xw, atol=0)


def test_whiten_idempotent_and_constant_feature():
    x = make_rng(0).standard_normal((30, 3))
    xw, _, _ = whiten(x)
    np.testing.assert_allclose(whiten(xw)[0], xw, atol=1e-9)
    c = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
    cw, _, sd = whiten(c)
    assert sd[0] == 0.0
    np.testing.assert_array_equal(cw[:, 0], 0.0)
    with pytest.raises(ValueError):
        whiten(np.zeros((1, 2)))


def _raw_fixture(tmp_path, img_magic=0x803, n_img=2, n_lab=2, payload=None):
    imgs = tmp_path / "img.idx"
    labs = tmp_path / "lab.idx"
    payload = bytes([0, 255, 51, 102, 255, 0, 204, 153]) if payload is None else payload
    imgs.write_bytes(struct.pack(">4I", img_magic, n_img, 2, 2) + payload)
    labs.write_bytes(struct.pack(">2I", 0x801, n_lab) + bytes(range(n_lab)))
    return imgs, labs


def test_read_idx_hand_crafted(tmp_path):
    ds = read_idx(*_raw_fixture(tmp_path))
    assert ds.x.shape == (2, 4)
    np.testing.assert_array_equal(ds.x[0], [0.0, 1.0, 0.2, 0.4])
    np.testing.assert_array_equal(ds.x[1], [1.0, 0.0, 0.8, 0.6])
    np.testing.assert_array_equal(ds.y, [0, 1])


def test_read_idx_errors(tmp_path):
    with pytest.raises(IdxMagicError):
        read_idx(*_raw_fixture(tmp_path, img_magic=0x801))
    with pytest.raises(IdxCountMismatchError):
        read_idx(*_raw_fixture(tmp_path, n_lab=3))
    with pytest.raises(IdxTruncatedError):
        read_idx(*_raw_fixture(tmp_path, payload=bytes(5)))


def test_idx_round_trip(tmp_path):
    rng = make_rng(0)
    imgs = rng.integers(0, 256, (7, 3, 4)).astype(np.uint8)
    labs = rng.integers(0, 10, 7).astype(np.uint8)
    write_idx(tmp_path / "i", tmp_path / "l", imgs, labs)
    ds = read_idx(tmp_path / "i", tmp_path / "l")
    back = np.rint(ds.x * 255.0).astype(np.uint8).reshape(imgs.shape)
    assert back.tobytes() == imgs.tobytes()
    assert ds.y.astype(np.uint8).tobytes() == labs.tobytes()
