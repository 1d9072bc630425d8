import numpy as np
import pytest


def naive_matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20180710)


def random_batch(rng, n=None, n_l=None, c=None, d=None, scale=0.7):
    """Random embeddings (labeled rows first) with every class present."""
    c = c or int(rng.integers(2, 5))
    n_l = n_l or int(rng.integers(c, c + 4))
    n = n or n_l + int(rng.integers(1, 8))
    d = d or int(rng.integers(2, 5))
    z = scale * rng.standard_normal((n, d))
    labels = np.concatenate([np.arange(c), rng.integers(0, c, n_l - c)])
    y = np.eye(c)[labels]
    return z, y
