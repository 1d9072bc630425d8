"""Per-batch fully connected graph over embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import as_mat, check_finite, matmul, row_softmax


@dataclass
class Batch:
    """Embeddings with labeled rows first, plus one-hot labels for those rows."""

    z: np.ndarray
    y_onehot: np.ndarray
    n_labeled: int

    def __post_init__(self):
        self.z = as_mat(self.z)
        self.y_onehot = as_mat(self.y_onehot)
        if self.n_labeled < 1 or self.n_labeled > self.z.shape[0]:
            raise ValueError("n_labeled must be in [1, N]")
        if self.y_onehot.shape[0] != self.n_labeled:
            raise ValueError("y_onehot needs one row per labeled sample")
        ok = (np.isin(self.y_onehot, (0.0, 1.0)).all()
              and (self.y_onehot.sum(axis=1) == 1.0).all())
        if not ok:
            raise ValueError("y_onehot rows must be one-hot")

    @property
    def n_unlabeled(self) -> int:
        return self.z.shape[0] - self.n_labeled

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def n_classes(self) -> int:
        return self.y_onehot.shape[1]


@dataclass
class GraphState:
    sim: np.ndarray
    a: np.ndarray
    h: np.ndarray
    n_labeled: int

    @property
    def blocks(self):
        return partition_blocks(self.h, self.n_labeled)


def gram_similarity(z) -> np.ndarray:
    z = check_finite(as_mat(z), "embeddings")
    if z.shape[0] < 2:
        raise ValueError("need at least two embeddings")
    return matmul(z, z.T)


def neg_sq_euclidean(z) -> np.ndarray:
    z = check_finite(as_mat(z), "embeddings")
    g = matmul(z, z.T)
    sq = np.diag(g)
    return -(sq[:, None] + sq[None, :] - 2.0 * g)


SIMILARITIES = {"dot": gram_similarity, "negsqeuclid": neg_sq_euclidean}


def self_loop_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def transition_matrix(sim, include_self_loops: bool = True) -> np.ndarray:
    """Row-normalised exponentiated similarities.

    Without self-loops the diagonal is excluded from each row's softmax and
    the resulting transition probabilities there are exactly zero.
    """
    sim = check_finite(as_mat(sim), "similarity")
    n = sim.shape[0]
    if sim.shape != (n, n):
        raise ValueError("similarity matrix must be square")
    if include_self_loops:
        return row_softmax(sim)
    if n < 2:
        raise ValueError("a single node without self-loops has no transitions")
    return row_softmax(sim, mask=self_loop_mask(n))


def partition_blocks(h, n_labeled: int):
    """Split ``h`` into (LL, LU, UL, UU) blocks.

    ``h_LU`` has labeled rows and unlabeled columns; ``h_UL`` has unlabeled
    rows and labeled columns, so that ``h_UL @ Y_L`` is well formed.
    """
    h = as_mat(h)
    n = h.shape[0]
    if not 0 <= n_labeled <= n:
        raise ValueError(f"n_labeled={n_labeled} out of range for N={n}")
    L = n_labeled
    return h[:L, :L], h[:L, L:], h[L:, :L], h[L:, L:]


def assemble_blocks(h_ll, h_lu, h_ul, h_uu) -> np.ndarray:
    return np.block([[h_ll, h_lu], [h_ul, h_uu]])


def build_graph(z, n_labeled: int, include_self_loops: bool = True,
                similarity: str = "dot") -> GraphState:
    sim = SIMILARITIES[similarity](z)
    h = transition_matrix(sim, include_self_loops)
    a = np.exp(sim)
    if not include_self_loops:
        np.fill_diagonal(a, 0.0)
    return GraphState(sim=sim, a=a, h=h, n_labeled=n_labeled)


def laplacian_energy(a, f) -> float:
    """Half the adjacency-weighted sum of squared differences of ``f``."""
    a, f = as_mat(a), np.asarray(f, dtype=np.float64).reshape(-1)
    if a.shape != (f.size, f.size):
        raise ValueError(f"shape mismatch: adjacency {a.shape}, f of length {f.size}")
    diff = f[:, None] - f[None, :]
    return 0.5 * float(np.sum(a * diff * diff))


def laplacian(a) -> np.ndarray:
    a = as_mat(a)
    return np.diag(a.sum(axis=1)) - a
