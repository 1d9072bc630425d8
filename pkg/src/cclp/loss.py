"""Compact-clustering regulariser on a batch graph, and the entropy baseline.

These are plain forward evaluations on matrices. Differentiable versions of
the same quantities live in :mod:`cclp.objectives`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numkit import NumericalError, as_mat, hadamard, matmul

LOG_EPS = 1e-30


class DegenerateBatchError(ValueError):
    """Some class receives zero posterior mass in the whole batch."""


@dataclass
class ChainSet:
    t: np.ndarray
    m: np.ndarray
    h_s: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.h_s)


def agreement_matrix(phi) -> np.ndarray:
    phi = as_mat(phi)
    return matmul(phi, phi.T)


def class_mass(phi) -> np.ndarray:
    return as_mat(phi).sum(axis=0)


def target_matrix(phi) -> np.ndarray:
    """Soft ideal transition matrix: ``T_ij = sum_c phi_ic phi_jc / m_c``."""
    phi = as_mat(phi)
    m = class_mass(phi)
    if np.any(m <= 0.0):
        empty = np.flatnonzero(m <= 0.0).tolist()
        raise DegenerateBatchError(f"classes {empty} have zero mass in the batch")
    return matmul(phi / m, phi.T)


def chain_set(h, m, steps: int) -> list[np.ndarray]:
    """``[H, (H∘M)H, (H∘M)^2 H, ...]`` up to ``steps`` terms."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h, m = as_mat(h), as_mat(m)
    hm = hadamard(h, m)
    chains = [h]
    for _ in range(steps - 1):
        chains.append(matmul(hm, chains[-1]))
    return chains


def build_chains(h, phi, steps: int) -> ChainSet:
    m = agreement_matrix(phi)
    return ChainSet(t=target_matrix(phi), m=m, h_s=chain_set(h, m, steps))


def cross_entropy_term(t, h) -> float:
    """``(1/N^2) sum_ij -T_ij log H_ij`` with the log clamped at 1e-30."""
    t, h = as_mat(t), as_mat(h)
    if t.shape != h.shape:
        raise ValueError("target and transition shapes differ")
    n = t.shape[0]
    return float(-np.sum(t * np.log(np.maximum(h, LOG_EPS))) / (n * n))


def cclp_loss(t, chains) -> float:
    """Mean of the per-step cross-entropies between ``T`` and each ``H^(s)``."""
    if not chains:
        raise ValueError("need at least one chain matrix")
    val = sum(cross_entropy_term(t, hs) for hs in chains) / len(chains)
    if not np.isfinite(val):
        raise NumericalError("non-finite regulariser value")
    return val


def one_step_loss(t, h) -> float:
    return cross_entropy_term(t, h)


def cer_loss(class_probs) -> float:
    """Mean prediction entropy over rows."""
    p = as_mat(class_probs)
    if p.shape[0] == 0:
        return 0.0
    return float(np.mean(np.sum(-p * np.log(np.maximum(p, LOG_EPS)), axis=1)))
