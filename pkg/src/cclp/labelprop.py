"""Label propagation with clamped labeled nodes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphState, partition_blocks
from .numkit import as_mat, lu_solve, matmul


@dataclass
class LPPosteriors:
    phi: np.ndarray
    n_labeled: int

    @property
    def phi_u(self) -> np.ndarray:
        return self.phi[self.n_labeled:]


def _check_labels(h, y_onehot):
    y = as_mat(y_onehot)
    if y.shape[0] > h.shape[0]:
        raise ValueError("more labeled rows than graph nodes")
    return y


def propagate_closed_form(g: GraphState, y_onehot) -> LPPosteriors:
    """Harmonic solution ``Phi_U = (I - H_UU)^{-1} H_UL Y_L`` via an LU solve."""
    y = _check_labels(g.h, y_onehot)
    n_l = y.shape[0]
    _, _, h_ul, h_uu = partition_blocks(g.h, n_l)
    if h_uu.shape[0] == 0:
        return LPPosteriors(y.copy(), n_l)
    rhs = matmul(h_ul, y)
    phi_u = lu_solve(np.eye(h_uu.shape[0]) - h_uu, rhs)
    return LPPosteriors(np.vstack([y, phi_u]), n_l)


def propagation_step(h, phi, n_labeled: int) -> np.ndarray:
    """One ``Phi <- H Phi`` step followed by re-clamping the labeled rows."""
    out = matmul(h, phi)
    out[:n_labeled] = phi[:n_labeled]
    return out


def propagate_iterative(g: GraphState, y_onehot, steps: int,
                        phi_u0=None) -> LPPosteriors:
    """Iterated propagation from a uniform start; a test oracle for the closed form."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    y = _check_labels(g.h, y_onehot)
    n_l, c = y.shape
    n_u = g.h.shape[0] - n_l
    if phi_u0 is None:
        phi_u0 = np.full((n_u, c), 1.0 / c)
    phi = np.vstack([y, as_mat(phi_u0).reshape(n_u, c)])
    for _ in range(steps):
        phi = propagation_step(g.h, phi, n_l)
    return LPPosteriors(phi, n_l)


def harmonic_residual(g: GraphState, post: LPPosteriors) -> float:
    """Infinity norm of ``Phi_U - H_UU Phi_U - H_UL Y_L``."""
    _, _, h_ul, h_uu = partition_blocks(g.h, post.n_labeled)
    if h_uu.shape[0] == 0:
        return 0.0
    y = post.phi[:post.n_labeled]
    r = post.phi_u - matmul(h_uu, post.phi_u) - matmul(h_ul, y)
    return float(np.abs(r).max())
