"""Losses composed from tape primitives so they can be differentiated."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ad
from .autograd import Var
from .graph import self_loop_mask
from .loss import LOG_EPS


@dataclass(frozen=True)
class GraphOptions:
    """How the batch graph is built from embeddings.

    ``similarity`` is ``"dot"`` (inner product), ``"negeuclid"`` (negative
    distance) or ``"negsqeuclid"`` (negative squared distance); ``gamma``
    multiplies the score.
    """

    similarity: str = "dot"
    gamma: float = 1.0
    self_loops: bool = True


def similarity(z: Var, opts: GraphOptions = GraphOptions()) -> Var:
    tape = z.tape
    gram = z @ z.T
    if opts.similarity == "dot":
        sim = gram
    elif opts.similarity == "negsqeuclid":
        n, d = z.shape
        sq = (z * z) @ tape.const(np.ones((d, 1)))
        ones = tape.const(np.ones((1, n)))
        sim = 2.0 * gram - sq @ ones - (sq @ ones).T
    elif opts.similarity == "negeuclid":
        sim = -ad.pairwise_dist(z)
    else:
        raise ValueError(f"unknown similarity {opts.similarity!r}")
    return sim * opts.gamma if opts.gamma != 1.0 else sim


def transition(z: Var, opts: GraphOptions = GraphOptions()) -> Var:
    sim = similarity(z, opts)
    mask = None if opts.self_loops else self_loop_mask(z.shape[0])
    return ad.row_softmax(sim, mask=mask)


def label_propagation(h: Var, y_onehot: np.ndarray) -> Var:
    """Clamped harmonic posteriors, differentiable through the linear solve."""
    tape = h.tape
    n_l = y_onehot.shape[0]
    n = h.shape[0]
    y = tape.const(y_onehot)
    if n_l == n:
        return y
    h_ul = h[n_l:, :n_l]
    h_uu = h[n_l:, n_l:]
    lhs = tape.const(np.eye(n - n_l)) - h_uu
    phi_u = ad.lu_solve(lhs, h_ul @ y)
    return ad.vstack(y, phi_u)


@dataclass
class CCLPTerms:
    loss: Var
    h: Var
    phi: Var
    t: Var
    m: Var
    chains: list


def cclp(z: Var, y_onehot: np.ndarray, steps: int, opts: GraphOptions = GraphOptions(),
         stop_grad_phi: bool = False) -> CCLPTerms:
    """Multi-step clustering loss on a batch, labeled rows first."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    n = z.shape[0]
    h = transition(z, opts)
    phi = label_propagation(h, y_onehot)
    if stop_grad_phi:
        phi = ad.stop_gradient(phi)
    mass = ad.colsum(phi)
    t = ad.div_row(phi, mass) @ phi.T
    m = phi @ phi.T
    hm = h * m
    chains = [h]
    for _ in range(steps - 1):
        chains.append(hm @ chains[-1])
    terms = [ad.total(t * ad.log(hs, LOG_EPS)) for hs in chains]
    acc = terms[0]
    for term in terms[1:]:
        acc = acc + term
    loss = acc * (-1.0 / (steps * n * n))
    return CCLPTerms(loss, h, phi, t, m, chains)


def one_step(z: Var, y_onehot: np.ndarray, opts: GraphOptions = GraphOptions(),
             stop_grad_phi: bool = False) -> Var:
    return cclp(z, y_onehot, 1, opts, stop_grad_phi).loss


def linear_logits(z: Var, w: Var, b: Var) -> Var:
    return ad.add_row(z @ w, b)


def classify(z: Var, w: Var, b: Var) -> Var:
    return ad.row_softmax(linear_logits(z, w, b))


def supervised(probs: Var, y_onehot: np.ndarray) -> Var:
    """Mean negative log-likelihood of the true class over labeled rows."""
    n_l = y_onehot.shape[0]
    y = probs.tape.const(y_onehot)
    return ad.total(y * ad.log(probs, LOG_EPS)) * (-1.0 / n_l)


def cer(probs: Var) -> Var:
    """Mean prediction entropy; zero for an empty set of rows."""
    n = probs.shape[0]
    if n == 0:
        return probs.tape.const(np.zeros((1, 1)))
    return ad.total(probs * ad.log(probs, LOG_EPS)) * (-1.0 / n)


def mlp(x: Var, weights: list[Var], biases: list[Var]) -> Var:
    h = x
    for w, b in zip(weights, biases):
        h = ad.relu(ad.add_row(h @ w, b))
    return h
