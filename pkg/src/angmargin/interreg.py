"""Hyperspherical energy of class centers and its use as a regularizer."""
from dataclasses import dataclass

import numpy as np

from .geometry import backprop_normalize, normalize_columns
from .losses import LossResult


@dataclass(frozen=True)
class RegConfig:
    lambda_inter: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.lambda_inter <= 1.0:
            raise ValueError(f"lambda_inter must be in [0, 1], got {self.lambda_inter}")


def sep_energy(W):
    """Mean over centers of the summed squared positive cosines to the others."""
    Wn = normalize_columns(W)
    C = Wn.shape[1]
    cos = Wn.T @ Wn
    off = ~np.eye(C, dtype=bool)
    pos = np.maximum(cos[off], 0.0)
    return float(np.sum(pos * pos) / C)


def inter_loss(W):
    """``|[Wn^T Wn]_+ - I|_F^2 / C`` and its gradient w.r.t. the raw ``W``.

    Entries with a non-positive cosine contribute no gradient.
    """
    W = np.asarray(W, dtype=np.float64)
    Wn = normalize_columns(W)
    C = Wn.shape[1]
    gram = Wn.T @ Wn
    resid = np.maximum(gram, 0.0) - np.eye(C)
    value = float(np.sum(resid * resid) / C)

    d_gram = np.where(gram > 0.0, 2.0 * resid / C, 0.0)
    g_wn = Wn @ (d_gram + d_gram.T)
    grad_W = backprop_normalize(g_wn.T, Wn.T, np.linalg.norm(W, axis=0)).T
    return LossResult(value, None, grad_W)


def combined_loss(la, li, cfg):
    """``(1 - lam) * la + lam * li``; a missing ``grad_X`` counts as zero."""
    lam = cfg.lambda_inter
    if la.grad_W.shape != li.grad_W.shape:
        raise ValueError(f"weight gradient shapes differ: {la.grad_W.shape} vs {li.grad_W.shape}")
    if la.grad_X is not None and li.grad_X is not None and la.grad_X.shape != li.grad_X.shape:
        raise ValueError(f"embedding gradient shapes differ: {la.grad_X.shape} vs {li.grad_X.shape}")
    if lam == 0.0:
        return la
    if lam == 1.0:
        return li

    def mix(a, b):
        if a is None and b is None:
            return None
        if a is None:
            return lam * b
        if b is None:
            return (1.0 - lam) * a
        return (1.0 - lam) * a + lam * b

    return LossResult(
        (1.0 - lam) * la.value + lam * li.value,
        mix(la.grad_X, li.grad_X),
        mix(la.grad_W, li.grad_W),
    )
