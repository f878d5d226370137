"""Hypersphere primitives shared by the losses and the scoring back-end.

Vectors are 1-D float64 arrays; class-weight matrices are ``(d, C)`` arrays
whose columns are the class centers.
"""
import numpy as np

# arccos clamp; keeps d(theta)/d(cos) finite near 0 and pi
ARCCOS_EPS = 1e-7


class DegenerateVectorError(ValueError):
    """Raised when a zero-norm vector has no direction to normalize."""


def _as_vec(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    return v


def l2_normalize(v):
    v = _as_vec(v)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DegenerateVectorError("cannot normalize a zero-norm vector")
    return v / n


def cosine(u, v):
    """Cosine similarity ``u.v / (|u||v|)``, clipped into [-1, 1]."""
    u, v = _as_vec(u), _as_vec(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("cosine undefined for a zero-norm vector")
    c = float(np.dot(u / nu, v / nv))
    return min(1.0, max(-1.0, c))


def clamp_cos(c, eps=ARCCOS_EPS):
    return np.clip(c, -1.0 + eps, 1.0 - eps)


def angle(u, v, eps=ARCCOS_EPS):
    """Angle in [0, pi] with the cosine clamped to [-1+eps, 1-eps]."""
    return float(np.arccos(clamp_cos(cosine(u, v), eps)))


def normalize_columns(W):
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"expected a (d, C) matrix, got shape {W.shape}")
    norms = np.linalg.norm(W, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateVectorError(f"weight column {int(zero[0])} has zero norm")
    return W / norms


def normalize_rows(X):
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateVectorError(f"row {int(zero[0])} has zero norm")
    return X / norms[:, None], norms


def backprop_normalize(g_hat, v_hat, norm):
    """Pull a gradient on ``v/|v|`` back to ``v``, vectors along the last axis.

    ``g_v = (g_hat - v_hat * <v_hat, g_hat>) / |v|``
    """
    proj = np.sum(g_hat * v_hat, axis=-1, keepdims=True)
    return (g_hat - v_hat * proj) / np.expand_dims(norm, -1)
