"""Softmax-family losses on class centers, with exact analytic gradients.

Shapes: embeddings ``X`` are ``(N, d)``, labels ``y`` are ``(N,)`` ints in
``[0, C)``, class weights ``W`` are ``(d, C)``. There is no bias term.

All angular losses use logits ``|x_i| * cos(theta_ji)`` with ``W`` column
normalized and ``x_i`` left unnormalized; the target logit is replaced by
``|x_i| * g(cos theta_yi)`` where ``g`` encodes the margin.
"""
import math
from dataclasses import dataclass

import numpy as np

from .geometry import ARCCOS_EPS, backprop_normalize, normalize_columns, normalize_rows

__all__ = [
    "AnnealConfig",
    "AnnealState",
    "LossResult",
    "MarginConfig",
    "angular_logits",
    "angular_loss",
    "anneal_schedule",
    "asoftmax_annealed_logit",
    "blended_loss",
    "modified_softmax",
    "psi",
    "softmax_ce",
]


@dataclass(frozen=True)
class MarginConfig:
    """Margin triple: ``m1`` multiplies the angle, ``m2`` is added to it,
    ``m3`` is subtracted from the cosine. At most one may be active."""

    m1: float = 1.0
    m2: float = 0.0
    m3: float = 0.0

    def __post_init__(self):
        if not self.m1 >= 1.0:
            raise ValueError(f"m1 must be >= 1, got {self.m1}")
        if self.m1 != 1.0 and self.m1 != int(self.m1):
            raise ValueError(f"m1 must be an integer when > 1, got {self.m1}")
        if not 0.0 <= self.m2 < math.pi / 2:
            raise ValueError(f"m2 must be in [0, pi/2), got {self.m2}")
        if not 0.0 <= self.m3 < 1.0:
            raise ValueError(f"m3 must be in [0, 1), got {self.m3}")
        active = (self.m1 > 1.0) + (self.m2 > 0.0) + (self.m3 > 0.0)
        if active > 1:
            raise ValueError(
                f"combined margins are not supported: (m1={self.m1}, m2={self.m2}, m3={self.m3})"
            )

    @property
    def variant(self):
        if self.m1 > 1.0:
            return "asoftmax"
        if self.m2 > 0.0:
            return "aam"
        if self.m3 > 0.0:
            return "am"
        return "modified"


@dataclass
class LossResult:
    value: float
    grad_X: np.ndarray | None  # None when the loss does not depend on embeddings
    grad_W: np.ndarray


def _check_inputs(X, y, W):
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or W.ndim != 2:
        raise ValueError(f"expected X (N, d) and W (d, C), got {X.shape} and {W.shape}")
    if X.shape[0] < 1:
        raise ValueError("empty batch")
    if X.shape[1] != W.shape[0]:
        raise ValueError(f"dimension mismatch: embeddings d={X.shape[1]}, weights d={W.shape[0]}")
    if W.shape[1] < 2:
        raise ValueError("need at least 2 classes")
    if y.shape != (X.shape[0],) or not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be {X.shape[0]} integers")
    if y.min() < 0 or y.max() >= W.shape[1]:
        raise ValueError(f"labels out of range [0, {W.shape[1]})")
    return X, y, W


def _cross_entropy(logits, y):
    """Mean CE and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    value = float(np.mean(log_z - shifted[rows, y]))
    dz = np.exp(shifted - log_z[:, None])
    dz[rows, y] -= 1.0
    return value, dz / n


def softmax_ce(X, y, W):
    """Plain softmax cross-entropy with logits ``w_j . x_i``."""
    X, y, W = _check_inputs(X, y, W)
    value, dz = _cross_entropy(X @ W, y)
    return LossResult(value, dz @ W.T, X.T @ dz)


def psi(theta, m1):
    """Monotone extension of ``cos(m1 * theta)`` over [0, pi].

    ``psi = (-1)**k * cos(m1*theta) - 2k`` on ``[k*pi/m1, (k+1)*pi/m1]``.
    """
    m = _integer_m1(m1)
    theta = np.asarray(theta, dtype=np.float64)
    k = _psi_segment(theta, m)
    sign = 1.0 - 2.0 * (k % 2)
    out = sign * np.cos(m * theta) - 2.0 * k
    return float(out) if out.ndim == 0 else out


def _integer_m1(m1):
    if m1 != int(m1) or m1 < 1:
        raise ValueError(f"psi needs a positive integer m1, got {m1}")
    return int(m1)


def _psi_segment(theta, m):
    return np.clip(np.floor(theta * m / math.pi), 0, m - 1)


def _psi_dtheta(theta, m):
    k = _psi_segment(theta, m)
    sign = 1.0 - 2.0 * (k % 2)
    return -sign * m * np.sin(m * theta)


def _theta_and_slope(c):
    """arccos of the clamped cosine and d(theta)/d(cos); zero slope where clamped."""
    cc = np.clip(c, -1.0 + ARCCOS_EPS, 1.0 - ARCCOS_EPS)
    theta = np.arccos(cc)
    inside = (c > -1.0 + ARCCOS_EPS) & (c < 1.0 - ARCCOS_EPS)
    slope = np.where(inside, -1.0 / np.sqrt(1.0 - cc * cc), 0.0)
    return theta, slope


def _target_transform(margin, lambda_a):
    """Return ``g(cos) -> (value, dvalue/dcos)`` for the target logit."""
    variant = margin.variant
    if variant == "modified":
        return lambda c: (c, np.ones_like(c))
    if variant == "am":
        return lambda c: (c - margin.m3, np.ones_like(c))
    if variant == "aam":
        def g(c):
            theta, slope = _theta_and_slope(c)
            return np.cos(theta + margin.m2), -np.sin(theta + margin.m2) * slope
        return g

    m = int(margin.m1)
    lam = float(lambda_a)
    if lam < 0:
        raise ValueError(f"lambda_a must be >= 0, got {lam}")

    def g(c):
        theta, slope = _theta_and_slope(c)
        val = psi(theta, m)
        dval = _psi_dtheta(theta, m) * slope
        return (lam * c + val) / (1.0 + lam), (lam + dval) / (1.0 + lam)
    return g


def _margin_cosines(X, y, W, target_fn):
    Xn, r = normalize_rows(X)
    Wn = normalize_columns(W)
    rows = np.arange(X.shape[0])
    cos = Xn @ Wn
    g, dg = target_fn(cos[rows, y])
    tcos = cos.copy()
    tcos[rows, y] = g
    return Xn, r, Wn, tcos, dg


def angular_logits(X, y, W, margin, lambda_a=0.0):
    """Logit matrix ``(N, C)`` fed to the softmax by :func:`angular_loss`."""
    X, y, W = _check_inputs(X, y, W)
    _, r, _, tcos, _ = _margin_cosines(X, y, W, _target_transform(margin, lambda_a))
    return r[:, None] * tcos


def _margin_softmax(X, y, W, target_fn):
    Xn, r, Wn, tcos, dg = _margin_cosines(X, y, W, target_fn)
    w_norm = np.linalg.norm(W, axis=0)
    rows = np.arange(X.shape[0])
    value, dz = _cross_entropy(r[:, None] * tcos, y)

    g_r = np.sum(dz * tcos, axis=1)
    g_cos = dz * r[:, None]
    g_cos[rows, y] *= dg
    grad_X = backprop_normalize(g_cos @ Wn.T, Xn, r) + g_r[:, None] * Xn
    grad_W = backprop_normalize((Xn.T @ g_cos).T, Wn.T, w_norm).T
    return LossResult(value, grad_X, grad_W)


def modified_softmax(X, y, W):
    """Softmax over ``|x_i| cos(theta_ji)``: unit-norm centers, raw embeddings."""
    X, y, W = _check_inputs(X, y, W)
    return _margin_softmax(X, y, W, _target_transform(MarginConfig(), 0.0))


def angular_loss(X, y, W, margin, lambda_a=0.0):
    """Margin softmax for the variant selected by ``margin``.

    ``lambda_a`` blends the A-softmax target logit with the plain one
    (see :func:`asoftmax_annealed_logit`); ignored for other variants.
    """
    X, y, W = _check_inputs(X, y, W)
    return _margin_softmax(X, y, W, _target_transform(margin, lambda_a))


def asoftmax_annealed_logit(x, w_target, m1, lambda_a):
    """``(lam*|x|cos + |x|psi(theta)) / (1 + lam)`` for a single embedding."""
    if lambda_a < 0:
        raise ValueError(f"lambda_a must be >= 0, got {lambda_a}")
    x = np.asarray(x, dtype=np.float64)
    (xn,), (r,) = normalize_rows(x[None, :])
    wn = normalize_columns(np.asarray(w_target, dtype=np.float64)[:, None])[:, 0]
    c = float(np.dot(xn, wn))
    theta, _ = _theta_and_slope(c)
    return (lambda_a * r * c + r * psi(theta, m1)) / (1.0 + lambda_a)


def blended_loss(X, y, W, margin, lambda_blend, lambda_a=0.0):
    """``(1 - lam) * modified + lam * margin loss``, gradients combined alike."""
    if not 0.0 <= lambda_blend <= 1.0:
        raise ValueError(f"lambda_blend must be in [0, 1], got {lambda_blend}")
    base = modified_softmax(X, y, W)
    if lambda_blend == 0.0:
        return base
    target = angular_loss(X, y, W, margin, lambda_a)
    if lambda_blend == 1.0:
        return target
    a, b = 1.0 - lambda_blend, lambda_blend
    return LossResult(
        a * base.value + b * target.value,
        a * base.grad_X + b * target.grad_X,
        a * base.grad_W + b * target.grad_W,
    )


@dataclass(frozen=True)
class AnnealConfig:
    """Annealing knobs.

    ``lambda_a`` (A-softmax logit blend) decays as
    ``max(lambda_min, lambda_base / (1 + gamma * step))``; ``lambda_blend``
    (loss blend for AM/AAM) ramps linearly to 1 over ``ramp_epochs``.
    ``ramp_epochs = 0`` disables the ramp.
    """

    lambda_base: float = 1000.0
    lambda_min: float = 5.0
    gamma: float = 1e-4
    ramp_epochs: float = 5.0


@dataclass(frozen=True)
class AnnealState:
    lambda_a: float
    lambda_blend: float
    step: int


def anneal_schedule(step, cfg, steps_per_epoch=1):
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    lambda_a = max(cfg.lambda_min, cfg.lambda_base / (1.0 + cfg.gamma * step))
    ramp_steps = cfg.ramp_epochs * steps_per_epoch
    lambda_blend = 1.0 if ramp_steps <= 0 else min(1.0, step / ramp_steps)
    return AnnealState(lambda_a, lambda_blend, step)
