import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from angmargin.geometry import DegenerateVectorError
from angmargin.losses import (
    AnnealConfig,
    MarginConfig,
    angular_logits,
    angular_loss,
    anneal_schedule,
    asoftmax_annealed_logit,
    blended_loss,
    modified_softmax,
    psi,
    softmax_ce,
)
from oracles import naive_margin_loss, numeric_grad, rel_error, random_batch

MARGINS = [
    MarginConfig(),
    MarginConfig(m1=2),
    MarginConfig(m1=3),
    MarginConfig(m1=4),
    MarginConfig(m2=0.2),
    MarginConfig(m2=0.3),
    MarginConfig(m2=0.4),
    MarginConfig(m3=0.1),
    MarginConfig(m3=0.2),
    MarginConfig(m3=0.3),
]


def check_grads(loss_fn, X, W, tol=1e-4):
    res = loss_fn()
    gx = numeric_grad(lambda: loss_fn().value, X)
    gw = numeric_grad(lambda: loss_fn().value, W)
    assert rel_error(res.grad_X, gx) < tol
    assert rel_error(res.grad_W, gw) < tol


# -- margin config -------------------------------------------------------------

def test_margin_config_validation():
    assert MarginConfig().variant == "modified"
    assert MarginConfig(m1=2).variant == "asoftmax"
    assert MarginConfig(m2=0.3).variant == "aam"
    assert MarginConfig(m3=0.2).variant == "am"
    for bad in [dict(m1=0.5), dict(m1=2.5), dict(m2=-0.1), dict(m2=math.pi / 2), dict(m3=1.0)]:
        with pytest.raises(ValueError):
            MarginConfig(**bad)
    for combo in [dict(m1=2, m2=0.1), dict(m1=2, m3=0.1), dict(m2=0.1, m3=0.1)]:
        with pytest.raises(ValueError, match="combined"):
            MarginConfig(**combo)


# -- softmax -------------------------------------------------------------------

def test_softmax_identical_columns_gives_log_c(rng):
    for C in (2, 5, 17):
        W = np.tile(rng.standard_normal((6, 1)), (1, C))
        X = rng.standard_normal((1, 6))
        assert softmax_ce(X, [0], W).value == math.log(C)
        Xb = rng.standard_normal((9, 6))
        y = rng.integers(0, C, size=9)
        assert softmax_ce(Xb, y, W).value == pytest.approx(math.log(C), rel=1e-15)


def test_softmax_saturates():
    W = np.eye(3)
    assert softmax_ce(np.array([[50.0, 0.0, 0.0]]), [0], W).value < 1e-20


def test_softmax_gradients(rng):
    for _ in range(10):
        X, y, W = random_batch(rng, N=5, d=4, C=3, scale=1.0)
        check_grads(lambda: softmax_ce(X, y, W), X, W)


def test_softmax_dimension_mismatch(rng):
    with pytest.raises(ValueError, match="dimension"):
        softmax_ce(rng.standard_normal((3, 4)), [0, 1, 0], rng.standard_normal((5, 2)))
    with pytest.raises(ValueError, match="range"):
        softmax_ce(rng.standard_normal((2, 4)), [0, 3], rng.standard_normal((4, 3)))


# -- modified softmax ----------------------------------------------------------

def test_modified_equidistant_gives_log_c():
    for C in (2, 3, 6):
        W = np.eye(8)[:, :C]
        x = np.zeros(8)
        x[:C] = 2.5
        assert modified_softmax(x[None, :], [1], W).value == pytest.approx(math.log(C), abs=1e-9)


def test_modified_matches_naive_reference(rng):
    for _ in range(10):
        X, y, W = random_batch(rng)
        assert modified_softmax(X, y, W).value == pytest.approx(naive_margin_loss(X, y, W), abs=1e-12)


def test_modified_weight_scale_invariance(rng):
    for _ in range(10):
        X, y, W = random_batch(rng)
        base = modified_softmax(X, y, W).value
        assert modified_softmax(X, y, 5 * W).value == pytest.approx(base, abs=1e-9)
        scales = rng.uniform(0.01, 100, size=W.shape[1])
        assert modified_softmax(X, y, W * scales).value == pytest.approx(base, abs=1e-9)


def test_modified_gradients(rng):
    for _ in range(10):
        X, y, W = random_batch(rng)
        check_grads(lambda: modified_softmax(X, y, W), X, W)


def test_zero_embedding_or_column_errors(rng):
    X, y, W = random_batch(rng)
    X[2] = 0.0
    with pytest.raises(DegenerateVectorError):
        modified_softmax(X, y, W)
    X, y, W = random_batch(rng)
    W[:, 1] = 0.0
    with pytest.raises(DegenerateVectorError, match="column 1"):
        angular_loss(X, y, W, MarginConfig(m3=0.2))


# -- psi -------------------------------------------------------------------------

def test_psi_examples():
    for m in (1, 2, 3, 4):
        assert psi(0.0, m) == 1.0
    assert psi(math.pi, 2) == pytest.approx(-3.0, abs=1e-15)
    assert psi(math.pi, 4) == pytest.approx(-7.0, abs=1e-15)
    with pytest.raises(ValueError):
        psi(0.3, 2.5)


def test_psi_matches_cos_on_first_segment(rng):
    for m in (2, 3, 4):
        th = rng.uniform(0, math.pi / m, 100)
        np.testing.assert_allclose(psi(th, m), np.cos(m * th), atol=1e-15)


def test_psi_monotone(rng):
    for m in (1, 2, 3, 4):
        pairs = np.sort(rng.uniform(0, math.pi, (1000, 2)), axis=1)
        assert np.all(psi(pairs[:, 0], m) >= psi(pairs[:, 1], m))
        # continuity across segment boundaries
        for k in range(1, m):
            b = k * math.pi / m
            assert psi(b - 1e-9, m) == pytest.approx(psi(b + 1e-9, m), abs=1e-7)


# -- angular loss ----------------------------------------------------------------

def test_angular_reduces_to_modified(rng):
    for _ in range(100):
        X, y, W = random_batch(rng, N=rng.integers(1, 8), d=rng.integers(2, 9), C=rng.integers(2, 7))
        a = angular_loss(X, y, W, MarginConfig(1, 0, 0)).value
        assert a == pytest.approx(modified_softmax(X, y, W).value, abs=1e-9)


@pytest.mark.parametrize("margin", MARGINS, ids=lambda m: f"{m.variant}-{m.m1}-{m.m2}-{m.m3}")
def test_angular_matches_naive_reference(rng, margin):
    for _ in range(5):
        X, y, W = random_batch(rng)
        expected = naive_margin_loss(X, y, W, int(margin.m1), margin.m2, margin.m3)
        assert angular_loss(X, y, W, margin).value == pytest.approx(expected, abs=1e-12)


def test_am_target_logit_shift(rng):
    X, y, W = random_batch(rng, N=10)
    plain = angular_logits(X, y, W, MarginConfig())
    am = angular_logits(X, y, W, MarginConfig(m3=0.2))
    rows = np.arange(10)
    r = np.linalg.norm(X, axis=1)
    np.testing.assert_allclose(am[rows, y], plain[rows, y] - 0.2 * r, rtol=0, atol=1e-12)
    mask = np.ones_like(plain, dtype=bool)
    mask[rows, y] = False
    np.testing.assert_array_equal(am[mask], plain[mask])


@pytest.mark.parametrize("margin", MARGINS, ids=lambda m: f"{m.variant}-{m.m1}-{m.m2}-{m.m3}")
def test_angular_gradients(rng, margin):
    for _ in range(10):
        X, y, W = random_batch(rng)
        check_grads(lambda: angular_loss(X, y, W, margin), X, W)


def test_annealed_asoftmax_gradients(rng):
    for lam in (0.5, 5.0, 1000.0):
        for _ in range(3):
            X, y, W = random_batch(rng)
            check_grads(lambda: angular_loss(X, y, W, MarginConfig(m1=2), lambda_a=lam), X, W)
            expected = naive_margin_loss(X, y, W, m1=2, lambda_a=lam)
            assert angular_loss(X, y, W, MarginConfig(m1=2), lambda_a=lam).value == pytest.approx(
                expected, abs=1e-12
            )


@settings(max_examples=100, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.sampled_from(["m2", "m3"]),
    st.floats(0.0, 1.5),
    st.floats(0.0, 1.5),
)
def test_loss_nondecreasing_in_additive_margins(seed, which, a, b):
    lo, hi = sorted((a, b))
    if which == "m3":
        lo, hi = lo * 0.66, hi * 0.66
    X, y, W = random_batch(np.random.default_rng(seed), N=5, d=8, C=4)
    # cos(theta + m2) only falls with m2 while theta + m2 stays within [0, pi]
    theta = np.arccos(np.clip(angular_logits(X, y, W, MarginConfig())[np.arange(5), y]
                              / np.linalg.norm(X, axis=1), -1, 1))
    assume(which == "m3" or np.all(theta + hi <= math.pi))
    f = lambda m: angular_loss(X, y, W, MarginConfig(**{which: m})).value
    assert f(hi) >= f(lo) - 1e-12


def test_weight_scale_invariance_all_variants(rng):
    for margin in MARGINS:
        X, y, W = random_batch(rng)
        scales = rng.uniform(0.1, 10, size=W.shape[1])
        assert angular_loss(X, y, W * scales, margin).value == pytest.approx(
            angular_loss(X, y, W, margin).value, abs=1e-9
        )


def test_asoftmax_requires_nonzero_embedding(rng):
    X, y, W = random_batch(rng)
    X[0] = 0
    with pytest.raises(DegenerateVectorError):
        angular_loss(X, y, W, MarginConfig(m1=2))


# -- annealed logit --------------------------------------------------------------

def test_annealed_logit_examples(rng):
    for _ in range(20):
        x, w = rng.standard_normal((2, 6))
        r = np.linalg.norm(x)
        c = x @ w / (r * np.linalg.norm(w))
        theta = math.acos(c)
        margin_logit = r * psi(theta, 2)
        assert asoftmax_annealed_logit(x, w, 2, 0.0) == pytest.approx(margin_logit, abs=1e-12)
        assert asoftmax_annealed_logit(x, w, 2, 1e9) == pytest.approx(r * c, abs=1e-6)
        assert asoftmax_annealed_logit(x, w, 2, 1.0) == pytest.approx(
            0.5 * (r * c + margin_logit), abs=1e-12
        )
    with pytest.raises(ValueError):
        asoftmax_annealed_logit(x, w, 2, -1.0)


def test_annealed_logit_matches_loss_target(rng):
    X, y, W = random_batch(rng, N=4)
    logits = angular_logits(X, y, W, MarginConfig(m1=3), lambda_a=7.0)
    for i in range(4):
        assert logits[i, y[i]] == pytest.approx(
            asoftmax_annealed_logit(X[i], W[:, y[i]], 3, 7.0), abs=1e-12
        )


# -- blended loss ----------------------------------------------------------------

def test_blended_endpoints_and_midpoint(rng):
    for margin in (MarginConfig(m3=0.2), MarginConfig(m2=0.3)):
        X, y, W = random_batch(rng)
        mod = modified_softmax(X, y, W)
        ang = angular_loss(X, y, W, margin)
        assert blended_loss(X, y, W, margin, 0.0).value == mod.value
        assert blended_loss(X, y, W, margin, 1.0).value == ang.value
        assert blended_loss(X, y, W, margin, 0.5).value == pytest.approx(
            0.5 * (mod.value + ang.value), abs=1e-12
        )


def test_blended_gradient_is_convex_combination(rng):
    margin = MarginConfig(m3=0.2)
    for lam in (0.0, 0.25, 0.7, 1.0):
        X, y, W = random_batch(rng)
        mod = modified_softmax(X, y, W)
        ang = angular_loss(X, y, W, margin)
        res = blended_loss(X, y, W, margin, lam)
        np.testing.assert_array_equal(res.grad_X, (1 - lam) * mod.grad_X + lam * ang.grad_X)
        np.testing.assert_array_equal(res.grad_W, (1 - lam) * mod.grad_W + lam * ang.grad_W)


def test_blended_gradients_fd(rng):
    for _ in range(10):
        X, y, W = random_batch(rng)
        check_grads(lambda: blended_loss(X, y, W, MarginConfig(m2=0.3), 0.4), X, W)


def test_blended_rejects_bad_lambda(rng):
    X, y, W = random_batch(rng)
    for lam in (-0.1, 1.5):
        with pytest.raises(ValueError):
            blended_loss(X, y, W, MarginConfig(m3=0.2), lam)


# -- schedule --------------------------------------------------------------------

def test_anneal_schedule_examples():
    cfg = AnnealConfig(lambda_base=1000, lambda_min=5, gamma=1e-4, ramp_epochs=5)
    s0 = anneal_schedule(0, cfg, steps_per_epoch=10)
    assert (s0.lambda_a, s0.lambda_blend, s0.step) == (1000, 0.0, 0)
    assert anneal_schedule(50, cfg, steps_per_epoch=10).lambda_blend == 1.0
    assert anneal_schedule(10**6, cfg, steps_per_epoch=10).lambda_blend == 1.0
    assert anneal_schedule(10**9, cfg).lambda_a == 5
    assert anneal_schedule(25, cfg, steps_per_epoch=10).lambda_blend == 0.5
    assert anneal_schedule(0, AnnealConfig(ramp_epochs=0)).lambda_blend == 1.0
    with pytest.raises(ValueError):
        anneal_schedule(-1, cfg)


def test_anneal_schedule_monotone_sweep():
    cfg = AnnealConfig()
    states = [anneal_schedule(s, cfg, steps_per_epoch=100) for s in range(100_001)]
    lam = np.array([s.lambda_a for s in states])
    blend = np.array([s.lambda_blend for s in states])
    assert np.all(np.diff(lam) <= 0)
    assert np.all(np.diff(blend) >= 0)
    assert lam.min() >= cfg.lambda_min and blend.max() == 1.0
