import warnings

import numpy as np
import pytest

import _oracles as oracle
from morphfit.losses import (
    GrayEmbedder,
    LossWeights,
    cosine_distance,
    default_features,
    feature_cosine_loss,
    feature_cosine_loss_grad,
    fsm_total,
    gram_matrix,
    l3d_total,
    landmark_loss,
    mask_size,
    pixel_l1,
    pixel_l1_grad,
    pixel_l2,
    pixel_l2_grad,
    style_loss,
    tv_loss,
    tv_loss_grad,
)

RNG = np.random.default_rng(2024)


def fd_grad(fun, x, h=1e-6):
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = fun(x)
        flat[i] = old - h
        gf[i] = (up - fun(x)) / (2 * h)
        flat[i] = old
    return g


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


# ---------------------------------------------------------------- examples

def test_landmark_examples():
    g = RNG.normal(size=(68, 2))
    assert landmark_loss(g, g) == 0.0
    p = g.copy()
    p[17] += [3.0, 4.0]
    assert landmark_loss(p, g) == pytest.approx(25.0, abs=1e-12)
    with pytest.raises(ValueError):
        landmark_loss(g[:67], g)


def test_pixel_l1_examples():
    a = RNG.uniform(size=(4, 4, 3))
    assert pixel_l1(a, a, 7) == 0.0
    b = np.zeros((2, 5, 1))
    b[0, :, 0] = 2.0  # total absolute difference 10
    assert pixel_l1(b, np.zeros_like(b), 5) == 2.0
    with pytest.raises(ValueError):
        pixel_l1(a, a, 0)
    with pytest.raises(ValueError):
        pixel_l1(a, a[:3], 1)


def test_mask_size():
    assert mask_size((4, 5, 3)) == 20
    m = np.zeros((4, 5), bool)
    m[1, 1:4] = True
    assert mask_size((4, 5, 3), m) == 3


def test_gram_examples():
    c = 1.5
    assert np.array_equal(gram_matrix(np.full((1, 2, 2), c)), [[4 * c * c]])
    level = np.zeros((2, 2, 2))
    level[0, 0, :] = [1.0, 2.0]
    level[1, 1, :] = [3.0, -1.0]
    g = gram_matrix(level)
    assert g[0, 1] == 0.0 and g[1, 0] == 0.0


def test_gram_matches_triple_loop():
    level = RNG.normal(size=(3, 4, 4))
    np.testing.assert_allclose(gram_matrix(level), oracle.gram(level), rtol=1e-12)


def test_style_examples():
    a = RNG.uniform(size=(8, 8, 3))
    b = RNG.uniform(size=(8, 8, 3))
    assert style_loss(a, a, np.ones((8, 8), bool)) == 0.0
    assert style_loss(a, b, np.zeros((8, 8), bool)) == 0.0
    assert style_loss(a, b, np.ones((8, 8), bool)) > 0.0


def test_default_features_shapes():
    levels = default_features(np.zeros((8, 6, 3)))
    assert [lv.shape for lv in levels] == [(3, 8, 6), (3, 4, 3), (6, 8, 6)]


def test_tv_examples():
    assert tv_loss(np.full((5, 4, 3), 0.3)) == 0.0
    assert tv_loss(np.array([[[0.0], [1.0]]])) == 0.5


def test_fsm_total_defaults():
    assert fsm_total(1, 0, 0) == 1.0
    assert fsm_total(0, 1, 0) == 250.0
    assert fsm_total(1, 1, 1) == pytest.approx(251.1, abs=1e-12)


def test_l3d_total_defaults():
    assert l3d_total(1, 0) == 1.4
    assert l3d_total(0, 1) == 0.25
    assert l3d_total(2, 4) == pytest.approx(3.8, abs=1e-12)


def test_custom_weights_and_validation():
    w = LossWeights(lambda_pixe=2, lambda_style=3, lambda_var=4, lambda_1=5, lambda_2=6)
    assert fsm_total(1, 10, 100, w) == 432
    assert l3d_total(1, 10, w) == 65
    with pytest.raises(ValueError):
        LossWeights(lambda_style=-1)


def test_pixel_l2_examples():
    a = RNG.uniform(size=(4, 4, 3))
    valid = np.ones((4, 4), bool)
    assert pixel_l2(a, a, valid) == 0.0
    b = a.copy()
    b[2, 1, 0] += 0.3
    one = np.zeros((4, 4), bool)
    one[2, 1] = True
    assert pixel_l2(a, b, one) == pytest.approx(0.3, abs=1e-12)


def test_pixel_l2_empty_mask_warns():
    a = np.zeros((3, 3, 3))
    with pytest.warns(RuntimeWarning):
        assert pixel_l2(a, a + 1, np.zeros((3, 3), bool)) == 0.0


def test_cosine_examples():
    a = RNG.uniform(size=(8, 8, 3))
    assert feature_cosine_loss(a, a) == 0.0
    flat = lambda x: x.reshape(-1)  # noqa: E731
    e1 = np.zeros((1, 2, 1))
    e2 = np.zeros((1, 2, 1))
    e1[0, 0, 0] = 1.0
    e2[0, 1, 0] = 3.0
    assert feature_cosine_loss(e1, e2, flat) == 1.0
    assert feature_cosine_loss(e1, -2 * e1, flat) == 2.0
    with pytest.raises(ValueError, match="zero-norm"):
        feature_cosine_loss(e1, np.zeros_like(e1), flat)


def test_gray_embedder_upsample_and_pool():
    img = RNG.uniform(size=(8, 8, 3))
    gray = img @ [0.299, 0.587, 0.114]
    emb = GrayEmbedder(32)(img).reshape(32, 32)
    np.testing.assert_allclose(emb, np.kron(gray, np.ones((4, 4))), atol=1e-14)
    big = RNG.uniform(size=(64, 64, 3))
    g = big @ [0.299, 0.587, 0.114]
    np.testing.assert_allclose(GrayEmbedder(32)(big).reshape(32, 32),
                               g.reshape(32, 2, 32, 2).mean(axis=(1, 3)), atol=1e-14)


# ------------------------------------------------------------- oracles

@pytest.mark.parametrize("trial", range(10))
def test_losses_match_naive_loops(trial):
    rng = np.random.default_rng(trial)
    a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
    mask = rng.uniform(size=(8, 8)) < 0.6
    mask[0, 0] = True
    p, g = rng.normal(size=(68, 2)), rng.normal(size=(68, 2))
    assert rel_err(landmark_loss(p, g), oracle.landmark_loss(p, g)) < 1e-10
    assert rel_err(pixel_l1(a, b, 17), oracle.pixel_l1(a, b, 17)) < 1e-10
    assert rel_err(style_loss(a, b, mask), oracle.style_loss(a, b, mask)) < 1e-10
    assert rel_err(tv_loss(a), oracle.tv_loss(a)) < 1e-10
    assert rel_err(pixel_l2(a, b, mask), oracle.pixel_l2(a, b, mask)) < 1e-10
    emb = GrayEmbedder()
    assert rel_err(feature_cosine_loss(a, b), oracle.cosine_distance(emb(a), emb(b))) < 1e-10
    assert rel_err(cosine_distance(a.ravel(), b.ravel()), oracle.cosine_distance(a.ravel(), b.ravel())) < 1e-10


@pytest.mark.parametrize("trial", range(5))
def test_losses_nonnegative(trial):
    rng = np.random.default_rng(50 + trial)
    a, b = rng.normal(size=(8, 8, 3)), rng.normal(size=(8, 8, 3))
    m = rng.uniform(size=(8, 8)) < 0.5
    m[3, 3] = True
    for v in (landmark_loss(a[0, :, :2], b[0, :, :2]), pixel_l1(a, b, 3), style_loss(a, b, m),
              tv_loss(a), pixel_l2(a, b, m), feature_cosine_loss(a, b)):
        assert v >= 0.0


# ------------------------------------------------------------- gradients

def test_pixel_l1_gradient():
    a, b = RNG.uniform(size=(6, 6, 3)), RNG.uniform(size=(6, 6, 3))
    assert rel_err(pixel_l1_grad(a, b, 9), fd_grad(lambda x: pixel_l1(x, b, 9), a.copy())) < 1e-5


def test_tv_gradient():
    a = RNG.uniform(size=(6, 7, 3))
    assert rel_err(tv_loss_grad(a), fd_grad(tv_loss, a.copy())) < 1e-5


def test_pixel_l2_gradient():
    a, b = RNG.uniform(size=(6, 6, 3)), RNG.uniform(size=(6, 6, 3))
    m = RNG.uniform(size=(6, 6)) < 0.5
    got = pixel_l2_grad(a, b, m)
    want = fd_grad(lambda x: pixel_l2(a, x, m), b.copy())
    assert rel_err(got, want) < 1e-5
    assert not got[~m].any()
    assert not pixel_l2_grad(a, a, m).any()


def test_feature_cosine_gradient():
    a, b = RNG.uniform(size=(8, 8, 3)), RNG.uniform(size=(8, 8, 3))
    got = feature_cosine_loss_grad(a, b)
    want = fd_grad(lambda x: feature_cosine_loss(a, x), b.copy())
    assert rel_err(got, want) < 1e-5


def test_no_warnings_on_regular_inputs():
    a, b = RNG.uniform(size=(8, 8, 3)), RNG.uniform(size=(8, 8, 3))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pixel_l2(a, b, np.ones((8, 8), bool))
