"""Loss functions of the synthesis and reconstruction stages.

Images are (H, W, 3) float arrays, masks (H, W) booleans, landmark sets
(68, 2) arrays. Functions named ``*_grad`` return the gradient with respect
to their first image argument.
"""

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    lambda_pixe: float = 1.0
    lambda_style: float = 250.0
    lambda_var: float = 0.1
    lambda_1: float = 1.4
    lambda_2: float = 0.25

    def __post_init__(self):
        for k, v in vars(self).items():
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{k} must be a nonnegative real, got {v}")


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def landmark_loss(pred, gt):
    """Squared L2 distance between two stacked landmark sets."""
    pred, gt = _same_shape(pred, gt)
    d = pred - gt
    return float(np.sum(d * d))


def pixel_l1(out, ref, mask_size):
    """Sum of absolute differences over pixels and channels, divided by ``mask_size``."""
    out, ref = _same_shape(out, ref)
    if mask_size < 1:
        raise ValueError(f"mask_size must be >= 1, got {mask_size}")
    return float(np.sum(np.abs(out - ref)) / mask_size)


def mask_size(shape, mask=None):
    """Pixel count of the inpainting mask if given, else of the whole image."""
    if mask is None:
        return int(shape[0] * shape[1])
    return int(np.count_nonzero(mask))


def pixel_l1_grad(out, ref, mask_size):
    out, ref = _same_shape(out, ref)
    return np.sign(out - ref) / mask_size


# ------------------------------------------------------------------- features

def _channels_first(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    return np.moveaxis(img, -1, 0)


def _forward_diffs(x):
    """Forward differences along the last two axes with replicate boundary."""
    dh = np.zeros_like(x)
    dv = np.zeros_like(x)
    dh[..., :, :-1] = x[..., :, 1:] - x[..., :, :-1]
    dv[..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    return dh, dv


def _avg_pool2(x):
    c, h, w = x.shape
    h2, w2 = max(h // 2, 1), max(w // 2, 1)
    if h < 2 or w < 2:
        return x.copy()
    return x[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2).mean(axis=(2, 4))


def default_features(img):
    """Raw channels, 2x2 average-pooled channels, and gradient channels.

    Each level is an array of shape (channels, height, width).
    """
    x = _channels_first(img)
    dh, dv = _forward_diffs(x)
    return [x, _avg_pool2(x), np.concatenate([dh, dv], axis=0)]


def gram_matrix(level):
    """G = F^T F with F the (H*W, O) flattening of a (O, H, W) feature level."""
    level = np.asarray(level, dtype=np.float64)
    f = level.reshape(level.shape[0], -1)
    return f @ f.T


def style_loss(a, b, mask, extractor=default_features):
    """Masked Gram-matrix distance summed over feature levels (L1 per level)."""
    a, b = _same_shape(a, b)
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {a.shape[:2]}")
    am = a * m[..., None] if a.ndim == 3 else a * m
    bm = b * m[..., None] if b.ndim == 3 else b * m
    total = 0.0
    for fa, fb in zip(extractor(am), extractor(bm)):
        o, h, w = fa.shape
        diff = (gram_matrix(fa) - gram_matrix(fb)) / (o * h * w)
        total += np.sum(np.abs(diff)) / (o * o)
    return float(total)


def tv_loss(img):
    """Anisotropic total variation divided by the pixel count H*W."""
    x = _channels_first(img)
    if x.size == 0:
        raise ValueError("empty image")
    dh, dv = _forward_diffs(x)
    return float((np.sum(np.abs(dh)) + np.sum(np.abs(dv))) / (x.shape[1] * x.shape[2]))


def tv_loss_grad(img):
    img = np.asarray(img, dtype=np.float64)
    x = _channels_first(img)
    dh, dv = _forward_diffs(x)
    sh, sv = np.sign(dh), np.sign(dv)
    g = np.zeros_like(x)
    g[..., :, :-1] -= sh[..., :, :-1]
    g[..., :, 1:] += sh[..., :, :-1]
    g[..., :-1, :] -= sv[..., :-1, :]
    g[..., 1:, :] += sv[..., :-1, :]
    g /= x.shape[1] * x.shape[2]
    g = np.moveaxis(g, 0, -1)
    return g.reshape(img.shape)


def fsm_total(pixe, style, var, w=LossWeights()):
    return w.lambda_pixe * pixe + w.lambda_style * style + w.lambda_var * var


def pixel_l2(out, rendered, valid):
    """Root of the mean (over valid pixels) squared RGB distance.

    Returns 0.0 and emits a ``RuntimeWarning`` when no pixel is valid.
    """
    out, rendered = _same_shape(out, rendered)
    m = np.asarray(valid, dtype=bool)
    count = int(m.sum())
    if count == 0:
        warnings.warn("pixel_l2: empty valid mask", RuntimeWarning, stacklevel=2)
        return 0.0
    d = (out - rendered)[m]
    return float(np.sqrt(np.sum(d * d) / count))


def pixel_l2_grad(out, rendered, valid):
    """Gradient of :func:`pixel_l2` with respect to ``rendered`` (zero at a zero residual)."""
    out, rendered = _same_shape(out, rendered)
    m = np.asarray(valid, dtype=bool)
    g = np.zeros_like(rendered)
    count = int(m.sum())
    value = pixel_l2(out, rendered, m) if count else 0.0
    if value == 0.0:
        return g
    g[m] = (rendered - out)[m] / (count * value)
    return g


# ---------------------------------------------------------------- embedding

GRAY = np.array([0.299, 0.587, 0.114])


def _area_matrix(n_out, n_in):
    """Area-averaging resampler from n_in cells to n_out cells."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    cells = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, cells + 1) - np.maximum(lo, cells), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


class GrayEmbedder:
    """Linear embedder: area downsample of the grayscale image, flattened.

    ``size=32`` gives a 1024-vector. Any callable mapping an image to a
    1-D vector can stand in for it; the fitter additionally needs ``vjp``.
    """

    def __init__(self, size=32):
        self.size = size
        self._cache = {}

    def _mats(self, h, w):
        if (h, w) not in self._cache:
            self._cache[(h, w)] = (_area_matrix(self.size, h), _area_matrix(self.size, w))
        return self._cache[(h, w)]

    def __call__(self, img):
        img = np.asarray(img, dtype=np.float64)
        gray = img @ GRAY if img.ndim == 3 else img
        dy, dx = self._mats(*gray.shape)
        return (dy @ gray @ dx.T).reshape(-1)

    def vjp(self, shape, grad_embedding):
        """Pull a gradient on the embedding back to an image of ``shape``."""
        h, w = shape[:2]
        dy, dx = self._mats(h, w)
        g = dy.T @ np.asarray(grad_embedding).reshape(self.size, self.size) @ dx
        if len(shape) == 3:
            return g[:, :, None] * GRAY
        return g


def cosine_distance(ea, eb):
    ea = np.asarray(ea, dtype=np.float64).reshape(-1)
    eb = np.asarray(eb, dtype=np.float64).reshape(-1)
    if ea.shape != eb.shape:
        raise ValueError(f"embedding lengths differ: {ea.size} vs {eb.size}")
    na, nb = np.linalg.norm(ea), np.linalg.norm(eb)
    if na == 0 or nb == 0:
        raise ValueError(f"zero-norm embedding (|G(a)|={na}, |G(b)|={nb})")
    # 1 - cos written as half the squared distance of the unit vectors: exactly 0 for equal inputs
    d = ea / na - eb / nb
    return float(0.5 * np.dot(d, d))


def cosine_distance_grad(ea, eb):
    """d cosine_distance / d eb."""
    ea = np.asarray(ea, dtype=np.float64).reshape(-1)
    eb = np.asarray(eb, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(ea), np.linalg.norm(eb)
    if na == 0 or nb == 0:
        raise ValueError(f"zero-norm embedding (|G(a)|={na}, |G(b)|={nb})")
    cos = np.dot(ea, eb) / (na * nb)
    return -(ea / (na * nb) - cos * eb / (nb * nb))


_DEFAULT_EMBEDDER = GrayEmbedder()


def feature_cosine_loss(a, b, embedder=_DEFAULT_EMBEDDER):
    """One minus the cosine similarity of the two images' embeddings."""
    a, b = _same_shape(a, b)
    return cosine_distance(embedder(a), embedder(b))


def feature_cosine_loss_grad(a, b, embedder=_DEFAULT_EMBEDDER):
    """Gradient of :func:`feature_cosine_loss` with respect to ``b``."""
    a, b = _same_shape(a, b)
    return embedder.vjp(b.shape, cosine_distance_grad(embedder(a), embedder(b)))


def l3d_total(l1, l2, w=LossWeights()):
    return w.lambda_1 * l1 + w.lambda_2 * l2
