"""Eyeglass-region masking, deletion and total-variation inpainting."""

import numpy as np
from scipy import ndimage

EYEGLASS_CLASS = 3
DEFAULT_DILATE = 2
TV_EPS = 1e-3


def extract_class_mask(labels, class_id=EYEGLASS_CLASS, dilate_px=DEFAULT_DILATE):
    """Pixels labelled ``class_id``, grown by a (2*dilate_px+1)^2 square."""
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.size == 0:
        raise ValueError(f"parsing map must be a nonempty 2-D array, got shape {labels.shape}")
    if dilate_px < 0:
        raise ValueError(f"dilate_px must be >= 0, got {dilate_px}")
    mask = labels == class_id
    if dilate_px and mask.any():
        mask = ndimage.binary_dilation(mask, structure=np.ones((2 * dilate_px + 1,) * 2, dtype=bool))
    return mask


def delete_region(img, mask):
    """Copy of ``img`` with masked pixels set to zero."""
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    out = img.copy()
    out[mask] = 0.0
    return out


def boundary_ring(mask):
    """Unmasked pixels 4-adjacent to the mask."""
    return ndimage.binary_dilation(mask) & ~mask


def smoothed_tv_energy(img, eps=TV_EPS):
    """Charbonnier-smoothed anisotropic TV: sum of sqrt(d^2 + eps^2) - eps over forward differences."""
    x = np.asarray(img, dtype=np.float64)
    dh = x[:, 1:] - x[:, :-1]
    dv = x[1:, :] - x[:-1, :]
    return float(np.sum(np.sqrt(dh * dh + eps * eps) - eps) + np.sum(np.sqrt(dv * dv + eps * eps) - eps))


def _smoothed_tv_grad(x, eps):
    dh = x[:, 1:] - x[:, :-1]
    dv = x[1:, :] - x[:-1, :]
    gh = dh / np.sqrt(dh * dh + eps * eps)
    gv = dv / np.sqrt(dv * dv + eps * eps)
    g = np.zeros_like(x)
    g[:, :-1] -= gh
    g[:, 1:] += gh
    g[:-1, :] -= gv
    g[1:, :] += gv
    return g


def tv_inpaint(corrupted, mask, iters=500, step=0.25, tol=1e-7, eps=TV_EPS, energies=None):
    """Fill masked pixels by descending the smoothed TV energy.

    Masked pixels start at the per-channel mean of the unmasked ring around
    the mask and are kept inside that ring's per-channel [min, max]. A step is
    taken only if it lowers the energy, so the energy trace (appended to
    ``energies`` when a list is given) never increases. Unmasked pixels are
    returned untouched.
    """
    img = np.asarray(corrupted, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    if mask.all():
        raise ValueError("mask covers the whole image; nothing to inpaint from")
    out = img.copy()
    if not mask.any():
        if energies is not None:
            energies.append(smoothed_tv_energy(out, eps))
        return out

    ring = boundary_ring(mask)
    x = out if out.ndim == 3 else out[:, :, None]
    lo = x[ring].min(axis=0)
    hi = x[ring].max(axis=0)
    x[mask] = x[ring].mean(axis=0)

    energy = smoothed_tv_energy(x, eps)
    if energies is not None:
        energies.append(energy)
    t = step
    for _ in range(iters):
        g = _smoothed_tv_grad(x, eps)[mask]
        if not np.any(g):
            break
        cur = x[mask]
        while t > 1e-12:
            trial = np.clip(cur - t * g, lo, hi)
            x[mask] = trial
            e_new = smoothed_tv_energy(x, eps)
            if e_new < energy:
                break
            t *= 0.5
        else:
            x[mask] = cur
            break
        rel = (energy - e_new) / max(energy, 1e-300)
        energy = e_new
        if energies is not None:
            energies.append(energy)
        t *= 1.5
        if rel < tol:
            break
    return out
