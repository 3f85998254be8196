"""Point-to-surface error metrics and error heatmaps."""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from morphfit.renderer import rasterize


@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.vertices):
                raise ValueError(f"{len(self.colors)} colors for {len(self.vertices)} vertices")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")


def closest_points_on_triangles(p, a, b, c):
    """Closest point to ``p`` on each triangle (a, b, c); all inputs broadcast to (..., 3)."""
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    regions = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
    ]
    candidates = [
        a,
        b,
        a + v_ab[..., None] * ab,
        c,
        a + w_ac[..., None] * ac,
        b + w_bc[..., None] * (c - b),
    ]
    out = a + v_in[..., None] * ab + w_in[..., None] * ac
    # earlier regions take priority, so apply them last
    for cond, cand in zip(reversed(regions), reversed(candidates)):
        out = np.where(cond[..., None], np.broadcast_to(cand, out.shape), out)
    return out


def point_to_mesh_distances(points, mesh, chunk=256):
    """Exact Euclidean distance from each point to the nearest triangle of ``mesh``.

    Zero-area triangles are skipped; a ``RuntimeWarning`` reports how many.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    v, t = mesh.vertices, mesh.triangles
    if t.size == 0:
        raise ValueError("mesh has no triangles")
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    good = area2 > 0
    n_bad = int((~good).sum())
    if n_bad:
        warnings.warn(f"skipped {n_bad} degenerate triangles", RuntimeWarning, stacklevel=2)
    if not good.any():
        raise ValueError("mesh has no non-degenerate triangles")
    a, b, c = a[good], b[good], c[good]
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk, None, :]
        q = closest_points_on_triangles(p, a[None], b[None], c[None])
        out[s:s + chunk] = np.sqrt(np.min(np.sum((q - p) ** 2, axis=-1), axis=1))
    return out


@dataclass
class ErrorSummary:
    q: float
    percentile: float
    top_mean: float
    mean: float
    max: float

    def lines(self):
        pct = f"{100 * self.q:g}"
        return [
            f"mean: {self.mean:.6g}",
            f"p{pct} (nearest rank): {self.percentile:.6g}",
            f"mean of top {100 - float(pct):g}%: {self.top_mean:.6g}",
            f"max: {self.max:.6g}",
        ]


def percentile_error(distances, q=0.9):
    """Nearest-rank percentile (sorted value at 1-based rank ceil(q*M)) plus mean and max.

    ``top_mean`` averages the sorted values from that rank upward.
    """
    d = np.sort(np.asarray(distances, dtype=np.float64).reshape(-1))
    if d.size == 0:
        raise ValueError("no distances given")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    rank = min(max(math.ceil(q * d.size), 1), d.size)
    return ErrorSummary(
        q=q,
        percentile=float(d[rank - 1]),
        top_mean=float(d[rank - 1:].mean()),
        mean=float(d.mean()),
        max=float(d[-1]),
    )


def blue_red(values, scale_max):
    """Linear colormap: 0 -> blue (0, 0, 1), scale_max and above -> red (1, 0, 0)."""
    t = np.clip(np.asarray(values, dtype=np.float64) / scale_max, 0.0, 1.0) if scale_max > 0 else \
        np.zeros(np.shape(values))
    return np.stack([t, np.zeros_like(t), 1.0 - t], axis=-1)


def error_heatmap(mesh, per_vertex_errors, color_scale=None, width=256, height=256, margin=0.05):
    """Orthographic frontal render of ``mesh`` colored by per-vertex error.

    The view looks along +z with x to the right and model y up; the mesh's
    x/y bounding box is fit into the image. ``color_scale`` is the error
    mapped to pure red (default: the maximum error).
    """
    err = np.asarray(per_vertex_errors, dtype=np.float64).reshape(-1)
    if err.size != len(mesh.vertices):
        raise ValueError(f"{err.size} errors for {len(mesh.vertices)} vertices")
    scale = float(err.max()) if color_scale is None else float(color_scale)
    v = mesh.vertices
    lo, hi = v[:, :2].min(0), v[:, :2].max(0)
    span = np.maximum(hi - lo, 1e-12)
    s = (1 - 2 * margin) * min(width / span[0], height / span[1])
    centre = (lo + hi) / 2
    xy = np.stack([(v[:, 0] - centre[0]) * s + width / 2, -(v[:, 1] - centre[1]) * s + height / 2], 1)
    image, _ = rasterize(xy, v[:, 2], blue_red(err, scale), mesh.triangles, width, height)
    return image


def procrustes_align(source, target):
    """Rigidly align ``source`` points onto corresponding ``target`` points (Kabsch)."""
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError(f"correspondence shapes differ: {src.shape} vs {dst.shape}")
    cs, cd = src.mean(0), dst.mean(0)
    u, _, vt = np.linalg.svd((src - cs).T @ (dst - cd))
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    return (src - cs) @ r + cd
