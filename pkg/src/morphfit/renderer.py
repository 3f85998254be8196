"""Deterministic z-buffered triangle rasterizer.

Images are float arrays of shape (H, W, 3); masks are boolean (H, W).
Pixel (i, j) is sampled at its centre (j + 0.5, i + 0.5). Shared edges
follow the top-left fill rule so every pixel centre on an edge between two
triangles is drawn exactly once. Smaller depth wins; on equal depth the
earlier triangle is kept.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from morphfit.geometry import as_points, rotation_from_euler, vertex_normals
from morphfit.model_core import ShapeCoeffs, TextureCoeffs, assemble_shape, assemble_texture
from morphfit.shading import shade


def _check_size(width, height):
    if int(width) <= 0 or int(height) <= 0:
        raise ValueError(f"image size must be positive, got {width}x{height}")
    return int(width), int(height)


def _prepare(points2d, triangles):
    p = np.asarray(points2d, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"points2d must be (N, 2), got {p.shape}")
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if t.size and (t.min() < 0 or t.max() >= len(p)):
        raise ValueError("triangle index out of range")
    return p, t


def _is_top_left(d):
    return (d[1] < 0) or (d[1] == 0 and d[0] > 0)


def _raster_band(p, depths, t, width, row0, row1):
    """Visibility for rows [row0, row1): triangle id (-1 = none) and depth."""
    h = row1 - row0
    tri_id = np.full((h, width), -1, dtype=np.int64)
    zbuf = np.full((h, width), np.inf)
    for k, (i0, i1, i2) in enumerate(t):
        v0, v1, v2 = p[i0], p[i1], p[i2]
        z0, z1, z2 = depths[i0], depths[i1], depths[i2]
        area = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v1[1] - v0[1]) * (v2[0] - v0[0])
        if area == 0 or not np.isfinite(area):
            continue
        if area < 0:
            v1, v2, z1, z2, area = v2, v1, z2, z1, -area
        xs = (v0[0], v1[0], v2[0])
        ys = (v0[1], v1[1], v2[1])
        c0 = max(int(np.ceil(min(xs) - 0.5)), 0)
        c1 = min(int(np.floor(max(xs) - 0.5)), width - 1)
        r0 = max(int(np.ceil(min(ys) - 0.5)), row0)
        r1 = min(int(np.floor(max(ys) - 0.5)), row1 - 1)
        if c0 > c1 or r0 > r1:
            continue
        qx = np.arange(c0, c1 + 1) + 0.5
        qy = (np.arange(r0, r1 + 1) + 0.5)[:, None]

        inside = np.ones((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
        weights = []
        # edge a->b; its value is the (unnormalized) weight of the opposite vertex
        for a, b in ((v1, v2), (v2, v0), (v0, v1)):
            d = b - a
            e = d[0] * (qy - a[1]) - d[1] * (qx - a[0])
            inside &= (e > 0) | ((e == 0) & _is_top_left(d))
            weights.append(e)
        if not inside.any():
            continue
        z = (weights[0] * z0 + weights[1] * z1 + weights[2] * z2) / area
        zslice = zbuf[r0 - row0:r1 - row0 + 1, c0:c1 + 1]
        win = inside & (z < zslice)
        zslice[win] = z[win]
        tri_id[r0 - row0:r1 - row0 + 1, c0:c1 + 1][win] = k
    return tri_id, zbuf


def visibility(points2d, depths, triangles, width, height, workers=1):
    """Per-pixel front triangle index (-1 for background) and its depth."""
    width, height = _check_size(width, height)
    p, t = _prepare(points2d, triangles)
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    if depths.size != len(p):
        raise ValueError(f"{depths.size} depths for {len(p)} points")
    workers = max(1, int(workers))
    if workers == 1:
        return _raster_band(p, depths, t, width, 0, height)
    edges = np.linspace(0, height, workers + 1).astype(int)
    with ThreadPoolExecutor(workers) as pool:
        parts = list(pool.map(lambda ab: _raster_band(p, depths, t, width, *ab), zip(edges[:-1], edges[1:])))
    return np.vstack([a for a, _ in parts]), np.vstack([b for _, b in parts])


def pixel_barycentrics(points2d, triangles, tri_id):
    """Barycentric weights of every covered pixel centre in its assigned triangle.

    Returns ``(rows, cols, tri, weights)`` with weights of shape (K, 3), in the
    triangle's stored vertex order. Weights are smooth functions of the vertex
    positions, so they stay valid (possibly outside [0, 1]) if the vertices
    move while the assignment is held fixed.
    """
    rows, cols = np.nonzero(tri_id >= 0)
    tri = tri_id[rows, cols]
    w = barycentric_weights(points2d, np.asarray(triangles)[tri], cols + 0.5, rows + 0.5)
    return rows, cols, tri, w


def barycentric_weights(points2d, tri_vertices, qx, qy):
    p = np.asarray(points2d, dtype=np.float64)
    a, b, c = p[tri_vertices[:, 0]], p[tri_vertices[:, 1]], p[tri_vertices[:, 2]]
    q = np.stack([qx, qy], axis=1)
    area = _cross(b - a, c - a)
    return np.stack([_cross(c - b, q - b), _cross(a - c, q - c), _cross(b - a, q - a)], axis=1) / area[:, None]


def barycentric_weights_vjp(points2d, tri_vertices, qx, qy, grad_w):
    """Gradient of sum(grad_w * weights) with respect to the 2D vertex positions."""
    p = np.asarray(points2d, dtype=np.float64)
    a, b, c = p[tri_vertices[:, 0]], p[tri_vertices[:, 1]], p[tri_vertices[:, 2]]
    q = np.stack([qx, qy], axis=1)
    area = _cross(b - a, c - a)
    nums = [(c - b, q - b), (a - c, q - c), (b - a, q - a)]
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    gc = np.zeros_like(c)
    g_area = np.zeros(len(a))
    for k, (u, v) in enumerate(nums):
        g_num = grad_w[:, k] / area
        g_area -= grad_w[:, k] * _cross(u, v) / area**2
        gu = g_num[:, None] * _dcross_du(v)
        gv = g_num[:, None] * _dcross_dv(u)
        if k == 0:
            gc += gu
            gb -= gu + gv
        elif k == 1:
            ga += gu
            gc -= gu + gv
        else:
            gb += gu
            ga -= gu + gv
    # area = cross(b - a, c - a)
    gu = g_area[:, None] * _dcross_du(c - a)
    gv = g_area[:, None] * _dcross_dv(b - a)
    gb += gu
    gc += gv
    ga -= gu + gv
    out = np.zeros_like(p)
    np.add.at(out, tri_vertices[:, 0], ga)
    np.add.at(out, tri_vertices[:, 1], gb)
    np.add.at(out, tri_vertices[:, 2], gc)
    return out


def _cross(u, v):
    return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]


def _dcross_du(v):
    return np.stack([v[:, 1], -v[:, 0]], axis=1)


def _dcross_dv(u):
    return np.stack([-u[:, 1], u[:, 0]], axis=1)


def rasterize(points2d, depths, colors, triangles, width, height, workers=1):
    """Fill triangles with interpolated per-vertex colors.

    Returns ``(image, coverage)``; uncovered pixels are black and colors are
    clamped to [0, 1].
    """
    p, t = _prepare(points2d, triangles)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if len(colors) != len(p):
        raise ValueError(f"{len(colors)} colors for {len(p)} points")
    tri_id, _ = visibility(p, depths, t, width, height, workers=workers)
    image = np.zeros((tri_id.shape[0], tri_id.shape[1], 3))
    rows, cols, tri, w = pixel_barycentrics(p, t, tri_id)
    if rows.size:
        verts = t[tri]
        image[rows, cols] = np.einsum("kj,kjc->kc", w, colors[verts])
    return np.clip(image, 0.0, 1.0), tri_id >= 0


def scene_vertices(model, params):
    """Rotated positions, projected points, depths and shaded colors for a scene."""
    shape = assemble_shape(model, ShapeCoeffs(params.alpha_id, params.beta_exp))
    r = rotation_from_euler(*params.angles)
    rotated = as_points(shape) @ r.T
    normals = vertex_normals(rotated, model.triangles)
    albedo = assemble_texture(model, TextureCoeffs(params.beta_tex))
    colors = shade(albedo, normals, params.gamma).reshape(-1, 3)
    xy = params.f * rotated[:, :2] + params.t2d
    return rotated, xy, rotated[:, 2].copy(), colors


def render_scene(model, params, width, height, workers=1):
    """Render a morphable-model scene; returns ``(image, coverage)``."""
    _, xy, depth, colors = scene_vertices(model, params)
    return rasterize(xy, depth, colors, model.triangles, width, height, workers=workers)
