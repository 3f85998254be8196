"""Order-2 real spherical-harmonics shading with one 9-vector shared by R, G, B."""

import numpy as np

C0 = 0.5 / np.sqrt(np.pi)
C1 = np.sqrt(3.0 / (4.0 * np.pi))
C2 = 0.5 * np.sqrt(15.0 / np.pi)
C20 = 0.25 * np.sqrt(5.0 / np.pi)
C22 = 0.25 * np.sqrt(15.0 / np.pi)


def _unit(normals):
    n = np.asarray(normals, dtype=np.float64)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("zero-length normal")
    return n / norm


def sh_basis(normal):
    """SH values [Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22] at a normal.

    Accepts a single 3-vector or an (N, 3) array; returns shape (9,) or (N, 9).
    """
    n = _unit(normal)
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    return np.stack(
        [
            np.full_like(x, C0),
            C1 * y,
            C1 * z,
            C1 * x,
            C2 * x * y,
            C2 * y * z,
            C20 * (3.0 * z * z - 1.0),
            C2 * x * z,
            C22 * (x * x - y * y),
        ],
        axis=-1,
    )


def sh_basis_jacobian(normals):
    """d sh_basis / d normal for unit normals, shape (N, 9, 3).

    Renormalization is not differentiated; callers feed gradients that are
    already tangent to the sphere.
    """
    n = np.asarray(normals, dtype=np.float64)
    x, y, z = n[:, 0], n[:, 1], n[:, 2]
    zero = np.zeros_like(x)
    one = np.ones_like(x)
    rows = [
        (zero, zero, zero),
        (zero, C1 * one, zero),
        (zero, zero, C1 * one),
        (C1 * one, zero, zero),
        (C2 * y, C2 * x, zero),
        (zero, C2 * z, C2 * y),
        (zero, zero, 6.0 * C20 * z),
        (C2 * z, zero, C2 * x),
        (2.0 * C22 * x, -2.0 * C22 * y, zero),
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=1)


def radiance(normals, gamma):
    """Per-vertex scalar irradiance dot(Y(n), gamma)."""
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    if gamma.size != 9:
        raise ValueError(f"gamma must have 9 entries, got {gamma.size}")
    return sh_basis(np.asarray(normals, dtype=np.float64).reshape(-1, 3)) @ gamma


def shade(albedo, normals, gamma):
    """Multiply each vertex's RGB albedo by its SH radiance. Output is unclamped, flat 3N."""
    a = np.asarray(albedo, dtype=np.float64).reshape(-1)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    if a.size != n.size:
        raise ValueError(f"albedo has {a.size} entries but there are {len(n)} normals")
    r = radiance(n, gamma)
    return (a.reshape(-1, 3) * r[:, None]).reshape(-1)
