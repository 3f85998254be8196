"""Pose, rotation, weak-perspective projection, normals and landmark gathering.

Image coordinates: x to the right, y down, in pixels. Pixel (row i, col j)
has its centre at (j + 0.5, i + 0.5). Depth is the third component of the
rotated vertex; the camera looks along +z so smaller depth is closer.
"""

from dataclasses import dataclass

import numpy as np

# orthographic selector of the projection
P_ORTHO = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass
class Pose:
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0
    f: float = 1.0
    t2d: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not np.all(np.isfinite([self.pitch, self.yaw, self.roll, self.f, *self.t2d])):
            raise ValueError("pose must be finite")
        if self.f <= 0:
            raise ValueError(f"scale f must be positive, got {self.f}")

    @classmethod
    def from_vector(cls, p):
        p = np.asarray(p, dtype=np.float64)
        return cls(float(p[0]), float(p[1]), float(p[2]), float(p[3]), (float(p[4]), float(p[5])))

    def to_vector(self):
        return np.array([self.pitch, self.yaw, self.roll, self.f, *self.t2d], dtype=np.float64)

    @property
    def rotation(self):
        return rotation_from_euler(self.pitch, self.yaw, self.roll)


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_from_euler(pitch, yaw, roll):
    """R = Rz(roll) @ Ry(yaw) @ Rx(pitch), rotations about fixed axes."""
    if not np.all(np.isfinite([pitch, yaw, roll])):
        raise ValueError("Euler angles must be finite")
    return _rz(roll) @ _ry(yaw) @ _rx(pitch)


def rotation_derivatives(pitch, yaw, roll):
    """Partial derivatives of the rotation matrix w.r.t. (pitch, yaw, roll)."""
    rx, ry, rz = _rx(pitch), _ry(yaw), _rz(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cr, sr = np.cos(roll), np.sin(roll)
    drx = np.array([[0.0, 0.0, 0.0], [0.0, -sp, -cp], [0.0, cp, -sp]])
    dry = np.array([[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]])
    drz = np.array([[-sr, -cr, 0.0], [cr, -sr, 0.0], [0.0, 0.0, 0.0]])
    return np.stack([rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx])


def euler_from_rotation(r):
    """Inverse of :func:`rotation_from_euler` (yaw restricted to [-pi/2, pi/2])."""
    yaw = np.arcsin(np.clip(-r[2, 0], -1.0, 1.0))
    pitch = np.arctan2(r[2, 1], r[2, 2])
    roll = np.arctan2(r[1, 0], r[0, 0])
    return float(pitch), float(yaw), float(roll)


def as_points(positions):
    p = np.asarray(positions, dtype=np.float64)
    if p.ndim == 2 and p.shape[1] == 3:
        return p
    if p.ndim != 1 or p.size % 3:
        raise ValueError(f"positions length {p.size} is not divisible by 3")
    return p.reshape(-1, 3)


def project_vertices(positions, pose):
    """Weak perspective: xy = f * P_ortho @ R @ v + t2d.

    Returns ``(points2d (N, 2), depth (N,))``.
    """
    if not isinstance(pose, Pose):
        pose = Pose.from_vector(pose)
    rotated = as_points(positions) @ pose.rotation.T
    xy = pose.f * rotated[:, :2] + np.asarray(pose.t2d, dtype=np.float64)
    return xy, rotated[:, 2].copy()


def face_normals(points, triangles):
    p = as_points(points)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    return np.cross(p[t[:, 1]] - p[t[:, 0]], p[t[:, 2]] - p[t[:, 0]])


def vertex_normals(positions, triangles):
    """Area-weighted vertex normals; vertices with a zero sum get (0, 0, 1)."""
    p = as_points(positions)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    acc = np.zeros_like(p)
    fn = face_normals(p, t)
    for k in range(3):
        np.add.at(acc, t[:, k], fn)
    norm = np.linalg.norm(acc, axis=1)
    out = np.zeros_like(p)
    ok = norm > 0
    out[ok] = acc[ok] / norm[ok, None]
    out[~ok] = (0.0, 0.0, 1.0)
    return out


def vertex_normals_vjp(positions, triangles, grad_normals):
    """Pull a gradient on the unit vertex normals back onto the vertex positions."""
    p = as_points(positions)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    acc = np.zeros_like(p)
    fn = face_normals(p, t)
    for k in range(3):
        np.add.at(acc, t[:, k], fn)
    norm = np.linalg.norm(acc, axis=1)
    ok = norm > 0
    g_acc = np.zeros_like(p)
    n = acc[ok] / norm[ok, None]
    g = grad_normals[ok]
    g_acc[ok] = (g - n * np.einsum("ij,ij->i", n, g)[:, None]) / norm[ok, None]
    g_fn = g_acc[t[:, 0]] + g_acc[t[:, 1]] + g_acc[t[:, 2]]
    e1 = p[t[:, 1]] - p[t[:, 0]]
    e2 = p[t[:, 2]] - p[t[:, 0]]
    g_e1 = np.cross(e2, g_fn)
    g_e2 = np.cross(g_fn, e1)
    out = np.zeros_like(p)
    np.add.at(out, t[:, 1], g_e1)
    np.add.at(out, t[:, 2], g_e2)
    np.add.at(out, t[:, 0], -(g_e1 + g_e2))
    return out


def select_landmarks(projected, indices):
    """Gather the ordered (68, 2) landmark set from projected vertices."""
    projected = np.asarray(projected, dtype=np.float64)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= len(projected)):
        raise ValueError(f"landmark index out of range [0, {len(projected)})")
    return projected[idx]


def similarity_pose(model_points, image_points):
    """Weak-perspective pose aligning 3D model points to 2D image points.

    Fits an affine camera by least squares, then projects its 2x3 part onto
    a scaled rotation. Returns ``(pitch, yaw, roll, f, tx, ty)``.
    """
    x3 = as_points(model_points)
    x2 = np.asarray(image_points, dtype=np.float64)
    c3, c2 = x3.mean(0), x2.mean(0)
    a, *_ = np.linalg.lstsq(x3 - c3, x2 - c2, rcond=None)
    m = a.T
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    r12 = u @ vt
    f = float(s.mean())
    r3 = np.cross(r12[0], r12[1])
    r = np.vstack([r12, r3])
    t = c2 - f * (r12 @ c3)
    pitch, yaw, roll = euler_from_rotation(r)
    return np.array([pitch, yaw, roll, f, t[0], t[1]])
