"""Linear morphable model: storage, PCA assembly, binary format, synthetic models.

Binary layout (all little-endian)::

    magic      4 bytes  b"MM3D"
    version    u32      1
    n_vertices u32      N
    n_tris     u32      T
    n_id       u32      80
    n_exp      u32      64
    n_tex      u32      80
    n_lmk      u32      68
    mean_shape    f64[3N]
    mean_texture  f64[3N]
    basis_id      f64[3N * 80]   row-major
    basis_exp     f64[3N * 64]   row-major
    basis_tex     f64[3N * 80]   row-major
    triangles     u32[T * 3]
    landmarks     u32[68]

Vertex ``i`` occupies entries ``3i, 3i+1, 3i+2`` of every 3N vector.
"""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from morphfit.errors import FormatError
from morphfit.params import N_EXP, N_ID, N_TEX

N_LANDMARKS = 68
MAGIC = b"MM3D"
VERSION = 1
_HEADER = struct.Struct("<4s7I")


def _readonly(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MorphableModel:
    mean_shape: np.ndarray
    mean_texture: np.ndarray
    basis_id: np.ndarray
    basis_exp: np.ndarray
    basis_tex: np.ndarray
    triangles: np.ndarray
    landmark_indices: np.ndarray

    def __post_init__(self):
        fields = {
            "mean_shape": _readonly(np.reshape(self.mean_shape, -1), np.float64),
            "mean_texture": _readonly(np.reshape(self.mean_texture, -1), np.float64),
            "basis_id": _readonly(self.basis_id, np.float64),
            "basis_exp": _readonly(self.basis_exp, np.float64),
            "basis_tex": _readonly(self.basis_tex, np.float64),
            "triangles": _readonly(np.reshape(self.triangles, (-1, 3)), np.int64),
            "landmark_indices": _readonly(np.reshape(self.landmark_indices, -1), np.int64),
        }
        for k, v in fields.items():
            object.__setattr__(self, k, v)
        _validate(self)

    @property
    def n_vertices(self):
        return self.mean_shape.size // 3

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def summary(self):
        """Dimensions and per-array checksums, as printed by ``morphfit model-info``."""
        lines = [
            f"vertices: {self.n_vertices}",
            f"triangles: {self.n_triangles}",
            f"basis_id: {self.basis_id.shape[0]}x{self.basis_id.shape[1]}",
            f"basis_exp: {self.basis_exp.shape[0]}x{self.basis_exp.shape[1]}",
            f"basis_tex: {self.basis_tex.shape[0]}x{self.basis_tex.shape[1]}",
            f"landmarks: {self.landmark_indices.size}",
        ]
        for name in ("mean_shape", "mean_texture", "basis_id", "basis_exp", "basis_tex"):
            lines.append(f"sha256[{name}]: {_digest(getattr(self, name), '<f8')}")
        lines.append(f"sha256[triangles]: {_digest(self.triangles, '<u4')}")
        lines.append(f"sha256[landmarks]: {_digest(self.landmark_indices, '<u4')}")
        return "\n".join(lines)


def _digest(a, dtype):
    return hashlib.sha256(np.ascontiguousarray(a, dtype=dtype).tobytes()).hexdigest()[:16]


def _validate(m):
    n3 = m.mean_shape.size
    if n3 == 0 or n3 % 3:
        raise ValueError(f"mean_shape length {n3} is not a positive multiple of 3")
    n = n3 // 3
    if m.mean_texture.size != n3:
        raise ValueError(f"mean_texture has {m.mean_texture.size} entries, expected {n3}")
    for name, k in (("basis_id", N_ID), ("basis_exp", N_EXP), ("basis_tex", N_TEX)):
        b = getattr(m, name)
        if b.shape != (n3, k):
            raise ValueError(f"{name} has shape {b.shape}, expected {(n3, k)}")
    for name in ("mean_shape", "mean_texture", "basis_id", "basis_exp", "basis_tex"):
        if not np.all(np.isfinite(getattr(m, name))):
            raise ValueError(f"{name} contains non-finite values")
    if m.triangles.size and (m.triangles.min() < 0 or m.triangles.max() >= n):
        raise ValueError(f"triangle index out of range [0, {n})")
    lm = m.landmark_indices
    if lm.size != N_LANDMARKS:
        raise ValueError(f"expected {N_LANDMARKS} landmark indices, got {lm.size}")
    if lm.min() < 0 or lm.max() >= n:
        raise ValueError(f"landmark index out of range [0, {n})")
    # tiny fixture meshes cannot hold 68 distinct points; they cycle instead
    if np.unique(lm).size != min(n, N_LANDMARKS):
        raise ValueError("landmark indices must be distinct")


@dataclass
class ShapeCoeffs:
    alpha_id: np.ndarray
    beta_exp: np.ndarray


@dataclass
class TextureCoeffs:
    beta_tex: np.ndarray


def _coeff(x, k, name):
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.size != k:
        raise ValueError(f"{name} must have {k} entries, got {a.size}")
    return a


def assemble_shape(model, coeffs):
    """Mean shape plus identity and expression offsets, as a flat 3N vector."""
    a = _coeff(coeffs.alpha_id, model.basis_id.shape[1], "alpha_id")
    b = _coeff(coeffs.beta_exp, model.basis_exp.shape[1], "beta_exp")
    if not (a.any() or b.any()):
        return model.mean_shape.copy()
    return model.mean_shape + model.basis_id @ a + model.basis_exp @ b


def assemble_texture(model, coeffs):
    """Per-vertex albedo, unclamped."""
    t = _coeff(coeffs.beta_tex, model.basis_tex.shape[1], "beta_tex")
    if not t.any():
        return model.mean_texture.copy()
    return model.mean_texture + model.basis_tex @ t


def save_model(model, path):
    n = model.n_vertices
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, model.n_triangles, N_ID, N_EXP, N_TEX, N_LANDMARKS))
        for name in ("mean_shape", "mean_texture", "basis_id", "basis_exp", "basis_tex"):
            fh.write(np.ascontiguousarray(getattr(model, name), dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.triangles, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(model.landmark_indices, dtype="<u4").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(
            f"{path}: truncated header: expected {_HEADER.size} bytes, got {len(raw)}", field="header"
        )
    magic, version, n, t, n_id, n_exp, n_tex, n_lmk = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}", field="magic")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", field="version")
    for name, got, want in (("n_id", n_id, N_ID), ("n_exp", n_exp, N_EXP), ("n_tex", n_tex, N_TEX),
                            ("n_lmk", n_lmk, N_LANDMARKS)):
        if got != want:
            raise FormatError(f"{path}: {name} is {got}, expected {want}", field=name)
    if n == 0:
        raise FormatError(f"{path}: n_vertices is 0", field="n_vertices")

    layout = [
        ("mean_shape", "<f8", (3 * n,)),
        ("mean_texture", "<f8", (3 * n,)),
        ("basis_id", "<f8", (3 * n, N_ID)),
        ("basis_exp", "<f8", (3 * n, N_EXP)),
        ("basis_tex", "<f8", (3 * n, N_TEX)),
        ("triangles", "<u4", (t, 3)),
        ("landmark_indices", "<u4", (N_LANDMARKS,)),
    ]
    expected = _HEADER.size + sum(np.dtype(d).itemsize * int(np.prod(s)) for _, d, s in layout)
    if len(raw) != expected:
        what = "truncated" if len(raw) < expected else "trailing data"
        # name the first array that is cut short
        off, bad = _HEADER.size, "end"
        for name, d, s in layout:
            off += np.dtype(d).itemsize * int(np.prod(s))
            if off > len(raw):
                bad = name
                break
        raise FormatError(f"{path}: {what} in {bad}: expected {expected} bytes, got {len(raw)}", field=bad)

    arrays, off = {}, _HEADER.size
    for name, d, s in layout:
        count = int(np.prod(s))
        arrays[name] = np.frombuffer(raw, dtype=d, count=count, offset=off).reshape(s)
        off += np.dtype(d).itemsize * count
    try:
        return MorphableModel(**arrays)
    except ValueError as exc:
        field = str(exc).split()[0]
        raise FormatError(f"{path}: {exc}", field=field) from exc


# ---------------------------------------------------------------- synthetic

def _ring_directions(n):
    """Unit directions on latitude rings around the vertical (y) axis, mirror-symmetric in x."""
    if n == 4:
        d = np.array([[1, 1, 1], [-1, -1, 1], [-1, 1, -1], [1, -1, -1]], dtype=np.float64)
        return d / np.sqrt(3.0)
    body = n - 2
    rings = max(1, int(round(0.6 * np.sqrt(body))))
    while rings > 1 and body < 3 * rings:
        rings -= 1
    lat = np.pi * (np.arange(rings) + 0.5) / rings
    w = np.sin(lat)
    raw = 3 + (body - 3 * rings) * w / w.sum()
    counts = np.floor(raw).astype(int)
    # largest remainder, ties broken by ring order
    for k in np.argsort(-(raw - counts), kind="stable")[: body - counts.sum()]:
        counts[k] += 1
    dirs = [[0.0, 1.0, 0.0]]
    for theta, m in zip(lat, counts):
        phi = np.pi / 2 + 2 * np.pi * np.arange(m) / m
        s = np.sin(theta)
        dirs.extend(np.stack([s * np.cos(phi), np.full(m, np.cos(theta)), s * np.sin(phi)], 1))
    dirs.append([0.0, -1.0, 0.0])
    return np.asarray(dirs)


def _oriented_hull(dirs):
    tris = ConvexHull(dirs).simplices.astype(np.int64)
    a, b, c = dirs[tris[:, 0]], dirs[tris[:, 1]], dirs[tris[:, 2]]
    outward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) > 0
    tris[~outward] = tris[~outward][:, [0, 2, 1]]
    return tris


def _smooth(field, tris, n, iters):
    if iters == 0:
        return field
    nbr_sum = np.zeros_like(field)
    deg = np.zeros(n)
    for i, j in ((0, 1), (1, 2), (2, 0)):
        a, b = tris[:, i], tris[:, j]
        np.add.at(nbr_sum, a, field[b])
        np.add.at(nbr_sum, b, field[a])
        np.add.at(deg, a, 1)
        np.add.at(deg, b, 1)
    out = 0.5 * field + 0.5 * nbr_sum / np.maximum(deg, 1)[:, None]
    return _smooth(out, tris, n, iters - 1)


def _unit_basis(rng, tris, n, k):
    """3N x k basis of smooth random fields with unit-norm columns (orthonormal when 3N >= k)."""
    raw = rng.standard_normal((n, 3 * k))
    raw = _smooth(raw, tris, n, 2).reshape(n, 3, k).reshape(3 * n, k)
    if 3 * n >= k:
        q, r = np.linalg.qr(raw)
        q *= np.sign(np.diag(r))
    else:
        q = raw
    return q / np.linalg.norm(q, axis=0)


def _pick_landmarks(verts, dirs):
    n = len(verts)
    front = np.flatnonzero(dirs[:, 2] < -0.2)
    if front.size < min(n, N_LANDMARKS):
        front = np.arange(n)
    chosen = [int(front[np.argmin(dirs[front, 2])])]
    dist = np.linalg.norm(verts[front] - verts[chosen[0]], axis=1)
    while len(chosen) < min(n, N_LANDMARKS):
        nxt = int(front[np.argmax(dist)])
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(verts[front] - verts[nxt], axis=1))
    return np.resize(np.asarray(chosen), N_LANDMARKS)


def synth_model(seed, n_vertices):
    """Deterministic ellipsoid-like head with smooth random unit-norm bases.

    The face looks towards -z (the camera side), y is up. The mean shape and
    mean texture are mirror-symmetric in x; the bases are not.
    """
    if n_vertices < 4:
        raise ValueError(f"n_vertices must be >= 4, got {n_vertices}")
    rng = np.random.default_rng(seed)
    dirs = _ring_directions(n_vertices)
    tris = _oriented_hull(dirs)
    x, y, z = dirs.T

    c = rng.uniform(-0.06, 0.06, size=5)
    radius = 1.0 + c[0] * y + c[1] * z + c[2] * x**2 + c[3] * y * z + c[4] * z**2
    nose = 0.12 + 0.06 * rng.random()
    radius = radius + nose * np.exp(-((x**2 + (y + 0.05) ** 2 + (z + 1) ** 2) / 0.08))
    axes = np.array([0.78, 1.0, 0.88]) * rng.uniform(0.95, 1.05, size=3)
    verts = dirs * radius[:, None] * axes

    skin = np.array([0.78, 0.58, 0.48]) + rng.uniform(-0.05, 0.05, size=3)
    shade = 0.08 * np.cos(3.0 * y + rng.uniform(0, np.pi)) + 0.05 * x**2
    tex = np.clip(skin[None, :] + shade[:, None], 0.05, 0.95)

    shape_basis = _unit_basis(rng, tris, n_vertices, N_ID + N_EXP)
    tex_basis = _unit_basis(rng, tris, n_vertices, N_TEX)

    return MorphableModel(
        mean_shape=verts.reshape(-1),
        mean_texture=tex.reshape(-1),
        basis_id=shape_basis[:, :N_ID],
        basis_exp=shape_basis[:, N_ID:],
        basis_tex=tex_basis,
        triangles=tris,
        landmark_indices=_pick_landmarks(verts, dirs),
    )
