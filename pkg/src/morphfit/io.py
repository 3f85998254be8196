"""File formats: PNG images and masks, parsing maps, landmarks, OBJ meshes, configs, reports.

PNG color images are 8-bit and treated as gamma-2.2 encoded: reading maps
``v -> (v / 255) ** 2.2``, writing maps ``x -> round(255 * clip(x, 0, 1) ** (1 / 2.2))``.
"""

import json
from dataclasses import fields

import numpy as np
from PIL import Image

from morphfit.errors import FormatError
from morphfit.evaluation import Mesh
from morphfit.fitter import FitConfig
from morphfit.losses import LossWeights
from morphfit.params import SceneParams

GAMMA = 2.2


def _open(path):
    try:
        return Image.open(path)
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise FormatError(f"{path}: not a readable image ({exc})", field="image") from exc


def to_linear(values_8bit):
    return (np.asarray(values_8bit, dtype=np.float64) / 255.0) ** GAMMA


def to_8bit(linear):
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.round(255.0 * x ** (1.0 / GAMMA)).astype(np.uint8)


def read_image(path):
    with _open(path) as im:
        return to_linear(np.asarray(im.convert("RGB")))


def write_image(path, image):
    Image.fromarray(to_8bit(image), mode="RGB").save(path, format="PNG")


def read_mask(path):
    with _open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def write_mask(path, mask):
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG"
    )


def read_parsing_map(path):
    """Single-channel 8-bit PNG of class ids."""
    with _open(path) as im:
        if im.mode not in ("L", "P"):
            raise FormatError(f"{path}: parsing map must be single-channel, got mode {im.mode}", field="mode")
        # palette images store the class id as the palette index
        return np.asarray(im, dtype=np.uint8)


def write_parsing_map(path, labels):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("class ids must lie in [0, 255]")
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path, format="PNG")


def read_landmarks(path, count=68):
    """``count`` lines of ``x y`` in pixel units."""
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        pts = np.array([[float(a), float(b)] for a, b in rows])
    except ValueError as exc:
        raise FormatError(f"{path}: each landmark line must be 'x y' ({exc})", field="landmarks") from exc
    if pts.shape != (count, 2):
        raise FormatError(f"{path}: expected {count} landmarks, got {len(rows)}", field="landmarks")
    return pts


def write_landmarks(path, points):
    with open(path, "w") as fh:
        for x, y in np.asarray(points, dtype=np.float64).tolist():
            fh.write(f"{x!r} {y!r}\n")


def write_obj(path, mesh):
    """Vertices (with ``r g b`` appended when colors exist) and 1-based faces."""
    with open(path, "w") as fh:
        if mesh.colors is None:
            for x, y, z in mesh.vertices.tolist():
                fh.write(f"v {x!r} {y!r} {z!r}\n")
        else:
            for (x, y, z), (r, g, b) in zip(mesh.vertices.tolist(), mesh.colors.tolist()):
                fh.write(f"v {x!r} {y!r} {z!r} {r!r} {g!r} {b!r}\n")
        for a, b, c in (mesh.triangles + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")


def read_obj(path):
    verts, colors, faces = [], [], []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    vals = [float(x) for x in parts[1:]]
                    if len(vals) not in (3, 6):
                        raise ValueError(f"vertex needs 3 or 6 values, got {len(vals)}")
                    verts.append(vals[:3])
                    colors.append(vals[3:])
                elif parts[0] == "f":
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                    # fan-triangulate polygons
                    faces.extend([idx[0], idx[k], idx[k + 1]] for k in range(1, len(idx) - 1))
            except ValueError as exc:
                raise FormatError(f"{path}:{n}: {exc}", field=f"line {n}") from exc
    if not verts:
        raise FormatError(f"{path}: no vertices", field="v")
    has_color = all(len(c) == 3 for c in colors)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    faces = np.where(faces < 0, faces + len(verts), faces - 1)
    try:
        return Mesh(np.asarray(verts), faces, np.asarray(colors) if has_color else None)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}", field="f") from exc


# ------------------------------------------------------------------ config

_WEIGHT_KEYS = {f.name for f in fields(LossWeights)}
_FIT_KEYS = {f.name for f in fields(FitConfig)} - {"weights"}
_INT_KEYS = {"landmark_iters", "photo_iters", "refresh_every", "history", "eyeglass_class", "dilate", "inpaint_iters"}
_EXTRA = {"eyeglass_class": 3, "dilate": 2, "inpaint_iters": 500, "inpaint_tol": 1e-7}


def read_config(path):
    """Flat ``key = value`` file; returns ``(FitConfig, extras)``.

    Blank lines and ``#`` comments are ignored. Unknown keys, duplicate keys
    and unparsable values raise :class:`FormatError` naming the key.
    """
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{n}: expected key=value, got {line!r}", field=f"line {n}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in _WEIGHT_KEYS | _FIT_KEYS | set(_EXTRA):
                raise FormatError(f"{path}:{n}: unknown key {key!r}", field=key)
            if key in values:
                raise FormatError(f"{path}:{n}: duplicate key {key!r}", field=key)
            try:
                values[key] = int(raw) if key in _INT_KEYS else float(raw)
            except ValueError:
                raise FormatError(f"{path}:{n}: bad value {raw!r} for {key!r}", field=key) from None
    try:
        weights = LossWeights(**{k: v for k, v in values.items() if k in _WEIGHT_KEYS})
        cfg = FitConfig(weights=weights, **{k: v for k, v in values.items() if k in _FIT_KEYS})
    except ValueError as exc:
        bad = next((k for k in values if k in str(exc)), None)
        raise FormatError(f"{path}: {exc}", field=bad) from exc
    extras = dict(_EXTRA)
    extras.update({k: v for k, v in values.items() if k in _EXTRA})
    return cfg, extras


def config_dict(cfg):
    out = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "weights"}
    out.update({f.name: getattr(cfg.weights, f.name) for f in fields(cfg.weights)})
    return out


# ------------------------------------------------------------------ params and reports

def write_params(path, params, **extra):
    doc = {"params": params.to_dict()}
    doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def read_params(path):
    """Read parameters from a params file or a fit report (both carry a ``params`` block)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})", field="json") from exc
    block = doc.get("params", doc) if isinstance(doc, dict) else None
    if not isinstance(block, dict):
        raise FormatError(f"{path}: no parameter block", field="params")
    try:
        return SceneParams.from_dict(block)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}", field="params") from exc
