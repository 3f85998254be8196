"""Two-stage estimation of the 239 scene parameters.

Stage 1 fits pose, identity and expression to 2D landmarks with damped
Gauss-Newton. Stage 2 refines all parameters against the photograph by
minimizing ``lambda_1 * pixel_l2 + lambda_2 * feature_cosine_loss`` plus
coefficient priors, using L-BFGS with backtracking. When landmarks are
given to stage 2, ``landmark_weight`` times their mean squared pixel error
is added; without it the pose drifts along directions the fixed-coverage
photometric term cannot see. The photometric
gradient holds the pixel-to-triangle assignment fixed between coverage
refreshes; barycentric weights still move with the vertices.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from morphfit.errors import FitError
from morphfit.geometry import (
    as_points,
    rotation_derivatives,
    rotation_from_euler,
    similarity_pose,
    vertex_normals,
    vertex_normals_vjp,
)
from morphfit.losses import GrayEmbedder, LossWeights, cosine_distance, cosine_distance_grad
from morphfit.params import N_PARAMS, SL_EXP, SL_ID, SL_POSE, SL_SH, SL_TEX, SceneParams, unit_light
from morphfit.renderer import barycentric_weights, barycentric_weights_vjp, visibility
from morphfit.shading import sh_basis, sh_basis_jacobian

log = logging.getLogger(__name__)


@dataclass
class FitConfig:
    landmark_iters: int = 100
    photo_iters: int = 300
    refresh_every: int = 25
    tol: float = 1e-10
    damping: float = 1e-3
    reg_id: float = 1e-3
    reg_exp: float = 1e-3
    reg_tex: float = 1e-3
    history: int = 10
    landmark_weight: float = 0.1
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for k in ("landmark_iters", "photo_iters", "refresh_every", "history"):
            if int(getattr(self, k)) < 1:
                raise ValueError(f"{k} must be a positive integer")
        for k in ("tol", "damping", "reg_id", "reg_exp", "reg_tex", "landmark_weight"):
            v = getattr(self, k)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{k} must be nonnegative, got {v}")


@dataclass
class FitTrace:
    landmark_objective: list = field(default_factory=list)
    photometric_objective: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def initial_params(model, gt_landmarks):
    """Zero coefficients, unit uniform light, pose aligning the mean-shape landmarks."""
    mean_lm = as_points(model.mean_shape)[model.landmark_indices]
    return SceneParams(gamma=unit_light(), pose=similarity_pose(mean_lm, gt_landmarks))


def landmark_rmse(model, params, gt):
    """Root mean squared Euclidean landmark distance in pixels."""
    r = _landmark_residuals(model, params.to_vector(), np.asarray(gt, dtype=np.float64))
    return float(np.sqrt(np.sum(r * r) / len(gt)))


# ------------------------------------------------------------------ stage 1

def _landmark_residuals(model, y, gt):
    lm = model.landmark_indices
    rows = (3 * lm[:, None] + np.arange(3)).reshape(-1)
    s = model.mean_shape[rows] + model.basis_id[rows] @ y[SL_ID] + model.basis_exp[rows] @ y[SL_EXP]
    pitch, yaw, roll, f, tx, ty = y[SL_POSE]
    r = rotation_from_euler(pitch, yaw, roll)
    xy = f * (s.reshape(-1, 3) @ r[:2].T) + (tx, ty)
    return (xy - gt).reshape(-1)


def _landmark_jacobian(model, y):
    """Jacobian of the landmark residuals w.r.t. [pose(6), alpha_id, beta_exp]."""
    lm = model.landmark_indices
    rows = (3 * lm[:, None] + np.arange(3)).reshape(-1)
    a = model.basis_id[rows].reshape(len(lm), 3, -1)
    b = model.basis_exp[rows].reshape(len(lm), 3, -1)
    s = (model.mean_shape[rows] + model.basis_id[rows] @ y[SL_ID] + model.basis_exp[rows] @ y[SL_EXP]).reshape(-1, 3)
    pitch, yaw, roll, f, _, _ = y[SL_POSE]
    r = rotation_from_euler(pitch, yaw, roll)
    dr = rotation_derivatives(pitch, yaw, roll)
    m = 2 * len(lm)
    j_pose = np.empty((m, 6))
    for k in range(3):
        j_pose[:, k] = f * (s @ dr[k][:2].T).reshape(-1)
    j_pose[:, 3] = (s @ r[:2].T).reshape(-1)
    j_pose[:, 4] = np.tile([1.0, 0.0], len(lm))
    j_pose[:, 5] = np.tile([0.0, 1.0], len(lm))
    j_id = f * np.einsum("ij,ljk->lik", r[:2], a).reshape(m, -1)
    j_exp = f * np.einsum("ij,ljk->lik", r[:2], b).reshape(m, -1)
    return np.hstack([j_pose, j_id, j_exp])


def landmark_fit(gt, model, init, cfg=None, trace=None):
    """Damped Gauss-Newton on landmark residuals over pose, identity and expression.

    Minimizes ``sum(r**2) + reg_id*|alpha|^2 + reg_exp*|beta|^2``. Only steps
    that lower this objective are accepted.
    """
    cfg = cfg or FitConfig()
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != (len(model.landmark_indices), 2):
        raise ValueError(f"expected landmarks of shape {(len(model.landmark_indices), 2)}, got {gt.shape}")
    y = init.to_vector().copy()
    free = np.r_[np.arange(N_PARAMS)[SL_POSE], np.arange(N_PARAMS)[SL_ID], np.arange(N_PARAMS)[SL_EXP]]
    reg = np.r_[np.zeros(6), np.full(80, cfg.reg_id), np.full(64, cfg.reg_exp)]

    def objective(v, it):
        r = _landmark_residuals(model, v, gt)
        if not np.all(np.isfinite(r)):
            raise FitError(f"non-finite landmark residual at iteration {it}")
        return r, float(r @ r + np.sum(reg * v[free] ** 2))

    r, phi = objective(y, 0)
    mu = cfg.damping
    if trace is not None:
        trace.append(phi)
    for it in range(1, cfg.landmark_iters + 1):
        j = _landmark_jacobian(model, y)
        g = j.T @ r + reg * y[free]
        if not np.any(g):
            break
        h = j.T @ j + np.diag(reg)
        d = np.maximum(np.diag(h), 1e-12 * max(np.max(np.diag(h)), 1e-300))
        accepted = False
        while mu < 1e12:
            try:
                step = np.linalg.solve(h + mu * np.diag(d), -g)
            except np.linalg.LinAlgError:
                mu *= 4.0
                continue
            trial = y.copy()
            trial[free] += step
            if trial[SL_POSE][3] > 0:
                r_new, phi_new = objective(trial, it)
                if phi_new < phi:
                    accepted = True
                    break
            mu *= 4.0
        if not accepted:
            break
        rel = (phi - phi_new) / max(phi, 1e-300)
        y, r, phi = trial, r_new, phi_new
        mu = max(mu / 3.0, 1e-12)
        if trace is not None:
            trace.append(phi)
        if rel < cfg.tol or phi < 1e-24:
            break
    return SceneParams.from_vector(y)


# ------------------------------------------------------------------ stage 2

class PhotometricProblem:
    """Composite photometric objective with a frozen pixel assignment.

    ``refresh(y)`` rasterizes the scene at ``y`` and records, for each
    covered pixel that ``photo_mask`` allows, the triangle drawn there.
    ``objective_and_gradient(y)`` then evaluates the loss and its exact
    gradient for that frozen assignment.
    """

    def __init__(self, model, photo, photo_mask=None, cfg=None, embedder=None, landmarks=None):
        self.model = model
        self.landmarks = None if landmarks is None else np.asarray(landmarks, dtype=np.float64)
        self.photo = np.asarray(photo, dtype=np.float64)
        if self.photo.ndim != 3 or self.photo.shape[2] != 3:
            raise ValueError(f"photo must be (H, W, 3), got {self.photo.shape}")
        h, w = self.photo.shape[:2]
        if photo_mask is None:
            photo_mask = np.ones((h, w), dtype=bool)
        self.photo_mask = np.asarray(photo_mask, dtype=bool)
        if self.photo_mask.shape != (h, w):
            raise ValueError(f"photo_mask shape {self.photo_mask.shape} does not match photo {(h, w)}")
        self.cfg = cfg or FitConfig()
        self.embedder = embedder or GrayEmbedder()
        self.tris = model.triangles
        self.rows = None

    @property
    def shape(self):
        return self.photo.shape

    def _geometry(self, y):
        s = self.model.mean_shape + self.model.basis_id @ y[SL_ID] + self.model.basis_exp @ y[SL_EXP]
        p = s.reshape(-1, 3)
        pitch, yaw, roll, f, tx, ty = y[SL_POSE]
        r = rotation_from_euler(pitch, yaw, roll)
        x = p @ r.T
        return p, r, x, f * x[:, :2] + (tx, ty)

    def refresh(self, y):
        y = np.asarray(y, dtype=np.float64)
        _, _, x, xy = self._geometry(y)
        h, w = self.photo.shape[:2]
        tri_id, _ = visibility(xy, x[:, 2], self.tris, w, h)
        valid = (tri_id >= 0) & self.photo_mask
        rows, cols = np.nonzero(valid)
        if rows.size == 0:
            raise FitError("empty effective mask: no covered pixel is marked valid")
        self.rows, self.cols = rows, cols
        self.tri_verts = self.tris[tri_id[rows, cols]]
        self.qx, self.qy = cols + 0.5, rows + 0.5
        self.target = self.photo[rows, cols]
        masked = np.zeros_like(self.photo)
        masked[rows, cols] = self.target
        self.target_embedding = self.embedder(masked)
        if not np.any(self.target_embedding):
            raise FitError("photo embedding is zero over the valid region")
        return valid

    def objective(self, y):
        return self.objective_and_gradient(y, gradient=False)[0]

    def objective_and_gradient(self, y, gradient=True):
        if self.rows is None:
            self.refresh(y)
        y = np.asarray(y, dtype=np.float64)
        cfg, lw, model = self.cfg, self.cfg.weights, self.model
        p, rot, x, xy = self._geometry(y)
        nrm = vertex_normals(x, self.tris)
        tex = (model.mean_texture + model.basis_tex @ y[SL_TEX]).reshape(-1, 3)
        ylm = sh_basis(nrm)
        gamma = y[SL_SH]
        rad = ylm @ gamma
        col = tex * rad[:, None]
        bw = barycentric_weights(xy, self.tri_verts, self.qx, self.qy)
        pix = np.einsum("kj,kjc->kc", bw, col[self.tri_verts])

        k = len(self.rows)
        diff = pix - self.target
        l1 = np.sqrt(np.sum(diff * diff) / k)
        rendered = np.zeros_like(self.photo)
        rendered[self.rows, self.cols] = pix
        emb = self.embedder(rendered)
        if lw.lambda_2 > 0 and not np.any(emb):
            raise FitError("rendered embedding is zero; cannot evaluate the cosine term")
        l2 = cosine_distance(self.target_embedding, emb) if lw.lambda_2 > 0 else 0.0
        a, b, t = y[SL_ID], y[SL_EXP], y[SL_TEX]
        prior = cfg.reg_id * a @ a + cfg.reg_exp * b @ b + cfg.reg_tex * t @ t
        value = lw.lambda_1 * l1 + lw.lambda_2 * l2 + prior
        use_lm = cfg.landmark_weight > 0 and self.landmarks is not None
        if use_lm:
            lm = model.landmark_indices
            lm_res = xy[lm] - self.landmarks
            value += cfg.landmark_weight * np.sum(lm_res * lm_res) / len(lm)
        value = float(value)
        if not np.isfinite(value):
            bad = np.flatnonzero(~np.isfinite(y))
            raise FitError(f"non-finite objective (non-finite parameter indices: {bad.tolist()})")
        if not gradient:
            return value, None

        g_pix = np.zeros_like(pix)
        if l1 > 0 and lw.lambda_1 > 0:
            g_pix += lw.lambda_1 * diff / (k * l1)
        if lw.lambda_2 > 0:
            g_emb = cosine_distance_grad(self.target_embedding, emb)
            g_img = self.embedder.vjp(self.photo.shape, g_emb)
            g_pix += lw.lambda_2 * g_img[self.rows, self.cols]

        g_col = np.zeros_like(col)
        for j in range(3):
            np.add.at(g_col, self.tri_verts[:, j], bw[:, j, None] * g_pix)
        g_bw = np.einsum("kc,kjc->kj", g_pix, col[self.tri_verts])
        g_xy = barycentric_weights_vjp(xy, self.tri_verts, self.qx, self.qy, g_bw)
        if use_lm:
            np.add.at(g_xy, lm, 2 * cfg.landmark_weight * lm_res / len(lm))

        g_tex = g_col * rad[:, None]
        g_rad = np.sum(g_col * tex, axis=1)
        g_gamma = ylm.T @ g_rad
        g_nrm = np.einsum("nm,nmk->nk", g_rad[:, None] * gamma[None, :], sh_basis_jacobian(nrm))

        f = y[SL_POSE][3]
        g_x = vertex_normals_vjp(x, self.tris, g_nrm)
        g_x[:, :2] += f * g_xy
        g_p = (g_x @ rot).reshape(-1)
        g_r = g_x.T @ p
        dr = rotation_derivatives(*y[SL_POSE][:3])

        grad = np.empty(N_PARAMS)
        grad[SL_ID] = model.basis_id.T @ g_p + 2 * cfg.reg_id * a
        grad[SL_EXP] = model.basis_exp.T @ g_p + 2 * cfg.reg_exp * b
        grad[SL_TEX] = model.basis_tex.T @ g_tex.reshape(-1) + 2 * cfg.reg_tex * t
        grad[SL_SH] = g_gamma
        grad[SL_POSE] = [
            np.sum(g_r * dr[0]),
            np.sum(g_r * dr[1]),
            np.sum(g_r * dr[2]),
            np.sum(g_xy * x[:, :2]),
            np.sum(g_xy[:, 0]),
            np.sum(g_xy[:, 1]),
        ]
        if not np.all(np.isfinite(grad)):
            raise FitError(f"non-finite gradient at indices {np.flatnonzero(~np.isfinite(grad)).tolist()}")
        return value, grad


def objective_and_gradient(params, problem):
    """Composite objective and its 239-vector gradient under the problem's frozen coverage."""
    y = params.to_vector() if isinstance(params, SceneParams) else np.asarray(params, dtype=np.float64)
    return problem.objective_and_gradient(y)


def parameter_scale(y):
    """Typical step size per parameter, used to precondition the descent."""
    s = np.empty(N_PARAMS)
    s[SL_ID] = 0.5
    s[SL_EXP] = 0.5
    s[SL_TEX] = 0.5
    s[SL_SH] = 0.2
    s[SL_POSE] = [0.05, 0.05, 0.05, 0.02 * abs(y[SL_POSE][3]), 1.0, 1.0]
    return s


def _lbfgs(fun, z0, iters, history, tol):
    """Minimize ``fun(z) -> (value, grad)`` with L-BFGS and Armijo backtracking.

    Returns the final point, its value and whether it stopped before
    exhausting ``iters``.
    """
    z = z0.copy()
    val, g = fun(z)
    s_hist, y_hist = [], []
    for _ in range(iters):
        q = g.copy()
        alphas = []
        for s, yv in zip(reversed(s_hist), reversed(y_hist)):
            rho = 1.0 / (yv @ s)
            a = rho * (s @ q)
            alphas.append((a, rho, s, yv))
            q -= a * yv
        if y_hist:
            q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        for a, rho, s, yv in reversed(alphas):
            q += s * (a - rho * (yv @ q))
        d = -q
        slope = g @ d
        if slope >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = -(g @ g)
        if slope == 0:
            return z, val, True
        step = 1.0 if s_hist else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300))
        while step > 1e-14:
            trial = z + step * d
            try:
                v_new, g_new = fun(trial)
            except FitError:
                v_new = np.inf
            if v_new <= val + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            return z, val, True
        sv, yv = trial - z, g_new - g
        if sv @ yv > 1e-12 * (yv @ yv):
            s_hist.append(sv)
            y_hist.append(yv)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
        rel = (val - v_new) / max(abs(val), 1e-300)
        z, val, g = trial, v_new, g_new
        if rel < tol:
            return z, val, True
    return z, val, False


def photometric_fit(photo, photo_mask, model, init, cfg=None, embedder=None, trace=None, landmarks=None):
    """Refine all 239 parameters against ``photo`` over covered, unmasked pixels.

    Runs L-BFGS in blocks of ``cfg.refresh_every`` iterations with the pixel
    assignment frozen; after each block the coverage is recomputed and the
    block is kept only if the refreshed objective did not increase.
    """
    cfg = cfg or FitConfig()
    problem = PhotometricProblem(model, photo, photo_mask, cfg, embedder, landmarks)
    y_best = init.to_vector().copy()
    problem.refresh(y_best)
    best = problem.objective(y_best)
    if trace is not None:
        trace.append(best)
    scale = parameter_scale(y_best)

    def scaled(z):
        v, g = problem.objective_and_gradient(z * scale)
        return v, g * scale

    done = 0
    while done < cfg.photo_iters:
        block = min(cfg.refresh_every, cfg.photo_iters - done)
        z, _, stalled = _lbfgs(scaled, y_best / scale, block, cfg.history, cfg.tol)
        done += block
        y_new = z * scale
        if y_new[SL_POSE][3] <= 0:
            break
        problem.refresh(y_new)
        val = problem.objective(y_new)
        if not val <= best:
            problem.refresh(y_best)
            break
        rel = (best - val) / max(best, 1e-300)
        y_best, best = y_new, val
        if trace is not None:
            trace.append(best)
        if rel < cfg.tol or stalled:
            break
    return SceneParams.from_vector(y_best)


def fit(photo, landmarks, model, photo_mask=None, cfg=None, init=None, embedder=None):
    """Landmark stage followed by photometric stage. Returns ``(params, FitTrace)``."""
    cfg = cfg or FitConfig()
    trace = FitTrace()
    init = init or initial_params(model, landmarks)
    t0 = time.perf_counter()
    stage1 = landmark_fit(landmarks, model, init, cfg, trace.landmark_objective)
    t1 = time.perf_counter()
    stage2 = photometric_fit(
        photo, photo_mask, model, stage1, cfg, embedder, trace.photometric_objective, landmarks
    )
    t2 = time.perf_counter()
    trace.timings = {"landmark_s": t1 - t0, "photometric_s": t2 - t1}
    log.info("landmark stage %.2fs, photometric stage %.2fs", t1 - t0, t2 - t1)
    return stage2, trace
