"""Synthetic scenes shared by the fitting tests."""

from dataclasses import dataclass

import numpy as np

from morphfit import SceneParams, synth_model
from morphfit.geometry import select_landmarks
from morphfit.model_core import ShapeCoeffs, assemble_shape
from morphfit.params import SL_ID, SL_POSE, UNIT_LIGHT0, unit_light
from morphfit.renderer import render_scene, scene_vertices


@dataclass
class Scene:
    model: object
    truth: SceneParams
    photo: np.ndarray
    coverage: np.ndarray
    landmarks: np.ndarray
    rng: np.random.Generator


def random_params(rng, size, coef=0.5):
    gamma = np.zeros(9)
    gamma[0] = 0.8 * UNIT_LIGHT0
    gamma[1:4] = rng.normal(0, 0.25, 3)
    gamma[4:] = rng.normal(0, 0.1, 5)
    pose = [rng.normal(0, 0.15), rng.normal(0, 0.2), rng.normal(0, 0.1),
            0.36 * size, size / 2 + rng.normal(0, 3), size / 2 + rng.normal(0, 3)]
    return SceneParams(rng.normal(0, coef, 80), rng.normal(0, coef, 64), rng.normal(0, 0.3, 80), gamma, pose)


def make_scene(seed, size=256, n_vertices=300):
    """Scene rendered from random parameters whose vertex colors stay inside [0, 1]."""
    model = synth_model(seed, n_vertices)
    rng = np.random.default_rng(100 + seed)
    while True:
        truth = random_params(rng, size)
        _, xy, _, colors = scene_vertices(model, truth)
        if colors.min() >= 0 and colors.max() <= 1:
            break
    photo, coverage = render_scene(model, truth, size, size)
    return Scene(model, truth, photo, coverage, select_landmarks(xy, model.landmark_indices), rng)


def perturbed_init(scene, coef=0.5, angle=0.1):
    """Truth with shape coefficients and angles jittered, texture zero, unit light."""
    y = scene.truth.to_vector().copy()
    y[: SL_ID.stop + 64] += scene.rng.uniform(-coef, coef, 144)
    y[SL_POSE.start:SL_POSE.start + 3] += scene.rng.uniform(-angle, angle, 3)
    init = SceneParams.from_vector(y)
    init.beta_tex[:] = 0.0
    init.gamma[:] = unit_light()
    return init


def shape_error_fraction(model, fitted, truth):
    """Mean per-vertex distance between fitted and true shapes over the mean-shape bbox diagonal."""
    mean = model.mean_shape.reshape(-1, 3)
    diag = np.linalg.norm(mean.max(0) - mean.min(0))
    a = assemble_shape(model, ShapeCoeffs(fitted.alpha_id, fitted.beta_exp)).reshape(-1, 3)
    b = assemble_shape(model, ShapeCoeffs(truth.alpha_id, truth.beta_exp)).reshape(-1, 3)
    return float(np.linalg.norm(a - b, axis=1).mean() / diag)


def shape_param_error(fitted, truth):
    return float(np.linalg.norm(np.r_[fitted.alpha_id - truth.alpha_id, fitted.beta_exp - truth.beta_exp]))


def gamma_cosine(fitted, truth):
    a, b = fitted.gamma, truth.gamma
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def eyeglass_band(coverage, fraction=0.2, centre=0.4):
    """Horizontal band of rows through the face covering ``fraction`` of the covered pixels."""
    counts = coverage.sum(axis=1)
    rows = np.flatnonzero(counts)
    lo = hi = int(rows.min() + centre * (rows.max() - rows.min()))
    total = counts[lo]
    while total < fraction * coverage.sum():
        if counts[lo - 1] >= counts[hi + 1]:
            lo -= 1
            total += counts[lo]
        else:
            hi += 1
            total += counts[hi]
    band = np.zeros_like(coverage)
    band[lo:hi + 1] = True
    return band & coverage


def gradient_check(seed, size=64, n_vertices=300):
    """Max relative error between analytic and central-difference gradients of the full objective.

    The scene photo comes from random truth parameters; the gradient is taken
    at a second random parameter draw with the landmark anchor active.
    Components where both gradients are below 1e-8 in magnitude are skipped.
    """
    from morphfit.fitter import FitConfig, PhotometricProblem

    scene = make_scene(seed, size, n_vertices)
    y = random_params(scene.rng, size).to_vector()
    problem = PhotometricProblem(scene.model, scene.photo, None, FitConfig(), landmarks=scene.landmarks)
    problem.refresh(y)
    _, g = problem.objective_and_gradient(y)
    fd = np.empty_like(g)
    for i in range(g.size):
        h = 1e-5 * max(1.0, abs(y[i]))
        e = np.zeros_like(y)
        e[i] = h
        fd[i] = (problem.objective(y + e) - problem.objective(y - e)) / (2 * h)
    big = np.maximum(np.abs(g), np.abs(fd))
    keep = big >= 1e-8
    return float(np.max(np.abs(g - fd)[keep] / big[keep])), int(keep.sum())
