"""``morphfit`` command line.

Exit codes: 0 success, 2 I/O error, 3 format or validation error,
4 numerical failure.
"""

import argparse
import json
import logging
import sys
import time

import numpy as np

from morphfit import io
from morphfit.errors import FitError, FormatError
from morphfit.evaluation import Mesh, error_heatmap, percentile_error, point_to_mesh_distances, procrustes_align
from morphfit.fitter import FitConfig, fit, landmark_rmse
from morphfit.model_core import ShapeCoeffs, TextureCoeffs, assemble_shape, assemble_texture, load_model, save_model, synth_model
from morphfit.occlusion import DEFAULT_DILATE, EYEGLASS_CLASS, extract_class_mask, smoothed_tv_energy, tv_inpaint
from morphfit.renderer import render_scene

log = logging.getLogger("morphfit")

EXIT_IO = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4


def cmd_model_info(args):
    print(load_model(args.model).summary())


def cmd_synth(args):
    model = synth_model(args.seed, args.vertices)
    save_model(model, args.out)
    log.info("wrote %s (%d vertices, %d triangles)", args.out, model.n_vertices, model.n_triangles)


def cmd_mask(args):
    labels = io.read_parsing_map(args.parsing)
    mask = extract_class_mask(labels, args.class_id, args.dilate)
    if not mask.any():
        log.warning("class %d not present in %s; writing an empty mask", args.class_id, args.parsing)
    io.write_mask(args.out, mask)
    log.info("mask pixels: %d", int(mask.sum()))
    print(f"mask pixels: {int(mask.sum())}")


def cmd_inpaint(args):
    image = io.read_image(args.image)
    mask = io.read_mask(args.mask)
    if mask.shape != image.shape[:2]:
        raise FormatError(f"mask is {mask.shape[1]}x{mask.shape[0]} but image is "
                          f"{image.shape[1]}x{image.shape[0]}", field="mask")
    energies = []
    out = tv_inpaint(image, mask, iters=args.iters, tol=args.tol, energies=energies)
    io.write_image(args.out, out)
    print(f"initial TV energy: {smoothed_tv_energy(image):.9g}")
    print(f"filled start energy: {energies[0]:.9g}")
    print(f"final TV energy: {energies[-1]:.9g}")
    print(f"iterations: {len(energies) - 1}")
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("\n".join(f"{e!r}" for e in energies) + "\n")


def _mesh_for(model, params):
    shape = assemble_shape(model, ShapeCoeffs(params.alpha_id, params.beta_exp))
    albedo = assemble_texture(model, TextureCoeffs(params.beta_tex))
    return Mesh(shape.reshape(-1, 3), model.triangles, np.clip(albedo.reshape(-1, 3), 0.0, 1.0))


def cmd_fit(args):
    photo = io.read_image(args.image)
    landmarks = io.read_landmarks(args.landmarks)
    model = load_model(args.model)
    if args.config:
        cfg, _ = io.read_config(args.config)
    else:
        cfg = FitConfig()
    valid = np.ones(photo.shape[:2], dtype=bool)
    if args.mask:
        excluded = io.read_mask(args.mask)
        if excluded.shape != valid.shape:
            raise FormatError("mask and image sizes differ", field="mask")
        valid &= ~excluded
    t0 = time.perf_counter()
    params, trace = fit(photo, landmarks, model, valid, cfg)
    elapsed = time.perf_counter() - t0
    rmse = landmark_rmse(model, params, landmarks)

    h, w = photo.shape[:2]
    rendered, coverage = render_scene(model, params, w, h)
    overlay = photo.copy()
    overlay[coverage] = rendered[coverage]
    io.write_image(f"{args.out_prefix}_overlay.png", overlay)
    io.write_obj(f"{args.out_prefix}_mesh.obj", _mesh_for(model, params))
    io.write_params(
        f"{args.out_prefix}_report.json",
        params,
        landmark_rmse=rmse,
        landmark_objective=trace.landmark_objective,
        photometric_objective=trace.photometric_objective,
        timings=dict(trace.timings, total_s=elapsed),
        config=io.config_dict(cfg),
    )
    print(f"landmark RMSE: {rmse:.6g} px")
    print(f"photometric objective: {trace.photometric_objective[0]:.6g} -> {trace.photometric_objective[-1]:.6g}")


def cmd_render(args):
    model = load_model(args.model)
    params = io.read_params(args.params)
    image, coverage = render_scene(model, params, args.width, args.height)
    io.write_image(args.out, image)
    if args.coverage_out:
        io.write_mask(args.coverage_out, coverage)
    print(f"covered pixels: {int(coverage.sum())}")


def cmd_eval(args):
    fitted = io.read_obj(args.fit_obj)
    gt = io.read_obj(args.gt_obj)
    points = fitted.vertices
    if args.align:
        if len(points) != len(gt.vertices):
            raise FormatError("--align needs meshes with corresponding vertices", field="vertices")
        points = procrustes_align(points, gt.vertices)
    d = point_to_mesh_distances(points, gt)
    summary = percentile_error(d, args.q)
    for line in summary.lines():
        print(line)
    if args.heatmap:
        io.write_image(args.heatmap, error_heatmap(Mesh(points, fitted.triangles), d))


def build_parser():
    p = argparse.ArgumentParser(prog="morphfit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("model-info", help="print model dimensions and checksums")
    s.add_argument("model")
    s.set_defaults(func=cmd_model_info)

    s = sub.add_parser("synth", help="write a synthetic morphable model")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--vertices", type=int, default=300)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mask", help="extract a class mask from a parsing map")
    s.add_argument("parsing")
    s.add_argument("--class-id", type=int, default=EYEGLASS_CLASS)
    s.add_argument("--dilate", type=int, default=DEFAULT_DILATE)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("inpaint", help="fill masked pixels by total-variation descent")
    s.add_argument("image")
    s.add_argument("mask")
    s.add_argument("--out", required=True)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--tol", type=float, default=1e-7)
    s.add_argument("--trace", help="write the energy trace, one value per line")
    s.set_defaults(func=cmd_inpaint)

    s = sub.add_parser("fit", help="fit the model to a photo and landmarks")
    s.add_argument("image")
    s.add_argument("landmarks")
    s.add_argument("model")
    s.add_argument("--mask", help="PNG of pixels to exclude from the photometric loss (white = excluded)")
    s.add_argument("--config", help="key=value fit configuration")
    s.add_argument("--out-prefix", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("render", help="render a parameter file")
    s.add_argument("model")
    s.add_argument("params")
    s.add_argument("--width", type=int, default=256)
    s.add_argument("--height", type=int, default=256)
    s.add_argument("--out", required=True)
    s.add_argument("--coverage-out")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="point-to-surface error between two OBJ meshes")
    s.add_argument("fit_obj")
    s.add_argument("gt_obj")
    s.add_argument("--heatmap")
    s.add_argument("--q", type=float, default=0.9)
    s.add_argument("--align", action="store_true", help="rigidly align corresponding vertices first")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        name = getattr(exc, "filename", None)
        print(f"error: {exc.strerror or exc}" + (f": {name}" if name else ""), file=sys.stderr)
        return EXIT_IO
    except FitError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    return 0


if __name__ == "__main__":
    sys.exit(main())
