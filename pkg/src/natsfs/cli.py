"""Command-line front end.

Subcommands: gen, render, solve, refine, estimate-light, eval, fixed-point.
Exit codes: 0 success, 1 usage error, 2 solver or format error.
"""

import argparse
import os
import sys

import numpy as np

from . import io as nio
from .camera import (CameraModel, depth_from_z, normals_from_gradient,
                     pixel_geometry, z_from_depth)
from .energy import PriorData
from .errors import NatsfsError
from .grid import build_domain, gradient
from .metrics import make_report
from .shading import estimate_lighting, render
from .solver import SolverConfig, solve, solve_fixed_point
from .synth import (DEFAULT_BLUR_SIGMA, add_gaussian_noise, make_scene,
                    smooth_initialization)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_camera_flags(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--camera", choices=["ortho", "persp"],
                   help="camera model (default ortho)")
    p.add_argument("--focal", type=float, help="focal length (persp only)")
    p.add_argument("--cx", type=float, help="principal point x (persp)")
    p.add_argument("--cy", type=float, help="principal point y (persp)")


def _add_weight_flags(p, lam, mu, nu):
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="shading weight (default %g)" % lam)
    p.add_argument("--mu", type=float, default=None,
                   help="prior weight (default %g)" % mu)
    p.add_argument("--nu", type=float, default=None,
                   help="smoothness weight (default %g)" % nu)
    p.add_argument("--beta0", type=float, default=None,
                   help="initial penalty (default 1)")
    p.add_argument("--tol", type=float, default=None,
                   help="relative energy stopping tolerance (default 1e-3)")
    p.add_argument("--max-iter", type=int, default=None,
                   help="outer iteration cap (default 200)")
    p.add_argument("--log", help="write per-iteration diagnostics to this file")


def build_parser():
    parser = _Parser(prog="natsfs",
                     description="Shape-from-shading under natural illumination")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene bundle")
    p.add_argument("--surface", choices=["peaks", "sphere"], default="peaks")
    p.add_argument("--light", choices=["l1", "l2", "l3"], default="l2")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--amp", type=float, default=None,
                   help="surface amplitude (peaks only; default size/64)")
    p.add_argument("--sigma-i", type=float, default=0.0,
                   help="image noise as a fraction of the max clean intensity")
    p.add_argument("--sigma-z", type=float, default=0.0,
                   help="prior depth noise as a fraction of the max depth")
    p.add_argument("--blur", type=float, default=DEFAULT_BLUR_SIGMA,
                   help="Gaussian sigma for the smoothed initialization")
    p.add_argument("--holes", type=float, default=0.0,
                   help="fraction of prior pixels dropped (depth completion)")
    p.add_argument("--seed", type=int, default=0)
    _add_camera_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("render", help="render an image from a depth map")
    p.add_argument("--depth", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--light", required=True)
    _add_camera_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("solve", help="pure shape-from-shading")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--light", required=True)
    p.add_argument("--init", help="initial depth map (metric)")
    p.add_argument("--prior", help="optional prior depth map (metric, NaN = missing)")
    _add_camera_flags(p)
    _add_weight_flags(p, 1.0, 0.0, 0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve, default_weights=(1.0, 0.0, 0.0),
                   fixed_point=False)

    p = sub.add_parser("refine", help="joint depth refinement and completion")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--light", required=True)
    p.add_argument("--init", help="initial depth map (metric; defaults to prior)")
    p.add_argument("--prior", required=True,
                   help="prior depth map (metric, NaN = missing)")
    _add_camera_flags(p)
    _add_weight_flags(p, 1.0, 1.0, 5e-5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve, default_weights=(1.0, 1.0, 5e-5),
                   fixed_point=False)

    p = sub.add_parser("estimate-light",
                       help="least-squares lighting from a gross depth map")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--depth", required=True, help="gross depth map (metric)")
    _add_camera_flags(p)
    p.add_argument("--out", required=True, help="output lighting file")
    p.set_defaults(func=cmd_estimate_light)

    p = sub.add_parser("eval", help="evaluate an estimated depth map")
    p.add_argument("--est", required=True, help="estimated depth map")
    p.add_argument("--gt", help="ground-truth depth map (enables normal MAE)")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--light", required=True)
    _add_camera_flags(p)
    p.add_argument("--porcelain", action="store_true",
                   help="machine-readable key=value output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fixed-point",
                       help="frozen-coefficient baseline solver (unstable)")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--light", required=True)
    p.add_argument("--init", help="initial depth map (metric)")
    _add_camera_flags(p)
    _add_weight_flags(p, 1.0, 0.0, 0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve, default_weights=(1.0, 0.0, 0.0),
                   fixed_point=True)

    return parser


def _camera_and_config(args):
    """Camera and solver config: file values first, flags override."""
    if getattr(args, "config", None):
        config, camera = nio.parse_config(args.config)
    else:
        config, camera = SolverConfig(), CameraModel.orthographic()
    kind = getattr(args, "camera", None)
    focal = getattr(args, "focal", None)
    cx = getattr(args, "cx", None)
    cy = getattr(args, "cy", None)
    if kind == "ortho":
        camera = CameraModel.orthographic()
    elif kind == "persp" or (camera.is_perspective and focal is not None):
        focal = focal if focal is not None else camera.focal
        if focal is None or focal <= 0:
            raise _UsageError("perspective camera requires --focal > 0")
        camera = CameraModel.perspective(
            focal,
            cx if cx is not None else camera.cx,
            cy if cy is not None else camera.cy)
    elif camera.is_perspective and (cx is not None or cy is not None):
        camera = CameraModel.perspective(
            camera.focal,
            cx if cx is not None else camera.cx,
            cy if cy is not None else camera.cy)
    return camera, config


def _apply_weight_flags(args, config):
    lam, mu, nu = args.default_weights
    if not getattr(args, "config", None):
        config.lam, config.mu, config.nu = lam, mu, nu
    for attr, key in (("lam", "lam"), ("mu", "mu"), ("nu", "nu"),
                      ("beta0", "beta0"), ("tol", "tol"),
                      ("max_iter", "max_iter")):
        val = getattr(args, attr, None)
        if val is not None:
            setattr(config, key, val)
    return config


def _load_field_image(grid, path):
    raster = nio.read_image(path)
    if raster.shape[1:] != (grid.height, grid.width):
        raise nio.FormatError("image size does not match mask")
    return np.stack([grid.from_raster(raster[c]) for c in range(raster.shape[0])])


def _load_depth_field(grid, camera, path):
    raster, _ = nio.read_depth(path)
    if raster.shape != (grid.height, grid.width):
        raise nio.FormatError("depth size does not match mask")
    return z_from_depth(camera, grid.from_raster(raster))


def cmd_gen(args):
    camera, _ = _camera_and_config(args)
    scene = make_scene(surface=args.surface, n=args.size, lighting=args.light,
                       camera=camera, amplitude=args.amp, seed=args.seed)
    grid = scene.grid
    image = scene.image
    if args.sigma_i > 0:
        sigma = args.sigma_i * float(np.abs(scene.image).max())
        image = add_gaussian_noise(scene.image, sigma, args.seed)
    prior_depth = scene.depth_true
    if args.sigma_z > 0:
        sigma = args.sigma_z * float(np.abs(scene.depth_true).max())
        prior_depth = add_gaussian_noise(scene.depth_true, sigma, args.seed + 1)
        prior_depth = np.maximum(prior_depth, 1e-6) if camera.is_perspective else prior_depth
    if args.holes > 0:
        rng = np.random.default_rng(args.seed + 2)
        drop = rng.random(grid.n) < args.holes
        prior_depth = np.where(drop, np.nan, prior_depth)
    init_z = smooth_initialization(grid, scene.z_true, args.blur)

    os.makedirs(args.out, exist_ok=True)

    def p(name):
        return os.path.join(args.out, name)

    nio.write_mask(p("mask.pgm"), grid.mask)
    nio.write_image(p("image.pfm"), np.stack(
        [grid.to_raster(image[c], fill=0.0) for c in range(image.shape[0])]))
    nio.write_depth(p("depth_gt.pfm"), grid.to_raster(scene.depth_true))
    nio.write_depth(p("prior.pfm"), grid.to_raster(prior_depth))
    nio.write_depth(p("init.pfm"), grid.to_raster(depth_from_z(camera, init_z)))
    nio.write_lighting(p("light.txt"), scene.lighting)
    pairs = ["camera=%s" % ("persp" if camera.is_perspective else "ortho")]
    if camera.is_perspective:
        pairs += ["focal=%.17g" % camera.focal, "cx=%.17g" % camera.cx,
                  "cy=%.17g" % camera.cy]
    pairs += ["seed=%d" % args.seed, "surface=%s" % args.surface,
              "light=%s" % args.light, "size=%d" % args.size,
              "sigma_i=%.17g" % args.sigma_i, "sigma_z=%.17g" % args.sigma_z,
              "blur=%.17g" % args.blur, "holes=%.17g" % args.holes]
    if args.amp is not None:
        pairs.append("amp=%.17g" % args.amp)
    nio._atomic_write(p("scene.cfg"), ("\n".join(pairs) + "\n").encode("ascii"))
    print("wrote scene bundle to %s (%d pixels inside)" % (args.out, grid.n))
    return 0


def cmd_render(args):
    camera, _ = _camera_and_config(args)
    grid = build_domain(nio.read_mask(args.mask))
    lighting = nio.read_lighting(args.light)
    z = _load_depth_field(grid, camera, args.depth)
    geom = pixel_geometry(camera, grid)
    image = render(normals_from_gradient(gradient(grid, z), geom), 1.0, lighting)
    nio.write_image(args.out, np.stack(
        [grid.to_raster(image[c], fill=0.0) for c in range(image.shape[0])]))
    return 0


def cmd_solve(args):
    camera, config = _camera_and_config(args)
    config = _apply_weight_flags(args, config)
    grid = build_domain(nio.read_mask(args.mask))
    lighting = nio.read_lighting(args.light)
    image = _load_field_image(grid, args.image)

    prior = None
    if getattr(args, "prior", None):
        values = _load_depth_field(grid, camera, args.prior)
        mask = np.isfinite(values)
        prior = PriorData(np.where(mask, values, 0.0), mask)

    init_z = None
    if args.init:
        init_z = _load_depth_field(grid, camera, args.init)
        if not np.isfinite(init_z).all():
            raise nio.FormatError("initialization contains missing pixels")
    elif prior is None and getattr(args, "fixed_point", False) is False \
            and config.mu > 0:
        raise _UsageError("--prior is required when mu > 0")

    log_lines = []
    log = log_lines.append if args.log else None
    if args.fixed_point:
        result = solve_fixed_point(grid, image, camera, 1.0, lighting,
                                   init_z=init_z, config=config, log=log)
    else:
        result = solve(grid, image, camera, 1.0, lighting, prior=prior,
                       init_z=init_z, config=config, log=log)
    nio.write_depth(args.out, grid.to_raster(result.depth))
    if args.log:
        nio._atomic_write(args.log, ("\n".join(log_lines) + "\n").encode("ascii"))
    print("%s: %d iterations, final energy %.6e, stop=%s"
          % (args.out, result.iterations, result.energy_history[-1],
             result.diagnostics.get("stop_reason", "?")))
    return 0


def cmd_estimate_light(args):
    camera, _ = _camera_and_config(args)
    grid = build_domain(nio.read_mask(args.mask))
    image = _load_field_image(grid, args.image)
    z = _load_depth_field(grid, camera, args.depth)
    geom = pixel_geometry(camera, grid)
    normals = normals_from_gradient(gradient(grid, z), geom)
    est = estimate_lighting(image, normals, 1.0)
    nio.write_lighting(args.out, est.lighting)
    print("estimated %d-channel lighting (condition number %.3e)"
          % (est.lighting.shape[0], est.condition_number))
    return 0


def cmd_eval(args):
    camera, _ = _camera_and_config(args)
    grid = build_domain(nio.read_mask(args.mask))
    lighting = nio.read_lighting(args.light)
    image = _load_field_image(grid, args.image)
    geom = pixel_geometry(camera, grid)
    z_est = _load_depth_field(grid, camera, args.est)
    n_est = normals_from_gradient(gradient(grid, z_est), geom)
    reproj = render(n_est, 1.0, lighting)
    n_true = None
    if args.gt:
        z_true = _load_depth_field(grid, camera, args.gt)
        n_true = normals_from_gradient(gradient(grid, z_true), geom)
    report = make_report(image, reproj, n_est if n_true is not None else None,
                         n_true)
    print(report.format_porcelain() if args.porcelain else report.format_text())
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return 1
    except NatsfsError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
