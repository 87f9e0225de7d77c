"""Alternating solver for the constrained shading model.

Each outer iteration performs, in order:

1. theta-update: per-pixel damped Gauss-Newton with Armijo backtracking on
   the gradient-field subproblem (embarrassingly parallel, hot kernel);
2. z-update: matrix-free conjugate gradient on the normal equations
   (2 mu 1_prior + beta grad^T grad) z = 2 mu 1_prior z0 + grad^T (beta theta - psi),
   warm-started at the current depth;
3. dual ascent psi += beta (grad z - theta);
4. automatic penalty scaling by primal/dual residual balancing.

The loop stops when the relative change of the model objective, evaluated
at the feasible pair (z, grad z), falls below the configured tolerance.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .camera import depth_from_z, normals_from_gradient, pixel_geometry
from .energy import Weights, model_energy, pixel_objective_batch
from .errors import ConfigError, DegenerateLinearization, SolverDiverged
from .grid import divergence, gradient
from .shading import as_albedo, as_lighting, pde_coefficients


@dataclass
class SolverConfig:
    lam: float = 1.0
    mu: float = 0.0
    nu: float = 0.0
    beta0: float = 1.0
    tol: float = 1e-3
    max_iter: int = 200
    newton_max_iter: int = 20
    newton_tol: float = 1e-9
    cg_tol: float = 1e-9
    cg_max_iter: int = 1000
    penalty_tau: float = 2.0
    penalty_ratio: float = 10.0
    gauge_fix: bool = True
    dfloor: float = 1e-8
    check_descent: bool = False

    def validate(self):
        if self.lam < 0 or self.mu < 0 or self.nu < 0:
            raise ConfigError("weights must be nonnegative")
        if self.lam == 0 and self.mu == 0 and self.nu == 0:
            raise ConfigError("at least one of lam, mu, nu must be positive")
        if self.beta0 <= 0:
            raise ConfigError("beta0 must be positive")
        if self.tol <= 0 or self.newton_tol <= 0 or self.cg_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.penalty_tau <= 1 or self.penalty_ratio <= 1:
            raise ConfigError("penalty_tau and penalty_ratio must exceed 1")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be nonnegative")

    def weights(self):
        return Weights(self.lam, self.mu, self.nu)


@dataclass
class SolverResult:
    """Final solver state plus per-iteration diagnostics."""
    z: np.ndarray
    depth: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    normals: np.ndarray
    beta: float
    iterations: int
    energy_history: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def conjugate_gradient(apply_op, rhs, x0, tol, max_iter):
    """Plain CG on a symmetric positive (semi-)definite operator.

    Returns (x, iterations, converged, relative_residual). The residual is
    measured against ||rhs||; an all-zero rhs switches to an absolute test.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    r = rhs - apply_op(x)
    ref = math.sqrt(float(rhs @ rhs))
    if ref == 0.0:
        ref = 1.0
    rs = float(r @ r)
    p = r.copy()
    it = 0
    while math.sqrt(rs) > tol * ref and it < max_iter:
        ap = apply_op(p)
        pap = float(p @ ap)
        if pap <= 0.0:
            break
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    resid = math.sqrt(rs) / ref
    return x, it, resid <= tol, resid


def default_init(grid, camera, prior=None):
    """Fronto-parallel initialization: the prior's median depth when a prior
    exists, zero otherwise."""
    if prior is not None and prior.count > 0:
        level = float(np.median(prior.values[prior.mask]))
    else:
        level = 0.0
    return np.full(grid.n, level)


def theta_update(grid, theta, z, psi, beta, geom, rho, lighting, image, config):
    """One pass of per-pixel subproblem solves; never increases any pixel
    objective. Returns (theta, mean inner iterations, floor hits)."""
    g = gradient(grid, z)
    if config.check_descent:
        before, _, _, _ = pixel_objective_batch(theta, g, psi, geom, rho,
                                                lighting, image, config.lam,
                                                config.nu, beta, config.dfloor)
    new_theta, inner, floored, failed = _kernels.theta_update(
        np.ascontiguousarray(theta), np.ascontiguousarray(g),
        np.ascontiguousarray(psi), geom.f,
        np.ascontiguousarray(geom.xt), np.ascontiguousarray(geom.yt),
        np.ascontiguousarray(rho), np.ascontiguousarray(lighting),
        np.ascontiguousarray(image),
        config.lam, config.nu, beta,
        config.newton_max_iter, config.newton_tol, config.dfloor)
    if failed.any():
        i = int(np.flatnonzero(failed)[0])
        pix = (int(grid.xs[i]), int(grid.ys[i]))
        raise SolverDiverged("non-finite pixel objective at pixel %r" % (pix,),
                             pixel=pix)
    if config.check_descent:
        after, _, _, _ = pixel_objective_batch(new_theta, g, psi, geom, rho,
                                               lighting, image, config.lam,
                                               config.nu, beta, config.dfloor)
        slack = 1e-9 * (1.0 + np.abs(before))
        if (after > before + slack).any():
            i = int(np.argmax(after - before))
            raise AssertionError("pixel objective increased at ordinal %d "
                                 "(%g -> %g)" % (i, before[i], after[i]))
    return new_theta, float(inner.mean()), int(floored.sum())


def z_update(grid, theta, psi, z, mu, beta, prior, config, gauge_mean=None):
    """Matrix-free CG solve of the depth normal equations, warm-started at z.

    With mu = 0 the system is singular along constants; when gauge fixing is
    on the mean over the domain is reset to gauge_mean after the solve.
    Returns (z, cg_iterations, converged, relative_residual).
    """
    if mu > 0 and (prior is None or prior.count == 0):
        raise ConfigError("mu > 0 requires prior data")
    if prior is not None and prior.count > 0:
        pmask = prior.mask.astype(np.float64)
        pvals = np.where(prior.mask, prior.values, 0.0)
    else:
        pmask = np.zeros(grid.n)
        pvals = np.zeros(grid.n)

    def apply_op(v):
        out = beta * -divergence(grid, gradient(grid, v))
        if mu > 0:
            out = out + 2.0 * mu * pmask * v
        return out

    rhs = -divergence(grid, beta * theta - psi)
    if mu > 0:
        rhs = rhs + 2.0 * mu * pmask * pvals
    znew, iters, ok, resid = conjugate_gradient(apply_op, rhs, z,
                                                config.cg_tol, config.cg_max_iter)
    if mu == 0 and config.gauge_fix and gauge_mean is not None:
        znew = znew - znew.mean() + gauge_mean
    return znew, iters, ok, resid


def dual_update(psi, beta, grad_z, theta):
    """Dual ascent on the coupling constraint."""
    return psi + beta * (grad_z - theta)


def penalty_update(beta, primal, dual, tau=2.0, ratio=10.0):
    """Residual balancing: grow beta when the primal residual dominates,
    shrink it when the dual residual dominates."""
    if primal > ratio * dual:
        return beta * tau
    if dual > ratio * primal:
        return beta / tau
    return beta


def _l2(a):
    return math.sqrt(float(np.dot(a.ravel(), a.ravel())))


def solve(grid, image, camera, albedo, lighting, prior=None, init_z=None,
          config=None, log=None):
    """Run the alternating solver.

    Modes by weights: (lam, mu, nu) = (1, 0, 0) is pure shape-from-shading;
    (0, 1, small) denoises a depth map against the area term; positive lam
    and mu jointly refine and complete a prior depth map. image is (C, n)
    over the grid (a (n,) array is treated as one channel), lighting (C, 9),
    albedo scalar or (C, n). init_z and the prior live in the solver domain
    (log-depth under perspective). log, when given, receives one text line
    per outer iteration.
    """
    config = config or SolverConfig()
    config.validate()
    if image is None:
        if config.lam > 0:
            raise ConfigError("lam > 0 requires an image")
        image = np.zeros((1, grid.n))
    image = np.atleast_2d(np.asarray(image, dtype=np.float64))
    if config.lam > 0:
        if lighting is None:
            raise ConfigError("lam > 0 requires lighting")
        lighting = as_lighting(lighting)
        if lighting.shape[0] != image.shape[0]:
            raise ConfigError("lighting channels do not match image")
    else:
        lighting = np.zeros((image.shape[0], 9))
    if config.mu > 0 and (prior is None or prior.count == 0):
        raise ConfigError("mu > 0 requires prior data")
    if image.shape[1] != grid.n:
        raise ConfigError("image does not match grid")
    geom = pixel_geometry(camera, grid)
    rho = as_albedo(albedo, image.shape[0], grid.n)
    weights = config.weights()

    z = np.array(init_z if init_z is not None else default_init(grid, camera, prior),
                 dtype=np.float64).copy()
    if z.shape != (grid.n,):
        raise ConfigError("initialization does not match grid")
    gauge_mean = float(z.mean())
    theta = gradient(grid, z)
    psi = np.zeros((grid.n, 2))
    beta = config.beta0

    energy = model_energy(grid, z, theta, weights, geom, rho, lighting, image,
                          prior, config.dfloor)
    history = [energy]
    diag = {"primal": [], "dual": [], "beta": [], "inner_mean": [],
            "cg_iters": [], "cg_converged": [], "floor_hits": 0,
            "log_lines": [], "stop_reason": "max_iter"}

    k = 0
    for k in range(1, config.max_iter + 1):
        theta, inner_mean, floor_hits = theta_update(
            grid, theta, z, psi, beta, geom, rho, lighting, image, config)
        diag["floor_hits"] += floor_hits
        z_prev = z
        z, cg_iters, cg_ok, _ = z_update(grid, theta, psi, z, config.mu, beta,
                                         prior, config, gauge_mean)
        gz = gradient(grid, z)
        psi = dual_update(psi, beta, gz, theta)
        primal = _l2(gz - theta)
        dual = beta * _l2(gradient(grid, z - z_prev))
        new_beta = penalty_update(beta, primal, dual,
                                  config.penalty_tau, config.penalty_ratio)
        energy = model_energy(grid, z, gz, weights, geom, rho, lighting,
                              image, prior, config.dfloor)
        if not math.isfinite(energy):
            raise SolverDiverged("model energy became non-finite at iteration %d" % k)
        history.append(energy)
        diag["primal"].append(primal)
        diag["dual"].append(dual)
        diag["beta"].append(beta)
        diag["inner_mean"].append(inner_mean)
        diag["cg_iters"].append(cg_iters)
        diag["cg_converged"].append(cg_ok)
        line = ("k=%d E=%.9e primal=%.3e dual=%.3e beta=%.3e inner=%.2f cg=%d"
                % (k, energy, primal, dual, beta, inner_mean, cg_iters))
        diag["log_lines"].append(line)
        if log is not None:
            log(line)
        beta = new_beta
        rel = abs(history[-1] - history[-2]) / max(history[-2], 1e-12)
        if rel < config.tol:
            diag["stop_reason"] = "energy"
            break

    theta_final = gradient(grid, z)
    return SolverResult(
        z=z,
        depth=depth_from_z(camera, z),
        theta=theta,
        psi=psi,
        normals=normals_from_gradient(theta_final, geom),
        beta=beta,
        iterations=k,
        energy_history=np.array(history),
        diagnostics=diag,
    )


def solve_fixed_point(grid, image, camera, albedo, lighting, init_z=None,
                      config=None, log=None):
    """Frozen-coefficient baseline: linearize the shading model at the
    current gradient, solve the resulting linear least-squares problem in
    the depth, and repeat. Kept as a reference; it is unstable and carries
    no convergence contract. Raises DegenerateLinearization when the frozen
    linear part vanishes identically (frontal directional lighting under an
    orthographic camera), since the frozen objective then ignores the depth.
    """
    config = config or SolverConfig()
    config.validate()
    image = np.atleast_2d(np.asarray(image, dtype=np.float64))
    lighting = as_lighting(lighting)
    geom = pixel_geometry(camera, grid)
    rho = as_albedo(albedo, image.shape[0], grid.n)
    weights = Weights(1.0, 0.0, 0.0)

    z = np.array(init_z if init_z is not None else default_init(grid, camera),
                 dtype=np.float64).copy()
    gauge_mean = float(z.mean())
    theta = gradient(grid, z)
    diag = {"cg_iters": [], "log_lines": [], "stop_reason": "max_iter",
            "diverged": False}
    history = [model_energy(grid, z, theta, weights, geom, rho, lighting,
                            image, dfloor=config.dfloor)]
    if config.max_iter == 0:
        return SolverResult(z=z, depth=depth_from_z(camera, z), theta=theta,
                            psi=np.zeros((grid.n, 2)),
                            normals=normals_from_gradient(theta, geom),
                            beta=0.0, iterations=0,
                            energy_history=np.array(history), diagnostics=diag)

    a, b = pde_coefficients(theta, geom, rho, lighting, config.dfloor)
    if np.abs(a).max() == 0.0:
        raise DegenerateLinearization(
            "frozen linear coefficients vanish identically; the frozen "
            "objective does not depend on the depth")

    k = 0
    for k in range(1, config.max_iter + 1):
        a, b = pde_coefficients(theta, geom, rho, lighting, config.dfloor)

        def apply_op(v):
            gv = gradient(grid, v)
            acc = np.zeros((grid.n, 2))
            for c in range(image.shape[0]):
                s = a[c, :, 0] * gv[:, 0] + a[c, :, 1] * gv[:, 1]
                acc[:, 0] += a[c, :, 0] * s
                acc[:, 1] += a[c, :, 1] * s
            return -divergence(grid, acc)

        rhs_field = np.zeros((grid.n, 2))
        for c in range(image.shape[0]):
            resid = image[c] - b[c]
            rhs_field[:, 0] += a[c, :, 0] * resid
            rhs_field[:, 1] += a[c, :, 1] * resid
        rhs = -divergence(grid, rhs_field)

        z_new, cg_iters, _, _ = conjugate_gradient(apply_op, rhs, z,
                                                   config.cg_tol,
                                                   config.cg_max_iter)
        if config.gauge_fix:
            z_new = z_new - z_new.mean() + gauge_mean
        if not np.isfinite(z_new).all():
            diag["diverged"] = True
            diag["stop_reason"] = "diverged"
            break
        z = z_new
        theta = gradient(grid, z)
        energy = model_energy(grid, z, theta, weights, geom, rho, lighting,
                              image, dfloor=config.dfloor)
        if not math.isfinite(energy):
            diag["diverged"] = True
            diag["stop_reason"] = "diverged"
            break
        history.append(energy)
        diag["cg_iters"].append(cg_iters)
        line = "k=%d E=%.9e cg=%d" % (k, energy, cg_iters)
        diag["log_lines"].append(line)
        if log is not None:
            log(line)

    return SolverResult(z=z, depth=depth_from_z(camera, z), theta=theta,
                        psi=np.zeros((grid.n, 2)),
                        normals=normals_from_gradient(theta, geom),
                        beta=0.0, iterations=k,
                        energy_history=np.array(history), diagnostics=diag)
