"""Energy terms of the constrained model and the per-pixel subproblem.

The full model couples a depth map z and a gradient field theta through the
constraint grad z = theta:

    lam * data_fit(theta) + mu * prior(z) + nu * area(theta)

The augmented Lagrangian adds the multiplier pairing <psi, grad z - theta>
and the quadratic penalty beta/2 * ||grad z - theta||^2. All sums run in
pixel-index order with compensated summation so stopping decisions are
reproducible.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import d_map
from .grid import gradient
from .shading import as_albedo, as_lighting, pde_coefficients


@dataclass(frozen=True)
class Weights:
    lam: float = 1.0
    mu: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0 or self.nu < 0:
            raise ValueError("weights must be nonnegative")
        if self.lam == 0 and self.mu == 0 and self.nu == 0:
            raise ValueError("at least one weight must be positive")


@dataclass
class PriorData:
    """Guide depth on a sub-domain: values over the full grid, a boolean
    membership flag per pixel. Values outside the flagged region are ignored."""
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape or self.values.ndim != 1:
            raise ValueError("prior values and mask must be flat fields of equal length")
        if not np.isfinite(self.values[self.mask]).all():
            raise ValueError("prior values must be finite where flagged")

    @property
    def count(self):
        return int(self.mask.sum())


def shading_energy(theta, geom, albedo, lighting, image, dfloor=0.0):
    """Sum over channels and pixels of squared shading residuals."""
    image = np.atleast_2d(np.asarray(image, dtype=np.float64))
    a, b = pde_coefficients(theta, geom, albedo, lighting, dfloor)
    total = 0.0
    for c in range(image.shape[0]):
        r = a[c, :, 0] * theta[:, 0] + a[c, :, 1] * theta[:, 1] + b[c] - image[c]
        total += _kernels.ordered_sum(r * r)
    return total


def prior_energy(z, prior):
    """Sum of squared deviations from the guide depth on its sub-domain."""
    if prior is None or prior.count == 0:
        return 0.0
    diff = np.where(prior.mask, z - np.where(prior.mask, prior.values, 0.0), 0.0)
    return _kernels.ordered_sum(diff * diff)


def smoothness_energy(theta, geom, dfloor=0.0):
    """Total surface area: sum of the per-pixel area element."""
    return _kernels.ordered_sum(d_map(theta, geom, dfloor))


def model_energy(grid, z, theta, weights, geom, albedo, lighting, image,
                 prior=None, dfloor=0.0):
    """Weighted model objective at an arbitrary (z, theta) pair."""
    total = 0.0
    if weights.lam > 0:
        total += weights.lam * shading_energy(theta, geom, albedo, lighting,
                                              image, dfloor)
    if weights.mu > 0:
        total += weights.mu * prior_energy(z, prior)
    if weights.nu > 0:
        total += weights.nu * smoothness_energy(theta, geom, dfloor)
    return total


def lagrangian_value(grid, theta, z, psi, weights, beta, geom, albedo,
                     lighting, image, prior=None, dfloor=0.0):
    """Augmented Lagrangian: model energy plus pairing and penalty terms."""
    gz = gradient(grid, z)
    c = gz - theta
    pairing = _kernels.ordered_sum((psi * c).ravel())
    penalty = 0.5 * beta * _kernels.ordered_sum((c * c).ravel())
    return (model_energy(grid, z, theta, weights, geom, albedo, lighting,
                         image, prior, dfloor)
            + pairing + penalty)


@dataclass
class PixelContext:
    """Everything the gradient subproblem sees at one pixel."""
    g: np.ndarray            # (2,) gradient of the current depth
    psi: np.ndarray          # (2,) multiplier
    f: float
    xt: float
    yt: float
    albedo: np.ndarray       # (C,)
    lighting: np.ndarray     # (C, 9)
    intensity: np.ndarray    # (C,)
    lam: float = 1.0
    nu: float = 0.0
    beta: float = 1.0
    dfloor: float = 0.0


def pixel_objective(theta_p, ctx):
    """Value and analytic gradient of the per-pixel subproblem objective.

    The multiplier pairing enters as -psi . theta: the term psi . g is
    constant in theta and dropped, so summing pixel objectives differs from
    the full Lagrangian by mu * prior(z) + <psi, grad z>.
    """
    theta = np.asarray(theta_p, dtype=np.float64).reshape(1, 2)
    lighting = as_lighting(ctx.lighting)
    rho = np.asarray(ctx.albedo, dtype=np.float64).reshape(lighting.shape[0], 1)
    img = np.asarray(ctx.intensity, dtype=np.float64).reshape(lighting.shape[0], 1)
    val, grad, _, _ = _kernels.objective_batch_numpy(
        theta, np.asarray(ctx.g, dtype=np.float64).reshape(1, 2),
        np.asarray(ctx.psi, dtype=np.float64).reshape(1, 2),
        float(ctx.f), np.array([float(ctx.xt)]), np.array([float(ctx.yt)]),
        rho, lighting, img, ctx.lam, ctx.nu, ctx.beta, ctx.dfloor)
    return float(val[0]), grad[0]


def pixel_objective_batch(theta, g, psi, geom, albedo, lighting, image,
                          lam, nu, beta, dfloor=0.0, want_hessian=False):
    """Vectorized pixel objectives over a whole field; see pixel_objective."""
    lighting = as_lighting(lighting)
    image = np.atleast_2d(np.asarray(image, dtype=np.float64))
    rho = as_albedo(albedo, lighting.shape[0], theta.shape[0])
    return _kernels.objective_batch_numpy(theta, g, psi, geom.f, geom.xt,
                                          geom.yt, rho, lighting, image,
                                          lam, nu, beta, dfloor, want_hessian)
