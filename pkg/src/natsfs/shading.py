"""Second-order spherical-harmonic Lambertian shading.

Lighting is a (C, 9) array of per-channel coefficients acting on the basis

    [n1, n2, n3, 1, n1 n2, n1 n3, n2 n3, n1^2 - n2^2, 3 n3^2 - 1]

of a unit normal n. Images and albedos are (C, n) arrays over the inside
pixels of a grid; a scalar albedo means a uniform (white if 1.0) surface.
Rendered intensities follow the linear model and are never clamped.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .camera import d_map
from .errors import InsufficientData, NotUnitNormal


def as_lighting(lighting):
    lighting = np.atleast_2d(np.asarray(lighting, dtype=np.float64))
    if lighting.ndim != 2 or lighting.shape[1] != 9:
        raise ValueError("lighting must have shape (C, 9)")
    if not np.isfinite(lighting).all():
        raise ValueError("lighting coefficients must be finite")
    return lighting


def as_albedo(albedo, channels, n):
    """Broadcast a scalar or per-channel albedo to a (C, n) array."""
    if np.isscalar(albedo):
        return np.full((channels, n), float(albedo))
    albedo = np.asarray(albedo, dtype=np.float64)
    if albedo.shape == (n,):
        albedo = np.tile(albedo, (channels, 1))
    if albedo.shape != (channels, n):
        raise ValueError("albedo shape does not match (channels, n)")
    if (albedo < 0).any() or not np.isfinite(albedo).all():
        raise ValueError("albedo must be finite and nonnegative")
    return albedo


def sh_basis(normal):
    """Second-order harmonic basis of one unit normal, as a 9-vector."""
    normal = np.asarray(normal, dtype=np.float64)
    if abs(normal @ normal - 1.0) > 2e-9:
        raise NotUnitNormal("basis requires a unit normal, got |n| = %g"
                            % np.linalg.norm(normal))
    n1, n2, n3 = normal
    return np.array([n1, n2, n3, 1.0, n1 * n2, n1 * n3, n2 * n3,
                     n1 * n1 - n2 * n2, 3.0 * n3 * n3 - 1.0])


def sh_basis_field(normals):
    """Basis rows (n, 9) for a field of unit normals."""
    normals = np.asarray(normals, dtype=np.float64)
    nrm2 = (normals * normals).sum(axis=1)
    if np.abs(nrm2 - 1.0).max() > 2e-9:
        raise NotUnitNormal("normal field is not unit length")
    n1, n2, n3 = normals[:, 0], normals[:, 1], normals[:, 2]
    return np.stack([n1, n2, n3, np.ones_like(n1), n1 * n2, n1 * n3, n2 * n3,
                     n1 * n1 - n2 * n2, 3.0 * n3 * n3 - 1.0], axis=1)


def render(normals, albedo, lighting):
    """Per-channel intensity rho_c * (l_c . basis(n)); output not clamped."""
    lighting = as_lighting(lighting)
    basis = sh_basis_field(normals)
    albedo = as_albedo(albedo, lighting.shape[0], basis.shape[0])
    return albedo * (lighting @ basis.T)


def pde_coefficients(theta, geom, albedo, lighting, dfloor=0.0):
    """Linear-in-gradient form of the shading model.

    Returns (a, b) with a (C, n, 2) and b (C, n) such that, per pixel and
    channel, a . theta + b equals render() of the normal induced by theta.
    """
    lighting = as_lighting(lighting)
    n = theta.shape[0]
    albedo = as_albedo(albedo, lighting.shape[0], n)
    p = theta[:, 0]
    q = theta[:, 1]
    f = geom.f
    w = -1.0 - geom.xt * p - geom.yt * q
    d = d_map(theta, geom, dfloor)
    inv = 1.0 / d
    inv2 = inv * inv
    a = np.empty((lighting.shape[0], n, 2))
    b = np.empty((lighting.shape[0], n))
    for c in range(lighting.shape[0]):
        l = lighting[c]
        rho = albedo[c]
        a[c, :, 0] = rho * inv * (f * l[0] - geom.xt * l[2])
        a[c, :, 1] = rho * inv * (f * l[1] - geom.yt * l[2])
        b[c] = rho * (l[2] * (-inv)
                      + l[3]
                      + l[4] * f * f * p * q * inv2
                      + l[5] * f * p * w * inv2
                      + l[6] * f * q * w * inv2
                      + l[7] * f * f * (p * p - q * q) * inv2
                      + l[8] * (3.0 * w * w * inv2 - 1.0))
    return a, b


@dataclass
class LightingEstimate:
    """Least-squares lighting fit: coefficients plus conditioning report."""
    lighting: np.ndarray
    condition_number: float
    rank: int


def estimate_lighting(image, normals, albedo=1.0, min_pixels=9):
    """Per-channel linear least squares for the 9 lighting coefficients.

    Solves image_c ~ albedo_c * (l_c . basis(n)) over pixels with nonzero
    albedo via the 9x9 normal equations (accumulated in pixel order). Falls
    back to the minimum-norm solution, with a warning, when the system is
    rank-deficient.
    """
    image = np.atleast_2d(np.asarray(image, dtype=np.float64))
    channels = image.shape[0]
    basis = sh_basis_field(normals)
    albedo = as_albedo(albedo, channels, basis.shape[0])
    usable = (albedo != 0).any(axis=0)
    if int(usable.sum()) < min_pixels:
        raise InsufficientData("lighting estimation needs at least %d usable "
                               "pixels, got %d" % (min_pixels, int(usable.sum())))
    lighting = np.empty((channels, 9))
    worst_cond = 0.0
    worst_rank = 9
    for c in range(channels):
        rows = albedo[c][:, None] * basis
        gram = rows.T @ rows
        rhs = rows.T @ image[c]
        eigvals = np.linalg.eigvalsh(gram)
        top = eigvals[-1]
        cutoff = top * 1e-12
        rank = int((eigvals > cutoff).sum()) if top > 0 else 0
        cond = float(top / eigvals[0]) if eigvals[0] > cutoff else np.inf
        if rank < 9:
            warnings.warn("lighting system is rank-deficient (rank %d, cond %g); "
                          "returning the minimum-norm solution" % (rank, cond))
            lighting[c] = np.linalg.pinv(gram, rcond=1e-12) @ rhs
        else:
            lighting[c] = np.linalg.solve(gram, rhs)
        worst_cond = max(worst_cond, cond)
        worst_rank = min(worst_rank, rank)
    return LightingEstimate(lighting, worst_cond, worst_rank)
