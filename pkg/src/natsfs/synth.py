"""Synthetic ground-truth surfaces, clean renderings, and degradations.

Scenes are built at desk scale (64 to 128 pixels a side). The clean image
is rendered from the discrete gradient of the ground-truth solver variable,
then the lighting is rescaled so the brightest pixel is 1; the stored image
therefore reproduces exactly from the stored lighting and geometry.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .camera import CameraModel, pixel_geometry, normals_from_gradient, z_from_depth
from .grid import MaskedGrid, build_domain, gradient
from .shading import as_albedo, render

DEFAULT_BLUR_SIGMA = 4.0


def peaks_surface(n, scale=1.0):
    """Sum-of-Gaussians bumpy test surface sampled on [-3, 3]^2, as an
    (n, n) raster scaled by `scale`."""
    if n < 8:
        raise ValueError("surface needs n >= 8")
    x = np.linspace(-3.0, 3.0, n)
    xx, yy = np.meshgrid(x, x, indexing="xy")
    z = (3.0 * (1.0 - xx) ** 2 * np.exp(-xx ** 2 - (yy + 1.0) ** 2)
         - 10.0 * (xx / 5.0 - xx ** 3 - yy ** 5) * np.exp(-xx ** 2 - yy ** 2)
         - (1.0 / 3.0) * np.exp(-(xx + 1.0) ** 2 - yy ** 2))
    return scale * z


def sphere_cap_surface(n, radius=None, cap_fraction=0.8):
    """Spherical cap bulging toward the camera inside a circular mask.

    Returns (depth raster (n, n), mask (n, n)). The apex sits at depth 0;
    cap_fraction 1 puts grazing normals on the mask boundary. radius is the
    sphere radius in pixels (defaults to mask radius / cap_fraction).
    """
    if not 0.0 < cap_fraction <= 1.0:
        raise ValueError("cap_fraction must be in (0, 1]")
    mask_radius = 0.45 * n
    if radius is None:
        radius = mask_radius / cap_fraction
    cx = cy = (n - 1) / 2.0
    x = np.arange(n, dtype=np.float64)
    xx, yy = np.meshgrid(x, x, indexing="xy")
    r2 = (xx - cx) ** 2 + (yy - cy) ** 2
    mask = r2 <= (radius * cap_fraction) ** 2
    s = np.sqrt(np.maximum(radius ** 2 - r2, 0.0))
    depth = np.where(mask, radius - s, np.nan)
    return depth, mask


def sphere_cap_analytic_normals(n, radius=None, cap_fraction=0.8):
    """Exact outward unit normals of sphere_cap_surface, as an (n, n, 3)
    raster (NaN outside the cap). Valid for an orthographic camera."""
    if not 0.0 < cap_fraction <= 1.0:
        raise ValueError("cap_fraction must be in (0, 1]")
    mask_radius = 0.45 * n
    if radius is None:
        radius = mask_radius / cap_fraction
    cx = cy = (n - 1) / 2.0
    x = np.arange(n, dtype=np.float64)
    xx, yy = np.meshgrid(x, x, indexing="xy")
    r2 = (xx - cx) ** 2 + (yy - cy) ** 2
    mask = r2 <= (radius * cap_fraction) ** 2
    s = np.sqrt(np.maximum(radius ** 2 - r2, 0.0))
    out = np.full((n, n, 3), np.nan)
    out[..., 0] = np.where(mask, (xx - cx) / radius, np.nan)
    out[..., 1] = np.where(mask, (yy - cy) / radius, np.nan)
    out[..., 2] = np.where(mask, -s / radius, np.nan)
    return out


def add_gaussian_noise(values, sigma, seed):
    """Add seeded i.i.d. zero-mean Gaussian noise (sigma in field units)."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    values = np.asarray(values, dtype=np.float64)
    if sigma == 0:
        return values.copy()
    rng = np.random.default_rng(seed)
    return values + rng.normal(0.0, sigma, size=values.shape)


def smooth_initialization(grid, z, sigma=DEFAULT_BLUR_SIGMA):
    """Gaussian blur of a field over the masked domain (replicate boundary).

    Uses normalized convolution so pixels outside the domain never leak in;
    a constant field is preserved exactly up to roundoff.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return np.asarray(z, dtype=np.float64).copy()
    raster = grid.to_raster(z, fill=0.0)
    weight = grid.mask.astype(np.float64)
    num = ndimage.gaussian_filter(raster * weight, sigma, mode="constant")
    den = ndimage.gaussian_filter(weight, sigma, mode="constant")
    out = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
    return grid.from_raster(out)


def standard_lightings():
    """The three bundled lighting presets: first-order greylevel, second-order
    greylevel, and second-order colored (3 channels)."""
    l1 = np.array([[0.1, -0.25, -0.7, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0]])
    l2 = np.array([[0.2, 0.3, -0.7, 0.5, -0.2, -0.2, 0.3, 0.3, 0.2]])
    l3 = np.array([
        [-0.2, -0.2, -1.0, 0.4, 0.1, -0.1, -0.1, -0.1, 0.05],
        [0.0, 0.2, -1.0, 0.3, 0.0, 0.2, 0.1, 0.0, 0.1],
        [0.2, -0.2, -1.0, 0.2, -0.1, 0.0, 0.0, 0.1, 0.0],
    ])
    return {"l1": l1, "l2": l2, "l3": l3}


@dataclass
class SyntheticScene:
    grid: MaskedGrid
    camera: CameraModel
    albedo: np.ndarray      # (C, n)
    lighting: np.ndarray    # (C, 9), rescaled so max clean intensity is 1
    image: np.ndarray       # (C, n) clean rendering
    z_true: np.ndarray      # (n,) solver variable (log-depth if perspective)
    depth_true: np.ndarray  # (n,) metric depth
    seed: int
    surface: str


def make_scene(surface="peaks", n=64, lighting="l2", camera=None,
               amplitude=None, seed=0):
    """Build a clean synthetic scene.

    Peaks surfaces default to amplitude n/64 (slopes stay resolution
    independent); the sphere cap is fixed by its radius. Under perspective
    the surface modulates a base distance equal to the focal length, so the
    induced normals match the orthographic construction.
    """
    if camera is None:
        camera = CameraModel.orthographic()
    if surface == "peaks":
        if amplitude is None:
            amplitude = n / 64.0
        raster = peaks_surface(n, amplitude)
        mask = np.ones((n, n), dtype=bool)
    elif surface == "sphere":
        raster, mask = sphere_cap_surface(n)
        raster = np.where(mask, raster, 0.0)
    else:
        raise ValueError("unknown surface %r" % surface)
    grid = build_domain(mask)
    relief = grid.from_raster(raster)
    if camera.is_perspective:
        base = float(camera.focal)
        depth = base + relief
    else:
        # keep depth positive so percent-of-max noise conventions make sense
        depth = relief - relief.min() + 1.0
    z_true = z_from_depth(camera, depth)
    geom = pixel_geometry(camera, grid)
    normals = normals_from_gradient(gradient(grid, z_true), geom)
    presets = standard_lightings()
    if lighting not in presets:
        raise ValueError("unknown lighting preset %r" % lighting)
    light = presets[lighting]
    albedo = as_albedo(1.0, light.shape[0], grid.n)
    clean = render(normals, albedo, light)
    scale = 1.0 / float(np.abs(clean).max())
    light = light * scale
    image = render(normals, albedo, light)
    return SyntheticScene(grid=grid, camera=camera, albedo=albedo,
                          lighting=light, image=image, z_true=z_true,
                          depth_true=depth, seed=seed, surface=surface)
