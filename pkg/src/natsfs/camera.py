"""Camera models, per-pixel projection geometry, and normals from gradients.

Under an orthographic camera the solver variable z is the metric depth
itself. Under a perspective camera it is log-depth: all solver-side fields
(prior, initialization, output) live in the log domain and are converted at
the boundaries with depth_from_z / z_from_depth.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateNormal, InvalidPriorDepth, NonFiniteDepth

ORTHOGRAPHIC = "orthographic"
PERSPECTIVE = "perspective"


@dataclass(frozen=True)
class CameraModel:
    kind: str
    focal: float | None = None
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if self.kind not in (ORTHOGRAPHIC, PERSPECTIVE):
            raise ValueError("unknown camera kind %r" % self.kind)
        if self.kind == PERSPECTIVE:
            if self.focal is None or not np.isfinite(self.focal) or self.focal <= 0:
                raise ValueError("perspective camera requires focal > 0")
            if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
                raise ValueError("principal point must be finite")

    @staticmethod
    def orthographic():
        return CameraModel(ORTHOGRAPHIC)

    @staticmethod
    def perspective(focal, cx, cy):
        return CameraModel(PERSPECTIVE, focal, cx, cy)

    @property
    def is_perspective(self):
        return self.kind == PERSPECTIVE


@dataclass(frozen=True)
class PixelGeometry:
    """Per-pixel change-of-variable data: scalar f and offsets (xt, yt)."""
    f: float
    xt: np.ndarray
    yt: np.ndarray


def pixel_geometry(camera, grid):
    """f = 1 and (xt, yt) = 0 orthographic; f = focal and pixel offsets
    from the principal point under perspective."""
    if camera.is_perspective:
        xt = grid.xs.astype(np.float64) - camera.cx
        yt = grid.ys.astype(np.float64) - camera.cy
        return PixelGeometry(float(camera.focal), xt, yt)
    zeros = np.zeros(grid.n)
    return PixelGeometry(1.0, zeros, zeros.copy())


def d_map(theta, geom, dfloor=0.0):
    """Normalization factor sqrt(f^2 ||theta||^2 + (1 + [xt,yt].theta)^2).

    Its sum over the domain is the total surface area. A positive dfloor
    clamps near-degenerate perspective pixels.
    """
    p = theta[:, 0]
    q = theta[:, 1]
    w = 1.0 + geom.xt * p + geom.yt * q
    d = np.sqrt(geom.f * geom.f * (p * p + q * q) + w * w)
    if dfloor > 0.0:
        d = np.maximum(d, dfloor)
    return d


def normals_from_gradient(theta, geom):
    """Unit outward normals (n, 3) induced by a gradient field.

    The third component is negative for surfaces facing the camera.
    """
    p = theta[:, 0]
    q = theta[:, 1]
    w = -1.0 - geom.xt * p - geom.yt * q
    d = np.sqrt(geom.f * geom.f * (p * p + q * q) + w * w)
    if (d == 0.0).any():
        i = int(np.flatnonzero(d == 0.0)[0])
        raise DegenerateNormal("zero normalization factor at pixel ordinal %d" % i)
    inv = 1.0 / d
    return np.stack([geom.f * p * inv, geom.f * q * inv, w * inv], axis=1)


def depth_from_z(camera, z):
    """Solver variable to metric depth: identity orthographic, exp perspective."""
    z = np.asarray(z, dtype=np.float64)
    if not camera.is_perspective:
        return z.copy()
    depth = np.exp(z)
    if not np.isfinite(depth[np.isfinite(z)]).all():
        raise NonFiniteDepth("exp overflow while converting log-depth")
    return depth


def z_from_depth(camera, depth):
    """Metric depth to solver variable: identity orthographic, log perspective.

    NaN entries (missing data) pass through; nonpositive finite depths are
    rejected under perspective.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if not camera.is_perspective:
        return depth.copy()
    bad = np.isfinite(depth) & (depth <= 0.0)
    if bad.any():
        raise InvalidPriorDepth("nonpositive depth cannot be log-mapped")
    with np.errstate(invalid="ignore"):
        return np.log(depth)
