"""Masked raster domain and first-order differential operators.

Fields over the domain are flat float64 arrays ordered by the inside-pixel
index (raster order: row by row, left to right). Scalar fields have shape
(n,), vector fields (n, 2) with components (d/dx, d/dy). Pixel spacing is 1
in both directions.
"""

import numpy as np

from . import _kernels
from .errors import DomainEmpty


class MaskedGrid:
    """Rectangular raster with a boolean inside mask and dense pixel indexing.

    Attributes:
        width, height: raster dimensions.
        mask: (height, width) bool, True inside the domain.
        n: number of inside pixels.
        index: (height, width) int64, ordinal of each inside pixel, -1 outside.
        ys, xs: (n,) pixel coordinates of each ordinal.
        nbr_xp, nbr_yp, nbr_xm, nbr_ym: (n,) ordinal of the +x/+y/-x/-y
            neighbor, -1 when that neighbor is outside the domain or raster.
    """

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D (height, width)")
        if not mask.any():
            raise DomainEmpty("mask has no inside pixels")
        self.height, self.width = mask.shape
        self.mask = mask
        ys, xs = np.nonzero(mask)
        self.ys = ys
        self.xs = xs
        self.n = ys.size
        index = np.full(mask.shape, -1, dtype=np.int64)
        index[ys, xs] = np.arange(self.n, dtype=np.int64)
        self.index = index
        self.nbr_xp = self._neighbor(1, 0)
        self.nbr_xm = self._neighbor(-1, 0)
        self.nbr_yp = self._neighbor(0, 1)
        self.nbr_ym = self._neighbor(0, -1)

    def _neighbor(self, dx, dy):
        out = np.full(self.n, -1, dtype=np.int64)
        x = self.xs + dx
        y = self.ys + dy
        ok = (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)
        out[ok] = self.index[y[ok], x[ok]]
        return out

    def to_raster(self, values, fill=np.nan):
        """Scatter a flat field back to a (height, width) raster."""
        values = np.asarray(values)
        out = np.full((self.height, self.width) + values.shape[1:], fill,
                      dtype=np.float64)
        out[self.ys, self.xs] = values
        return out

    def from_raster(self, raster):
        """Gather inside-pixel values from a raster into a flat field."""
        raster = np.asarray(raster, dtype=np.float64)
        if raster.shape[:2] != (self.height, self.width):
            raise ValueError("raster shape does not match grid")
        return raster[self.ys, self.xs]

    def __repr__(self):
        return "MaskedGrid(%dx%d, %d inside)" % (self.width, self.height, self.n)


def build_domain(mask, width=None, height=None):
    """Build a MaskedGrid from a 2-D boolean raster or a flat mask + dims."""
    mask = np.asarray(mask)
    if mask.ndim == 1:
        if width is None or height is None:
            raise ValueError("flat mask requires width and height")
        if mask.size != width * height:
            raise ValueError("mask length %d != width*height %d"
                             % (mask.size, width * height))
        mask = mask.reshape(height, width)
    return MaskedGrid(mask.astype(bool))


def gradient(grid, z):
    """Forward-difference gradient with homogeneous Neumann boundary.

    Components where the +x (resp. +y) neighbor is outside the domain are 0.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    if z.shape != (grid.n,):
        raise ValueError("scalar field has wrong length")
    return _kernels.gradient_apply(z, grid.nbr_xp, grid.nbr_yp)


def divergence(grid, w):
    """Discrete divergence, the exact negative adjoint of :func:`gradient`.

    Satisfies <gradient(z), w> = -<z, divergence(w)> for all z and w.
    """
    w = np.ascontiguousarray(w, dtype=np.float64)
    if w.shape != (grid.n, 2):
        raise ValueError("vector field has wrong shape")
    return _kernels.divergence_apply(w, grid.nbr_xp, grid.nbr_yp,
                                     grid.nbr_xm, grid.nbr_ym)
