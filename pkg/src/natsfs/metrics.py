"""Quantitative evaluation: reprojection RMSE and normal angular error."""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels


def reprojection_rmse(image, reprojection):
    """Root mean square difference pooled over channels and pixels."""
    image = np.atleast_2d(np.asarray(image, dtype=np.float64))
    reproj = np.atleast_2d(np.asarray(reprojection, dtype=np.float64))
    if image.shape != reproj.shape:
        raise ValueError("image shapes differ")
    diff = (image - reproj).ravel()
    return math.sqrt(_kernels.ordered_sum(diff * diff) / diff.size)


def per_channel_rmse(image, reprojection):
    image = np.atleast_2d(np.asarray(image, dtype=np.float64))
    reproj = np.atleast_2d(np.asarray(reprojection, dtype=np.float64))
    out = []
    for c in range(image.shape[0]):
        d = image[c] - reproj[c]
        out.append(math.sqrt(_kernels.ordered_sum(d * d) / d.size))
    return out


def normal_mae_degrees(estimated, truth):
    """Mean angle in degrees between two unit normal fields."""
    a = np.asarray(estimated, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("normal fields have different shapes")
    dots = np.clip((a * b).sum(axis=1), -1.0, 1.0)
    ang = np.degrees(np.arccos(dots))
    return _kernels.ordered_sum(ang) / ang.size


@dataclass
class EvalReport:
    rmse: float
    rmse_per_channel: list
    mae_degrees: float
    primal_residual: float
    pixels: int

    def format_text(self):
        lines = ["pixels            %d" % self.pixels,
                 "rmse (pooled)     %.6f" % self.rmse]
        for c, v in enumerate(self.rmse_per_channel):
            lines.append("rmse[%d]           %.6f" % (c, v))
        lines.append("mae (degrees)     %.4f" % self.mae_degrees)
        lines.append("primal residual   %.6e" % self.primal_residual)
        return "\n".join(lines)

    def format_porcelain(self):
        lines = ["pixels=%d" % self.pixels, "rmse=%.17g" % self.rmse]
        for c, v in enumerate(self.rmse_per_channel):
            lines.append("rmse_%d=%.17g" % (c, v))
        lines.append("mae_deg=%.17g" % self.mae_degrees)
        lines.append("primal=%.17g" % self.primal_residual)
        return "\n".join(lines)


def make_report(image, reprojection, normals_est=None, normals_true=None,
                primal_residual=float("nan")):
    mae = (normal_mae_degrees(normals_est, normals_true)
           if normals_est is not None and normals_true is not None
           else float("nan"))
    image = np.atleast_2d(np.asarray(image))
    return EvalReport(rmse=reprojection_rmse(image, reprojection),
                      rmse_per_channel=per_channel_rmse(image, reprojection),
                      mae_degrees=mae,
                      primal_residual=primal_residual,
                      pixels=image.shape[1])
