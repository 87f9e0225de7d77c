"""File formats: float rasters (PFM), masks (PGM), lighting and config text.

PFM files are binary little-endian (scale header -1.0), one or three
channels, rows stored bottom to top. 8- and 16-bit PGM/PPM are accepted on
read and scaled to [0, 1]. Depth rasters are single-channel PFM where NaN
marks pixels without data. All writers go through a temp file and rename.
"""

import os
from dataclasses import dataclass

import numpy as np

from .camera import CameraModel
from .errors import ConfigError, FormatError
from .grid import build_domain
from .solver import SolverConfig


def _atomic_write(path, payload):
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _read_line(fh):
    line = fh.readline()
    if not line:
        raise FormatError("unexpected end of file in header")
    return line.decode("ascii", errors="replace").strip()


def _read_pnm_header(fh):
    """Header tokens of a PNM/PFM file past the magic: handles '#' comments."""
    tokens = []
    while len(tokens) < 3:
        line = _read_line(fh)
        if line.startswith("#"):
            continue
        tokens.extend(line.split())
    return tokens


def read_image(path):
    """Read a PFM/PGM/PPM raster as (C, H, W) float64 (C = 1 or 3)."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic in (b"PF", b"Pf"):
            fh.readline()
            return _read_pfm_body(fh, magic)
        if magic in (b"P5", b"P6"):
            fh.readline()
            return _read_pnm_body(fh, magic)
    raise FormatError("unrecognized raster magic %r in %s" % (magic, path))


def _read_pfm_body(fh, magic):
    dims = _read_pnm_header(fh)
    try:
        width, height = int(dims[0]), int(dims[1])
        scale = float(dims[2])
    except (ValueError, IndexError):
        raise FormatError("malformed PFM header")
    if width <= 0 or height <= 0 or scale == 0:
        raise FormatError("invalid PFM dimensions or scale")
    channels = 3 if magic == b"PF" else 1
    count = width * height * channels
    buf = fh.read(count * 4)
    if len(buf) != count * 4:
        raise FormatError("truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype).astype(np.float64)
    data = data.reshape(height, width, channels)
    data = np.flipud(data)
    return np.moveaxis(data, 2, 0).copy()


def _read_pnm_body(fh, magic):
    dims = _read_pnm_header(fh)
    try:
        width, height = int(dims[0]), int(dims[1])
        maxval = int(dims[2])
    except (ValueError, IndexError):
        raise FormatError("malformed PNM header")
    if maxval <= 0 or maxval > 65535:
        raise FormatError("unsupported PNM maxval %d" % maxval)
    channels = 3 if magic == b"P6" else 1
    count = width * height * channels
    itemsize = 1 if maxval < 256 else 2
    buf = fh.read(count * itemsize)
    if len(buf) != count * itemsize:
        raise FormatError("truncated PNM payload")
    dtype = np.uint8 if itemsize == 1 else ">u2"
    data = np.frombuffer(buf, dtype=dtype).astype(np.float64) / maxval
    data = data.reshape(height, width, channels)
    return np.moveaxis(data, 2, 0).copy()


def write_image(path, image):
    """Write a (C, H, W) or (H, W) float raster as PFM (float32 payload)."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise FormatError("image must have 1 or 3 channels")
    channels, height, width = arr.shape
    magic = b"PF" if channels == 3 else b"Pf"
    body = np.flipud(np.moveaxis(arr, 0, 2)).astype("<f4").tobytes()
    header = magic + b"\n" + ("%d %d\n-1.0\n" % (width, height)).encode("ascii")
    _atomic_write(path, header + body)


def read_depth(path):
    """Read a single-channel PFM depth raster; NaN marks missing pixels.

    Returns (raster (H, W), validity mask (H, W) bool).
    """
    data = read_image(path)
    if data.shape[0] != 1:
        raise FormatError("depth raster must be single channel")
    raster = data[0]
    return raster, np.isfinite(raster)


def write_depth(path, raster):
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim != 2:
        raise FormatError("depth raster must be 2-D")
    write_image(path, raster[None])


def read_mask(path):
    """PGM mask: nonzero pixels are inside the domain."""
    data = read_image(path)
    if data.shape[0] != 1:
        raise FormatError("mask must be single channel")
    return data[0] > 0


def write_mask(path, mask):
    mask = np.asarray(mask, dtype=bool)
    payload = (b"P5\n" + ("%d %d\n255\n" % (mask.shape[1], mask.shape[0])).encode("ascii")
               + (mask.astype(np.uint8) * 255).tobytes())
    _atomic_write(path, payload)


def read_lighting(path):
    """Plain-text lighting: first line is the channel count, then one line
    of 9 coefficients per channel."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise FormatError("empty lighting file")
    try:
        channels = int(lines[0])
    except ValueError:
        raise FormatError("first line of a lighting file must be the channel count")
    if channels < 1 or len(lines) != channels + 1:
        raise FormatError("lighting file must have %d coefficient lines" % channels)
    rows = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 9:
            raise FormatError("each lighting line needs 9 coefficients, got %d"
                              % len(parts))
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise FormatError("non-numeric lighting coefficient")
    return np.array(rows, dtype=np.float64)


def write_lighting(path, lighting):
    lighting = np.atleast_2d(np.asarray(lighting, dtype=np.float64))
    if lighting.shape[1] != 9:
        raise FormatError("lighting must have 9 coefficients per channel")
    lines = [str(lighting.shape[0])]
    for row in lighting:
        lines.append(" ".join("%.17g" % v for v in row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


_CONFIG_KEYS = {
    "lambda": float, "mu": float, "nu": float, "beta0": float, "tol": float,
    "max_iter": int, "newton_max_iter": int, "newton_tol": float,
    "cg_tol": float, "cg_max_iter": int, "tau": float, "ratio": float,
    "gauge_fix": str, "dfloor": float,
    "camera": str, "focal": float, "cx": float, "cy": float,
    "seed": int, "surface": str, "light": str, "size": int,
    "sigma_i": float, "sigma_z": float, "amp": float, "blur": float,
    "holes": float,
}


def read_config_pairs(path):
    """key=value pairs from a flat config file; unknown keys are rejected."""
    pairs = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError("line %d is not key=value: %r" % (lineno, line))
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_KEYS:
                raise ConfigError("unknown config key %r" % key)
            try:
                pairs[key] = _CONFIG_KEYS[key](value)
            except ValueError:
                raise ConfigError("bad value for %s: %r" % (key, value))
    return pairs


def config_from_pairs(pairs):
    """Build (SolverConfig, CameraModel) from parsed pairs; missing keys keep
    their defaults and the camera defaults to orthographic."""
    cfg = SolverConfig()
    mapping = {"lambda": "lam", "mu": "mu", "nu": "nu", "beta0": "beta0",
               "tol": "tol", "max_iter": "max_iter",
               "newton_max_iter": "newton_max_iter", "newton_tol": "newton_tol",
               "cg_tol": "cg_tol", "cg_max_iter": "cg_max_iter",
               "tau": "penalty_tau", "ratio": "penalty_ratio",
               "dfloor": "dfloor"}
    for key, attr in mapping.items():
        if key in pairs:
            setattr(cfg, attr, pairs[key])
    if "gauge_fix" in pairs:
        val = pairs["gauge_fix"].lower()
        if val not in ("0", "1", "true", "false", "on", "off"):
            raise ConfigError("gauge_fix must be a boolean flag")
        cfg.gauge_fix = val in ("1", "true", "on")
    kind = pairs.get("camera", "ortho")
    if kind in ("ortho", "orthographic"):
        camera = CameraModel.orthographic()
    elif kind in ("persp", "perspective"):
        if "focal" not in pairs:
            raise ConfigError("perspective camera requires focal")
        if pairs["focal"] <= 0:
            raise ConfigError("focal must be positive")
        camera = CameraModel.perspective(pairs["focal"],
                                         pairs.get("cx", 0.0),
                                         pairs.get("cy", 0.0))
    else:
        raise ConfigError("camera must be ortho or persp, got %r" % kind)
    cfg.validate()
    return cfg, camera


def parse_config(path):
    """Parse a flat key=value config file into (SolverConfig, CameraModel)."""
    return config_from_pairs(read_config_pairs(path))


@dataclass
class SceneBundle:
    """Parsed contents of an on-disk scene directory."""
    grid: object
    camera: CameraModel
    config: SolverConfig
    image: np.ndarray               # (C, n)
    lighting: np.ndarray            # (C, 9)
    depth_true: np.ndarray | None   # (n,) metric
    prior_depth: np.ndarray | None  # (n,) metric, NaN where missing
    init_depth: np.ndarray | None   # (n,) metric
    pairs: dict


def read_bundle(directory):
    """Load a scene directory written by the `gen` command."""
    directory = str(directory)

    def p(name):
        return os.path.join(directory, name)

    mask = read_mask(p("mask.pgm"))
    grid = build_domain(mask)
    pairs = read_config_pairs(p("scene.cfg"))
    config, camera = config_from_pairs(pairs)
    image_raster = read_image(p("image.pfm"))
    image = np.stack([grid.from_raster(image_raster[c])
                      for c in range(image_raster.shape[0])])
    lighting = read_lighting(p("light.txt"))

    def maybe_depth(name):
        if os.path.exists(p(name)):
            raster, _ = read_depth(p(name))
            return grid.from_raster(raster)
        return None

    return SceneBundle(grid=grid, camera=camera, config=config, image=image,
                       lighting=lighting,
                       depth_true=maybe_depth("depth_gt.pfm"),
                       prior_depth=maybe_depth("prior.pfm"),
                       init_depth=maybe_depth("init.pfm"),
                       pairs=pairs)
