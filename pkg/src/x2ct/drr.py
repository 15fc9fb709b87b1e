"""Simulated radiographs via parallel-beam attenuation line integrals.

A ray is cast through the volume along one principal axis (default y, the
anteroposterior direction); per voxel the Hounsfield value converts to a
linear attenuation coefficient, the coefficients integrate to an optical
depth L, and the recorded image is 1 - exp(-L) (or L itself in
"line_integral" mode), min-max normalized per image and bilinearly resized
to the configured square output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError

# permutation of the [z, y, x] voxel array bringing the ray axis to position 1,
# plus the resulting (row, col) image axes
_AXIS_LAYOUT = {
    "y": ((0, 1, 2), "z", "x"),
    "x": ((0, 2, 1), "z", "y"),
    "z": ((1, 0, 2), "y", "x"),
}


@dataclass(frozen=True)
class DrrConfig:
    mu_water: float = 0.0205     # per mm, ~60 keV effective energy
    out_size: int = 64
    axis: str = "y"
    mode: str = "absorption"     # absorption: 1-exp(-L); line_integral: L

    def __post_init__(self):
        if self.mu_water <= 0:
            raise ValueError(f"mu_water must be positive, got {self.mu_water}")
        if self.out_size < 8:
            raise ValueError(f"out_size must be >= 8, got {self.out_size}")
        if self.axis not in _AXIS_LAYOUT:
            raise ValueError(f"axis must be one of x/y/z, got {self.axis!r}")
        if self.mode not in ("absorption", "line_integral"):
            raise ValueError(f"unknown projection mode {self.mode!r}")


@dataclass
class Radiograph:
    width: int
    height: int
    pixels: np.ndarray           # float64 [height, width], values in [0, 1]
    source_id: str = ""


def hu_to_mu(hu, mu_water_per_mm: float):
    """Linear attenuation per mm from Hounsfield units, clamped at zero.

    Air (-1000) maps to exactly 0 and water (0) to mu_water.
    """
    if mu_water_per_mm <= 0:
        raise ValueError(f"mu_water must be positive, got {mu_water_per_mm}")
    mu = mu_water_per_mm * (1.0 + np.asarray(hu, dtype=np.float64) / 1000.0)
    return np.maximum(mu, 0.0)


def _check_volume(volume) -> None:
    if any(d < 2 for d in volume.dims):
        raise DataError(f"degenerate volume: dims {volume.dims}")


def path_integral_image(volume, cfg: DrrConfig) -> np.ndarray:
    """Optical depth per ray, shape (rows, cols) for the configured axis."""
    _check_volume(volume)
    perm, _, _ = _AXIS_LAYOUT[cfg.axis]
    arr = np.ascontiguousarray(volume.voxels.transpose(perm))
    # spacing is stored (sx, sy, sz); take the component along the ray axis
    step = volume.spacing_mm[{"x": 0, "y": 1, "z": 2}[cfg.axis]]
    return kernels.project_axis1(arr, cfg.mu_water, step)


def raw_projection(volume, cfg: DrrConfig) -> np.ndarray:
    """Pre-normalization image: 1 - exp(-L), or L in line_integral mode."""
    L = path_integral_image(volume, cfg)
    if cfg.mode == "line_integral":
        return L
    return 1.0 - np.exp(-L)


def normalize_minmax(raw: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant image maps to all zeros."""
    lo = raw.min()
    hi = raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def project_ap(volume, cfg: DrrConfig, source_id: str = "") -> Radiograph:
    raw = raw_projection(volume, cfg)
    img = normalize_minmax(raw)
    if img.shape != (cfg.out_size, cfg.out_size):
        img = kernels.bilinear_resize(img, cfg.out_size, cfg.out_size)
    return Radiograph(width=cfg.out_size, height=cfg.out_size, pixels=img,
                      source_id=source_id)
