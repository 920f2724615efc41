"""Equirectangular HDR environment maps."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .sphgeom import angles_to_vectors, equirect_angles


@dataclass(frozen=True)
class EquirectMap:
    """Linear HDR radiance on an ``H x W`` equirectangular grid, shape (H, W, 3).

    Row 0 is the north pole band (theta near 0); column 0 starts at phi = 0.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) array, got shape {d.shape}")
        H, W = d.shape[:2]
        if H < 2 or W < 4:
            raise ValueError(f"degenerate panorama {H}x{W}")
        if not np.all(np.isfinite(d)):
            raise ValueError("radiance contains NaN or Inf")
        if np.any(d < 0):
            raise ValueError(f"radiance must be nonnegative ({int((d < 0).sum())} negative samples)")
        if W != 2 * H:
            warnings.warn(f"panorama is {H}x{W}; equirectangular maps are usually W = 2H", stacklevel=3)
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


def rotate_azimuth(m: EquirectMap, angle: float) -> EquirectMap:
    """Rotate about the polar axis by ``angle`` radians (whole-pixel shifts only)."""
    shift = angle * m.width / (2.0 * math.pi)
    k = int(round(shift))
    if abs(shift - k) > 1e-6:
        raise ValueError(f"rotation of {angle} rad is not a whole number of columns for W={m.width}")
    return EquirectMap(np.roll(m.data, k, axis=1))


def source_map(H: int, W: int, directions, intensities, kappa: float = 20.0, ambient=0.0) -> EquirectMap:
    """Synthetic lighting: von Mises-Fisher lobes plus a constant ambient term.

    ``directions`` is a sequence of (theta, phi); ``intensities`` gives one
    RGB triple (or scalar) per lobe, as peak radiance.
    """
    tt, pp = equirect_angles(H, W)
    v = angles_to_vectors(tt, pp)
    out = np.zeros((H, W, 3)) + np.asarray(ambient, dtype=float)
    for (theta, phi), inten in zip(directions, intensities):
        mu = angles_to_vectors(theta, phi)
        lobe = np.exp(kappa * (v @ mu - 1.0))
        out += lobe[..., None] * np.broadcast_to(np.asarray(inten, dtype=float), (3,))
    return EquirectMap(out)
