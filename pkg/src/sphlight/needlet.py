"""Needlet frames on the sphere: window, cubature bands, analysis and synthesis.

A band ``j`` passes harmonic degrees ``l`` with ``B**(j-1) < l < B**(j+1)``
through the window ``b(l / B**j)``. Each band is sampled at cubature points
``xi_jk`` with weights ``lambda_jk``::

    psi_jk(x) = sqrt(lambda_jk) sum_l b(l/B^j) sum_m Y_lm(xi_jk) Y_lm(x)
    beta_jk   = sqrt(lambda_jk) sum_l b(l/B^j) sum_m a_lm Y_lm(xi_jk)

Degree 0 is outside every window, so the mean radiance is stored separately
as ``dc``. Degrees ``1 <= l <= B`` (only l = 1 when B = 2) belong to the
``j = 0`` window, which is folded into band 1 so that bands ``1..j_max``
alone tile every degree from 1 to ``B**j_max``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .envmap import EquirectMap
from .harmonics import SHCoeffs, degrees, n_coeffs, sh_index, sht_forward, ylm_matrix
from .sphgeom import (
    CubatureBand,
    SphDir,
    band_top_degree,
    equirect_angles,
    equirect_quadrature,
    make_band_points,
)

WINDOW_SAMPLES = 4096
PARTITION_TOL = 1e-7


def _bump(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _bump_cdf() -> PchipInterpolator:
    """Normalised running integral of the bump on [-1, 1], tabulated."""
    u = np.linspace(-1.0, 1.0, WINDOW_SAMPLES)
    f = lambda t: math.exp(-1.0 / (1.0 - t * t)) if abs(t) < 1.0 else 0.0
    pieces = [integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-12)[0] for a, b in zip(u[:-1], u[1:])]
    cdf = np.concatenate([[0.0], np.cumsum(pieces)])
    cdf /= cdf[-1]
    return PchipInterpolator(u, cdf)


def _lowpass(q, B: float):
    """Smooth step: 1 for q <= 1/B, 0 for q >= 1, bump-CDF ramp in between."""
    q = np.asarray(q, dtype=float)
    out = np.where(q <= 1.0 / B, 1.0, 0.0)
    ramp = (q > 1.0 / B) & (q < 1.0)
    if np.any(ramp):
        u = 1.0 - 2.0 * B / (B - 1.0) * (q[ramp] - 1.0 / B)
        out[ramp] = _bump_cdf()(u)
    return out


@dataclass(frozen=True)
class NeedletWindow:
    """Window ``b`` supported on (1/B, B); ``evaluator`` maps xi -> b(xi)."""

    B: float
    evaluator: Callable[[np.ndarray], np.ndarray]

    def __call__(self, xi):
        return np.asarray(self.evaluator(np.asarray(xi, dtype=float)), dtype=float)

    def partition_error(self, lmax: int) -> float:
        """``max_l |sum_{j>=0} b(l/B^j)^2 - 1|`` over ``1 <= l <= lmax``."""
        l = np.arange(1, lmax + 1, dtype=float)
        jmax = int(math.ceil(math.log(lmax) / math.log(self.B))) + 2
        total = sum(self(l / self.B**j) ** 2 for j in range(jmax + 1))
        return float(np.max(np.abs(total - 1.0)))


def build_window(B: float = 2.0) -> NeedletWindow:
    """Standard smooth needlet window, ``b(xi)^2 = phi(xi/B) - phi(xi)``.

    Built from the difference of one tabulated low-pass step, so the squares
    telescope and the partition of unity holds to rounding error.
    """
    if not B > 1.0:
        raise ValueError(f"B must exceed 1, got {B}")

    def b(xi):
        b2 = _lowpass(xi / B, B) - _lowpass(xi, B)
        return np.sqrt(np.clip(b2, 0.0, None))

    return NeedletWindow(float(B), b)


def band_profile(window: NeedletWindow, j: int, lmax: int) -> np.ndarray:
    """Per-degree filter of band ``j`` for l = 0..lmax (band 1 absorbs j = 0)."""
    l = np.arange(lmax + 1, dtype=float)
    w = window(l / window.B**j)
    if j == 1:
        w = np.sqrt(w**2 + window(l) ** 2)
    w[0] = 0.0
    return w


@dataclass(frozen=True)
class NeedletFrame:
    window: NeedletWindow
    j_max: int
    scheme: str
    bands: tuple[CubatureBand, ...]
    includes_dc: bool = True
    _profiles: tuple = field(default=(), repr=False, compare=False)
    _ylm: tuple = field(default=(), repr=False, compare=False)

    @property
    def B(self) -> float:
        return self.window.B

    @property
    def lmax(self) -> int:
        return band_top_degree(self.B, self.j_max)

    @property
    def counts(self) -> list[int]:
        return [len(b) for b in self.bands]

    @property
    def n_coeffs(self) -> int:
        return sum(self.counts)

    def profile(self, j: int) -> np.ndarray:
        return self._profiles[j - 1]

    def band_ylm(self, j: int) -> np.ndarray:
        """Harmonics at band ``j``'s cubature points, shape (N_j, (lmax+1)**2)."""
        return self._ylm[j - 1]


def build_frame(
    B: float = 2.0,
    j_max: int = 3,
    scheme: str = "paper_matching",
    window: NeedletWindow | None = None,
    check_window: bool = True,
) -> NeedletFrame:
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    window = window if window is not None else build_window(B)
    lmax = band_top_degree(window.B, j_max)
    if check_window:
        err = window.partition_error(max(lmax, 16))
        if err > PARTITION_TOL:
            raise ValueError(f"window violates the partition of unity (error {err:.3g})")
    bands = tuple(make_band_points(j, scheme, window.B) for j in range(1, j_max + 1))
    profiles = tuple(np.repeat(band_profile(window, j, lmax), 2 * np.arange(lmax + 1) + 1) for j in range(1, j_max + 1))
    ylm = tuple(ylm_matrix(lmax, b.theta, b.phi) for b in bands)
    return NeedletFrame(window, j_max, scheme, bands, True, profiles, ylm)


@dataclass
class NeedletCoeffs:
    """Mean radiance ``dc`` (channels,) and band arrays shaped (N_j, channels)."""

    dc: np.ndarray
    bands: list[np.ndarray]

    def __post_init__(self):
        self.dc = np.atleast_1d(np.asarray(self.dc, dtype=float))
        self.bands = [np.asarray(b, dtype=float).reshape(len(b), -1) for b in self.bands]
        for b in self.bands:
            if b.shape[1] != self.dc.size:
                raise ValueError("band channel count differs from dc")
        if not (np.all(np.isfinite(self.dc)) and all(np.all(np.isfinite(b)) for b in self.bands)):
            raise ValueError("needlet coefficients must be finite")

    @property
    def channels(self) -> int:
        return self.dc.size

    @property
    def counts(self) -> list[int]:
        return [len(b) for b in self.bands]

    def copy(self) -> "NeedletCoeffs":
        return NeedletCoeffs(self.dc.copy(), [b.copy() for b in self.bands])

    def flat(self) -> np.ndarray:
        """All band coefficients stacked, shape (sum N_j, channels)."""
        return np.concatenate(self.bands, axis=0)

    def band(self, j: int) -> np.ndarray:
        return self.bands[j - 1]

    @classmethod
    def zeros(cls, frame: NeedletFrame, dc=(0.0, 0.0, 0.0)) -> "NeedletCoeffs":
        dc = np.asarray(dc, dtype=float)
        return cls(dc, [np.zeros((n, dc.size)) for n in frame.counts])


def check_match(coeffs: NeedletCoeffs, frame: NeedletFrame):
    if coeffs.counts != frame.counts:
        raise ValueError(f"coefficient bands {coeffs.counts} do not match frame bands {frame.counts}")


def needlet_basis(frame: NeedletFrame, j: int, k: int, d: SphDir) -> float:
    """Value of ``psi_jk`` at direction ``d``."""
    if not 1 <= j <= frame.j_max:
        raise IndexError(f"band {j} outside 1..{frame.j_max}")
    band = frame.bands[j - 1]
    if not 0 <= k < len(band):
        raise IndexError(f"cubature index {k} outside 0..{len(band) - 1}")
    y_x = ylm_matrix(frame.lmax, d.theta, d.phi)[0]
    y_xi = frame.band_ylm(j)[k]
    return float(math.sqrt(band.weights[k]) * np.sum(frame.profile(j) * y_xi * y_x))


def _as_sh(source, frame: NeedletFrame) -> SHCoeffs:
    if isinstance(source, SHCoeffs):
        sh = source
    elif isinstance(source, EquirectMap):
        grid = equirect_quadrature(source.height, source.width)
        if grid.lmax_exact < frame.lmax:
            need = 2 * frame.lmax + 1
            raise ValueError(
                f"{source.height}x{source.width} map resolves degree {grid.lmax_exact}; "
                f"frame needs {frame.lmax} (use H >= {need}, W >= {need})"
            )
        sh = sht_forward(source.data.reshape(-1, 3), grid, frame.lmax)
    else:
        raise TypeError(f"cannot analyze {type(source).__name__}")
    c = np.zeros((n_coeffs(frame.lmax), sh.channels))
    keep = min(n_coeffs(frame.lmax), n_coeffs(sh.lmax))
    c[:keep] = sh.coeffs[:keep]
    return SHCoeffs(frame.lmax, c)


def analyze(source, frame: NeedletFrame) -> NeedletCoeffs:
    """Needlet coefficients of an :class:`EquirectMap` or :class:`SHCoeffs`."""
    a = _as_sh(source, frame).coeffs
    bands = []
    for j, band in enumerate(frame.bands, start=1):
        beta = frame.band_ylm(j) @ (frame.profile(j)[:, None] * a)
        bands.append(np.sqrt(band.weights)[:, None] * beta)
    dc = a[sh_index(0, 0)] / math.sqrt(4.0 * math.pi)
    return NeedletCoeffs(dc, bands)


def to_sh(coeffs: NeedletCoeffs, frame: NeedletFrame) -> SHCoeffs:
    """Harmonic coefficients of ``dc + sum_jk beta_jk psi_jk``."""
    check_match(coeffs, frame)
    a = np.zeros((n_coeffs(frame.lmax), coeffs.channels))
    a[0] = coeffs.dc * math.sqrt(4.0 * math.pi)
    for j, (band, beta) in enumerate(zip(frame.bands, coeffs.bands), start=1):
        weighted = np.sqrt(band.weights)[:, None] * beta
        a += frame.profile(j)[:, None] * (frame.band_ylm(j).T @ weighted)
    return SHCoeffs(frame.lmax, a)


def synthesize_at(coeffs: NeedletCoeffs, frame: NeedletFrame, theta, phi) -> np.ndarray:
    sh = to_sh(coeffs, frame)
    return ylm_matrix(frame.lmax, theta, phi) @ sh.coeffs


def synthesize(coeffs: NeedletCoeffs, frame: NeedletFrame, H: int, W: int) -> np.ndarray:
    """Reconstruction at every pixel centre of an ``H x W`` panorama.

    Returns the raw (H, W, channels) array; negative values are kept.
    """
    tt, pp = equirect_angles(H, W)
    return synthesize_at(coeffs, frame, tt.ravel(), pp.ravel()).reshape(H, W, -1)


def frame_summary(frame: NeedletFrame) -> dict:
    out = {"B": frame.B, "j_max": frame.j_max, "scheme": frame.scheme, "lmax": frame.lmax, "bands": []}
    for j, band in enumerate(frame.bands, start=1):
        nz = np.nonzero(frame.profile(j))[0]
        ls = degrees(frame.lmax)[nz]
        out["bands"].append(
            {"j": j, "points": len(band), "degrees": [int(ls.min()), int(ls.max())] if ls.size else []}
        )
    out["total_coefficients"] = frame.n_coeffs
    return out
