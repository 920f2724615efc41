"""Spherical geometry: directions, point sets, quadrature grids and panorama pixels.

Directions are stored as colatitude/longitude pairs ``(theta, phi)`` in
radians, with ``theta`` in [0, pi] and ``phi`` in [0, 2 pi). Most helpers
work on whole arrays of angles; :class:`SphDir` is the validated scalar form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FOUR_PI = 4.0 * math.pi

SCHEMES = ("paper_matching", "exact")


@dataclass(frozen=True)
class SphDir:
    """A single direction on the unit sphere."""

    theta: float
    phi: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= math.pi):
            raise ValueError(f"theta={self.theta} outside [0, pi]")
        if not (0.0 <= self.phi < 2.0 * math.pi):
            raise ValueError(f"phi={self.phi} outside [0, 2 pi)")

    @classmethod
    def from_vector(cls, v) -> "SphDir":
        theta, phi = vectors_to_angles(np.asarray(v, dtype=float))
        return cls(float(theta), float(phi))

    def to_vector(self) -> np.ndarray:
        return angles_to_vectors(self.theta, self.phi)


def wrap_phi(phi):
    """Map longitudes into [0, 2 pi)."""
    out = np.mod(phi, 2.0 * np.pi)
    # mod can return exactly 2 pi for tiny negative inputs
    return np.where(out >= 2.0 * np.pi, 0.0, out)


def angles_to_vectors(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def vectors_to_angles(v):
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(v[..., 2], -1.0, 1.0))
    phi = wrap_phi(np.arctan2(v[..., 1], v[..., 0]))
    return theta, phi


def geodesic_distance(u: SphDir, v: SphDir) -> float:
    """Great-circle distance in radians between two directions."""
    d = float(np.dot(u.to_vector(), v.to_vector()))
    return math.acos(min(1.0, max(-1.0, d)))


def pairwise_geodesic(theta_a, phi_a, theta_b, phi_b) -> np.ndarray:
    """Matrix of great-circle distances between two point sets."""
    va = angles_to_vectors(theta_a, phi_a)
    vb = angles_to_vectors(theta_b, phi_b)
    return np.arccos(np.clip(va @ vb.T, -1.0, 1.0))


@dataclass(frozen=True)
class QuadGrid:
    """Quadrature rule on the sphere.

    ``lmax_exact`` is the largest degree ``L`` such that every product
    ``Y_lm * Y_l'm'`` with ``l, l' <= L`` is integrated exactly.
    """

    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray
    lmax_exact: int

    def __post_init__(self):
        if not (self.theta.shape == self.phi.shape == self.weights.shape):
            raise ValueError("theta, phi and weights must have the same shape")
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    def __len__(self):
        return self.theta.size

    def vectors(self) -> np.ndarray:
        return angles_to_vectors(self.theta, self.phi)


@dataclass(frozen=True)
class CubatureBand:
    """Cubature points and weights anchoring the coefficients of band ``j``."""

    j: int
    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray
    scheme: str = "paper_matching"
    lmax_exact: int | None = field(default=None)

    def __post_init__(self):
        if self.j < 1:
            raise ValueError("band index must be >= 1")
        if not (self.theta.shape == self.phi.shape == self.weights.shape):
            raise ValueError("points and weights differ in length")
        if np.any(self.weights <= 0):
            raise ValueError("cubature weights must be positive")

    def __len__(self):
        return self.theta.size

    @property
    def points(self) -> list[SphDir]:
        return [SphDir(float(t), float(p)) for t, p in zip(self.theta, self.phi)]

    def vectors(self) -> np.ndarray:
        return angles_to_vectors(self.theta, self.phi)


def gauss_product_grid(lmax: int) -> QuadGrid:
    """Gauss-Legendre in cos(theta) times equispaced longitudes.

    ``lmax + 1`` latitude nodes integrate polynomials of degree ``2 lmax + 1``
    in cos(theta); ``2 lmax + 2`` longitudes integrate trigonometric terms up
    to order ``2 lmax + 1``.
    """
    if lmax < 0:
        raise ValueError("lmax must be >= 0")
    x, wx = np.polynomial.legendre.leggauss(lmax + 1)
    nphi = 2 * lmax + 2
    phi = np.arange(nphi) * (2.0 * np.pi / nphi)
    theta = np.arccos(x)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    ww = np.repeat(wx[:, None] * (2.0 * np.pi / nphi), nphi, axis=1)
    return QuadGrid(tt.ravel(), pp.ravel(), ww.ravel(), lmax)


def healpix_ring_centers(nside: int):
    """Pixel centres of the HEALPix RING ordering, ``12 nside**2`` points.

    All pixels have equal area, so the centres form a quasi-uniform,
    hierarchical point set (each pixel splits into four at ``2 nside``).
    """
    if nside < 1:
        raise ValueError("nside must be >= 1")
    npix = 12 * nside * nside
    ncap = 2 * nside * (nside - 1)
    theta = np.empty(npix)
    phi = np.empty(npix)

    # north polar cap
    p = np.arange(ncap)
    ring = np.floor(0.5 * (1.0 + np.sqrt(1.0 + 2.0 * p))).astype(int)
    iphi = p + 1 - 2 * ring * (ring - 1)
    z = 1.0 - ring**2 / (3.0 * nside**2)
    theta[:ncap] = np.arccos(z)
    phi[:ncap] = (iphi - 0.5) * np.pi / (2.0 * ring)

    # equatorial belt
    p = np.arange(ncap, npix - ncap)
    ip = p - ncap
    ring = ip // (4 * nside) + nside
    iphi = ip % (4 * nside) + 1
    shift = 0.5 * (1 + (ring + nside) % 2)
    z = (2 * nside - ring) * 2.0 / (3.0 * nside)
    theta[ncap : npix - ncap] = np.arccos(z)
    phi[ncap : npix - ncap] = (iphi - shift) * np.pi / (2.0 * nside)

    # south polar cap mirrors the north one
    p = np.arange(npix - ncap, npix)
    ip = npix - p
    ring = np.floor(0.5 * (1.0 + np.sqrt(2.0 * ip - 1.0))).astype(int)
    iphi = 4 * ring + 1 - (ip - 2 * ring * (ring - 1))
    z = -1.0 + ring**2 / (3.0 * nside**2)
    theta[npix - ncap :] = np.arccos(z)
    phi[npix - ncap :] = (iphi - 0.5) * np.pi / (2.0 * ring)

    return theta, wrap_phi(phi)


def fibonacci_points(n: int):
    """Spherical Fibonacci lattice with ``n`` points."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    golden = math.pi * (3.0 - math.sqrt(5.0))
    return np.arccos(z), wrap_phi(golden * np.arange(n))


def quasi_uniform_points(n: int):
    """Equal-weight point set of size ``n``: HEALPix when ``n = 12 k**2``."""
    if n < 1:
        raise ValueError("need at least one point")
    k = math.isqrt(n // 12) if n % 12 == 0 else 0
    if k > 0 and 12 * k * k == n:
        return healpix_ring_centers(k)
    return fibonacci_points(n)


def band_top_degree(B: float, j: int) -> int:
    # guards against B**(j+1) landing a hair below an integer
    return int(math.floor(B ** (j + 1) + 1e-9))


def make_band_points(j: int, scheme: str = "paper_matching", B: float = 2.0) -> CubatureBand:
    """Cubature for needlet band ``j``.

    ``paper_matching`` gives ``12 * 4**(j-1)`` equal-area points with equal
    weights, so three bands hold 12 + 48 + 192 = 252 coefficients.
    ``exact`` gives a Gauss product grid exact up to the band's top degree
    ``floor(B**(j+1))``.
    """
    if j < 1:
        raise ValueError("band index must be >= 1")
    if scheme == "paper_matching":
        nside = 2 ** (j - 1)
        theta, phi = healpix_ring_centers(nside)
        w = np.full(theta.size, FOUR_PI / theta.size)
        return CubatureBand(j, theta, phi, w, scheme)
    if scheme == "exact":
        grid = gauss_product_grid(band_top_degree(B, j))
        return CubatureBand(j, grid.theta, grid.phi, grid.weights, scheme, grid.lmax_exact)
    raise ValueError(f"unsupported cubature scheme {scheme!r}; expected one of {SCHEMES}")


def _check_dims(H: int, W: int):
    if H < 2 or W < 4:
        raise ValueError(f"degenerate panorama {H}x{W}; need H >= 2 and W >= 4")


def equirect_angles(H: int, W: int):
    """Pixel-centre angles of an ``H x W`` panorama, each shaped (H, W)."""
    _check_dims(H, W)
    theta = (np.arange(H) + 0.5) * (np.pi / H)
    phi = (np.arange(W) + 0.5) * (2.0 * np.pi / W)
    return np.meshgrid(theta, phi, indexing="ij")


def equirect_geometry(H: int, W: int):
    """Pixel-centre angles and solid-angle weights ``sin(theta) dtheta dphi``."""
    tt, pp = equirect_angles(H, W)
    w = np.sin(tt) * (np.pi / H) * (2.0 * np.pi / W)
    return tt, pp, w


def fejer_weights(n: int) -> np.ndarray:
    """Fejer's first rule on the nodes ``cos((k + 1/2) pi / n)``.

    Integrates polynomials of degree ``n - 1`` on [-1, 1] exactly.
    """
    theta = (np.arange(n) + 0.5) * np.pi / n
    jj = np.arange(1, n // 2 + 1)
    s = np.cos(2.0 * np.outer(theta, jj)) / (4.0 * jj**2 - 1.0)
    return (2.0 / n) * (1.0 - 2.0 * s.sum(axis=1))


def equirect_quadrature(H: int, W: int) -> QuadGrid:
    """Quadrature on panorama pixel centres, exact for band-limited products.

    Uses Fejer latitude weights instead of plain ``sin(theta)`` solid angles,
    which makes projections onto harmonics of degree ``<= lmax_exact`` exact.
    """
    tt, pp = equirect_angles(H, W)
    w = np.repeat(fejer_weights(H)[:, None] * (2.0 * np.pi / W), W, axis=1)
    lmax_exact = min((H - 1) // 2, (W - 1) // 2)
    return QuadGrid(tt.ravel(), pp.ravel(), w.ravel(), lmax_exact)


def nearest_neighbor_distances(theta, phi) -> np.ndarray:
    d = pairwise_geodesic(theta, phi, theta, phi)
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1)


def nearest_point(theta, phi, targets_theta, targets_phi) -> np.ndarray:
    """Index of the nearest target point for each query direction."""
    q = angles_to_vectors(theta, phi).reshape(-1, 3)
    t = angles_to_vectors(targets_theta, targets_phi)
    return np.argmax(q @ t.T, axis=1).reshape(np.shape(theta))
