"""Real orthonormal spherical harmonics and direct-summation transforms.

The real basis relates to the complex one through a fixed unitary change of
basis per degree, so projections and reconstructions carry the same content
while staying real-valued. Condon-Shortley phase is included::

    Y_l0  = N_l0 P_l^0(cos t)
    Y_lm  = sqrt(2) N_lm P_l^m(cos t) cos(m p)     m > 0
    Y_l-m = sqrt(2) N_lm P_l^m(cos t) sin(m p)     m > 0

Coefficients are stored flat, index ``l*l + l + m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sphgeom import QuadGrid, SphDir

LMAX_CAP = 64


def sh_index(l: int, m: int) -> int:
    return l * l + l + m


def n_coeffs(lmax: int) -> int:
    return (lmax + 1) ** 2


def degrees(lmax: int) -> np.ndarray:
    """Degree ``l`` of every flat coefficient slot up to ``lmax``."""
    return np.repeat(np.arange(lmax + 1), 2 * np.arange(lmax + 1) + 1)


@dataclass(frozen=True)
class SHCoeffs:
    """Real SH coefficients, array shaped ((lmax+1)**2, channels)."""

    lmax: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if c.shape[0] != n_coeffs(self.lmax):
            raise ValueError(
                f"expected {n_coeffs(self.lmax)} coefficients for lmax={self.lmax}, got {c.shape[0]}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("SH coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def channels(self) -> int:
        return self.coeffs.shape[1]

    def get(self, l: int, m: int) -> np.ndarray:
        return self.coeffs[sh_index(l, m)]


def _normalized_legendre(lmax: int, x: np.ndarray) -> np.ndarray:
    """``N_lm P_l^m(x)`` for 0 <= m <= l <= lmax, shape (lmax+1, lmax+1, n).

    Standard three-term recurrence on fully normalised functions, stable well
    past degree 64.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    p = np.zeros((lmax + 1, lmax + 1) + x.shape)
    p[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, lmax + 1):
        p[m, m] = -math.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * p[m - 1, m - 1]
    for m in range(0, lmax):
        p[m + 1, m] = math.sqrt(2.0 * m + 3.0) * x * p[m, m]
    for m in range(0, lmax + 1):
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p[l, m] = a * (x * p[l - 1, m] - b * p[l - 2, m])
    return p


def _check_lmax(lmax: int):
    if lmax < 0 or lmax > LMAX_CAP:
        raise ValueError(f"lmax={lmax} outside supported range [0, {LMAX_CAP}]")


def ylm_matrix(lmax: int, theta, phi) -> np.ndarray:
    """All real harmonics up to ``lmax`` at the given angles, shape (n, (lmax+1)**2)."""
    _check_lmax(lmax)
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).ravel()
    phi = np.atleast_1d(np.asarray(phi, dtype=float)).ravel()
    p = _normalized_legendre(lmax, np.cos(theta))
    out = np.empty((theta.size, n_coeffs(lmax)))
    m = np.arange(1, lmax + 1)
    cos_m = np.cos(np.outer(phi, m)).T
    sin_m = np.sin(np.outer(phi, m)).T
    root2 = math.sqrt(2.0)
    for l in range(lmax + 1):
        c = l * l + l
        out[:, c] = p[l, 0]
        if l:
            out[:, c + 1 : c + l + 1] = (root2 * p[l, 1 : l + 1] * cos_m[:l]).T
            out[:, c - l : c][:, ::-1] = (root2 * p[l, 1 : l + 1] * sin_m[:l]).T
    return out


def eval_ylm(l: int, m: int, d: SphDir) -> float:
    if l < 0 or abs(m) > l:
        raise ValueError(f"invalid harmonic (l={l}, m={m}); need |m| <= l")
    return float(ylm_matrix(l, d.theta, d.phi)[0, sh_index(l, m)])


def legendre_series(cos_gamma, weights) -> np.ndarray:
    """``sum_l weights[l] (2l+1)/(4 pi) P_l(cos_gamma)``.

    By the addition theorem this equals ``sum_l weights[l] sum_m
    Y_lm(u) Y_lm(v)`` with ``cos_gamma = u . v``.
    """
    x = np.asarray(cos_gamma, dtype=float)
    p_prev = np.ones_like(x)
    total = weights[0] * p_prev / (4.0 * math.pi)
    if len(weights) == 1:
        return total
    p = x.copy()
    total = total + weights[1] * 3.0 * p / (4.0 * math.pi)
    for l in range(2, len(weights)):
        p_prev, p = p, ((2 * l - 1) * x * p - (l - 1) * p_prev) / l
        total = total + weights[l] * (2 * l + 1) * p / (4.0 * math.pi)
    return total


def sht_forward(values, grid: QuadGrid, lmax: int) -> SHCoeffs:
    """Project samples on a quadrature grid: ``a_lm = sum_i f_i Y_lm(x_i) w_i``.

    Raises if ``lmax`` exceeds what the grid integrates exactly.
    """
    _check_lmax(lmax)
    if lmax > grid.lmax_exact:
        raise ValueError(
            f"lmax={lmax} exceeds grid resolving power (lmax_exact={grid.lmax_exact})"
        )
    f = np.asarray(values, dtype=float).reshape(len(grid), -1)
    y = ylm_matrix(lmax, grid.theta, grid.phi)
    return SHCoeffs(lmax, y.T @ (f * grid.weights[:, None]))


def sht_inverse(coeffs: SHCoeffs, theta, phi) -> np.ndarray:
    """Evaluate ``sum_lm a_lm Y_lm`` at directions, shape (n, channels)."""
    y = ylm_matrix(coeffs.lmax, theta, phi)
    return y @ coeffs.coeffs
