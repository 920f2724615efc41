"""Sparsification of needlet coefficients.

Coefficients are modelled as ``beta = s + phi + eta``: Laplace-distributed
light sources ``s``, Gaussian ambient ``phi`` and Gaussian noise ``eta``.
With per-band scalar covariances the MAP estimate of ``s`` is soft
thresholding at ``t = (sigma_phi2 + sigma_eta2) * lam``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .needlet import NeedletCoeffs

MAD_SCALE = 1.4826
VAR_FLOOR = 1e-12
MIN_BAND_SIZE = 8


@dataclass(frozen=True)
class SparsePrior:
    sigma_eta2: float
    sigma_phi2: float
    lam: float = 1.0

    def __post_init__(self):
        if not self.sigma_eta2 > 0 or not self.sigma_phi2 > 0:
            raise ValueError("variances must be positive")
        if not self.lam >= 0:
            raise ValueError("sparsity rate must be nonnegative")

    @property
    def threshold(self) -> float:
        # scalar form of [M_eta^-1 - (M_eta + M_eta M_phi^-1 M_eta)^-1]^-1 * lam
        return (self.sigma_phi2 + self.sigma_eta2) * self.lam


def estimate_prior(coeffs: NeedletCoeffs, j: int, lam: float = 1.0) -> SparsePrior:
    """Robust noise/ambient variances for band ``j`` (all channels pooled).

    Noise from the median absolute deviation, ambient from the excess of the
    sample variance over it.
    """
    if not 1 <= j <= len(coeffs.bands):
        raise ValueError(f"band {j} does not exist")
    x = coeffs.band(j).ravel()
    if x.size < MIN_BAND_SIZE:
        raise ValueError(f"band {j} has {x.size} coefficients; need at least {MIN_BAND_SIZE}")
    mad = np.median(np.abs(x - np.median(x)))
    sigma_eta2 = max((MAD_SCALE * mad) ** 2, VAR_FLOOR)
    sigma_phi2 = max(float(np.var(x)) - sigma_eta2, 0.1 * sigma_eta2)
    return SparsePrior(sigma_eta2, sigma_phi2, lam)


def estimate_priors(coeffs: NeedletCoeffs, lam: float = 1.0, bands: Iterable[int] | None = None) -> dict[int, SparsePrior]:
    bands = range(1, len(coeffs.bands) + 1) if bands is None else bands
    return {j: estimate_prior(coeffs, j, lam) for j in bands}


def default_bands(coeffs: NeedletCoeffs) -> set[int]:
    return set(range(2, len(coeffs.bands) + 1))


def soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def hard(x, t):
    return np.where(np.abs(x) > t, x, 0.0)


def _apply(op, coeffs: NeedletCoeffs, priors: Mapping[int, SparsePrior], apply_bands) -> NeedletCoeffs:
    apply_bands = default_bands(coeffs) if apply_bands is None else set(apply_bands)
    missing = sorted(j for j in apply_bands if j not in priors)
    if missing:
        raise KeyError(f"no prior for band(s) {missing}")
    out = coeffs.copy()
    for j in apply_bands:
        if not 1 <= j <= len(out.bands):
            raise ValueError(f"band {j} does not exist")
        out.bands[j - 1] = op(out.bands[j - 1], priors[j].threshold)
    return out


def soft_threshold(coeffs: NeedletCoeffs, priors: Mapping[int, SparsePrior], apply_bands=None) -> NeedletCoeffs:
    """Shrink ``|beta|`` by the band threshold; dc and other bands pass through."""
    return _apply(soft, coeffs, priors, apply_bands)


def hard_threshold(coeffs: NeedletCoeffs, priors: Mapping[int, SparsePrior], apply_bands=None) -> NeedletCoeffs:
    """Keep coefficients with ``|beta| > t`` unchanged, zero the rest."""
    return _apply(hard, coeffs, priors, apply_bands)


def sparsify(coeffs: NeedletCoeffs, lam: float = 1.0, apply_bands=None, mode: str = "soft") -> NeedletCoeffs:
    """Estimate per-band priors and threshold in one step."""
    apply_bands = default_bands(coeffs) if apply_bands is None else set(apply_bands)
    priors = estimate_priors(coeffs, lam, apply_bands)
    op = {"soft": soft_threshold, "hard": hard_threshold}[mode]
    return op(coeffs, priors, apply_bands)
