"""Log-distance path-loss model: anchored least-squares fit and prediction.

The model is ``rss(d) = z0 - 10 * eta * log10(d / d0)`` with the intercept
anchored at the shortest observed link (d0, z0); only the exponent eta is
estimated. Shadow fading is defined downstream as the gap between this
model and measured RSS, which is why the anchor is not a free parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PathLossFit:
    eta: float
    z0_dbm: float
    d0_m: float

    def __post_init__(self):
        if self.d0_m <= 0:
            raise ValueError("d0_m must be positive")
        if not math.isfinite(self.eta):
            raise ValueError("eta must be finite")


def fit_plm(links) -> PathLossFit:
    """Fit the exponent from (distance_m, rss_dbm) pairs.

    d0 is the smallest distance; z0 the RSS measured there (distance ties
    take the smallest RSS, the conservative choice). eta is the least-squares
    slope of rss - z0 against -10*log10(d/d0).
    """
    links = [(float(d), float(z)) for d, z in links]
    if len(links) < 2:
        raise ValueError("need at least 2 links to fit")
    d = np.array([lk[0] for lk in links])
    z = np.array([lk[1] for lk in links])
    if np.any(d <= 0):
        raise ValueError("link distances must be positive")
    d0 = d.min()
    z0 = z[d == d0].min()
    g = -10.0 * np.log10(d / d0)
    denom = float(np.dot(g, g))
    if denom == 0.0:
        raise ValueError("all link distances equal; exponent is unidentifiable")
    eta = float(np.dot(g, z - z0) / denom)
    return PathLossFit(eta=eta, z0_dbm=float(z0), d0_m=float(d0))


def predict_at_distances(fit: PathLossFit, distances) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    return fit.z0_dbm - 10.0 * fit.eta * np.log10(d / fit.d0_m)


def plm_predict(fit: PathLossFit, tx, rx) -> float:
    """Model RSS for the link tx->rx (symmetric in its endpoints)."""
    d = math.hypot(tx[0] - rx[0], tx[1] - rx[1])
    if d <= 0:
        raise ValueError("zero-length link")
    return float(predict_at_distances(fit, [d])[0])
