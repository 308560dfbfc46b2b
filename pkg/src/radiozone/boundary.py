"""Boundary proposal and transmit-power adaptation for secondary
transmitters.

The proposal is an iterative threshold search: starting at the noise floor
and climbing in fixed steps, stop at the first threshold under which at
least N predicted-RSS values fall; those N points (nearest the transmitter,
ties broken lexicographically) become the proposed boundary and the final
threshold is the guaranteed out-of-zone leakage. If the threshold would
reach the fitted z0 cap before N points qualify, the request is denied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from shapely.geometry import MultiPoint, Point, Polygon

from .errors import DeniedError
from .plm import PathLossFit

#: Grid-search resolution (dB) for the power-adaptation placeholder.
POWER_STEP_DB = 0.25
_MAX_POWER_REDUCTION_DB = 200.0


@dataclass(frozen=True)
class BoundaryConfig:
    n_points: int = 20
    step_g_db: float = 10.0
    noise_floor_dbm: float = -100.0
    z0_cap_dbm: float = -22.45

    def __post_init__(self):
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")
        if self.step_g_db <= 0:
            raise ValueError("step_g_db must be positive")


@dataclass(frozen=True)
class BoundaryProposal:
    tx_loc: tuple[float, float]
    points: tuple[tuple[float, float], ...]
    pred_dbm: tuple[float, ...]
    z_ooz_dbm: float
    iterations_m: int
    z_th_final_dbm: float


@dataclass(frozen=True)
class ProtectionBoundary:
    """Reactively estimated no-interference polygon around a primary
    transmitter; ``margin_db`` is the tolerated excess above the noise
    floor at its receivers."""

    center: tuple[float, float]
    points: tuple[tuple[float, float], ...]
    margin_db: float = 0.0

    def __post_init__(self):
        if len(self.points) < 3:
            raise ValueError("protection polygon needs >= 3 vertices")
        if not Polygon(self.points).covers(Point(self.center)):
            raise ValueError("protection polygon must enclose its center")

    def polygon(self) -> Polygon:
        return Polygon(self.points)


def propose_boundary(predictions, cfg: BoundaryConfig, tx_loc) -> BoundaryProposal:
    """Run the threshold search over (point, predicted dBm) pairs.

    Thresholds follow ``noise_floor + (m - 1) * step``; only thresholds
    strictly below the z0 cap are tried. Raises ``DeniedError`` when the
    schedule is exhausted without N qualifying points.
    """
    predictions = [((float(p[0]), float(p[1])), float(v)) for p, v in predictions]
    if len(predictions) < cfg.n_points:
        raise ValueError(
            f"{len(predictions)} predictions cannot yield {cfg.n_points} boundary points"
        )
    for _, v in predictions:
        if not math.isfinite(v):
            raise ValueError("predictions must be finite")

    m = 1
    while True:
        z_th = cfg.noise_floor_dbm + (m - 1) * cfg.step_g_db
        if z_th >= cfg.z0_cap_dbm:
            raise DeniedError(
                f"threshold {z_th} dBm reached the cap {cfg.z0_cap_dbm} dBm "
                f"after {m - 1} iterations; transmission denied"
            )
        qualifying = [(p, v) for p, v in predictions if v < z_th]
        if len(qualifying) >= cfg.n_points:
            qualifying.sort(key=lambda pv: (
                math.hypot(pv[0][0] - tx_loc[0], pv[0][1] - tx_loc[1]),
                pv[0][0], pv[0][1],
            ))
            chosen = qualifying[:cfg.n_points]
            return BoundaryProposal(
                tx_loc=(float(tx_loc[0]), float(tx_loc[1])),
                points=tuple(p for p, _ in chosen),
                pred_dbm=tuple(v for _, v in chosen),
                z_ooz_dbm=z_th,
                iterations_m=m,
                z_th_final_dbm=z_th,
            )
        m += 1


def proposal_accuracy(proposal: BoundaryProposal, truths) -> float:
    """Fraction of boundary points whose prediction is at or above the true
    RSS (exact ties cause no interference, so they count as accurate)."""
    truths = [float(t) for t in truths]
    if len(truths) != len(proposal.points):
        raise ValueError("need one truth value per boundary point")
    hits = sum(1 for p, t in zip(proposal.pred_dbm, truths) if p >= t)
    return hits / len(truths)


def encloses_transmitter(proposal: BoundaryProposal) -> bool:
    """Whether the convex hull of the proposed points covers the
    transmitter (connectivity is not otherwise enforced; reports flag
    failures)."""
    hull = MultiPoint(list(proposal.points)).convex_hull
    return bool(hull.covers(Point(proposal.tx_loc)))


def _shrunk_points(proposal: BoundaryProposal, scale: float):
    tx, ty = proposal.tx_loc
    return [
        (tx + (px - tx) * scale, ty + (py - ty) * scale)
        for px, py in proposal.points
    ]


def adapt_power(
    proposal: BoundaryProposal,
    protections,
    p_pn_dbm: float,
    fit: PathLossFit,
) -> float:
    """Largest granted power (<= p_pn_dbm) whose shrunk boundary avoids all
    protection polygons.

    A power cut of D dB shrinks boundary radii by ``10^(-D / (20 * eta))``;
    this is a simulation-grade stand-in, verified by re-testing the
    intersection after scaling. Grid-searched at ``POWER_STEP_DB``.
    """
    protections = list(protections)
    if not protections:
        return p_pn_dbm
    if fit.eta <= 0:
        raise ValueError("power adaptation needs a positive path-loss exponent")
    polys = [p.polygon() for p in protections]
    tx_point = Point(proposal.tx_loc)
    if any(poly.covers(tx_point) for poly in polys):
        raise DeniedError("secondary transmitter inside a protection zone")

    reduction = 0.0
    while reduction <= _MAX_POWER_REDUCTION_DB:
        scale = 10.0 ** (-reduction / (20.0 * fit.eta))
        pts = _shrunk_points(proposal, scale)
        if not any(poly.covers(Point(pt)) for poly in polys for pt in pts):
            return p_pn_dbm - reduction
        reduction += POWER_STEP_DB
    raise DeniedError("boundary cannot be shrunk clear of protection zones")
