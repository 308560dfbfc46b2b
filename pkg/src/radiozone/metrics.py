"""Prediction-quality metrics: MAE, truth-thresholded MAE, per-RSS-range
error histograms, and map-reconstruction error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def mae_metric(preds, truths) -> float:
    preds = np.asarray(preds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if preds.shape != truths.shape:
        raise ValueError("preds and truths must have equal lengths")
    if preds.size == 0:
        raise ValueError("empty prediction set")
    return float(np.abs(preds - truths).mean())


def mae_thresholded(preds, truths, floor_dbm: float) -> float:
    """MAE over pairs whose true RSS exceeds the floor."""
    preds = np.asarray(preds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    keep = truths > floor_dbm
    if not np.any(keep):
        raise ValueError(f"no pairs with truth above {floor_dbm} dBm")
    return mae_metric(preds[keep], truths[keep])


@dataclass(frozen=True)
class HistogramBin:
    lo_dbm: float
    hi_dbm: float
    mae_db: float | None
    population_pct: float


def rss_range_histogram(preds, truths, bin_edges) -> list[HistogramBin]:
    """Per-bin MAE and population share, binned by true RSS.

    Edges must be strictly increasing; values outside the outer edges are
    folded into the end bins so populations always sum to 100%.
    """
    preds = np.asarray(preds, dtype=float)
    truths = np.asarray(truths, dtype=float)
    edges = np.asarray(bin_edges, dtype=float)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    if preds.size == 0:
        raise ValueError("empty prediction set")
    idx = np.clip(np.searchsorted(edges, truths, side="right") - 1, 0, len(edges) - 2)
    out = []
    for b in range(len(edges) - 1):
        sel = idx == b
        count = int(sel.sum())
        mae = float(np.abs(preds[sel] - truths[sel]).mean()) if count else None
        out.append(HistogramBin(
            lo_dbm=float(edges[b]),
            hi_dbm=float(edges[b + 1]),
            mae_db=mae,
            population_pct=100.0 * count / preds.size,
        ))
    return out


def map_reconstruction_error(p_hat: np.ndarray, true_density: np.ndarray) -> float:
    """Relative L2 gap between min-max-normalized reconstruction and the
    normalized true density image; lower is better."""
    a = np.asarray(p_hat, dtype=float).ravel()
    b = np.asarray(true_density, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("field shapes differ")

    def norm01(v):
        span = v.max() - v.min()
        return (v - v.min()) / span if span > 0 else np.zeros_like(v)

    nb = norm01(b)
    ref = float(np.linalg.norm(nb))
    if ref == 0:
        raise ValueError("true density image is constant; error undefined")
    return float(np.linalg.norm(norm01(a) - nb)) / ref
