"""Planar helpers: segment/rectangle clipping and rectangle overlap tests.

Rectangles are (x0, y0, x1, y1) with x0 <= x1 and y0 <= y1, treated as
closed sets for clipping purposes.
"""

from __future__ import annotations

import math

import numpy as np


def normalize_rect(rect):
    x0, y0, x1, y1 = rect
    return (min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def rects_interior_overlap(a, b) -> bool:
    """True when the open interiors of two rectangles intersect (touching
    edges do not count)."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def rect_contains_point(rect, point) -> bool:
    x0, y0, x1, y1 = rect
    x, y = point
    return x0 <= x <= x1 and y0 <= y <= y1


def clip_lengths(origin, endpoints: np.ndarray, rect) -> np.ndarray:
    """Length of each segment origin->endpoints[i] inside ``rect``.

    Liang-Barsky parametric clipping, vectorized over endpoints. A segment
    running along a rectangle edge counts as inside (closed-set semantics).
    """
    x0, y0, x1, y1 = rect
    origin = np.asarray(origin, dtype=float)
    endpoints = np.atleast_2d(np.asarray(endpoints, dtype=float))
    d = endpoints - origin
    n = endpoints.shape[0]

    t_lo = np.zeros(n)
    t_hi = np.ones(n)
    alive = np.ones(n, dtype=bool)
    # (p, q) pairs: constraint is t*p <= q for each rectangle face.
    faces = (
        (-d[:, 0], origin[0] - x0),
        (d[:, 0], x1 - origin[0]),
        (-d[:, 1], origin[1] - y0),
        (d[:, 1], y1 - origin[1]),
    )
    for p, q in faces:
        q = np.broadcast_to(np.asarray(q, dtype=float), (n,))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(p != 0, q / np.where(p != 0, p, 1.0), 0.0)
        t_lo = np.where(p < 0, np.maximum(t_lo, r), t_lo)
        t_hi = np.where(p > 0, np.minimum(t_hi, r), t_hi)
        alive &= ~((p == 0) & (q < 0))

    span = np.clip(t_hi - t_lo, 0.0, None)
    return np.where(alive, span * np.hypot(d[:, 0], d[:, 1]), 0.0)


def clip_length(p0, p1, rect) -> float:
    return float(clip_lengths(p0, np.asarray([p1], dtype=float), rect)[0])


def distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])
