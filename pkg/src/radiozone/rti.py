"""Tomographic reconstruction of the spatial loss field from link shadowing.

Links whose measured RSS falls short of the path-loss model carry positive
shadow values; each link's shadow is modeled as a weighted sum of per-pixel
loss contributions over the pixels inside a narrow ellipse with the link
endpoints as foci. The field is recovered by regularized least squares with
an exponential-covariance prior, then rescaled into the map image consumed
by the learned predictors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
from scipy.spatial.distance import cdist

from .envgen import GridSpec
from .errors import ConditioningError
from .plm import PathLossFit, predict_at_distances

#: Relative residual bound asserted on every normal-equation solve.
RESIDUAL_TOL = 1e-8

_LINK_CHUNK = 512


@dataclass(frozen=True)
class ShadowVector:
    """Per-link shadow fading (dB), aligned with its (tx, rx) link list."""

    values: np.ndarray
    link_index: tuple[tuple[tuple[float, float], tuple[float, float]], ...]

    def __post_init__(self):
        if len(self.values) != len(self.link_index):
            raise ValueError("values and link_index lengths differ")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("shadow values must be finite")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SlfEstimate:
    """Reconstructed loss field plus the scaling constants for image
    construction: field extrema and the training shadow extrema."""

    p_hat: np.ndarray
    grid: GridSpec
    scale_min: float
    scale_max: float
    v_min: float
    v_max: float

    def __post_init__(self):
        if len(self.p_hat) != self.grid.n_pixels:
            raise ValueError("field length does not match the grid")
        if not np.all(np.isfinite(self.p_hat)):
            raise ValueError("field must be finite")


def shadow_vector(examples, fit: PathLossFit) -> ShadowVector:
    """Model-minus-measured RSS for every link of the training examples."""
    links = []
    values = []
    for ex in examples:
        tx = ex.tx_loc
        d = np.array([math.hypot(rx[0] - tx[0], rx[1] - tx[1]) for rx, _ in ex.chosen])
        ideal = predict_at_distances(fit, d)
        for (rx, rss), z_i in zip(ex.chosen, ideal):
            links.append((tx, rx))
            values.append(float(z_i) - rss)
    if not links:
        raise ValueError("no links to form a shadow vector")
    return ShadowVector(values=np.array(values), link_index=tuple(links))


def _link_arrays(links):
    tx = np.array([lk[0] for lk in links], dtype=float)
    rx = np.array([lk[1] for lk in links], dtype=float)
    d = np.hypot(tx[:, 0] - rx[:, 0], tx[:, 1] - rx[:, 1])
    if np.any(d <= 0):
        raise ValueError("zero-length link in weight matrix")
    return tx, rx, d


def weight_matrix(links, grid: GridSpec, ellipse_width_m: float) -> scipy.sparse.csr_matrix:
    """Sparse (links x pixels) matrix: 1/sqrt(d_k) on pixels whose center
    lies inside the link's ellipse (focal distance sum <= d_k + width)."""
    if ellipse_width_m <= 0:
        raise ValueError("ellipse_width_m must be positive")
    tx, rx, d = _link_arrays(links)
    centers = grid.centers()
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    for lo in range(0, len(d), _LINK_CHUNK):
        hi = min(lo + _LINK_CHUNK, len(d))
        sums = (
            cdist(tx[lo:hi], centers)
            + cdist(rx[lo:hi], centers)
        )
        member = sums <= (d[lo:hi, None] + ellipse_width_m)
        r, c = np.nonzero(member)
        rows.append(r + lo)
        cols.append(c)
        data.append(1.0 / np.sqrt(d[lo:hi])[r])
    return scipy.sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(d), grid.n_pixels),
    )


def covariance_matrix(grid: GridSpec, sigma2: float, delta: float) -> np.ndarray:
    """Exponential pixel-pair covariance (sigma2/delta) * exp(-d_ij/delta);
    symmetric positive definite by construction."""
    if sigma2 <= 0 or delta <= 0:
        raise ValueError("sigma2 and delta must be positive")
    centers = grid.centers()
    dist = cdist(centers, centers)
    return (sigma2 / delta) * np.exp(-dist / delta)


def solve_slf(
    w: scipy.sparse.spmatrix,
    v: ShadowVector,
    sigma_n2: float,
    c: np.ndarray,
    grid: GridSpec,
) -> SlfEstimate:
    """Solve (W'W + sigma_n2 * C^-1) p = W'v and package the estimate.

    The explicit-inverse form is avoided; C is Cholesky-factorized and the
    regularized normal equations are solved directly. The relative residual
    must not exceed ``RESIDUAL_TOL``.
    """
    if sigma_n2 < 0:
        raise ValueError("sigma_n2 must be >= 0")
    n_links, n_pix = w.shape
    if n_links != len(v):
        raise ValueError("weight matrix rows != shadow vector length")
    if c.shape != (n_pix, n_pix):
        raise ValueError("covariance shape does not match pixel count")
    if n_pix != grid.n_pixels:
        raise ValueError("grid does not match the weight matrix")

    try:
        cho = scipy.linalg.cho_factor(c, check_finite=False)
        c_inv = scipy.linalg.cho_solve(cho, np.eye(n_pix), check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise ConditioningError(f"covariance is not positive definite: {exc}") from exc

    a = (w.T @ w).toarray() + sigma_n2 * c_inv
    a = (a + a.T) / 2.0
    b = w.T @ v.values
    try:
        p_hat = scipy.linalg.solve(a, b, assume_a="pos", check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise ConditioningError(
            f"regularized normal equations are singular: {exc}"
        ) from exc

    b_norm = float(np.linalg.norm(b))
    residual = float(np.linalg.norm(a @ p_hat - b))
    rel = residual / b_norm if b_norm > 0 else residual
    if rel > RESIDUAL_TOL:
        raise ConditioningError(
            f"normal-equation relative residual {rel:.3e} exceeds {RESIDUAL_TOL:.0e}"
        )
    return SlfEstimate(
        p_hat=p_hat,
        grid=grid,
        scale_min=float(p_hat.min()),
        scale_max=float(p_hat.max()),
        v_min=float(v.values.min()),
        v_max=float(v.values.max()),
    )


def slf_to_map_image(slf: SlfEstimate) -> np.ndarray:
    """Map image in [0, 1]: min-max normalize the field and invert so high
    loss shows dark (low). A constant field maps to all ones."""
    span = slf.scale_max - slf.scale_min
    if span <= 0:
        scaled = np.zeros_like(slf.p_hat)
    else:
        scaled = (slf.p_hat - slf.scale_min) / span
    return (1.0 - scaled).reshape(slf.grid.grid_l, slf.grid.grid_w)


def link_shadow_estimates(
    slf: SlfEstimate,
    tx,
    rx_points,
    ellipse_width_m: float,
) -> np.ndarray:
    """Estimated shadow (dB) on each tx->rx link, from the recovered field."""
    links = [(tuple(tx), tuple(rx)) for rx in rx_points]
    w = weight_matrix(links, slf.grid, ellipse_width_m)
    return np.asarray(w @ slf.p_hat)


def link_shading_image(
    slf: SlfEstimate,
    tx,
    rx_set,
    grid: GridSpec,
    ellipse_width_m: float,
) -> np.ndarray:
    """Shading image: per-link shadow estimates scaled by the training
    shadow extrema, inverted, clamped to [0, 1], written at receiver pixels
    (zero elsewhere)."""
    rx_set = list(rx_set)
    if not rx_set:
        raise ValueError("rx_set must be nonempty")
    v_hat = link_shadow_estimates(slf, tx, rx_set, ellipse_width_m)
    span = slf.v_max - slf.v_min
    if span <= 0:
        scaled = np.zeros_like(v_hat)
    else:
        scaled = (v_hat - slf.v_min) / span
    shades = np.clip(1.0 - scaled, 0.0, 1.0)
    image = np.zeros((grid.grid_l, grid.grid_w))
    for rx, s in zip(rx_set, shades):
        i, j = grid.voxel_of(rx)
        image[i, j] = s
    return image


def write_field(path, values: np.ndarray, grid: GridSpec) -> None:
    """Portable grayscale dump: three header lines (width along x, width
    along y, voxel length), then one float per line in flat-index order."""
    flat = np.asarray(values).ravel()
    if len(flat) != grid.n_pixels:
        raise ValueError("value count does not match the grid")
    with open(path, "w") as fh:
        fh.write(f"{grid.grid_l}\n{grid.grid_w}\n{grid.voxel_len_m!r}\n")
        for x in flat:
            fh.write(f"{float(x)!r}\n")


def read_field(path) -> tuple[np.ndarray, GridSpec]:
    with open(path) as fh:
        lines = fh.read().split()
    grid = GridSpec(int(lines[0]), int(lines[1]), float(lines[2]))
    values = np.array([float(tok) for tok in lines[3:]])
    if len(values) != grid.n_pixels:
        raise ValueError("field file length does not match its header")
    return values.reshape(grid.grid_l, grid.grid_w), grid


def write_field_csv(path, image: np.ndarray) -> None:
    """Delimited text export: one grid row per line."""
    image = np.atleast_2d(image)
    with open(path, "w") as fh:
        for row in image:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
