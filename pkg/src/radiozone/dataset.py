"""Crowdsourced measurement datasets: collection, K-nearest selection,
train/test transmitter splits, subset augmentation, and error injection.

Datasets are immutable values; every operation takes an explicit rng and is
pure, so per-transmitter work can run concurrently.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .envgen import TrueEnvironment, rss_to_points, valid_centers, valid_mask


class Measurement(NamedTuple):
    """One crowdsourced report; NamedTuple keeps bulk collection cheap."""

    rx_loc: tuple[float, float]
    rss_dbm: float
    tx_id: int
    timestamp: int = 0


@dataclass(frozen=True)
class DatasetEntry:
    tx_id: int
    tx_loc: tuple[float, float]
    measurements: tuple[Measurement, ...]


@dataclass(frozen=True)
class Dataset:
    """Measurements grouped per transmitter: tx_id -> entry."""

    entries: dict[int, DatasetEntry]

    def __post_init__(self):
        locs = [e.tx_loc for e in self.entries.values()]
        if len(set(locs)) != len(locs):
            raise ValueError("transmitter locations must be unique")
        for tx_id, entry in self.entries.items():
            if entry.tx_id != tx_id:
                raise ValueError(f"entry key {tx_id} != entry tx_id {entry.tx_id}")
            for m in entry.measurements:
                if m.tx_id != tx_id:
                    raise ValueError(f"measurement tx_id {m.tx_id} under entry {tx_id}")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class TrainingExample:
    """One transmitter with its selected (rx_loc, rss_dbm) measurements,
    ordered by ascending distance to the transmitter."""

    tx_loc: tuple[float, float]
    chosen: tuple[tuple[tuple[float, float], float], ...]


def collect_dataset(
    env: TrueEnvironment,
    tx_locs,
    rng: np.random.Generator | None = None,
) -> Dataset:
    """Measure RSS at every valid grid point for each transmitter.

    The transmitter's own voxel is excluded, as are points closer than the
    reference distance (none exist when transmitters sit on grid points and
    ref_dist_m equals the voxel length).
    """
    tx_locs = [tuple(map(float, t)) for t in tx_locs]
    if len(set(tx_locs)) != len(tx_locs):
        raise ValueError("duplicate transmitter locations")
    for t in tx_locs:
        if not env.grid.contains(t):
            raise ValueError(f"transmitter {t} outside the area")

    centers = valid_centers(env)
    indices = np.flatnonzero(valid_mask(env).ravel())
    entries: dict[int, DatasetEntry] = {}
    for tx_id, tx in enumerate(tx_locs):
        d = np.hypot(centers[:, 0] - tx[0], centers[:, 1] - tx[1])
        own = env.grid.point_to_index(tx)
        keep = (d >= env.ref_dist_m) & (indices != own)
        points = centers[keep]
        rss = rss_to_points(env, tx, points, rng)
        measurements = tuple(
            Measurement(rx_loc=(float(p[0]), float(p[1])), rss_dbm=float(v), tx_id=tx_id)
            for p, v in zip(points, rss)
        )
        entries[tx_id] = DatasetEntry(tx_id=tx_id, tx_loc=tx, measurements=measurements)
    return Dataset(entries=entries)


def select_k_nearest(
    entry: DatasetEntry,
    k: int,
    valid: set[tuple[float, float]] | None,
) -> TrainingExample:
    """Keep the k measurements nearest the transmitter.

    Distance ties break lexicographically on (x, y) of the receiver so the
    selection is reproducible. ``valid`` restricts to receivers at valid
    grid points; pass None to skip the filter (e.g. after location-error
    injection, when reported locations are off-grid).
    """
    usable = [
        m for m in entry.measurements if valid is None or m.rx_loc in valid
    ]
    if len(usable) < k:
        raise ValueError(
            f"transmitter {entry.tx_id} has {len(usable)} usable measurements, "
            f"need {k} (short by {k - len(usable)})"
        )
    tx = entry.tx_loc
    usable.sort(key=lambda m: (math.hypot(m.rx_loc[0] - tx[0], m.rx_loc[1] - tx[1]),
                               m.rx_loc[0], m.rx_loc[1]))
    return TrainingExample(
        tx_loc=tx,
        chosen=tuple((m.rx_loc, m.rss_dbm) for m in usable[:k]),
    )


def augment(
    example: TrainingExample,
    m: int,
    s: int,
    rng: np.random.Generator,
) -> list[TrainingExample]:
    """Derive ``m`` examples, each a uniform floor(K/s)-subset of the parent.

    Subsets are drawn independently (they may overlap across outputs) and
    keep the parent's distance ordering. ``s = 1`` degenerates to copies of
    the full example.
    """
    k = len(example.chosen)
    if m < 1:
        raise ValueError("m must be >= 1")
    if s < 1:
        raise ValueError("s must be >= 1")
    size = k // s
    if size <= 1:
        raise ValueError(f"subset size floor({k}/{s}) = {size} must exceed 1")
    out = []
    for _ in range(m):
        idx = np.sort(rng.choice(k, size=size, replace=False))
        out.append(TrainingExample(
            tx_loc=example.tx_loc,
            chosen=tuple(example.chosen[i] for i in idx),
        ))
    return out


def inject_errors(
    ds: Dataset,
    loc_err_mean_m: float,
    rss_err_mean_db: float,
    rng: np.random.Generator,
    area_extent_m: tuple[float, float] | None = None,
) -> Dataset:
    """Corrupt reported locations and RSS values; the input is untouched.

    Locations move by a uniformly-directed vector with exponential magnitude
    (mean ``loc_err_mean_m``), clamped to the area. RSS noise is zero-mean
    Gaussian scaled so E|noise| equals ``rss_err_mean_db``. Zero means leave
    the dataset bit-identical.
    """
    if loc_err_mean_m < 0 or rss_err_mean_db < 0:
        raise ValueError("error means must be >= 0")
    if loc_err_mean_m == 0 and rss_err_mean_db == 0:
        return ds
    rss_sigma = rss_err_mean_db * math.sqrt(math.pi / 2.0)
    entries: dict[int, DatasetEntry] = {}
    for tx_id, entry in ds.entries.items():
        n = len(entry.measurements)
        if loc_err_mean_m > 0:
            angles = rng.uniform(0.0, 2.0 * math.pi, size=n)
            mags = rng.exponential(loc_err_mean_m, size=n)
            dx = mags * np.cos(angles)
            dy = mags * np.sin(angles)
        else:
            dx = dy = np.zeros(n)
        if rss_err_mean_db > 0:
            noise = rng.normal(0.0, rss_sigma, size=n)
        else:
            noise = np.zeros(n)
        new_ms = []
        for i, meas in enumerate(entry.measurements):
            x, y = meas.rx_loc
            if loc_err_mean_m > 0:
                x = x + float(dx[i])
                y = y + float(dy[i])
                if area_extent_m is not None:
                    x = min(max(x, 0.0), area_extent_m[0])
                    y = min(max(y, 0.0), area_extent_m[1])
            new_ms.append(Measurement(
                rx_loc=(x, y),
                rss_dbm=meas.rss_dbm + float(noise[i]),
                tx_id=meas.tx_id,
                timestamp=meas.timestamp,
            ))
        entries[tx_id] = DatasetEntry(tx_id=tx_id, tx_loc=entry.tx_loc,
                                      measurements=tuple(new_ms))
    return Dataset(entries=entries)


def split_transmitters(tx_locs, n_train: int, n_test: int, rng: np.random.Generator):
    """Disjoint random train/test subsets of the given sizes."""
    tx_locs = list(tx_locs)
    if n_train < 0 or n_test < 0:
        raise ValueError("split sizes must be >= 0")
    if n_train + n_test > len(tx_locs):
        raise ValueError(
            f"cannot split {len(tx_locs)} transmitters into {n_train}+{n_test}"
        )
    perm = rng.permutation(len(tx_locs))
    train = [tx_locs[i] for i in perm[:n_train]]
    test = [tx_locs[i] for i in perm[n_train:n_train + n_test]]
    return train, test


def write_dataset(ds: Dataset, path) -> None:
    """Delimited text, one row per measurement; row order insignificant."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tx_id", "tx_x", "tx_y", "rx_x", "rx_y", "rss_dbm"])
        for entry in ds.entries.values():
            for m in entry.measurements:
                writer.writerow([
                    entry.tx_id, repr(entry.tx_loc[0]), repr(entry.tx_loc[1]),
                    repr(m.rx_loc[0]), repr(m.rx_loc[1]), repr(m.rss_dbm),
                ])


def read_dataset(path) -> Dataset:
    groups: dict[int, tuple[tuple[float, float], list[Measurement]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tx_id = int(row["tx_id"])
            tx_loc = (float(row["tx_x"]), float(row["tx_y"]))
            if tx_id not in groups:
                groups[tx_id] = (tx_loc, [])
            elif groups[tx_id][0] != tx_loc:
                raise ValueError(f"inconsistent location for transmitter {tx_id}")
            groups[tx_id][1].append(Measurement(
                rx_loc=(float(row["rx_x"]), float(row["rx_y"])),
                rss_dbm=float(row["rss_dbm"]),
                tx_id=tx_id,
            ))
    entries = {
        tx_id: DatasetEntry(tx_id=tx_id, tx_loc=loc, measurements=tuple(ms))
        for tx_id, (loc, ms) in sorted(groups.items())
    }
    return Dataset(entries=entries)
