"""RSS predictors behind one interface.

Three families share ``predict(tx_loc, query_points) -> dBm array``:

* ``PlmPredictor`` — the fitted log-distance model alone.
* ``PlmRtiPredictor`` — the model minus each link's estimated shadow.
* ``FeaturePredictor`` — a small dense network on per-link features
  ``[tx_x, tx_y, rx_x, rx_y, v_hat]`` (the shadow estimate is dropped when
  no reconstructed field is supplied), trained with the asymmetric loss.

Also holds the 4-channel input-tensor assembly used by grid-image models.
"""

from __future__ import annotations

import abc
import json
import math
from dataclasses import dataclass

import numpy as np

from .dataset import TrainingExample
from .envgen import GridSpec
from .lossfn import LossParams, asymmetric_loss, loss_terms  # noqa: F401  (re-exported)
from .nn import DenseNet, TrainingConfig, finite_difference_check, train_dense
from .plm import PathLossFit, predict_at_distances
from .rti import SlfEstimate, link_shading_image, link_shadow_estimates


class Predictor(abc.ABC):
    """Pure inference interface: equal inputs give bit-identical outputs."""

    name: str = "predictor"
    trained_on: str = ""

    @abc.abstractmethod
    def predict(self, tx_loc, query_points) -> np.ndarray:
        """One finite dBm value per query point."""


def _query_distances(tx_loc, query_points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(query_points, dtype=float))
    if pts.size == 0:
        raise ValueError("query_points must be nonempty")
    d = np.hypot(pts[:, 0] - tx_loc[0], pts[:, 1] - tx_loc[1])
    if np.any(d <= 0):
        raise ValueError("query coincides with the transmitter")
    return d


class PlmPredictor(Predictor):
    name = "plm"

    def __init__(self, fit: PathLossFit):
        self.fit = fit
        self.trained_on = f"path-loss fit (eta={fit.eta:.4f})"

    def predict(self, tx_loc, query_points) -> np.ndarray:
        return predict_at_distances(self.fit, _query_distances(tx_loc, query_points))


class PlmRtiPredictor(Predictor):
    name = "plm_rti"

    def __init__(self, fit: PathLossFit, slf: SlfEstimate, ellipse_width_m: float):
        self.fit = fit
        self.slf = slf
        self.ellipse_width_m = ellipse_width_m
        self.trained_on = f"path-loss fit + reconstructed loss field"

    def predict(self, tx_loc, query_points) -> np.ndarray:
        base = predict_at_distances(self.fit, _query_distances(tx_loc, query_points))
        v_hat = link_shadow_estimates(self.slf, tx_loc, query_points, self.ellipse_width_m)
        return base - v_hat


@dataclass
class FeatureModel:
    """Trained link-feature network plus its scaling constants."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    feature_lo: np.ndarray
    feature_hi: np.ndarray
    target_lo: float
    target_hi: float
    loss_params: LossParams
    training: TrainingConfig
    uses_rti: bool
    ellipse_width_m: float
    loss_history: list[float]
    name: str = "feature"

    def _net(self) -> DenseNet:
        net = DenseNet.__new__(DenseNet)
        net.layer_dims = self.layer_dims
        net.weights = self.weights
        net.biases = self.biases
        net._cache = None
        return net

    def scale_features(self, raw: np.ndarray) -> np.ndarray:
        span = self.feature_hi - self.feature_lo
        span = np.where(span > 0, span, 1.0)
        return np.clip((raw - self.feature_lo) / span, 0.0, 1.0)

    def scale_targets(self, raw: np.ndarray) -> np.ndarray:
        span = self.target_hi - self.target_lo
        if span <= 0:
            span = 1.0
        return (np.asarray(raw, dtype=float) - self.target_lo) / span

    def unscale_targets(self, scaled: np.ndarray) -> np.ndarray:
        span = self.target_hi - self.target_lo
        if span <= 0:
            span = 1.0
        return np.asarray(scaled, dtype=float) * span + self.target_lo

    def predict_links(self, raw_features: np.ndarray) -> np.ndarray:
        scaled = self.scale_features(np.atleast_2d(raw_features))
        return self.unscale_targets(self._net().forward(scaled))


class FeaturePredictor(Predictor):
    def __init__(self, model: FeatureModel, slf: SlfEstimate | None = None):
        if model.uses_rti and slf is None:
            raise ValueError("model was trained with shadow features; slf required")
        self.model = model
        self.slf = slf
        self.name = model.name
        self.trained_on = (
            f"{len(model.loss_history)} epochs, lambda_o={model.loss_params.lambda_o}, "
            f"lambda_u={model.loss_params.lambda_u}"
        )

    def predict(self, tx_loc, query_points) -> np.ndarray:
        _query_distances(tx_loc, query_points)
        pts = np.atleast_2d(np.asarray(query_points, dtype=float))
        raw = _link_feature_rows(tx_loc, pts, self.slf, self.model.ellipse_width_m,
                                 self.model.uses_rti)
        return self.model.predict_links(raw)


def _link_feature_rows(tx_loc, rx_points, slf, ellipse_width_m, use_rti) -> np.ndarray:
    n = len(rx_points)
    base = np.column_stack([
        np.full(n, float(tx_loc[0])),
        np.full(n, float(tx_loc[1])),
        np.asarray(rx_points, dtype=float),
    ])
    if not use_rti:
        return base
    v_hat = link_shadow_estimates(slf, tx_loc, rx_points, ellipse_width_m)
    return np.column_stack([base, v_hat])


def build_link_table(
    examples,
    slf: SlfEstimate | None,
    ellipse_width_m: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Flatten training examples into (features, targets) link rows.

    Shadow estimates are computed once per unique link; augmented examples
    reuse their parent's links so this avoids recomputing the ellipse
    membership thousands of times.
    """
    use_rti = slf is not None
    v_cache: dict[tuple, float] = {}
    if use_rti:
        unique = []
        for ex in examples:
            for rx, _ in ex.chosen:
                key = (ex.tx_loc, rx)
                if key not in v_cache:
                    v_cache[key] = math.nan
                    unique.append(key)
        if unique:
            tx_arr = [k[0] for k in unique]
            rx_arr = [k[1] for k in unique]
            # group by transmitter to batch the ellipse computation
            by_tx: dict[tuple, list[int]] = {}
            for idx, t in enumerate(tx_arr):
                by_tx.setdefault(t, []).append(idx)
            for t, idxs in by_tx.items():
                pts = [rx_arr[i] for i in idxs]
                vals = link_shadow_estimates(slf, t, pts, ellipse_width_m)
                for i, v in zip(idxs, vals):
                    v_cache[(t, rx_arr[i])] = float(v)

    rows = []
    targets = []
    for ex in examples:
        for rx, rss in ex.chosen:
            row = [ex.tx_loc[0], ex.tx_loc[1], rx[0], rx[1]]
            if use_rti:
                row.append(v_cache[(ex.tx_loc, rx)])
            rows.append(row)
            targets.append(rss)
    return np.asarray(rows, dtype=float), np.asarray(targets, dtype=float)


def train_feature_predictor(
    train: list[TrainingExample],
    slf: SlfEstimate | None,
    params: LossParams,
    cfg: TrainingConfig,
    rng: np.random.Generator,
    ellipse_width_m: float = 5.0,
    name: str = "feature",
) -> FeatureModel:
    """Fit the link-feature network with the asymmetric loss.

    Features and targets are min-max scaled to [0, 1] by training extrema;
    the loss operates in scaled target space (a positive affine map, so the
    over/under classification is unchanged).
    """
    if not train:
        raise ValueError("empty training set")
    raw_x, raw_y = build_link_table(train, slf, ellipse_width_m)

    lo = raw_x.min(axis=0)
    hi = raw_x.max(axis=0)
    t_lo = float(raw_y.min())
    t_hi = float(raw_y.max())

    span = np.where(hi - lo > 0, hi - lo, 1.0)
    x = np.clip((raw_x - lo) / span, 0.0, 1.0)
    t_span = (t_hi - t_lo) if t_hi > t_lo else 1.0
    y = (raw_y - t_lo) / t_span

    net, history = train_dense(x, y, params, cfg, rng)
    return FeatureModel(
        layer_dims=net.layer_dims,
        weights=net.weights,
        biases=net.biases,
        feature_lo=lo,
        feature_hi=hi,
        target_lo=t_lo,
        target_hi=t_hi,
        loss_params=params,
        training=cfg,
        uses_rti=slf is not None,
        ellipse_width_m=ellipse_width_m,
        loss_history=history,
        name=name,
    )


def gradient_check(
    model: FeatureModel,
    features_raw: np.ndarray,
    targets_dbm: np.ndarray,
    params: LossParams | None = None,
    step: float = 1e-5,
    max_checks_per_array: int | None = None,
) -> float:
    """Max relative error of analytic vs central-difference gradients on one
    batch, evaluated in the scaled space the model trains in. Batch entries
    should keep |pred - target| above the kink guard (1e-3)."""
    params = params or model.loss_params
    x = model.scale_features(np.atleast_2d(features_raw))
    y = model.scale_targets(targets_dbm)
    return finite_difference_check(model._net(), x, y, params, step=step,
                                   max_checks_per_array=max_checks_per_array)


@dataclass(frozen=True)
class InputTensor:
    """Four stacked (grid_l, grid_w) images: transmitter one-hot, query
    mask, loss-field map, and per-link shading at the query pixels."""

    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    x4: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.stack([self.x1, self.x2, self.x3, self.x4], axis=-1)


def assemble_input_tensor(
    tx,
    queries,
    x3: np.ndarray,
    slf: SlfEstimate,
    grid: GridSpec,
    ellipse_width_m: float,
    valid: set | None = None,
) -> InputTensor:
    """Build the 4-channel model input for one transmitter.

    ``valid``, when given, is the set of usable grid-point centers; placing
    the transmitter on an obstructed voxel is then rejected as misuse.
    """
    queries = [tuple(q) for q in queries]
    if len(set(queries)) != len(queries):
        raise ValueError("query points must be distinct")
    tx_idx = grid.voxel_of(tx)
    if valid is not None:
        center = grid.index_to_center(tx_idx[0] * grid.grid_w + tx_idx[1])
        if center not in valid:
            raise ValueError(f"transmitter voxel at {center} is obstructed")
    x1 = np.zeros((grid.grid_l, grid.grid_w))
    x1[tx_idx] = 1.0
    x2 = np.zeros((grid.grid_l, grid.grid_w))
    voxels = set()
    for q in queries:
        ij = grid.voxel_of(q)
        if ij in voxels:
            raise ValueError(f"two queries share voxel {ij}")
        voxels.add(ij)
        x2[ij] = 1.0
    x4 = link_shading_image(slf, tx, queries, grid, ellipse_width_m)
    return InputTensor(x1=x1, x2=x2, x3=np.asarray(x3, dtype=float), x4=x4)


MODEL_FORMAT_VERSION = 1


def save_model(model: FeatureModel, path) -> None:
    """Versioned text format: dims, row-major parameters, and the loss and
    optimizer settings that produced them."""
    payload = {
        "version": MODEL_FORMAT_VERSION,
        "kind": "feature",
        "name": model.name,
        "layer_dims": list(model.layer_dims),
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "feature_lo": model.feature_lo.tolist(),
        "feature_hi": model.feature_hi.tolist(),
        "target_lo": model.target_lo,
        "target_hi": model.target_hi,
        "loss": {"lambda_o": model.loss_params.lambda_o,
                 "lambda_u": model.loss_params.lambda_u},
        "training": {
            "learning_rate": model.training.learning_rate,
            "batch_size": model.training.batch_size,
            "epochs": model.training.epochs,
            "patience": model.training.patience,
            "val_fraction": model.training.val_fraction,
            "hidden_dims": list(model.training.hidden_dims),
        },
        "uses_rti": model.uses_rti,
        "ellipse_width_m": model.ellipse_width_m,
        "loss_history": model.loss_history,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_model(path) -> FeatureModel:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != MODEL_FORMAT_VERSION or payload.get("kind") != "feature":
        raise ValueError(f"unsupported model file {path}")
    dims = tuple(payload["layer_dims"])
    weights = [
        np.array(flat).reshape(d_in, d_out)
        for flat, d_in, d_out in zip(payload["weights"], dims[:-1], dims[1:])
    ]
    biases = [np.array(b) for b in payload["biases"]]
    return FeatureModel(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        feature_lo=np.array(payload["feature_lo"]),
        feature_hi=np.array(payload["feature_hi"]),
        target_lo=payload["target_lo"],
        target_hi=payload["target_hi"],
        loss_params=LossParams(**payload["loss"]),
        training=TrainingConfig(
            learning_rate=payload["training"]["learning_rate"],
            batch_size=payload["training"]["batch_size"],
            epochs=payload["training"]["epochs"],
            patience=payload["training"]["patience"],
            val_fraction=payload["training"]["val_fraction"],
            hidden_dims=tuple(payload["training"]["hidden_dims"]),
        ),
        uses_rti=payload["uses_rti"],
        ellipse_width_m=payload["ellipse_width_m"],
        loss_history=payload["loss_history"],
        name=payload["name"],
    )
