"""Seeded end-to-end experiments: build environment, collect, split, fit,
reconstruct, train, predict, propose boundaries, and score.

Each seed runs the full pipeline independently; a sweep over training-set
sizes reuses one collection per seed with nested train subsets and a fixed
held-out test set, so size comparisons are matched. Every random draw comes
from a stream keyed by (seed, sweep value, stage), making reports
reproducible bit-for-bit from (config, seeds). Wall-clock numbers are kept
out of the deterministic report files.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boundary import (BoundaryConfig, encloses_transmitter, propose_boundary,
                       proposal_accuracy)
from .dataset import (Dataset, augment, collect_dataset, inject_errors,
                      select_k_nearest)
from .envgen import (EnvironmentConfig, TrueEnvironment, build_environment,
                     rss_to_points, true_density_image, valid_centers,
                     valid_grid_points, valid_mask)
from .errors import ConfigError, DeniedError
from .gridnet import GridModel, GridTrainingConfig, train_grid_predictor
from .lossfn import LossParams
from .metrics import map_reconstruction_error, mae_metric, mae_thresholded, rss_range_histogram
from .nn import TrainingConfig
from .plm import PathLossFit, fit_plm
from .predictor import (FeaturePredictor, PlmPredictor, PlmRtiPredictor,
                        Predictor, assemble_input_tensor,
                        train_feature_predictor)
from .rti import (SlfEstimate, covariance_matrix, shadow_vector, slf_to_map_image,
                  solve_slf, weight_matrix)

METHOD_PLM = "plm"
METHOD_PLM_RTI = "plm_rti"
METHOD_FEATURE_ASYM = "feature_asym"
METHOD_FEATURE_SYM = "feature_sym"
METHOD_GRID_ASYM = "grid_asym"
DEFAULT_METHODS = (METHOD_PLM, METHOD_PLM_RTI, METHOD_FEATURE_ASYM, METHOD_FEATURE_SYM)

_STAGES = {"place": 0, "collect": 1, "errors": 2, "split": 3, "augment": 4,
           "train_asym": 5, "train_sym": 6, "train_grid": 7}


def _rng(seed: int, t_pn: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, t_pn, _STAGES[stage]]))


@dataclass(frozen=True)
class RtiConfig:
    ellipse_width_m: float = 5.0
    sigma_n2: float = 1.0
    sigma2: float = 0.5
    delta: float = 1.0


@dataclass(frozen=True)
class ErrorConfig:
    enabled: bool = False
    loc_err_mean_m: float = 5.0
    rss_err_mean_db: float = 5.0


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    env_seed: int = 0
    t_pn_values: tuple[int, ...] = (70,)
    n_transmitters: int = 123
    n_test: int = 30
    k_nearest: int = 200
    augmentation: bool = True
    augment_m: int = 200
    augment_s: int = 5
    loss: LossParams = field(default_factory=LossParams)
    training: TrainingConfig = field(default_factory=lambda: TrainingConfig(
        batch_size=256, epochs=10, patience=20))
    grid_training: GridTrainingConfig = field(default_factory=lambda: GridTrainingConfig(
        epochs=60, channels=8))
    rti: RtiConfig = field(default_factory=RtiConfig)
    boundary_n_points: int = 20
    boundary_step_g_db: float = 10.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    errors: ErrorConfig = field(default_factory=ErrorConfig)
    methods: tuple[str, ...] = DEFAULT_METHODS
    histogram_edges: tuple[float, ...] = (-110.0, -80.0, -65.0, -50.0, -35.0, -15.0)
    mae_floor_dbm: float = -50.0

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if max(self.t_pn_values) + self.n_test > self.n_transmitters:
            raise ConfigError("t_pn + n_test exceeds the transmitter count")
        if self.k_nearest < self.boundary_n_points:
            raise ConfigError("k_nearest must be >= boundary_n_points")
        unknown = set(self.methods) - {METHOD_PLM, METHOD_PLM_RTI, METHOD_FEATURE_ASYM,
                                       METHOD_FEATURE_SYM, METHOD_GRID_ASYM}
        if unknown:
            raise ConfigError(f"unknown methods: {sorted(unknown)}")


def load_experiment_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = json.load(fh)
    return experiment_config_from_dict(raw)


def experiment_config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        kwargs = dict(raw)
        if "environment" in kwargs:
            kwargs["environment"] = EnvironmentConfig.from_dict(dict(kwargs["environment"]))
        if "loss" in kwargs:
            kwargs["loss"] = LossParams(**kwargs["loss"])
        if "training" in kwargs:
            t = dict(kwargs["training"])
            if "hidden_dims" in t:
                t["hidden_dims"] = tuple(t["hidden_dims"])
            kwargs["training"] = TrainingConfig(**t)
        if "grid_training" in kwargs:
            kwargs["grid_training"] = GridTrainingConfig(**kwargs["grid_training"])
        if "rti" in kwargs:
            kwargs["rti"] = RtiConfig(**kwargs["rti"])
        if "errors" in kwargs:
            kwargs["errors"] = ErrorConfig(**kwargs["errors"])
        for key in ("t_pn_values", "seeds", "methods", "histogram_edges"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc


@dataclass(frozen=True)
class MethodResult:
    t_pn: int
    seed: int | None
    method: str
    mae_db: float
    mae_thresholded_db: float
    p_d: float
    z_ooz_bar_dbm: float
    n_predictions: int
    n_secondaries: int
    n_denied: int
    n_not_enclosing: int


@dataclass(frozen=True)
class HistogramRow:
    t_pn: int
    seed: int
    method: str
    lo_dbm: float
    hi_dbm: float
    mae_db: float | None
    population_pct: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[MethodResult]
    avg_rows: list[MethodResult]
    histogram: list[HistogramRow]
    plm_fits: list[tuple[int, int, PathLossFit]]
    rti_errors: list[tuple[int, int, float]]
    timings_ms: dict[str, float]
    failures: list[str] = field(default_factory=list)


def query_points_near(env: TrueEnvironment, tx, k: int) -> list[tuple[float, float]]:
    """The k valid grid points nearest ``tx``, excluding its own voxel and
    anything inside the reference distance; ties break lexicographically."""
    centers = valid_centers(env)
    idx = np.flatnonzero(valid_mask(env).ravel())
    d = np.hypot(centers[:, 0] - tx[0], centers[:, 1] - tx[1])
    own = env.grid.point_to_index(tx)
    keep = (d >= env.ref_dist_m) & (idx != own)
    cand = [(float(dd), float(c[0]), float(c[1]))
            for dd, c in zip(d[keep], centers[keep])]
    if len(cand) < k:
        raise ValueError(f"only {len(cand)} valid query points available, need {k}")
    cand.sort()
    return [(c[1], c[2]) for c in cand[:k]]


def example_links(examples):
    links = []
    for ex in examples:
        tx = ex.tx_loc
        for rx, rss in ex.chosen:
            links.append((math.hypot(rx[0] - tx[0], rx[1] - tx[1]), rss))
    return links


@dataclass
class SeedArtifacts:
    """Everything one (seed, t_pn) pipeline run produced, for reuse by the
    request-handling service and the CLI stages."""

    env: TrueEnvironment
    fit: PathLossFit
    slf: SlfEstimate
    predictors: dict[str, Predictor]
    train_examples: list
    test_tx: list[tuple[float, float]]
    grid_model: GridModel | None = None


class _GridImagePredictor(Predictor):
    """Adapter: evaluate the image model at query pixels."""

    name = METHOD_GRID_ASYM

    def __init__(self, model: GridModel, slf: SlfEstimate, x3: np.ndarray,
                 env: TrueEnvironment, ellipse_width_m: float):
        self.model = model
        self.slf = slf
        self.x3 = x3
        self.env = env
        self.ellipse_width_m = ellipse_width_m

    def predict(self, tx_loc, query_points) -> np.ndarray:
        tensor = assemble_input_tensor(tx_loc, query_points, self.x3, self.slf,
                                       self.env.grid, self.ellipse_width_m)
        image = self.model.predict_image(tensor)
        out = []
        for q in query_points:
            i, j = self.env.grid.voxel_of(q)
            out.append(image[i, j])
        return np.asarray(out)


def build_pipeline(cfg: ExperimentConfig, seed: int, t_pn: int,
                   dataset: Dataset | None = None,
                   covariance: np.ndarray | None = None) -> SeedArtifacts:
    """Run the data-to-predictors part of the pipeline for one seed."""
    env = build_environment(cfg.environment, cfg.env_seed)
    valid = valid_grid_points(env)
    centers = valid_centers(env)
    if cfg.n_transmitters > len(centers):
        raise ConfigError("more transmitters than valid grid points")

    if dataset is None:
        dataset = collect_seed_dataset(cfg, env, seed)
    valid_filter = None if cfg.errors.enabled else valid

    perm = _rng(seed, 0, "split").permutation(cfg.n_transmitters)
    train_ids = perm[:t_pn]
    test_ids = perm[cfg.n_transmitters - cfg.n_test:]

    examples = [select_k_nearest(dataset.entries[int(i)], cfg.k_nearest, valid_filter)
                for i in train_ids]
    fit = fit_plm(example_links(examples))

    v = shadow_vector(examples, fit)
    w = weight_matrix(v.link_index, env.grid, cfg.rti.ellipse_width_m)
    c = covariance if covariance is not None else covariance_matrix(
        env.grid, cfg.rti.sigma2, cfg.rti.delta)
    slf = solve_slf(w, v, cfg.rti.sigma_n2, c, env.grid)

    if cfg.augmentation:
        rng_aug = _rng(seed, t_pn, "augment")
        train_set = []
        for ex in examples:
            train_set.extend(augment(ex, cfg.augment_m, cfg.augment_s, rng_aug))
    else:
        train_set = examples

    predictors: dict[str, Predictor] = {}
    grid_model = None
    if METHOD_PLM in cfg.methods:
        predictors[METHOD_PLM] = PlmPredictor(fit)
    if METHOD_PLM_RTI in cfg.methods:
        predictors[METHOD_PLM_RTI] = PlmRtiPredictor(fit, slf, cfg.rti.ellipse_width_m)
    if METHOD_FEATURE_ASYM in cfg.methods:
        model = train_feature_predictor(
            train_set, slf, cfg.loss, cfg.training, _rng(seed, t_pn, "train_asym"),
            ellipse_width_m=cfg.rti.ellipse_width_m, name=METHOD_FEATURE_ASYM)
        predictors[METHOD_FEATURE_ASYM] = FeaturePredictor(model, slf)
    if METHOD_FEATURE_SYM in cfg.methods:
        model = train_feature_predictor(
            train_set, slf, LossParams(1.0, 1.0), cfg.training,
            _rng(seed, t_pn, "train_sym"),
            ellipse_width_m=cfg.rti.ellipse_width_m, name=METHOD_FEATURE_SYM)
        predictors[METHOD_FEATURE_SYM] = FeaturePredictor(model, slf)
    if METHOD_GRID_ASYM in cfg.methods:
        x3 = slf_to_map_image(slf)
        pairs = []
        for ex in examples:
            queries = [rx for rx, _ in ex.chosen]
            tensor = assemble_input_tensor(ex.tx_loc, queries, x3, slf, env.grid,
                                           cfg.rti.ellipse_width_m)
            target = np.zeros_like(x3)
            for rx, rss in ex.chosen:
                target[env.grid.voxel_of(rx)] = rss
            pairs.append((tensor, target))
        grid_model = train_grid_predictor(pairs, cfg.loss, cfg.grid_training,
                                          _rng(seed, t_pn, "train_grid"))
        predictors[METHOD_GRID_ASYM] = _GridImagePredictor(
            grid_model, slf, x3, env, cfg.rti.ellipse_width_m)

    test_tx = [dataset.entries[int(i)].tx_loc for i in test_ids]
    return SeedArtifacts(env=env, fit=fit, slf=slf, predictors=predictors,
                         train_examples=examples, test_tx=test_tx,
                         grid_model=grid_model)


def collect_seed_dataset(cfg: ExperimentConfig, env: TrueEnvironment, seed: int) -> Dataset:
    centers = valid_centers(env)
    pick = _rng(seed, 0, "place").choice(len(centers), size=cfg.n_transmitters,
                                         replace=False)
    tx_locs = [tuple(centers[i]) for i in pick]
    ds = collect_dataset(env, tx_locs, _rng(seed, 0, "collect"))
    if cfg.errors.enabled:
        ds = inject_errors(ds, cfg.errors.loc_err_mean_m, cfg.errors.rss_err_mean_db,
                           _rng(seed, 0, "errors"), area_extent_m=env.grid.extent_m)
    return ds


def _evaluate_methods(cfg: ExperimentConfig, art: SeedArtifacts, seed: int, t_pn: int):
    truth_env = art.env.without_noise()
    bcfg = BoundaryConfig(
        n_points=cfg.boundary_n_points,
        step_g_db=cfg.boundary_step_g_db,
        noise_floor_dbm=art.env.noise_floor_dbm,
        z0_cap_dbm=art.fit.z0_dbm,
    )

    rows = []
    hist_rows = []
    timings = {}
    for method, predictor in art.predictors.items():
        all_preds: list[np.ndarray] = []
        all_truths: list[np.ndarray] = []
        accs: list[float] = []
        leakages: list[float] = []
        denied = 0
        not_enclosing = 0
        elapsed = 0.0
        n_calls = 0
        for tx in art.test_tx:
            queries = query_points_near(art.env, tx, cfg.k_nearest)
            truths = rss_to_points(truth_env, tx, np.asarray(queries))
            t0 = time.perf_counter()
            preds = predictor.predict(tx, queries)
            elapsed += time.perf_counter() - t0
            n_calls += 1
            all_preds.append(preds)
            all_truths.append(truths)
            truth_by_point = {q: t for q, t in zip(queries, truths)}
            try:
                proposal = propose_boundary(list(zip(queries, preds)), bcfg, tx)
            except DeniedError:
                denied += 1
                continue
            accs.append(proposal_accuracy(
                proposal, [truth_by_point[p] for p in proposal.points]))
            leakages.append(proposal.z_ooz_dbm)
            if not encloses_transmitter(proposal):
                not_enclosing += 1
        preds = np.concatenate(all_preds)
        truths = np.concatenate(all_truths)
        rows.append(MethodResult(
            t_pn=t_pn, seed=seed, method=method,
            mae_db=mae_metric(preds, truths),
            mae_thresholded_db=mae_thresholded(preds, truths, cfg.mae_floor_dbm),
            p_d=float(np.mean(accs)) if accs else float("nan"),
            z_ooz_bar_dbm=float(np.mean(leakages)) if leakages else float("nan"),
            n_predictions=len(preds),
            n_secondaries=len(art.test_tx),
            n_denied=denied,
            n_not_enclosing=not_enclosing,
        ))
        for hb in rss_range_histogram(preds, truths, cfg.histogram_edges):
            hist_rows.append(HistogramRow(
                t_pn=t_pn, seed=seed, method=method, lo_dbm=hb.lo_dbm,
                hi_dbm=hb.hi_dbm, mae_db=hb.mae_db,
                population_pct=hb.population_pct))
        timings[method] = 1000.0 * elapsed / max(n_calls, 1)
    return rows, hist_rows, timings


def _average_rows(rows: list[MethodResult]) -> list[MethodResult]:
    grouped: dict[tuple[int, str], list[MethodResult]] = {}
    for r in rows:
        grouped.setdefault((r.t_pn, r.method), []).append(r)

    def nanmean(values):
        vals = [v for v in values if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    out = []
    for (t_pn, method), group in grouped.items():
        out.append(MethodResult(
            t_pn=t_pn, seed=None, method=method,
            mae_db=nanmean([r.mae_db for r in group]),
            mae_thresholded_db=nanmean([r.mae_thresholded_db for r in group]),
            p_d=nanmean([r.p_d for r in group]),
            z_ooz_bar_dbm=nanmean([r.z_ooz_bar_dbm for r in group]),
            n_predictions=sum(r.n_predictions for r in group),
            n_secondaries=sum(r.n_secondaries for r in group),
            n_denied=sum(r.n_denied for r in group),
            n_not_enclosing=sum(r.n_not_enclosing for r in group),
        ))
    return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Execute every (seed, t_pn) pipeline; a failing seed is reported and
    skipped so the remaining seeds still produce results."""
    env = build_environment(cfg.environment, cfg.env_seed)
    covariance = covariance_matrix(env.grid, cfg.rti.sigma2, cfg.rti.delta)
    density = true_density_image(env)

    rows: list[MethodResult] = []
    hist: list[HistogramRow] = []
    fits: list[tuple[int, int, PathLossFit]] = []
    rti_errors: list[tuple[int, int, float]] = []
    timings: dict[str, list[float]] = {}
    failures: list[str] = []
    for seed in cfg.seeds:
        try:
            dataset = collect_seed_dataset(cfg, env, seed)
            for t_pn in cfg.t_pn_values:
                art = build_pipeline(cfg, seed, t_pn, dataset=dataset,
                                     covariance=covariance)
                seed_rows, seed_hist, seed_times = _evaluate_methods(cfg, art, seed, t_pn)
                rows.extend(seed_rows)
                hist.extend(seed_hist)
                fits.append((t_pn, seed, art.fit))
                rti_errors.append((t_pn, seed, map_reconstruction_error(
                    art.slf.p_hat, density)))
                for m, ms in seed_times.items():
                    timings.setdefault(m, []).append(ms)
        except Exception as exc:  # noqa: BLE001 - other seeds must proceed
            failures.append(f"seed {seed}: {type(exc).__name__}: {exc}")
    if not rows:
        detail = "; ".join(failures) if failures else "no seeds configured"
        raise RuntimeError(f"every seed failed: {detail}")
    return ExperimentResult(
        config=cfg,
        rows=rows,
        avg_rows=_average_rows(rows),
        histogram=hist,
        plm_fits=fits,
        rti_errors=rti_errors,
        timings_ms={m: float(np.mean(v)) for m, v in timings.items()},
        failures=failures,
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(result: ExperimentResult, out_dir) -> None:
    """Write the deterministic report files plus a timing sidecar.

    ``report.csv``/``report_avg.csv``/``histogram.csv``/``rti_quality.csv``/
    ``plm_fits.csv``/``summary.txt`` are reproducible byte-for-byte from
    (config, seeds); ``timings.csv`` is hardware-dependent and excluded
    from that contract.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def write_rows(name, header, rows):
        with open(out / name, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    cols = ["t_pn", "seed", "method", "mae_db", "mae_db_thresholded", "p_d",
            "z_ooz_bar_dbm", "n_predictions", "n_secondaries", "n_denied",
            "n_not_enclosing"]

    def row_tuple(r: MethodResult):
        return (r.t_pn, r.seed if r.seed is not None else "avg", r.method,
                r.mae_db, r.mae_thresholded_db, r.p_d, r.z_ooz_bar_dbm,
                r.n_predictions, r.n_secondaries, r.n_denied, r.n_not_enclosing)

    write_rows("report.csv", cols, [row_tuple(r) for r in result.rows])
    write_rows("report_avg.csv", cols, [row_tuple(r) for r in result.avg_rows])
    write_rows("histogram.csv",
               ["t_pn", "seed", "method", "lo_dbm", "hi_dbm", "mae_db",
                "population_pct"],
               [(h.t_pn, h.seed, h.method, h.lo_dbm, h.hi_dbm, h.mae_db,
                 h.population_pct) for h in result.histogram])
    write_rows("rti_quality.csv", ["t_pn", "seed", "normalized_map_error"],
               result.rti_errors)
    write_rows("plm_fits.csv", ["t_pn", "seed", "eta", "z0_dbm", "d0_m"],
               [(t, s, f.eta, f.z0_dbm, f.d0_m) for t, s, f in result.plm_fits])

    lines = ["experiment summary", "==================", ""]
    for r in sorted(result.avg_rows, key=lambda r: (r.t_pn, r.method)):
        lines.append(
            f"t_pn={r.t_pn} {r.method}: mae={r.mae_db:.3f} dB, "
            f"mae(truth>{result.config.mae_floor_dbm:g} dBm)="
            f"{r.mae_thresholded_db:.3f} dB, p_d={r.p_d:.4f}, "
            f"z_ooz_mean={r.z_ooz_bar_dbm:.2f} dBm, denied={r.n_denied}, "
            f"open_boundary={r.n_not_enclosing}"
        )
    if result.failures:
        lines.append("")
        lines.append("failed seeds:")
        lines.extend(f"  {f}" for f in result.failures)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")

    write_rows("timings.csv", ["method", "mean_prediction_ms"],
               sorted(result.timings_ms.items()))
