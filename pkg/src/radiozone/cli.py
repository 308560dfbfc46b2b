"""Command-line entry points for the pipeline stages.

Every stage recomputes what it needs from (config, seed) — cheap at desk
scale and immune to stale intermediate files — and writes its declared
artifact under --out. Exit codes: 0 success, 1 configuration error,
2 pipeline error, 3 the request/boundary outcome was a denial.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import envgen, rti
from .boundary import BoundaryConfig, propose_boundary
from .dataset import write_dataset
from .errors import ConfigError, DeniedError
from .experiment import (ExperimentConfig, build_pipeline, collect_seed_dataset,
                         load_experiment_config, query_points_near, run_experiment,
                         write_report)
from .envgen import build_environment, rss_to_points
from .predictor import FeaturePredictor, save_model
from .sa import SaServer, build_sa_state, write_grant_log

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PIPELINE = 2
EXIT_DENIED = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radiozone",
        description="proactive RSS prediction and boundary proposal pipeline",
    )
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's seed list with one seed")
    parser.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen", help="build the environment and export its obstacle table")
    sub.add_parser("collect", help="collect the crowdsourced dataset")
    sub.add_parser("fit-plm", help="fit the path-loss model")
    sub.add_parser("rti", help="reconstruct the loss field and export the map image")
    sub.add_parser("train", help="train the feature predictors and save the models")

    p_pred = sub.add_parser("predict", help="predict RSS around one transmitter")
    p_pred.add_argument("--tx-x", type=float, required=True)
    p_pred.add_argument("--tx-y", type=float, required=True)
    p_pred.add_argument("--method", default="feature_asym")

    p_bound = sub.add_parser("boundary", help="propose a boundary for one transmitter")
    p_bound.add_argument("--tx-x", type=float, required=True)
    p_bound.add_argument("--tx-y", type=float, required=True)
    p_bound.add_argument("--method", default="feature_asym")

    sub.add_parser("eval", help="run the full experiment and write reports")

    p_serve = sub.add_parser("serve", help="serve transmit requests over a local socket")
    p_serve.add_argument("--port", type=int, default=0)
    p_serve.add_argument("--method", default="feature_asym")
    p_serve.add_argument("--max-requests", type=int, default=None,
                         help="stop after this many requests (testing hook)")

    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "seeds": (args.seed,)})
    return cfg


def _seed(cfg: ExperimentConfig) -> int:
    return cfg.seeds[0]


def _artifacts(cfg: ExperimentConfig, seed: int):
    return build_pipeline(cfg, seed, max(cfg.t_pn_values))


def _cmd_gen(cfg, seed, out: Path) -> int:
    env = build_environment(cfg.environment, cfg.env_seed)
    envgen.export_obstacles(env, out / "environment.csv")
    print(f"wrote {out / 'environment.csv'} ({len(env.obstacles)} obstacles, "
          f"{env.grid.extent_m[0]:g} m x {env.grid.extent_m[1]:g} m)")
    return EXIT_OK


def _cmd_collect(cfg, seed, out: Path) -> int:
    env = build_environment(cfg.environment, cfg.env_seed)
    ds = collect_seed_dataset(cfg, env, seed)
    write_dataset(ds, out / "dataset.csv")
    n = sum(len(e.measurements) for e in ds.entries.values())
    print(f"wrote {out / 'dataset.csv'} ({len(ds)} transmitters, {n} measurements)")
    return EXIT_OK


def _cmd_fit_plm(cfg, seed, out: Path) -> int:
    art = _artifacts(cfg, seed)
    with open(out / "plm_fit.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eta", "z0_dbm", "d0_m"])
        writer.writerow([repr(art.fit.eta), repr(art.fit.z0_dbm), repr(art.fit.d0_m)])
    print(f"eta={art.fit.eta:.6f} z0={art.fit.z0_dbm:.3f} dBm d0={art.fit.d0_m:g} m")
    return EXIT_OK


def _cmd_rti(cfg, seed, out: Path) -> int:
    art = _artifacts(cfg, seed)
    image = rti.slf_to_map_image(art.slf)
    rti.write_field(out / "slf.txt", art.slf.p_hat, art.env.grid)
    rti.write_field(out / "map_image.txt", image, art.env.grid)
    rti.write_field_csv(out / "map_image.csv", image)
    print(f"wrote {out / 'slf.txt'}, {out / 'map_image.txt'}, {out / 'map_image.csv'}")
    return EXIT_OK


def _cmd_train(cfg, seed, out: Path) -> int:
    art = _artifacts(cfg, seed)
    saved = []
    for name, predictor in art.predictors.items():
        if isinstance(predictor, FeaturePredictor):
            path = out / f"model_{name}.json"
            save_model(predictor.model, path)
            saved.append(str(path))
    if not saved:
        raise ConfigError("no feature models in the configured method list")
    print("saved " + ", ".join(saved))
    return EXIT_OK


def _prediction_rows(cfg, art, tx):
    queries = query_points_near(art.env, tx, cfg.k_nearest)
    truth = rss_to_points(art.env.without_noise(), tx, np.asarray(queries))
    return queries, truth


def _cmd_predict(cfg, seed, out: Path, args) -> int:
    art = _artifacts(cfg, seed)
    if args.method not in art.predictors:
        raise ConfigError(f"method {args.method!r} not in configured methods")
    tx = (args.tx_x, args.tx_y)
    queries, truth = _prediction_rows(cfg, art, tx)
    preds = art.predictors[args.method].predict(tx, queries)
    with open(out / "predictions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tx_x", "tx_y", "rx_x", "rx_y", "pred_dbm", "true_dbm"])
        for q, p, t in zip(queries, preds, truth):
            writer.writerow([repr(tx[0]), repr(tx[1]), repr(q[0]), repr(q[1]),
                             repr(float(p)), repr(float(t))])
    print(f"wrote {out / 'predictions.csv'} ({len(queries)} points)")
    return EXIT_OK


def _cmd_boundary(cfg, seed, out: Path, args) -> int:
    art = _artifacts(cfg, seed)
    if args.method not in art.predictors:
        raise ConfigError(f"method {args.method!r} not in configured methods")
    tx = (args.tx_x, args.tx_y)
    queries, _ = _prediction_rows(cfg, art, tx)
    preds = art.predictors[args.method].predict(tx, queries)
    bcfg = BoundaryConfig(n_points=cfg.boundary_n_points,
                          step_g_db=cfg.boundary_step_g_db,
                          noise_floor_dbm=art.env.noise_floor_dbm,
                          z0_cap_dbm=art.fit.z0_dbm)
    try:
        proposal = propose_boundary(list(zip(queries, preds)), bcfg, tx)
    except DeniedError as exc:
        (out / "proposal_summary.csv").write_text(
            "m,z_ooz_dbm,granted_dbm,denied\n,,,True\n")
        print(f"denied: {exc}")
        return EXIT_DENIED
    with open(out / "boundary_points.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "pred_dbm"])
        for p, v in zip(proposal.points, proposal.pred_dbm):
            writer.writerow([repr(p[0]), repr(p[1]), repr(v)])
    with open(out / "proposal_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "z_ooz_dbm", "granted_dbm", "denied"])
        writer.writerow([proposal.iterations_m, repr(proposal.z_ooz_dbm),
                         repr(art.env.p_tx_dbm), "False"])
    print(f"boundary of {len(proposal.points)} points, z_ooz={proposal.z_ooz_dbm:g} dBm "
          f"(m={proposal.iterations_m})")
    return EXIT_OK


def _cmd_eval(cfg, out: Path) -> int:
    result = run_experiment(cfg)
    write_report(result, out)
    print((out / "summary.txt").read_text(), end="")
    if result.failures:
        return EXIT_PIPELINE
    return EXIT_OK


def _cmd_serve(cfg, seed, out: Path, args) -> int:
    state = build_sa_state(cfg, seed, method=args.method)
    server = SaServer(state, port=args.port)
    host, port = server.address
    print(f"serving on {host}:{port}", flush=True)
    try:
        if args.max_requests is None:
            server.serve_forever()
        else:
            thread = server.serve_in_background()
            import time
            while len(state.log) < args.max_requests:
                time.sleep(0.05)
            server.shutdown()
            thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        write_grant_log(state, out / "grants.jsonl")
        server.server_close()
    denied = sum(1 for r in state.log if r.status == "denied")
    print(f"handled {len(state.log)} requests ({denied} denied)")
    if state.log and denied == len(state.log):
        return EXIT_DENIED
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = _load(args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    seed = _seed(cfg)
    try:
        if args.command == "gen":
            return _cmd_gen(cfg, seed, out)
        if args.command == "collect":
            return _cmd_collect(cfg, seed, out)
        if args.command == "fit-plm":
            return _cmd_fit_plm(cfg, seed, out)
        if args.command == "rti":
            return _cmd_rti(cfg, seed, out)
        if args.command == "train":
            return _cmd_train(cfg, seed, out)
        if args.command == "predict":
            return _cmd_predict(cfg, seed, out, args)
        if args.command == "boundary":
            return _cmd_boundary(cfg, seed, out, args)
        if args.command == "eval":
            return _cmd_eval(cfg, out)
        if args.command == "serve":
            return _cmd_serve(cfg, seed, out, args)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DeniedError as exc:
        print(f"denied: {exc}", file=sys.stderr)
        return EXIT_DENIED
    except Exception as exc:  # noqa: BLE001
        print(f"pipeline error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
