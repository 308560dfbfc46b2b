"""Spectrum-administrator request workflow.

Once trained, the administrator serves transmit requests: pick the K
nearest valid grid points around the requested location, predict RSS there,
run the boundary search, adapt power against active protection zones, and
append the decision to a grant log. Identical requests produce identical
grants (the log is the only state that grows).

The same workflow is exposed over a local TCP socket: one JSON object per
line in, one per line out.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from dataclasses import dataclass, field

from .boundary import (BoundaryConfig, ProtectionBoundary, adapt_power,
                       propose_boundary)
from .envgen import TrueEnvironment, valid_grid_points
from .errors import DeniedError
from .experiment import ExperimentConfig, SeedArtifacts, build_pipeline, query_points_near
from .plm import PathLossFit
from .predictor import Predictor
from .rti import SlfEstimate


@dataclass
class GrantRecord:
    tx_loc: tuple[float, float]
    status: str
    p_sn_dbm: float | None = None
    z_ooz_dbm: float | None = None
    iterations_m: int | None = None
    boundary: tuple[tuple[float, float], ...] | None = None
    reason: str | None = None

    def to_json(self) -> str:
        payload = {
            "tx": list(self.tx_loc),
            "status": self.status,
            "p_sn_dbm": self.p_sn_dbm,
            "z_ooz_dbm": self.z_ooz_dbm,
            "m": self.iterations_m,
            "boundary": [list(p) for p in self.boundary] if self.boundary else None,
            "reason": self.reason,
        }
        return json.dumps(payload)


@dataclass
class SaState:
    """Trained administrator: predictor, reconstruction, fit, geometry, and
    the append-only grant log."""

    env: TrueEnvironment
    predictor: Predictor
    fit: PathLossFit
    slf: SlfEstimate
    valid_points: set[tuple[float, float]]
    boundary_cfg: BoundaryConfig
    k_nearest: int
    p_pn_dbm: float
    protections: list[ProtectionBoundary] = field(default_factory=list)
    log: list[GrantRecord] = field(default_factory=list)


def build_sa_state(
    cfg: ExperimentConfig,
    seed: int,
    method: str | None = None,
    protections: list[ProtectionBoundary] | None = None,
    artifacts: SeedArtifacts | None = None,
) -> SaState:
    """Run the training pipeline for one seed and wrap it for serving."""
    art = artifacts or build_pipeline(cfg, seed, max(cfg.t_pn_values))
    method = method or (
        "feature_asym" if "feature_asym" in art.predictors else
        next(iter(art.predictors)))
    if method not in art.predictors:
        raise ValueError(f"method {method!r} was not trained")
    return SaState(
        env=art.env,
        predictor=art.predictors[method],
        fit=art.fit,
        slf=art.slf,
        valid_points=valid_grid_points(art.env),
        boundary_cfg=BoundaryConfig(
            n_points=cfg.boundary_n_points,
            step_g_db=cfg.boundary_step_g_db,
            noise_floor_dbm=art.env.noise_floor_dbm,
            z0_cap_dbm=art.fit.z0_dbm,
        ),
        k_nearest=cfg.k_nearest,
        p_pn_dbm=art.env.p_tx_dbm,
        protections=list(protections or []),
    )


def sa_handle_request(state: SaState, tx_loc) -> GrantRecord:
    """Decide one transmit request and append the decision to the log.

    Raises ValueError for malformed requests (outside the area or on an
    obstructed voxel); policy denials come back as records with
    status="denied".
    """
    tx_loc = (float(tx_loc[0]), float(tx_loc[1]))
    if not state.env.grid.contains(tx_loc):
        raise ValueError(f"request location {tx_loc} outside the area")
    q = state.env.grid.point_to_index(tx_loc)
    if state.env.grid.index_to_center(q) not in state.valid_points:
        raise ValueError(f"request location {tx_loc} is on an obstructed voxel")

    queries = query_points_near(state.env, tx_loc, state.k_nearest)
    preds = state.predictor.predict(tx_loc, queries)
    try:
        proposal = propose_boundary(list(zip(queries, preds)), state.boundary_cfg, tx_loc)
        p_sn = adapt_power(proposal, state.protections, state.p_pn_dbm, state.fit)
    except DeniedError as exc:
        record = GrantRecord(tx_loc=tx_loc, status="denied", reason=str(exc))
        state.log.append(record)
        return record
    record = GrantRecord(
        tx_loc=tx_loc,
        status="granted",
        p_sn_dbm=p_sn,
        z_ooz_dbm=proposal.z_ooz_dbm,
        iterations_m=proposal.iterations_m,
        boundary=proposal.points,
    )
    state.log.append(record)
    return record


def write_grant_log(state: SaState, path) -> None:
    with open(path, "w") as fh:
        for record in state.log:
            fh.write(record.to_json() + "\n")


def replay_matches_log(state: SaState, records: list[GrantRecord]) -> bool:
    """Re-run every logged request on a fresh log and compare decisions;
    True when the log is consistent with the current state."""
    fresh = SaState(
        env=state.env, predictor=state.predictor, fit=state.fit, slf=state.slf,
        valid_points=state.valid_points, boundary_cfg=state.boundary_cfg,
        k_nearest=state.k_nearest, p_pn_dbm=state.p_pn_dbm,
        protections=list(state.protections),
    )
    for record in records:
        redo = sa_handle_request(fresh, record.tx_loc)
        if redo != record:
            return False
    return True


class _SaRequestHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
                tx = payload["tx"]
                with self.server.lock:
                    record = sa_handle_request(self.server.state, (tx[0], tx[1]))
                response = record.to_json()
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                response = json.dumps({"status": "error", "reason": str(exc)})
            self.wfile.write(response.encode("utf-8") + b"\n")


class SaServer(socketserver.ThreadingTCPServer):
    """Line-delimited JSON request/response service around one SaState."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, state: SaState, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _SaRequestHandler)
        self.state = state
        self.lock = threading.Lock()

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def request_over_socket(address: tuple[str, int], tx_loc) -> dict:
    """Client helper: send one request line, read one response line."""
    with socket.create_connection(address, timeout=30) as conn:
        conn.sendall((json.dumps({"tx": [tx_loc[0], tx_loc[1]]}) + "\n").encode())
        buf = b""
        while not buf.endswith(b"\n"):
            chunk = conn.recv(4096)
            if not chunk:
                break
            buf += chunk
    return json.loads(buf.decode("utf-8"))
