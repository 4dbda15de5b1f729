"""Checkpoints and data export: JSON weights, landscape CSV/JSON, sidecars.

Checkpoints are single JSON documents. Floats are written with Python's
shortest round-trip repr, which is lossless in base 10, so save -> load ->
save reproduces the file byte for byte and a resumed run continues
bit-identically (single-threaded, default on-policy buffer).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import LandscapeGrid
from .config import RunConfig, config_from_dict
from .neuralnet import AdamState, GaussianPolicy, Mlp
from .rl_core import SamplerState, TrainState

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _mlp_to_dict(net: Mlp) -> dict:
    return {
        "layer_dims": net.layer_dims,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _mlp_from_dict(data: dict) -> Mlp:
    return Mlp(
        weights=[np.array(w, dtype=float) for w in data["weights"]],
        biases=[np.array(b, dtype=float) for b in data["biases"]],
    )


def _adam_to_dict(state: AdamState) -> dict:
    return {
        "m": [a.tolist() for a in state.m],
        "v": [a.tolist() for a in state.v],
        "t": state.t,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
    }


def _adam_from_dict(data: dict) -> AdamState:
    return AdamState(
        m=[np.array(a, dtype=float) for a in data["m"]],
        v=[np.array(a, dtype=float) for a in data["v"]],
        t=data["t"],
        beta1=data["beta1"],
        beta2=data["beta2"],
        eps=data["eps"],
    )


def save_checkpoint(state: TrainState, cfg: RunConfig, path) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "episodes_done": state.episodes_done,
        "policy": {
            **_mlp_to_dict(state.policy.mean_net),
            "log_sigma": state.policy.log_sigma.tolist(),
        },
        "value": _mlp_to_dict(state.value_net),
        "policy_adam": _adam_to_dict(state.policy_adam),
        "value_adam": _adam_to_dict(state.value_adam),
        "sampler": state.sampler.to_state(),
        "rng": state.rng.bit_generator.state,
        "curve": [list(row) for row in state.curve],
        "bin_state": None if state.bin_count == 0 else {
            "count": state.bin_count,
            "sum": state.bin_sum,
            "min": state.bin_min,
            "max": state.bin_max,
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, allow_nan=False)


def load_checkpoint(path) -> tuple[TrainState, RunConfig]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise CheckpointError(f"checkpoint {path} is corrupt or truncated: {err}")
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    cfg = config_from_dict(doc["config"])
    policy = GaussianPolicy(
        mean_net=_mlp_from_dict(doc["policy"]),
        log_sigma=np.array(doc["policy"]["log_sigma"], dtype=float),
    )
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng"]
    bin_state = doc.get("bin_state")
    state = TrainState(
        policy=policy,
        value_net=_mlp_from_dict(doc["value"]),
        policy_adam=_adam_from_dict(doc["policy_adam"]),
        value_adam=_adam_from_dict(doc["value_adam"]),
        sampler=SamplerState.from_state(doc["sampler"]),
        rng=rng,
        episodes_done=doc["episodes_done"],
        curve=[tuple(row) for row in doc["curve"]],
        bin_count=bin_state["count"] if bin_state else 0,
        bin_sum=bin_state["sum"] if bin_state else 0.0,
        bin_min=bin_state["min"] if bin_state else math.inf,
        bin_max=bin_state["max"] if bin_state else -math.inf,
    )
    return state, cfg


# ---------------------------------------------------------------------------
# CSV / JSON data export


def write_sidecar(csv_path, cfg_hash: str, seed: int, extra: dict | None = None) -> None:
    meta = {"config_hash": cfg_hash, "code_version": __version__, "seed": seed}
    if extra:
        meta.update(extra)
    with open(str(csv_path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, allow_nan=False)


def write_landscape_csv(grid: LandscapeGrid, path) -> None:
    m = grid.protocols.shape[2]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "phi", "F", "T"] + [f"p{i}" for i in range(m)])
        for i, theta in enumerate(grid.thetas):
            for j, phi in enumerate(grid.phis):
                writer.writerow(
                    [repr(float(theta)), repr(float(phi)),
                     repr(float(grid.fidelity[i, j])), repr(float(grid.time[i, j]))]
                    + [repr(float(x)) for x in grid.protocols[i, j]]
                )


def write_landscape_json(grid: LandscapeGrid, path) -> None:
    doc = {
        "thetas": grid.thetas.tolist(),
        "phis": grid.phis.tolist(),
        "fidelity": grid.fidelity.tolist(),
        "time": grid.time.tolist(),
        "protocols": grid.protocols.tolist(),
        "fault": grid.fault.astype(int).tolist(),
        "meta": grid.meta,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, allow_nan=False)


def read_landscape(path) -> LandscapeGrid:
    """Load a landscape from the JSON export (or the CSV, losing metadata)."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path) as fh:
            doc = json.load(fh)
        return LandscapeGrid(
            thetas=np.array(doc["thetas"], dtype=float),
            phis=np.array(doc["phis"], dtype=float),
            fidelity=np.array(doc["fidelity"], dtype=float),
            time=np.array(doc["time"], dtype=float),
            protocols=np.array(doc["protocols"], dtype=float),
            fault=np.array(doc["fault"], dtype=bool),
            meta=doc.get("meta", {}),
        )
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    m = len(header) - 4
    thetas = sorted({float(r[0]) for r in body})
    phis = sorted({float(r[1]) for r in body})
    nt, npk = len(thetas), len(phis)
    if nt * npk != len(body):
        raise ValueError(f"landscape CSV is not a complete grid: {len(body)} rows")
    fid = np.zeros((nt, npk))
    tim = np.zeros((nt, npk))
    protos = np.zeros((nt, npk, m))
    t_index = {t: i for i, t in enumerate(thetas)}
    p_index = {p: j for j, p in enumerate(phis)}
    for r in body:
        i, j = t_index[float(r[0])], p_index[float(r[1])]
        fid[i, j] = float(r[2])
        tim[i, j] = float(r[3])
        protos[i, j] = [float(x) for x in r[4:]]
    return LandscapeGrid(
        np.array(thetas), np.array(phis), fid, tim, protos,
        np.zeros((nt, npk), dtype=bool), {},
    )


def write_matrix_csv(matrix: np.ndarray, path, angles: list[tuple[float, float]]) -> None:
    """Distance matrix CSV (row-major) plus a row-index -> (theta, phi) sidecar."""
    n = matrix.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"j{k}" for k in range(n)])
        for row in matrix:
            writer.writerow([repr(float(x)) for x in row])
    with open(str(path) + ".index.json", "w") as fh:
        json.dump({"rows": [[float(t), float(p)] for t, p in angles]}, fh)


def write_gradient_csv(grid: LandscapeGrid, gradient: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta", "phi", "G"])
        for i, theta in enumerate(grid.thetas):
            for j, phi in enumerate(grid.phis):
                writer.writerow([repr(float(theta)), repr(float(phi)), repr(float(gradient[i, j]))])


class CurveWriter:
    """Streams training-curve bins to CSV as they complete."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(["episode_bin", "mean_F", "min_F", "max_F"])
        self._fh.flush()

    def __call__(self, row) -> None:
        bin_idx, mean_f, min_f, max_f = row
        self._writer.writerow([bin_idx, repr(float(mean_f)), repr(float(min_f)), repr(float(max_f))])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()
