"""Per-target Nelder-Mead baseline over the flattened protocol vector.

Each grid target is optimized independently in normalized protocol space
(components in [-0.5, 0.5] map onto the physical bounds exactly as for the
policy); out-of-bounds proposals are clamped by the environment and charged
the same penalty the RL reward uses, so both optimizers face one objective.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from .analysis import GridSpec, LandscapeGrid, normalize_protocol

# Reflection / expansion / contraction / shrink coefficients.
ALPHA, GAMMA, RHO, SIGMA = 1.0, 2.0, 0.5, 0.5


@dataclass
class NmResult:
    x_best: np.ndarray
    f_best: float
    evals: int
    iterations: int


class _EarlyStop(Exception):
    pass


def nelder_mead(objective, x0: np.ndarray, max_iter: int = 1000,
                f_tol: float = 1e-10, x_tol: float = 1e-10,
                init_step: float = 0.1) -> NmResult:
    """Minimize objective from x0 with a standard Nelder-Mead simplex.

    The initial simplex is x0 plus `init_step` along each axis. NaN objective
    values count as +inf. Terminates on the iteration cap or when both the
    value spread and the vertex spread of the simplex fall below the
    tolerances. The returned point is the best ever evaluated, so it is never
    worse than the initial best vertex.
    """
    x0 = np.asarray(x0, dtype=float)
    n = len(x0)
    if n < 1:
        raise ValueError("need at least one dimension")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")

    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        val = objective(x)
        return math.inf if (val is None or math.isnan(val)) else float(val)

    simplex = [x0.copy()]
    for i in range(n):
        v = x0.copy()
        v[i] += init_step
        simplex.append(v)
    values = [f(v) for v in simplex]

    best_x = simplex[int(np.argmin(values))].copy()
    best_f = min(values)

    iterations = 0
    while iterations < max_iter:
        order = np.argsort(values, kind="stable")
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        if values[0] < best_f:
            best_f = values[0]
            best_x = simplex[0].copy()

        spread_f = values[-1] - values[0]
        spread_x = max(np.max(np.abs(v - simplex[0])) for v in simplex[1:])
        if spread_f < f_tol and spread_x < x_tol:
            break

        iterations += 1
        centroid = np.mean(simplex[:-1], axis=0)
        xr = centroid + ALPHA * (centroid - simplex[-1])
        fr = f(xr)
        if values[0] <= fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[0]:
            xe = centroid + GAMMA * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = centroid + RHO * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = centroid + RHO * (simplex[-1] - centroid)
            fc = f(xc)
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            simplex[i] = simplex[0] + SIGMA * (simplex[i] - simplex[0])
            values[i] = f(simplex[i])

    order = np.argsort(values, kind="stable")
    if values[order[0]] < best_f:
        best_f = values[order[0]]
        best_x = simplex[order[0]].copy()
    return NmResult(best_x, best_f, evals, iterations)


def protocol_objective(env, theta: float, phi: float, x: np.ndarray):
    """Score one flattened normalized protocol: (1 - F + penalty, F, protocol).

    The environment applies the same clamping and 0.2 out-of-bounds penalty
    as the RL reward.
    """
    env.reset(theta, phi)
    x = np.asarray(x, dtype=float).reshape(env.n_steps, env.act_dim)
    reward = 0.0
    info = {}
    for k in range(env.n_steps):
        _, r, done, info = env.step(x[k])
        reward += r
        if done:
            break
    fid = info.get("fidelity", 0.0)
    return 1.0 - reward, fid, info.get("protocol")


def optimize_target(env, theta: float, phi: float, restarts: int = 5,
                    max_iter: int = 20000, early_stop_F: float = 0.99,
                    rng: np.random.Generator | None = None,
                    f_tol: float = 1e-10, x_tol: float = 1e-10):
    """Best-of-restarts Nelder-Mead for one target.

    Starts from uniform-random normalized protocols; stops as soon as any
    evaluation reaches F > early_stop_F. Returns (protocol, F, episodes_used)
    where episodes_used counts every objective evaluation.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    dim = env.n_steps * env.act_dim
    total_evals = 0
    best = {"f": math.inf, "F": 0.0, "protocol": None}

    def objective(x):
        nonlocal total_evals
        total_evals += 1
        val, fid, proto = protocol_objective(env, theta, phi, x)
        if val < best["f"]:
            best.update(f=val, F=fid, protocol=proto)
        if fid > early_stop_F:
            raise _EarlyStop
        return val

    for _ in range(max(1, restarts)):
        x0 = rng.uniform(-0.5, 0.5, size=dim)
        try:
            nelder_mead(objective, x0, max_iter=max_iter, f_tol=f_tol, x_tol=x_tol)
        except _EarlyStop:
            break
    return best["protocol"], best["F"], total_evals


def _baseline_cell(env, restarts, max_iter, early_stop_F, seed, cell):
    idx, theta, phi = cell
    rng = np.random.default_rng([seed, idx])
    proto, fid, evals = optimize_target(
        env, theta, phi, restarts=restarts, max_iter=max_iter,
        early_stop_F=early_stop_F, rng=rng,
    )
    lows, highs = env.protocol_bounds()
    from .analysis import protocol_vector

    vec = normalize_protocol(np.clip(protocol_vector(proto), lows, highs), lows, highs)
    total_time = float(protocol_vector(proto).reshape(env.n_steps, -1)[:, -1].sum()) \
        if env.act_dim == 3 else 0.0
    return fid, total_time, vec, evals


def grid_baseline(env, grid_spec: GridSpec, restarts: int = 5,
                  max_iter: int = 20000, early_stop_F: float = 0.99,
                  seed: int = 0, workers: int = 1) -> LandscapeGrid:
    """Independent Nelder-Mead optimization of every grid target.

    Per-cell RNG streams are derived from (seed, cell index), so results do
    not depend on the worker count.
    """
    thetas = grid_spec.thetas()
    phis = grid_spec.phis()
    cells = [
        (i * len(phis) + j, float(t), float(p))
        for i, t in enumerate(thetas)
        for j, p in enumerate(phis)
    ]
    fn = partial(_baseline_cell, env, restarts, max_iter, early_stop_F, seed)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, cells, chunksize=1))
    else:
        results = [fn(c) for c in cells]
    nt, npk = len(thetas), len(phis)
    m = len(results[0][2])
    fid = np.array([r[0] for r in results]).reshape(nt, npk)
    tim = np.array([r[1] for r in results]).reshape(nt, npk)
    protos = np.array([r[2] for r in results]).reshape(nt, npk, m)
    fault = np.zeros((nt, npk), dtype=bool)
    lows, highs = env.protocol_bounds()
    meta = {
        "encoding": getattr(env, "encoding", "raw"),
        "bounds_low": [float(x) for x in lows],
        "bounds_high": [float(x) for x in highs],
        "source": "nelder-mead",
        "episodes_used": int(sum(r[3] for r in results)),
        "episodes_per_cell": [int(r[3]) for r in results],
        "restarts": restarts,
        "max_iter": max_iter,
        "early_stop_F": early_stop_F,
    }
    return LandscapeGrid(thetas, phis, fid, tim, protos, fault, meta)


def nearest_protocol(grid: LandscapeGrid, theta: float, phi: float) -> np.ndarray:
    """Normalized protocol of the grid cell closest in (theta, phi).

    Distance is Delta_theta^2 + Delta_phi^2; ties go to the lower row-major
    cell index.
    """
    tt = np.repeat(grid.thetas, len(grid.phis))
    pp = np.tile(grid.phis, len(grid.thetas))
    d2 = (tt - theta) ** 2 + (pp - phi) ** 2
    idx = int(np.argmin(d2))  # argmin takes the first minimum: the tie rule
    return grid.flat_protocols()[idx]


def evaluate_nearest_interpolation(env, grid: LandscapeGrid, fine_spec: GridSpec) -> float:
    """Mean fidelity when fine-grid targets reuse the nearest coarse protocol."""
    lows, highs = env.protocol_bounds()
    fids = []
    for theta in fine_spec.thetas():
        for phi in fine_spec.phis():
            vec = nearest_protocol(grid, float(theta), float(phi))
            _, fid, _ = protocol_objective(env, float(theta), float(phi), vec)
            fids.append(fid)
    return float(np.mean(fids))
