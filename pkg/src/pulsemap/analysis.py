"""Protocol-landscape evaluation and similarity metrics.

Protocols are compared after mapping every component (drive strengths and
step durations alike) onto [-0.5, 0.5]; the protocol distance is the L1 norm
between two such vectors and the protocol gradient is the L1 norm of the
finite-difference derivative of the vector field over the (theta, phi) grid.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from . import rl_core
from .nv_model import Protocol

BOUNDS_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Inclusive rectangular grid over the target angles."""

    n_theta: int
    n_phi: int
    theta_min: float = 0.0
    theta_max: float = math.pi
    phi_min: float = 0.0
    phi_max: float = 2.0 * math.pi

    def thetas(self) -> np.ndarray:
        return np.linspace(self.theta_min, self.theta_max, self.n_theta)

    def phis(self) -> np.ndarray:
        return np.linspace(self.phi_min, self.phi_max, self.n_phi)


@dataclass
class LandscapeGrid:
    """Per-(theta, phi) cell: fidelity, protocol time, normalized protocol."""

    thetas: np.ndarray
    phis: np.ndarray
    fidelity: np.ndarray  # (n_theta, n_phi)
    time: np.ndarray  # (n_theta, n_phi)
    protocols: np.ndarray  # (n_theta, n_phi, m)
    fault: np.ndarray  # (n_theta, n_phi) bool
    meta: dict = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return len(self.thetas) * len(self.phis)

    def flat_protocols(self) -> np.ndarray:
        return self.protocols.reshape(self.n_cells, -1)

    def cell_angles(self) -> list[tuple[float, float]]:
        return [(float(t), float(p)) for t in self.thetas for p in self.phis]


def protocol_vector(protocol) -> np.ndarray:
    """Flatten a Protocol to its step-major component vector."""
    if isinstance(protocol, Protocol):
        return np.array([x for s in protocol.steps for x in (s.omega1, s.omega2, s.dt)])
    return np.asarray(protocol, dtype=float)


def normalize_protocol(p: np.ndarray, lows: np.ndarray, highs: np.ndarray) -> np.ndarray:
    """Affine map of each component onto [-0.5, 0.5]; rejects out-of-bounds."""
    p = protocol_vector(p)
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    if p.shape != lows.shape or p.shape != highs.shape:
        raise ValueError(f"protocol length {p.shape} does not match bounds {lows.shape}")
    if np.any(p < lows - BOUNDS_TOL) or np.any(p > highs + BOUNDS_TOL):
        raise ValueError("protocol component out of bounds; clamp upstream")
    return (p - lows) / (highs - lows) - 0.5


def denormalize_protocol(vec: np.ndarray, lows: np.ndarray, highs: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    return lows + (vec + 0.5) * (highs - lows)


def protocol_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L1 distance between two normalized protocol vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"protocol length mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def protocol_gradient(grid: LandscapeGrid, periodic_phi: bool = False) -> np.ndarray:
    """Per-cell G = ||d beta/d theta||_1 + ||d beta/d phi||_1 (per radian).

    Central differences in the interior, one-sided at the edges; with
    periodic_phi the phi direction wraps around instead (use with grids whose
    phi axis covers one period).
    """
    nt, npk = grid.protocols.shape[:2]
    if nt < 2 or npk < 2:
        raise ValueError("protocol gradient needs at least a 2x2 grid")
    d_theta = np.gradient(grid.protocols, grid.thetas, axis=0)
    if periodic_phi:
        dp = grid.phis[1] - grid.phis[0]
        d_phi = (np.roll(grid.protocols, -1, axis=1) - np.roll(grid.protocols, 1, axis=1)) / (2 * dp)
    else:
        d_phi = np.gradient(grid.protocols, grid.phis, axis=1)
    return np.abs(d_theta).sum(axis=2) + np.abs(d_phi).sum(axis=2)


def _eval_cell(env, policy, cell):
    theta, phi = cell
    ep = rl_core.evaluate_policy(env, policy, theta, phi)
    lows, highs = env.protocol_bounds()
    if ep.fault:
        vec = np.zeros(len(lows))
    else:
        vec = normalize_protocol(ep.protocol, lows, highs)
    return ep.fidelity, ep.total_time, vec, ep.fault


def evaluate_landscape(policy, env, grid_spec: GridSpec, workers: int = 1) -> LandscapeGrid:
    """Deterministic (action = mean) policy evaluation over the target grid.

    Cells are independent; with workers > 1 they are computed in a process
    pool and the result is identical to the serial one. Integrator faults
    score F = 0 and set the fault flag.
    """
    thetas = grid_spec.thetas()
    phis = grid_spec.phis()
    cells = [(float(t), float(p)) for t in thetas for p in phis]
    fn = partial(_eval_cell, env, policy)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, cells, chunksize=max(1, len(cells) // (4 * workers))))
    else:
        results = [fn(c) for c in cells]
    m = len(results[0][2])
    nt, npk = len(thetas), len(phis)
    fid = np.array([r[0] for r in results]).reshape(nt, npk)
    tim = np.array([r[1] for r in results]).reshape(nt, npk)
    protos = np.array([r[2] for r in results]).reshape(nt, npk, m)
    fault = np.array([r[3] for r in results], dtype=bool).reshape(nt, npk)
    lows, highs = env.protocol_bounds()
    meta = {
        "encoding": getattr(env, "encoding", "raw"),
        "bounds_low": [float(x) for x in lows],
        "bounds_high": [float(x) for x in highs],
        "source": "policy",
    }
    return LandscapeGrid(thetas, phis, fid, tim, protos, fault, meta)


def distance_matrix(grid: LandscapeGrid) -> np.ndarray:
    """Pairwise L1 protocol distances, row-major cell ordering."""
    x = grid.flat_protocols()
    return np.abs(x[:, None, :] - x[None, :, :]).sum(axis=2)


def neighbor_time_scatter(grid: LandscapeGrid) -> float:
    """Mean squared protocol-time difference between 4-neighbor cell pairs.

    Low values mean the time landscape is locally smooth (clustered
    protocols); per-cell independent optimization typically scatters it.
    """
    t = grid.time
    diffs = []
    if t.shape[0] > 1:
        diffs.append(((t[1:, :] - t[:-1, :]) ** 2).ravel())
    if t.shape[1] > 1:
        diffs.append(((t[:, 1:] - t[:, :-1]) ** 2).ravel())
    if not diffs:
        return 0.0
    return float(np.concatenate(diffs).mean())


def time_region_contrast(grid: LandscapeGrid) -> dict:
    """Split cells at the median protocol time and compare the two largest
    contiguous regions (4-connectivity).

    Returns sizes and median times of the largest below-median and
    above-median components; a clustered landscape shows two sizable regions
    whose medians differ clearly.
    """
    t = grid.time
    cut = float(np.median(t))
    labels = t >= cut

    def largest_component(mask: np.ndarray):
        seen = np.zeros_like(mask, dtype=bool)
        best: list[tuple[int, int]] = []
        for i in range(mask.shape[0]):
            for j in range(mask.shape[1]):
                if mask[i, j] and not seen[i, j]:
                    stack = [(i, j)]
                    seen[i, j] = True
                    comp = []
                    while stack:
                        a, b = stack.pop()
                        comp.append((a, b))
                        for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                            x, y = a + da, b + db
                            if 0 <= x < mask.shape[0] and 0 <= y < mask.shape[1] \
                                    and mask[x, y] and not seen[x, y]:
                                seen[x, y] = True
                                stack.append((x, y))
                    if len(comp) > len(best):
                        best = comp
        return best

    lo_comp = largest_component(~labels)
    hi_comp = largest_component(labels)
    lo_median = float(np.median([t[i, j] for i, j in lo_comp])) if lo_comp else math.nan
    hi_median = float(np.median([t[i, j] for i, j in hi_comp])) if hi_comp else math.nan
    return {
        "low_region_cells": len(lo_comp),
        "high_region_cells": len(hi_comp),
        "low_region_median_T": lo_median,
        "high_region_median_T": hi_median,
        "median_T_gap": abs(hi_median - lo_median),
    }


def landscape_stats(grid: LandscapeGrid) -> dict:
    """Summary statistics used by the comparison report."""
    return {
        "mean_F": float(grid.fidelity.mean()),
        "min_F": float(grid.fidelity.min()),
        "max_F": float(grid.fidelity.max()),
        "mean_T": float(grid.time.mean()),
        "median_T": float(np.median(grid.time)),
        "neighbor_time_scatter": neighbor_time_scatter(grid),
        "n_faults": int(grid.fault.sum()),
        "n_cells": grid.n_cells,
    }
