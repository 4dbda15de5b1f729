"""Complex-matrix quantum propagation for small (d <= 10) level systems.

States are plain complex ndarrays: a wavefunction is a length-d vector of
amplitudes, a density matrix is a d x d Hermitian matrix with unit trace.
Hamiltonians are Hermitian matrices whose entries are angular frequencies in
rad/ns; all times are in ns. Every function here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

HERMITICITY_TOL = 1e-9
NORM_DRIFT_TOL = 1e-6
TRACE_DRIFT_TOL = 1e-6


class IntegrationError(RuntimeError):
    """Raised when an integrator violates its norm/trace conservation budget.

    The caller is expected to retry with more substeps rather than accept a
    silently degraded state.
    """


@dataclass(frozen=True)
class DecayChannel:
    """Population decay |from_level> -> |to_level> at a fixed rate (ns^-1)."""

    from_level: int
    to_level: int
    rate: float

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError(f"decay rate must be >= 0, got {self.rate}")
        if self.from_level == self.to_level:
            raise ValueError("decay channel must connect two distinct levels")


def check_hermitian(h: np.ndarray, tol: float = HERMITICITY_TOL) -> np.ndarray:
    """Validate that h is square and Hermitian within tol; returns h."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"operator must be square, got shape {h.shape}")
    asym = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if asym > tol:
        raise ValueError(f"operator is not Hermitian (max asymmetry {asym:.3e})")
    return h


def evolve_unitary(h: np.ndarray, psi: np.ndarray, dt: float) -> np.ndarray:
    """Propagate psi by exp(-i h dt) via eigendecomposition of h.

    Exact to solver precision at these dimensions; preserves the norm to
    ~1e-15 without any renormalization step.
    """
    h = check_hermitian(h)
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (h.shape[0],):
        raise ValueError(f"state has dimension {psi.shape}, operator {h.shape}")
    evals, evecs = np.linalg.eigh(h)
    phases = np.exp(-1j * evals * dt)
    return evecs @ (phases * (evecs.conj().T @ psi))


def _rk4_schrodinger(h_of_t, psi, t0, dt, substeps):
    h = dt / substeps
    t = t0
    for _ in range(substeps):
        k1 = -1j * (h_of_t(t) @ psi)
        k2 = -1j * (h_of_t(t + 0.5 * h) @ (psi + 0.5 * h * k1))
        k3 = -1j * (h_of_t(t + 0.5 * h) @ (psi + 0.5 * h * k2))
        k4 = -1j * (h_of_t(t + h) @ (psi + h * k3))
        psi = psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return psi


def evolve_td_schrodinger(
    h_of_t: Callable[[float], np.ndarray],
    psi: np.ndarray,
    t0: float,
    dt: float,
    substeps: int,
) -> np.ndarray:
    """Fixed-step RK4 integration of dpsi/dt = -i H(t) psi over [t0, t0+dt].

    The result is renormalized to the input norm provided the accumulated
    drift is below NORM_DRIFT_TOL; a larger drift raises IntegrationError and
    the caller must raise `substeps`.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    psi = np.asarray(psi, dtype=complex)
    if dt == 0:
        return psi.copy()
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    norm_in = np.linalg.norm(psi)
    out = _rk4_schrodinger(h_of_t, psi, t0, dt, substeps)
    norm_out = np.linalg.norm(out)
    if abs(norm_out - norm_in) >= NORM_DRIFT_TOL:
        raise IntegrationError(
            f"norm drift {abs(norm_out - norm_in):.3e} over dt={dt} with "
            f"{substeps} substeps; raise substeps"
        )
    return out * (norm_in / norm_out)


def _lindblad_rhs(h, rho, froms, tos, rates, gamma_diag):
    # gamma_diag = sum_m rate_m |from_m><from_m| precomputed by the caller.
    out = -1j * (h @ rho - rho @ h)
    out -= 0.5 * (gamma_diag[:, None] * rho + rho * gamma_diag[None, :])
    if len(froms):
        np.add.at(out, (tos, tos), rates * rho[froms, froms])
    return out


def evolve_lindblad(
    h_of_t: Callable[[float], np.ndarray],
    channels: Sequence[DecayChannel],
    rho: np.ndarray,
    t0: float,
    dt: float,
    substeps: int,
) -> np.ndarray:
    """RK4 integration of the Lindblad master equation.

    d rho/dt = -i[H, rho] - 1/2 sum_m {L_m^dag L_m, rho} + sum_m L_m rho L_m^dag
    with jump operators L_m = sqrt(rate_m) |to_m><from_m|. The trace must stay
    within TRACE_DRIFT_TOL of its initial value or IntegrationError is raised;
    the raw RK4 output is returned without renormalization so that drift stays
    observable to callers and tests.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got {rho.shape}")
    if dt == 0:
        return rho.copy()
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    d = rho.shape[0]
    froms = np.array([c.from_level for c in channels], dtype=np.intp)
    tos = np.array([c.to_level for c in channels], dtype=np.intp)
    rates = np.array([c.rate for c in channels], dtype=float)
    if len(channels) and (froms.max() >= d or tos.max() >= d):
        raise ValueError("decay channel level index out of range")
    gamma_diag = np.zeros(d)
    if len(channels):
        np.add.at(gamma_diag, froms, rates)

    trace_in = np.trace(rho).real
    h = dt / substeps
    t = t0
    for _ in range(substeps):
        k1 = _lindblad_rhs(h_of_t(t), rho, froms, tos, rates, gamma_diag)
        k2 = _lindblad_rhs(h_of_t(t + 0.5 * h), rho + 0.5 * h * k1, froms, tos, rates, gamma_diag)
        k3 = _lindblad_rhs(h_of_t(t + 0.5 * h), rho + 0.5 * h * k2, froms, tos, rates, gamma_diag)
        k4 = _lindblad_rhs(h_of_t(t + h), rho + h * k3, froms, tos, rates, gamma_diag)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    drift = abs(np.trace(rho).real - trace_in)
    if drift >= TRACE_DRIFT_TOL:
        raise IntegrationError(
            f"trace drift {drift:.3e} over dt={dt} with {substeps} substeps; "
            "raise substeps"
        )
    return rho


def fidelity(psi: np.ndarray, target: np.ndarray) -> float:
    """Squared overlap |<psi|target>|^2, insensitive to global phase."""
    psi = np.asarray(psi, dtype=complex)
    target = np.asarray(target, dtype=complex)
    if psi.shape != target.shape:
        raise ValueError(f"dimension mismatch: {psi.shape} vs {target.shape}")
    return float(abs(np.vdot(psi, target)) ** 2)


def fidelity_density(rho: np.ndarray, target: np.ndarray) -> float:
    """<target|rho|target> for a density matrix; the value must be real."""
    rho = np.asarray(rho, dtype=complex)
    target = np.asarray(target, dtype=complex)
    if rho.ndim != 2 or rho.shape != (target.shape[0], target.shape[0]):
        raise ValueError(f"dimension mismatch: rho {rho.shape} vs target {target.shape}")
    val = np.vdot(target, rho @ target)
    if abs(val.imag) >= 1e-9:
        raise ValueError(f"fidelity has imaginary residue {val.imag:.3e}; rho not Hermitian?")
    return float(val.real)


def pure_density(psi: np.ndarray) -> np.ndarray:
    """Outer product |psi><psi|."""
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())
