"""NV-center level structure, two-laser rotating-frame drive, and protocol runner.

Level basis, in fixed order:

    open (10):   |-1>, |0>, |+1>, A2, A1, EX, EY, E1, E2, |m>
    closed (8):  |-1>, |+1>, A2, A1, EX, EY, E1, E2

All Hamiltonian entries are angular frequencies in rad/ns (paper-style
"2*pi x f GHz" constants become 2*pi*f), times are in ns, magnetic field in
Tesla. The optical gap is absorbed by the rotating frame, so the excited
block carries no E_g offset and the drive enters as the slow envelope
eps(t) = Omega1*cos(delta1*t) + Omega2*cos(delta2*t) on every laser-coupled
matrix element.

The metastable |m> and the |0> sublevel are reachable only through decay:
they carry no coherent coupling in either mode (in closed mode their rows are
dropped outright).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import fastpath
from .dynamics import (
    NORM_DRIFT_TOL,
    TRACE_DRIFT_TOL,
    DecayChannel,
    IntegrationError,
    pure_density,
)

TWO_PI = 2.0 * math.pi

# Ground/excited splittings, rad/ns.
D_GS = TWO_PI * 2.88
DELTA_ES = TWO_PI * 1.55
D_ES = TWO_PI * 1.42
DELTA_SPIN_SPIN = TWO_PI * 0.2
L_Z = TWO_PI * 5.3
G_GS = 2.01
G_ES = 2.01
# Bohr magneton over hbar, rad/ns per Tesla (CODATA mu_B/h = 13.996246 GHz/T).
MU_B = TWO_PI * 13.996246

OPEN_BASIS = ("-1", "0", "+1", "A2", "A1", "EX", "EY", "E1", "E2", "m")
CLOSED_BASIS = ("-1", "+1", "A2", "A1", "EX", "EY", "E1", "E2")

# Indices into the open basis.
_M1, _Z, _P1 = 0, 1, 2
_A2, _A1, _EX, _EY, _E1, _E2, _MS = 3, 4, 5, 6, 7, 8, 9

# Columns dropped when reducing the 10-level system to the closed 8-level one.
_CLOSED_KEEP = (0, 2, 3, 4, 5, 6, 7, 8)

MAX_SUBSTEP_RETRIES = 3


@dataclass(frozen=True)
class NvParams:
    """Physical and drive parameters of one NV run."""

    b_ext: float = 0.15
    delta1: float = TWO_PI * 50.0
    delta2: float = 0.0
    omega_bounds: tuple[float, float] = (-TWO_PI * 20.0, TWO_PI * 20.0)
    t_bounds: tuple[float, float] = (0.2, 0.8)
    n_steps: int = 9
    mode: str = "closed"
    d_gs: float = D_GS
    delta_es: float = DELTA_ES
    d_es: float = D_ES
    delta_spin_spin: float = DELTA_SPIN_SPIN
    l_z: float = L_Z
    g_gs: float = G_GS
    g_es: float = G_ES
    mu_b: float = MU_B

    def __post_init__(self):
        if self.mode not in ("closed", "open"):
            raise ValueError(f"mode must be 'closed' or 'open', got {self.mode!r}")
        if not self.omega_bounds[0] < self.omega_bounds[1]:
            raise ValueError(f"omega bounds must be increasing, got {self.omega_bounds}")
        if not 0 < self.t_bounds[0] < self.t_bounds[1]:
            raise ValueError(f"need 0 < T_min < T_max, got {self.t_bounds}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dim(self) -> int:
        return 8 if self.mode == "closed" else 10

    @property
    def dt_bounds(self) -> tuple[float, float]:
        """Per-step duration window so the total lands in t_bounds."""
        return (self.t_bounds[0] / self.n_steps, self.t_bounds[1] / self.n_steps)


@dataclass(frozen=True)
class ControlStep:
    """One piecewise-constant segment: hold (omega1, omega2) for dt ns."""

    omega1: float
    omega2: float
    dt: float


@dataclass(frozen=True)
class Protocol:
    steps: tuple[ControlStep, ...]

    @property
    def total_time(self) -> float:
        return sum(s.dt for s in self.steps)


@dataclass(frozen=True)
class TargetAngles:
    theta: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"theta must be in [0, pi], got {self.theta}")
        if not 0.0 <= self.phi <= TWO_PI:
            raise ValueError(f"phi must be in [0, 2*pi], got {self.phi}")


def ground_hamiltonian(params: NvParams) -> np.ndarray:
    """3x3 ground triplet in basis (|-1>, |0>, |+1>), |0> energy set to zero."""
    zeeman = params.g_gs * params.mu_b * params.b_ext
    return np.diag([params.d_gs - zeeman, 0.0, params.d_gs + zeeman]).astype(complex)


def excited_hamiltonian(params: NvParams) -> np.ndarray:
    """6x6 excited manifold in basis (A2, A1, EX, EY, E1, E2), E_g offset removed."""
    zb = params.g_es * params.mu_b * params.b_ext
    dpp = params.delta_spin_spin
    h1 = np.array(
        [
            [params.delta_es + 2 * params.l_z, zb],
            [zb, -params.delta_es + 2 * params.l_z],
        ],
        dtype=complex,
    )
    h2 = np.array(
        [
            [-params.d_es + params.l_z, 0, 0, dpp],
            [0, -params.d_es + params.l_z, 1j * dpp, 0],
            [0, -1j * dpp, 0, -zb],
            [dpp, 0, -zb, 0],
        ],
        dtype=complex,
    )
    out = np.zeros((6, 6), dtype=complex)
    out[:2, :2] = h1
    out[2:, 2:] = h2
    return out


def coupling_pattern() -> np.ndarray:
    """3x6 laser coupling matrix at unit drive envelope (rows: ground basis)."""
    return np.array(
        [
            [1j, -1j, 0, 0, -1j, -1j],
            [0, 0, 0, 2, 0, 0],
            [-1j, -1j, 0, 0, 1j, -1j],
        ],
        dtype=complex,
    )


def drive_amplitude(omega1: float, omega2: float, delta1: float, delta2: float, t: float) -> float:
    """Two-tone rotating-frame envelope Omega1*cos(delta1*t) + Omega2*cos(delta2*t)."""
    return omega1 * math.cos(delta1 * t) + omega2 * math.cos(delta2 * t)


def static_hamiltonian(params: NvParams) -> np.ndarray:
    """Drive-independent part H0 in the mode's basis."""
    h = np.zeros((10, 10), dtype=complex)
    h[:3, :3] = ground_hamiltonian(params)
    h[3:9, 3:9] = excited_hamiltonian(params)
    # |m> sits at zero energy; it never acquires coherences.
    if params.mode == "closed":
        h = h[np.ix_(_CLOSED_KEEP, _CLOSED_KEEP)]
    return h


def drive_pattern(params: NvParams) -> np.ndarray:
    """Coupling matrix W in the mode's basis so that H(t) = H0 + eps(t) * W.

    |0> and |m> stay coherently uncoupled in open mode, matching the closed
    approximation plus dissipation.
    """
    v = coupling_pattern()
    w = np.zeros((10, 10), dtype=complex)
    w[:3, 3:9] = v
    w[3:9, :3] = v.conj().T
    w[_Z, :] = 0.0
    w[:, _Z] = 0.0
    if params.mode == "closed":
        w = w[np.ix_(_CLOSED_KEEP, _CLOSED_KEEP)]
    return w


def total_hamiltonian(params: NvParams, step: ControlStep, t: float) -> np.ndarray:
    """Full rotating-frame Hamiltonian at absolute time t during a step."""
    eps = drive_amplitude(step.omega1, step.omega2, params.delta1, params.delta2, t)
    return static_hamiltonian(params) + eps * drive_pattern(params)


def nv_target_state(theta: float, phi: float, dim: int = 8) -> np.ndarray:
    """cos(theta/2)|-1> + e^{i phi} sin(theta/2)|+1> embedded in `dim` levels."""
    TargetAngles(theta, phi)
    psi = np.zeros(dim, dtype=complex)
    plus_idx = _P1 if dim == 10 else 1
    psi[_M1] = math.cos(theta / 2.0)
    psi[plus_idx] = np.exp(1j * phi) * math.sin(theta / 2.0)
    return psi


def initial_state(params: NvParams) -> np.ndarray:
    """|-1> as a wavefunction (closed) or density matrix (open)."""
    psi = np.zeros(params.dim, dtype=complex)
    psi[_M1] = 1.0
    if params.mode == "open":
        return pure_density(psi)
    return psi


def nv_decay_channels() -> list[DecayChannel]:
    """The 23 nonzero decay channels, indexed in the 10-level open basis."""
    channels = []
    for src in (_A2, _A1, _E1, _E2):
        channels.append(DecayChannel(src, _P1, 1.0 / 24.0))
        channels.append(DecayChannel(src, _M1, 1.0 / 31.0))
        channels.append(DecayChannel(src, _Z, 1.0 / 104.0))
        channels.append(DecayChannel(src, _MS, 1.0 / 33.0))
    for src in (_EX, _EY):
        channels.append(DecayChannel(src, _Z, 1.0 / 13.0))
        channels.append(DecayChannel(src, _P1, 1.0 / 666.0))
        channels.append(DecayChannel(src, _M1, 1.0 / 666.0))
    channels.append(DecayChannel(_MS, _Z, 1.0 / 303.0))
    return channels


class NvSystem:
    """Cached matrices and integration policy for one parameter set."""

    def __init__(self, params: NvParams, channels: Sequence[DecayChannel] | None = None):
        self.params = params
        self.h0 = static_hamiltonian(params)
        self.w = drive_pattern(params)
        self._h0_norm = float(np.linalg.norm(self.h0, 2))
        self._w_norm = float(np.linalg.norm(self.w, 2))
        if params.mode == "open":
            chans = nv_decay_channels() if channels is None else list(channels)
            self.froms = np.array([c.from_level for c in chans], dtype=np.int64)
            self.tos = np.array([c.to_level for c in chans], dtype=np.int64)
            self.rates = np.array([c.rate for c in chans], dtype=float)
        else:
            self.froms = np.zeros(0, dtype=np.int64)
            self.tos = np.zeros(0, dtype=np.int64)
            self.rates = np.zeros(0)

    def eps(self, step: ControlStep, t: float) -> float:
        p = self.params
        return drive_amplitude(step.omega1, step.omega2, p.delta1, p.delta2, t)

    def hamiltonian_of_t(self, step: ControlStep):
        return lambda t: self.h0 + self.eps(step, t) * self.w

    def substeps_for(self, step: ControlStep) -> int:
        """Substep count for one control step.

        Two constraints: at least 20 samples per period of the fastest
        drive/detuning frequency, and a norm-drift estimate for RK4
        (~n*(lam*h)^6/144 for spectral radius lam) held two decades under the
        1e-6 failure threshold.
        """
        p = self.params
        omega_max = max(
            abs(p.delta1),
            abs(p.delta2),
            abs(p.omega_bounds[0]),
            abs(p.omega_bounds[1]),
            self._h0_norm,
        )
        h_sample = TWO_PI / (20.0 * omega_max) if omega_max > 0 else step.dt
        lam = self._h0_norm + (abs(step.omega1) + abs(step.omega2)) * self._w_norm
        if lam > 0:
            h_drift = (144.0 * 1e-8 / (step.dt * lam**6)) ** 0.2
        else:
            h_drift = step.dt
        h = min(h_sample, h_drift, step.dt)
        return max(1, int(math.ceil(step.dt / h)))

    def propagate_step(self, state: np.ndarray, step: ControlStep, t0: float, use_fast: bool = True) -> np.ndarray:
        """Advance one control step with conservation checks and substep retry."""
        p = self.params
        n = self.substeps_for(step)
        last_err = None
        for _ in range(MAX_SUBSTEP_RETRIES + 1):
            if p.mode == "closed":
                out = fastpath.drive_rk4_psi(
                    self.h0, self.w, step.omega1, step.omega2, p.delta1, p.delta2,
                    state, t0, step.dt, n, use_numba=use_fast,
                )
                norm_in = np.linalg.norm(state)
                drift = abs(np.linalg.norm(out) - norm_in)
                if drift < NORM_DRIFT_TOL:
                    return out * (norm_in / np.linalg.norm(out))
                last_err = IntegrationError(
                    f"norm drift {drift:.3e} at {n} substeps (dt={step.dt})"
                )
            else:
                out = fastpath.drive_rk4_rho(
                    self.h0, self.w, step.omega1, step.omega2, p.delta1, p.delta2,
                    state, t0, step.dt, n,
                    self.froms, self.tos, self.rates, use_numba=use_fast,
                )
                drift = abs(np.trace(out).real - np.trace(state).real)
                if drift < TRACE_DRIFT_TOL:
                    return out
                last_err = IntegrationError(
                    f"trace drift {drift:.3e} at {n} substeps (dt={step.dt})"
                )
            n *= 2
        raise last_err


@lru_cache(maxsize=8)
def _cached_system(params: NvParams) -> NvSystem:
    return NvSystem(params)


def system(params: NvParams) -> NvSystem:
    return _cached_system(params)


def run_protocol(
    params: NvParams,
    protocol: Protocol,
    initial: np.ndarray | None = None,
    use_fast: bool = True,
) -> tuple[np.ndarray, float]:
    """Integrate a whole protocol; returns (final state, total time).

    Absolute time is threaded through the steps so the cos(delta t) drive
    phases stay continuous across step boundaries. The final state is a
    wavefunction in closed mode and a density matrix in open mode.
    """
    sys_ = system(params)
    state = initial_state(params) if initial is None else np.asarray(initial, dtype=complex)
    t = 0.0
    for step in protocol.steps:
        state = sys_.propagate_step(state, step, t, use_fast=use_fast)
        t += step.dt
    return state, t
