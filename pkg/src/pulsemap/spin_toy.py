"""Analytically solvable two-level playground: a y-rotation then a z-rotation.

Starting from |0>, the two dimensionless angles (omega_y, omega_z) in [0, 1]
reach any Bloch state exactly once:

    state  = R_z(2*pi*omega_z) R_y(pi*omega_y) |0>
           = cos(pi*omega_y/2)|0> + e^{2*pi*i*omega_z} sin(pi*omega_y/2)|1>

so omega_y = theta/pi and omega_z = phi/(2*pi) invert the preparation. The
"shifted" target family rotates the labels by pi around z, which turns the
optimal omega_z(phi') into a discontinuous function while leaving the physics
smooth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class ToyAction:
    """Rotation fractions; both clamp to [0, 1]."""

    omega_y: float
    omega_z: float

    def clamped(self) -> "ToyAction":
        return ToyAction(
            min(1.0, max(0.0, self.omega_y)),
            min(1.0, max(0.0, self.omega_z)),
        )


def _rot_y(omega_y: float) -> np.ndarray:
    a = math.pi * omega_y / 2.0
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]], dtype=complex)


def _rot_z(omega_z: float) -> np.ndarray:
    a = math.pi * omega_z
    return np.array([[np.exp(-1j * a), 0], [0, np.exp(1j * a)]], dtype=complex)


def toy_apply(action: ToyAction) -> np.ndarray:
    """Apply the z-rotation after the y-rotation to |0>."""
    action = action.clamped()
    psi0 = np.array([1.0, 0.0], dtype=complex)
    return _rot_z(action.omega_z) @ (_rot_y(action.omega_y) @ psi0)


def toy_target(theta: float, phi: float, shifted: bool = False) -> np.ndarray:
    """cos(theta/2)|0> + e^{i phi}sin(theta/2)|1>; the shifted family carries
    relative phase (phi - pi) instead."""
    if not 0.0 <= theta <= math.pi:
        raise ValueError(f"theta must be in [0, pi], got {theta}")
    if not 0.0 <= phi <= TWO_PI:
        raise ValueError(f"phi must be in [0, 2*pi], got {phi}")
    rel = phi - math.pi if shifted else phi
    return np.array(
        [math.cos(theta / 2.0), np.exp(1j * rel) * math.sin(theta / 2.0)],
        dtype=complex,
    )


def toy_analytic(phi: float, shifted: bool = False, theta: float = math.pi / 2.0) -> ToyAction:
    """Exact action preparing the (theta, phi) target.

    The shifted branch is discontinuous at phi = pi: omega_z jumps from ~1
    just below to ~0 just above.
    """
    if shifted:
        omega_z = (phi + math.pi) / TWO_PI if phi <= math.pi else (phi - math.pi) / TWO_PI
    else:
        omega_z = phi / TWO_PI
    return ToyAction(theta / math.pi, omega_z)
