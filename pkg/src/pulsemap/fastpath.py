"""Specialized RK4 kernels for two-tone driven Hamiltonians.

The driven models all share the affine structure

    H(t) = H0 + eps(t) * W,   eps(t) = om1*cos(d1*t) + om2*cos(d2*t)

with constant H0 (static level structure) and W (coupling pattern). The
kernels here integrate that special case with explicit loops, compiled with
numba when available; `pulsemap.dynamics` keeps the general callable-based
integrators, and the two paths are cross-checked in the test suite.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _rk4_psi_kernel(h0, w, om1, om2, d1, d2, psi_in, t0, dt, substeps):
    n = psi_in.shape[0]
    psi = psi_in.copy()
    k1 = np.empty(n, np.complex128)
    k2 = np.empty(n, np.complex128)
    k3 = np.empty(n, np.complex128)
    k4 = np.empty(n, np.complex128)
    tmp = np.empty(n, np.complex128)
    h = dt / substeps
    t = t0
    for _ in range(substeps):
        e0 = om1 * math.cos(d1 * t) + om2 * math.cos(d2 * t)
        em = om1 * math.cos(d1 * (t + 0.5 * h)) + om2 * math.cos(d2 * (t + 0.5 * h))
        e1 = om1 * math.cos(d1 * (t + h)) + om2 * math.cos(d2 * (t + h))
        for i in range(n):
            acc = 0j
            for j in range(n):
                acc += (h0[i, j] + e0 * w[i, j]) * psi[j]
            k1[i] = -1j * acc
        for i in range(n):
            tmp[i] = psi[i] + 0.5 * h * k1[i]
        for i in range(n):
            acc = 0j
            for j in range(n):
                acc += (h0[i, j] + em * w[i, j]) * tmp[j]
            k2[i] = -1j * acc
        for i in range(n):
            tmp[i] = psi[i] + 0.5 * h * k2[i]
        for i in range(n):
            acc = 0j
            for j in range(n):
                acc += (h0[i, j] + em * w[i, j]) * tmp[j]
            k3[i] = -1j * acc
        for i in range(n):
            tmp[i] = psi[i] + h * k3[i]
        for i in range(n):
            acc = 0j
            for j in range(n):
                acc += (h0[i, j] + e1 * w[i, j]) * tmp[j]
            k4[i] = -1j * acc
        for i in range(n):
            psi[i] = psi[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        t += h
    return psi


@njit(cache=True)
def _rk4_rho_kernel(h0, w, om1, om2, d1, d2, rho_in, t0, dt, substeps, froms, tos, rates, gdiag):
    n = rho_in.shape[0]
    rho = rho_in.copy()
    hbuf = np.empty((n, n), np.complex128)
    k1 = np.empty((n, n), np.complex128)
    k2 = np.empty((n, n), np.complex128)
    k3 = np.empty((n, n), np.complex128)
    k4 = np.empty((n, n), np.complex128)
    tmp = np.empty((n, n), np.complex128)
    h = dt / substeps
    t = t0

    for _ in range(substeps):
        e0 = om1 * math.cos(d1 * t) + om2 * math.cos(d2 * t)
        em = om1 * math.cos(d1 * (t + 0.5 * h)) + om2 * math.cos(d2 * (t + 0.5 * h))
        e1 = om1 * math.cos(d1 * (t + h)) + om2 * math.cos(d2 * (t + h))

        for stage in range(4):
            if stage == 0:
                eps = e0
                src = rho
            elif stage == 1:
                eps = em
                for i in range(n):
                    for j in range(n):
                        tmp[i, j] = rho[i, j] + 0.5 * h * k1[i, j]
                src = tmp
            elif stage == 2:
                eps = em
                for i in range(n):
                    for j in range(n):
                        tmp[i, j] = rho[i, j] + 0.5 * h * k2[i, j]
                src = tmp
            else:
                eps = e1
                for i in range(n):
                    for j in range(n):
                        tmp[i, j] = rho[i, j] + h * k3[i, j]
                src = tmp
            for i in range(n):
                for j in range(n):
                    hbuf[i, j] = h0[i, j] + eps * w[i, j]
            if stage == 0:
                dst = k1
            elif stage == 1:
                dst = k2
            elif stage == 2:
                dst = k3
            else:
                dst = k4
            for i in range(n):
                for j in range(n):
                    acc = 0j
                    for k in range(n):
                        acc += hbuf[i, k] * src[k, j] - src[i, k] * hbuf[k, j]
                    dst[i, j] = -1j * acc - 0.5 * (gdiag[i] + gdiag[j]) * src[i, j]
            for m in range(froms.shape[0]):
                dst[tos[m], tos[m]] += rates[m] * src[froms[m], froms[m]]

        for i in range(n):
            for j in range(n):
                rho[i, j] = rho[i, j] + (h / 6.0) * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
        t += h
    return rho


def _rk4_psi_numpy(h0, w, om1, om2, d1, d2, psi_in, t0, dt, substeps):
    psi = psi_in.copy()
    h = dt / substeps
    t = t0
    for _ in range(substeps):
        e0 = om1 * math.cos(d1 * t) + om2 * math.cos(d2 * t)
        em = om1 * math.cos(d1 * (t + 0.5 * h)) + om2 * math.cos(d2 * (t + 0.5 * h))
        e1 = om1 * math.cos(d1 * (t + h)) + om2 * math.cos(d2 * (t + h))
        k1 = -1j * ((h0 + e0 * w) @ psi)
        k2 = -1j * ((h0 + em * w) @ (psi + 0.5 * h * k1))
        k3 = -1j * ((h0 + em * w) @ (psi + 0.5 * h * k2))
        k4 = -1j * ((h0 + e1 * w) @ (psi + h * k3))
        psi = psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return psi


def _rk4_rho_numpy(h0, w, om1, om2, d1, d2, rho_in, t0, dt, substeps, froms, tos, rates, gdiag):
    def rhs(eps, r):
        hm = h0 + eps * w
        out = -1j * (hm @ r - r @ hm)
        out -= 0.5 * (gdiag[:, None] * r + r * gdiag[None, :])
        if len(froms):
            np.add.at(out, (tos, tos), rates * r[froms, froms])
        return out

    rho = rho_in.copy()
    h = dt / substeps
    t = t0
    for _ in range(substeps):
        e0 = om1 * math.cos(d1 * t) + om2 * math.cos(d2 * t)
        em = om1 * math.cos(d1 * (t + 0.5 * h)) + om2 * math.cos(d2 * (t + 0.5 * h))
        e1 = om1 * math.cos(d1 * (t + h)) + om2 * math.cos(d2 * (t + h))
        k1 = rhs(e0, rho)
        k2 = rhs(em, rho + 0.5 * h * k1)
        k3 = rhs(em, rho + 0.5 * h * k2)
        k4 = rhs(e1, rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return rho


def drive_rk4_psi(h0, w, om1, om2, d1, d2, psi, t0, dt, substeps, use_numba=HAVE_NUMBA):
    """RK4 propagation of psi under H0 + eps(t) W; returns the raw result."""
    if dt == 0 or substeps == 0:
        return np.asarray(psi, dtype=complex).copy()
    args = (
        np.ascontiguousarray(h0, dtype=complex),
        np.ascontiguousarray(w, dtype=complex),
        float(om1),
        float(om2),
        float(d1),
        float(d2),
        np.ascontiguousarray(psi, dtype=complex),
        float(t0),
        float(dt),
        int(substeps),
    )
    if use_numba and HAVE_NUMBA:
        return _rk4_psi_kernel(*args)
    return _rk4_psi_numpy(*args)


def drive_rk4_rho(h0, w, om1, om2, d1, d2, rho, t0, dt, substeps, froms, tos, rates, use_numba=HAVE_NUMBA):
    """RK4 Lindblad propagation of rho under H0 + eps(t) W and jump channels."""
    if dt == 0 or substeps == 0:
        return np.asarray(rho, dtype=complex).copy()
    froms = np.asarray(froms, dtype=np.int64)
    tos = np.asarray(tos, dtype=np.int64)
    rates = np.asarray(rates, dtype=float)
    gdiag = np.zeros(np.asarray(rho).shape[0])
    if len(froms):
        np.add.at(gdiag, froms, rates)
    args = (
        np.ascontiguousarray(h0, dtype=complex),
        np.ascontiguousarray(w, dtype=complex),
        float(om1),
        float(om2),
        float(d1),
        float(d2),
        np.ascontiguousarray(rho, dtype=complex),
        float(t0),
        float(dt),
        int(substeps),
        froms,
        tos,
        rates,
        gdiag,
    )
    if use_numba and HAVE_NUMBA:
        return _rk4_rho_kernel(*args)
    return _rk4_rho_numpy(*args)
