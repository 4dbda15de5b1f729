"""Built-in oracle suite behind `pulsemap verify`: fast end-to-end sanity
checks of the propagators, the toy analytic solution, the gradients, and the
protocol metrics. Each check returns (name, ok, detail)."""

from __future__ import annotations

import math

import numpy as np

from . import analysis, baseline_nm, dynamics, neuralnet, rl_core, spin_toy
from .nv_model import NvParams, static_hamiltonian

SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)


def check_unitary_flip():
    psi = dynamics.evolve_unitary(math.pi * SIGMA_Y / 2, np.array([1, 0], complex), 1.0)
    err = abs(dynamics.fidelity(psi, np.array([0, 1], complex)) - 1.0)
    return err < 1e-12, f"|F-1|={err:.2e}"


def check_rk4_vs_eigh():
    params = NvParams()
    h0 = static_hamiltonian(params)
    psi0 = np.zeros(8, complex)
    psi0[0] = 1.0
    ref = dynamics.evolve_unitary(h0, psi0, 0.1)
    rk4 = dynamics.evolve_td_schrodinger(lambda t: h0, psi0, 0.0, 0.1, 100)
    err = np.max(np.abs(ref - rk4))
    return err < 1e-8, f"max|dpsi|={err:.2e}"


def check_lindblad_decay():
    gamma = 0.25
    rho0 = np.diag([0.0, 1.0]).astype(complex)
    chan = [dynamics.DecayChannel(1, 0, gamma)]
    rho = dynamics.evolve_lindblad(lambda t: np.zeros((2, 2), complex), chan, rho0, 0.0, 2.0, 200)
    err = abs(rho[1, 1].real - math.exp(-gamma * 2.0))
    return err < 1e-6, f"|rho_ee-exp(-gt)|={err:.2e}"


def check_toy_roundtrip():
    worst = 0.0
    for shifted in (False, True):
        for phi in np.linspace(0.0, 2 * math.pi, 100):
            act = spin_toy.toy_analytic(float(phi), shifted=shifted)
            f = dynamics.fidelity(
                spin_toy.toy_apply(act),
                spin_toy.toy_target(math.pi / 2, float(phi), shifted=shifted),
            )
            worst = max(worst, abs(1.0 - f))
    return worst < 1e-12, f"max|1-F|={worst:.2e}"


def check_mlp_gradients():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        net = neuralnet.init_mlp([3, 6, 6, 2], rng)
        x = rng.normal(size=3)
        up = rng.normal(size=2)

        grads = neuralnet.grad(net, x, up)
        params = net.params()
        flat_ad = np.concatenate([g.ravel() for g in grads])
        flat_fd = []
        h = 1e-6
        for p in params:
            fd = np.zeros_like(p).ravel()
            flat = p.ravel()
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up_plus = float(up @ neuralnet.forward(net, x))
                flat[i] = old - h
                up_minus = float(up @ neuralnet.forward(net, x))
                flat[i] = old
                fd[i] = (up_plus - up_minus) / (2 * h)
            flat_fd.append(fd)
        flat_fd = np.concatenate(flat_fd)
        rel = np.linalg.norm(flat_ad - flat_fd) / max(np.linalg.norm(flat_fd), 1e-12)
        worst = max(worst, rel)
    return worst < 1e-5, f"max rel err={worst:.2e}"


def check_decode_penalty():
    phys, pen = rl_core.decode_action(np.array([1.0, 0.0, 0.0]),
                                      np.array([-1.0, -1.0, 0.1]),
                                      np.array([1.0, 1.0, 0.2]))
    ok = abs(pen - 0.1) < 1e-12 and abs(phys[0] - 1.0) < 1e-12
    return ok, f"penalty={pen}"


def check_clip_rule():
    val = rl_core.clipped_surrogate(np.array([1.2]), np.array([1.0]), 0.05)[0]
    return abs(val - 1.05) < 1e-12, f"surrogate={val}"


def check_metric_properties():
    rng = np.random.default_rng(11)
    x = rng.uniform(-0.5, 0.5, size=(300, 27))
    for _ in range(1000):
        i, j, k = rng.integers(0, 300, size=3)
        dij = analysis.protocol_distance(x[i], x[j])
        dji = analysis.protocol_distance(x[j], x[i])
        dik = analysis.protocol_distance(x[i], x[k])
        dkj = analysis.protocol_distance(x[k], x[j])
        if abs(dij - dji) > 1e-12 or dij > dik + dkj + 1e-12:
            return False, "metric axiom violated"
        if i == j and dij != 0.0:
            return False, "identity violated"
    return True, "1000 triples ok"


def check_nelder_mead():
    res = baseline_nm.nelder_mead(lambda x: (x[0] - 1.0) ** 2, np.array([0.0]), max_iter=200)
    err = abs(res.x_best[0] - 1.0)
    return err < 1e-6, f"|x-1|={err:.2e}"


CHECKS = [
    ("unitary_sigma_y_flip", check_unitary_flip),
    ("rk4_matches_eigendecomposition", check_rk4_vs_eigh),
    ("lindblad_analytic_decay", check_lindblad_decay),
    ("toy_analytic_roundtrip", check_toy_roundtrip),
    ("mlp_gradient_finite_difference", check_mlp_gradients),
    ("action_decode_penalty", check_decode_penalty),
    ("ppo_clip_rule", check_clip_rule),
    ("protocol_metric_axioms", check_metric_properties),
    ("nelder_mead_quadratic", check_nelder_mead),
]


def run_all(printer=print) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        ok, detail = fn()
        printer(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
        all_ok = all_ok and ok
    return all_ok
