"""Self-verification battery for a configured model: derivative, symmetry and determinant checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .action import DiscreteAction, PathKernel, TrajectoryPair
from .bath import BathPhasePoint, BathSpec, equilibrium_placement, sample_wigner
from .system import Harmonic, LinearCoupling, SystemSpec

FD_RTOL = 1e-6
ANTISYMMETRY_RTOL = 1e-12
DETERMINANT_RTOL = 1e-10


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)


def random_smooth_pair(rng, n_steps, dt, center, scale, n_harmonics=3) -> TrajectoryPair:
    """Forward and backward paths built from a few random low-order sine modes."""
    t = np.linspace(0.0, 1.0, n_steps + 1)
    k = np.arange(1, n_harmonics + 1)[:, None]

    def path():
        amp = rng.normal(0.0, scale / k[:, 0], n_harmonics)
        line = center + scale * rng.uniform(-1.0, 1.0, 2)
        return line[0] + (line[1] - line[0]) * t + amp @ np.sin(math.pi * k * t + rng.uniform(0, math.pi, (n_harmonics, 1)))

    return TrajectoryPair(n_steps, dt, path(), path())


def _fd_gradient(fun, x, h):
    """Fourth-order central differences of a scalar function."""
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (8.0 * (fun(x + e) - fun(x - e)) - (fun(x + 2 * e) - fun(x - 2 * e))) / (12.0 * h)
    return g


def _rel(a, b):
    scale = max(float(np.max(np.abs(b))), np.finfo(float).tiny)
    return float(np.max(np.abs(a - b))) / scale


def derivative_errors(action: DiscreteAction, traj: TrajectoryPair, g, h):
    """Relative max errors of the analytic gradient and Hessian against finite differences."""
    n = traj.n_steps + 1

    def split(x):
        return x[:n], x[n:]

    x0 = np.concatenate([traj.s_plus, traj.s_minus])
    grad = np.concatenate(action.gradient(*split(x0), g))
    fd_grad = _fd_gradient(lambda x: float(action.phi(*split(x), g)), x0, h)
    H = action.hessian_full(*split(x0), g)
    fd_H = np.empty_like(H)
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        gp2, gp1 = (np.concatenate(action.gradient(*split(x0 + s * e), g)) for s in (2, 1))
        gm1, gm2 = (np.concatenate(action.gradient(*split(x0 - s * e), g)) for s in (1, 2))
        fd_H[:, i] = (8.0 * (gp1 - gm1) - (gp2 - gm2)) / (12.0 * h)
    return _rel(grad, fd_grad), _rel(H, fd_H)


def model_phase_point(system: SystemSpec, bath: BathSpec, bath_init: str, beta, seed, center, hbar=1.0):
    if bath_init == "wigner":
        return sample_wigner(bath, beta, seed, hbar=hbar)
    if bath_init == "equilibrium":
        return equilibrium_placement(bath, system, center)
    return BathPhasePoint.at_rest(bath)


def free_particle_determinant_error(mass, n_steps, dt):
    """Relative error of the single-branch interior Hessian determinant against N (M/dt)^(N-1)."""
    free = SystemSpec(mass, Harmonic(0.0), LinearCoupling(), False)
    bath = BathSpec([1.0], [1.0], [0.0])
    act = DiscreteAction(free, PathKernel.build(free, bath, n_steps, dt))
    n = n_steps + 1
    zero = np.zeros(n)
    H = act.hessian_full(zero, zero, 0.0)[1:n - 1, 1:n - 1]
    sign, logdet = np.linalg.slogdet(H)
    expected = math.log(n_steps) + (n_steps - 1) * math.log(mass / dt)
    return abs(math.expm1(logdet - expected)) if sign > 0 else math.inf


def run_battery(system: SystemSpec, bath: BathSpec, init: BathPhasePoint, center, scale, duration,
                n_steps=12, n_pairs=3, seed=0):
    """All checks on ``n_pairs`` random smooth path pairs at ``n_steps`` over ``duration``."""
    rng = np.random.default_rng(seed)
    dt = duration / n_steps
    kernel = PathKernel.build(system, bath, n_steps, dt)
    action = DiscreteAction(system, kernel)
    g = kernel.drive(init.x0, init.p0)
    n = n_steps + 1
    worst = {"gradient": 0.0, "hessian": 0.0, "antisymmetry": 0.0, "cross_diagonal": 0.0}
    for _ in range(n_pairs):
        traj = random_smooth_pair(rng, n_steps, dt, center, scale)
        eg, eh = derivative_errors(action, traj, g, 1e-3 * scale)
        worst["gradient"] = max(worst["gradient"], eg)
        worst["hessian"] = max(worst["hessian"], eh)
        a = float(action.phi(traj.s_plus, traj.s_minus, g))
        b = float(action.phi(traj.s_minus, traj.s_plus, g))
        worst["antisymmetry"] = max(worst["antisymmetry"], abs(a + b) / max(abs(a), np.finfo(float).tiny))
        H = action.hessian_full(traj.s_plus, traj.s_minus, g)
        worst["cross_diagonal"] = max(worst["cross_diagonal"], float(np.max(np.abs(H[np.arange(n), n + np.arange(n)]))))
    det = max(free_particle_determinant_error(system.mass, k, dt) for k in (4, 8, 16, 32))
    return [
        CheckResult("gradient vs finite differences", worst["gradient"], FD_RTOL),
        CheckResult("hessian vs finite differences", worst["hessian"], FD_RTOL),
        CheckResult("phase antisymmetry", worst["antisymmetry"], ANTISYMMETRY_RTOL),
        CheckResult("zero (+-) diagonal", worst["cross_diagonal"], 0.0),
        CheckResult("free-particle determinant", det, DETERMINANT_RTOL),
    ]
