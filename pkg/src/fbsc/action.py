"""Discretized forward-backward phase, its derivatives and the fluctuation prefactor.

Paths are piecewise constant: ``s_k`` holds on the segment centred at ``k dt``,
with half-length segments at both ends. Bath modes enter only through the
shared coupling function f, so all modes collapse into one memory matrix and
one drive vector per bath phase point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg
from scipy.interpolate import CubicSpline

from .bath import BathPhasePoint, BathSpec
from .errors import CausticError, DomainError
from .system import SystemSpec, coupling_eval, potential_eval

CAUSTIC_RTOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrajectoryPair:
    """Forward and backward paths on ``n_steps + 1`` uniformly spaced points."""

    n_steps: int
    dt: float
    s_plus: np.ndarray
    s_minus: np.ndarray

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise DomainError("n_steps must be an integer >= 2")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        sp, sm = _frozen(self.s_plus), _frozen(self.s_minus)
        if sp.shape != (self.n_steps + 1,) or sm.shape != (self.n_steps + 1,):
            raise DomainError(f"paths must have length n_steps + 1 = {self.n_steps + 1}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "s_plus", sp)
        object.__setattr__(self, "s_minus", sm)

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def endpoints(self):
        """``(s0+, s0-, sf+, sf-)``."""
        return (self.s_plus[0], self.s_minus[0], self.s_plus[-1], self.s_minus[-1])

    @property
    def interior(self) -> np.ndarray:
        """Forward interior points followed by backward interior points."""
        return np.concatenate([self.s_plus[1:-1], self.s_minus[1:-1]])

    def with_interior(self, x) -> "TrajectoryPair":
        n = self.n_steps - 1
        sp, sm = self.s_plus.copy(), self.s_minus.copy()
        sp[1:-1], sm[1:-1] = x[:n], x[n:]
        return TrajectoryPair(self.n_steps, self.dt, sp, sm)

    def swapped(self) -> "TrajectoryPair":
        return TrajectoryPair(self.n_steps, self.dt, self.s_minus, self.s_plus)

    @classmethod
    def straight(cls, endpoints, n_steps, dt) -> "TrajectoryPair":
        """Linear interpolation between the endpoints on each branch."""
        s0p, s0m, sfp, sfm = endpoints
        x = np.linspace(0.0, 1.0, n_steps + 1)
        return cls(n_steps, dt, s0p + (sfp - s0p) * x, s0m + (sfm - s0m) * x)


class Signature(NamedTuple):
    n_plus: int
    n_minus: int
    n_zero: int


@dataclass(frozen=True, eq=False)
class ActionEvaluation:
    """Phase, interior gradient, interior Hessian and its inertia at one path pair."""

    phi: float
    gradient: np.ndarray
    hessian: np.ndarray
    signature: Signature
    log_abs_det: float

    @property
    def is_caustic(self) -> bool:
        return self.signature.n_zero > 0


@dataclass(frozen=True)
class PropagatorAmplitude:
    value: complex
    caustic_flag: bool = False
    converged: bool = True

    @property
    def usable(self) -> bool:
        return self.converged and not self.caustic_flag


def segment_lengths(n_steps, dt):
    w = np.full(n_steps + 1, float(dt))
    w[0] = w[-1] = 0.5 * dt
    return w


def segment_centers(n_steps, dt):
    c = dt * np.arange(n_steps + 1, dtype=float)
    c[0] = 0.25 * dt
    c[-1] = n_steps * dt - 0.25 * dt
    return c


def _self_memory(omega, length):
    """(omega L - sin omega L) / omega^2 without cancellation for small omega L."""
    x = omega * length
    small = np.abs(x) < 1e-3
    xs = np.where(small, x, 0.0)
    series = xs**3 / 6.0 - xs**5 / 120.0 + xs**7 / 5040.0
    return np.where(small, series, x - np.sin(x)) / omega**2


@dataclass(frozen=True, eq=False)
class PathKernel:
    """Time-grid tables shared by every evaluation at fixed (bath, n_steps, dt).

    ``memory`` is lower triangular (diagonal included) so that the memory part
    of the phase is ``D^T memory S`` with D = f(s+) - f(s-), S = f(s+) + f(s-).
    The drive vector for a bath phase point is ``x0 @ drive_x + p0 @ drive_p``.
    """

    n_steps: int
    dt: float
    weights: np.ndarray
    memory: np.ndarray
    drive_x: np.ndarray
    drive_p: np.ndarray
    counter: float

    @classmethod
    def build(cls, system: SystemSpec, bath: BathSpec, n_steps: int, dt: float) -> "PathKernel":
        if n_steps < 2 or not dt > 0:
            raise DomainError("need n_steps >= 2 and dt > 0")
        L = segment_lengths(n_steps, dt)
        ctr = segment_centers(n_steps, dt)
        m, w, c = bath.masses[:, None], bath.frequencies[:, None], bath.couplings[:, None]
        half = np.sin(0.5 * w * L)
        sin_c, cos_c = np.sin(w * ctr), np.cos(w * ctr)
        drive_x = c * (2.0 / w) * half * cos_c
        drive_p = c / (m * w) * (2.0 / w) * half * sin_c

        # sin(w (c_k - c_k')) expanded so all modes reduce to two matrix products
        amp = (c**2 / (2.0 * m * w)) * (4.0 / w**2)
        P, Q = half * sin_c, half * cos_c
        cross = (amp * P).T @ Q - (amp * Q).T @ P
        memory = np.tril(cross, -1)
        diag = np.sum((c**2 / (2.0 * m * w)) * _self_memory(w, L), axis=0)
        memory[np.diag_indices(n_steps + 1)] = diag
        counter = bath.reorganization_coefficient if system.counter_term else 0.0
        return cls(n_steps, float(dt), _frozen(L), _frozen(memory), _frozen(drive_x),
                   _frozen(drive_p), float(counter))

    def drive(self, x0, p0):
        return np.asarray(x0) @ self.drive_x + np.asarray(p0) @ self.drive_p


def _laplacian(s):
    out = np.empty_like(s)
    out[..., 1:-1] = 2.0 * s[..., 1:-1] - s[..., :-2] - s[..., 2:]
    out[..., 0] = s[..., 0] - s[..., 1]
    out[..., -1] = s[..., -1] - s[..., -2]
    return out


class DiscreteAction:
    """Vectorized phase, gradient and Hessian for batches of path pairs.

    Path arrays have shape ``(..., n_steps + 1)``; ``g`` is the drive vector
    broadcastable to the same shape.
    """

    def __init__(self, system: SystemSpec, kernel: PathKernel):
        self.system = system
        self.kernel = kernel
        self.n_steps = kernel.n_steps
        n = kernel.n_steps + 1
        kin = np.zeros((n, n))
        idx = np.arange(n)
        kin[idx, idx] = 2.0
        kin[0, 0] = kin[-1, -1] = 1.0
        kin[idx[1:], idx[:-1]] = kin[idx[:-1], idx[1:]] = -1.0
        self._kinetic = kin * (system.mass / kernel.dt)
        W = kernel.memory
        self._wsym = W + W.T
        self._wanti = W - W.T
        self.interior_index = np.concatenate([np.arange(1, n - 1), n + np.arange(1, n - 1)])

    @classmethod
    def build(cls, system, bath, n_steps, dt):
        return cls(system, PathKernel.build(system, bath, n_steps, dt))

    def _fields(self, sp, sm):
        Vp, dVp, ddVp = potential_eval(self.system, sp)
        Vm, dVm, ddVm = potential_eval(self.system, sm)
        Fp, dFp, ddFp = coupling_eval(self.system, sp)
        Fm, dFm, ddFm = coupling_eval(self.system, sm)
        return (Vp, dVp, ddVp), (Vm, dVm, ddVm), (Fp, dFp, ddFp), (Fm, dFm, ddFm)

    def phi(self, sp, sm, g):
        k = self.kernel
        sp, sm = np.asarray(sp, float), np.asarray(sm, float)
        Vp, _, _ = potential_eval(self.system, sp)
        Vm, _, _ = potential_eval(self.system, sm)
        Fp = coupling_eval(self.system, sp)[0]
        Fm = coupling_eval(self.system, sm)[0]
        D, S = Fp - Fm, Fp + Fm
        kin = 0.5 * self.system.mass / k.dt * (
            np.sum(np.diff(sp, axis=-1) ** 2, axis=-1) - np.sum(np.diff(sm, axis=-1) ** 2, axis=-1))
        pot = -np.sum(k.weights * (Vp - Vm), axis=-1)
        drive = np.sum(D * g, axis=-1)
        mem = np.sum(D * (S @ k.memory.T), axis=-1)
        ct = -k.counter * np.sum(k.weights * (Fp * Fp - Fm * Fm), axis=-1)
        return kin + pot + drive + mem + ct

    def _forces(self, Fp, Fm, g):
        k = self.kernel
        D, S = Fp - Fm, Fp + Fm
        WS = S @ k.memory.T
        WtD = D @ k.memory
        ct = 2.0 * k.counter * k.weights
        Ap = g + WS + WtD - ct * Fp
        Am = -g - WS + WtD + ct * Fm
        return Ap, Am

    def gradient(self, sp, sm, g):
        """Full gradients ``(dPhi/ds+, dPhi/ds-)`` including endpoints."""
        k = self.kernel
        sp, sm = np.asarray(sp, float), np.asarray(sm, float)
        (_, dVp, _), (_, dVm, _), (Fp, dFp, _), (Fm, dFm, _) = self._fields(sp, sm)
        Ap, Am = self._forces(Fp, Fm, g)
        mdt = self.system.mass / k.dt
        Gp = mdt * _laplacian(sp) - k.weights * dVp + dFp * Ap
        Gm = -mdt * _laplacian(sm) + k.weights * dVm + dFm * Am
        return Gp, Gm

    def residual(self, sp, sm, g):
        """Interior gradient, forward points first."""
        Gp, Gm = self.gradient(sp, sm, g)
        return np.concatenate([Gp[..., 1:-1], Gm[..., 1:-1]], axis=-1)

    def hessian_full(self, sp, sm, g):
        """Hessian over all ``2 (n_steps + 1)`` points, ordered ``[s+_0..s+_N, s-_0..s-_N]``."""
        k = self.kernel
        sp, sm = np.asarray(sp, float), np.asarray(sm, float)
        (_, _, ddVp), (_, _, ddVm), (Fp, dFp, ddFp), (Fm, dFm, ddFm) = self._fields(sp, sm)
        Ap, Am = self._forces(Fp, Fm, g)
        ct = 2.0 * k.counter * k.weights
        dp = -k.weights * ddVp + ddFp * Ap - ct * dFp**2
        dm = k.weights * ddVm + ddFm * Am + ct * dFm**2
        n = self.n_steps + 1
        shape = np.broadcast_shapes(sp.shape, sm.shape)[:-1]
        H = np.empty(shape + (2 * n, 2 * n))
        outer_pp = dFp[..., :, None] * dFp[..., None, :]
        outer_mm = dFm[..., :, None] * dFm[..., None, :]
        outer_pm = dFp[..., :, None] * dFm[..., None, :]
        H[..., :n, :n] = self._kinetic + outer_pp * self._wsym
        H[..., n:, n:] = -self._kinetic - outer_mm * self._wsym
        H[..., :n, n:] = outer_pm * self._wanti
        H[..., n:, :n] = np.swapaxes(H[..., :n, n:], -1, -2)
        i = np.arange(n)
        H[..., i, i] += dp
        H[..., n + i, n + i] += dm
        return H

    def hessian_interior(self, sp, sm, g):
        H = self.hessian_full(sp, sm, g)
        ii = self.interior_index
        return H[..., ii[:, None], ii[None, :]]


def _single(traj: TrajectoryPair, system, bath, init: BathPhasePoint):
    init.check(bath)
    if init.x0.ndim != 1:
        raise DomainError("expected a single bath phase point")
    act = DiscreteAction.build(system, bath, traj.n_steps, traj.dt)
    return act, act.kernel.drive(init.x0, init.p0)


def action_phi(traj: TrajectoryPair, system: SystemSpec, bath: BathSpec, init: BathPhasePoint) -> float:
    """Discretized forward-backward phase of a path pair for one bath phase point."""
    act, g = _single(traj, system, bath, init)
    return float(act.phi(traj.s_plus, traj.s_minus, g))


def residual(traj, system, bath, init) -> np.ndarray:
    """Gradient of the phase with respect to the interior points (length 2N - 2)."""
    act, g = _single(traj, system, bath, init)
    return act.residual(traj.s_plus, traj.s_minus, g)


def inertia(H, rtol=CAUSTIC_RTOL):
    """Signature and log|det| of a symmetric matrix from a Bunch-Kaufman LDL^T factorization."""
    H = np.asarray(H, dtype=float)
    if H.size == 0:
        return Signature(0, 0, 0), 0.0
    _, d, _ = scipy.linalg.ldl(H, lower=True, hermitian=True)
    # d is block diagonal with 1x1 and 2x2 pivots
    eig = []
    i, n = 0, d.shape[0]
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            eig.extend(np.linalg.eigvalsh(d[i:i + 2, i:i + 2]))
            i += 2
        else:
            eig.append(d[i, i])
            i += 1
    return _signature_from_values(np.asarray(eig), rtol)


def _signature_from_values(lam, rtol=CAUSTIC_RTOL):
    scale = np.max(np.abs(lam), axis=-1, keepdims=True)
    zero = np.abs(lam) <= rtol * scale
    n_zero = np.sum(zero, axis=-1)
    n_plus = np.sum((lam > 0) & ~zero, axis=-1)
    n_minus = np.sum((lam < 0) & ~zero, axis=-1)
    with np.errstate(divide="ignore"):
        logdet = np.sum(np.log(np.abs(lam)), axis=-1)
    if np.ndim(n_zero) == 0:
        return Signature(int(n_plus), int(n_minus), int(n_zero)), float(logdet)
    return n_plus, n_minus, n_zero, logdet


def batched_inertia(H, rtol=CAUSTIC_RTOL):
    """``(n_plus, n_minus, n_zero, log|det|)`` arrays for a stack of symmetric matrices."""
    lam = np.linalg.eigvalsh(H)
    return _signature_from_values(lam, rtol)


def hessian(traj, system, bath, init):
    """Interior Hessian of the phase and its eigenvalue signature."""
    act, g = _single(traj, system, bath, init)
    H = act.hessian_interior(traj.s_plus, traj.s_minus, g)
    return H, inertia(H)[0]


def evaluate_action(traj, system, bath, init) -> ActionEvaluation:
    act, g = _single(traj, system, bath, init)
    H = act.hessian_interior(traj.s_plus, traj.s_minus, g)
    sig, logdet = inertia(H)
    return ActionEvaluation(float(act.phi(traj.s_plus, traj.s_minus, g)),
                            act.residual(traj.s_plus, traj.s_minus, g), H, sig, logdet)


def log_prefactor(mass, n_steps, dt, log_abs_det, n_plus, n_minus, hbar=1.0):
    """Complex log of the prefactor; vectorizes over the last three arguments."""
    two_pi_hbar = 2.0 * math.pi * hbar
    log_mag = (n_steps * math.log(mass / (two_pi_hbar * dt))
               + (n_steps - 1) * math.log(two_pi_hbar) - 0.5 * np.asarray(log_abs_det))
    return log_mag + 0.25j * math.pi * (np.asarray(n_plus) - np.asarray(n_minus))


def prefactor(evaluation: ActionEvaluation, system: SystemSpec, n_steps: int, dt: float, hbar=1.0) -> complex:
    """Fluctuation prefactor ``(M/2 pi hbar dt)^N (2 pi hbar)^(N-1) |det H|^(-1/2) e^{i pi (n+ - n-)/4}``."""
    sig = evaluation.signature
    if sig.n_zero > 0:
        raise CausticError(f"{sig.n_zero} zero eigenvalue(s) in the fluctuation Hessian")
    return complex(np.exp(log_prefactor(system.mass, n_steps, dt, evaluation.log_abs_det,
                                        sig.n_plus, sig.n_minus, hbar)))


@dataclass(frozen=True)
class ContinuousPaths:
    """Smooth forward and backward paths on ``[0, duration]``.

    Each path is called as ``path(t, nu)`` returning the ``nu``-th derivative.
    """

    s_plus: Callable
    s_minus: Callable
    duration: float

    @classmethod
    def from_trajectory(cls, traj: TrajectoryPair) -> "ContinuousPaths":
        t = traj.dt * np.arange(traj.n_steps + 1)
        return cls(CubicSpline(t, traj.s_plus), CubicSpline(t, traj.s_minus), traj.duration)


def _composite_gauss(a, b, n_panels, order):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def action_phi_continuum(paths, system: SystemSpec, bath: BathSpec, init: BathPhasePoint,
                         quadrature_order: int = 8, n_panels: int = 64) -> float:
    """Phase of smooth paths by composite Gauss-Legendre quadrature of the continuous-time integrals.

    ``paths`` is a ``ContinuousPaths`` or a ``TrajectoryPair`` (interpolated by cubic splines).
    """
    if isinstance(paths, TrajectoryPair):
        paths = ContinuousPaths.from_trajectory(paths)
    init.check(bath)
    T = float(paths.duration)
    t, wt = _composite_gauss(0.0, T, n_panels, quadrature_order)
    sp, sm = paths.s_plus(t, 0), paths.s_minus(t, 0)
    vp, vm = paths.s_plus(t, 1), paths.s_minus(t, 1)
    M = system.mass
    Vp, Vm = potential_eval(system, sp)[0], potential_eval(system, sm)[0]
    Fp, Fm = coupling_eval(system, sp)[0], coupling_eval(system, sm)[0]
    D = Fp - Fm
    phi = np.sum(wt * (0.5 * M * (vp**2 - vm**2) - Vp + Vm))

    m, w, c = bath.masses, bath.frequencies, bath.couplings
    x0, p0 = init.x0, init.p0
    drive = (c * x0) @ np.cos(np.outer(w, t)) + (c * p0 / (m * w)) @ np.sin(np.outer(w, t))
    phi += np.sum(wt * D * drive)

    # inner integral over [0, t'] mapped onto the same composite rule
    u, wu = _composite_gauss(0.0, 1.0, n_panels, quadrature_order)
    tt = t[:, None] * u[None, :]
    S_in = coupling_eval(system, paths.s_plus(tt.ravel(), 0))[0] + coupling_eval(system, paths.s_minus(tt.ravel(), 0))[0]
    S_in = S_in.reshape(tt.shape)
    lag = t[:, None] - tt
    amp = c**2 / (2.0 * m * w)
    kern = np.zeros_like(lag)
    for a_i, w_i in zip(amp, w):
        kern += a_i * np.sin(w_i * lag)
    inner = t * np.sum(wu * S_in * kern, axis=1)
    phi += np.sum(wt * D * inner)

    if system.counter_term:
        phi -= bath.reorganization_coefficient * np.sum(wt * (Fp**2 - Fm**2))
    return float(phi)
