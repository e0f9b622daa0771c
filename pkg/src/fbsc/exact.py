"""Exact references: normal-mode evolution of the harmonic benchmark and the forced bath oscillator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .bath import BathSpec
from .errors import ModelError
from .propagator import InitialSystemState, ObservableSeries
from .system import Harmonic, LinearCoupling, SystemSpec

EIGEN_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class NormalModeDecomposition:
    """Eigenfrequencies and orthogonal eigenvectors of the mass-weighted Hessian.

    Coordinate 0 is the system; coordinates 1..n are the bath modes.
    """

    frequencies: np.ndarray
    transform: np.ndarray
    masses: np.ndarray
    hessian: np.ndarray

    def evolve(self, y0, v0, t):
        """Mass-weighted positions at times ``t`` from mass-weighted positions/velocities at 0."""
        T = self.transform
        t = np.asarray(t, dtype=float)
        a0, b0 = T.T @ y0, T.T @ v0
        nu = self.frequencies
        wt = np.multiply.outer(t, nu)
        modes = a0 * np.cos(wt) + b0 / nu * np.sin(wt)
        return modes @ T.T


def build_normal_modes(system: SystemSpec, bath: BathSpec) -> NormalModeDecomposition:
    """Diagonalize the quadratic system-bath potential (counter term included)."""
    if not (isinstance(system.potential, Harmonic) and isinstance(system.coupling, LinearCoupling)):
        raise ModelError("normal modes need a harmonic system with linear coupling")
    if not system.counter_term:
        raise ModelError("normal modes are built for the counter-term Hamiltonian")
    M, Om = system.mass, system.potential.omega
    m, w, c = bath.masses, bath.frequencies, bath.couplings
    n = bath.n_modes + 1
    K = np.zeros((n, n))
    K[0, 0] = M * Om**2 + np.sum(c**2 / (m * w**2))
    K[0, 1:] = K[1:, 0] = -c
    K[1:, 1:] = np.diag(m * w**2)
    masses = np.concatenate([[M], m])
    inv = 1.0 / np.sqrt(masses)
    Hmw = K * np.outer(inv, inv)
    lam, T = np.linalg.eigh(Hmw)
    if lam[0] <= EIGEN_RTOL * lam[-1]:
        raise ModelError(f"non-positive normal-mode eigenvalue {lam[0]:.3e}")
    return NormalModeDecomposition(np.sqrt(lam), T, masses, Hmw)


def exact_position_expectation(decomp: NormalModeDecomposition, state: InitialSystemState,
                               t_grid, beta=None) -> ObservableSeries:
    """<s>(t) from the classical flow of the mean phase point (s = center, bath at 0, momenta 0).

    The mean of a Gaussian state under a quadratic Hamiltonian does not depend
    on ``beta``; it is accepted for interface symmetry.
    """
    t = np.asarray(t_grid, dtype=float)
    n = decomp.frequencies.size
    y0 = np.zeros(n)
    y0[0] = np.sqrt(decomp.masses[0]) * state.center
    y = decomp.evolve(y0, np.zeros(n), t)
    s = y[:, 0] / np.sqrt(decomp.masses[0])
    return ObservableSeries(t, s, np.ones_like(t), meta={"exact": True})


def mean_energy(decomp: NormalModeDecomposition, y, v):
    """Quadratic-form energy of mass-weighted coordinates and velocities."""
    return 0.5 * np.sum(v * v, axis=-1) + 0.5 * np.einsum("...i,ij,...j->...", y, decomp.hessian, y)


def forced_oscillator_trajectory(m, omega, c, x0, p0, drive, t):
    """x(t) of m x'' + m omega^2 x = c f(s(t)) by trapezoid quadrature of the memory integral.

    ``drive`` is a pair ``(times, values)`` sampling f(s(t')) on ``[0, t]``.
    """
    times, f = (np.asarray(a, dtype=float) for a in drive)
    mask = times <= t
    tt, ff = times[mask], f[mask]
    free = x0 * np.cos(omega * t) + p0 / (m * omega) * np.sin(omega * t)
    if tt.size < 2:
        return float(free)
    return float(free + c / (m * omega) * trapezoid(ff * np.sin(omega * (t - tt)), tt))
