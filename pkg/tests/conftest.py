import math

import numpy as np
import pytest

from fbsc.action import ContinuousPaths, TrajectoryPair, action_phi, action_phi_continuum
from fbsc.bath import BathSpec, SpectralDensity, discretize_exp_cutoff, discretize_linear_ohmic
from fbsc.system import Harmonic, LinearCoupling, Morse, MorseCoupling, SystemSpec

# harmonic benchmark
HARMONIC_OMEGA = 1.0
HARMONIC_MASS = 1.0
HARMONIC_BETA = 1.0

# Morse benchmark
MORSE_MASS = 1e5
MORSE_DEPTH = 0.018
MORSE_ALPHA = 2.0
MORSE_OMEGA = 1.2e-3
MORSE_LENGTH = 0.09129
MORSE_BATH_MASS = 1e4
MORSE_GAMMA = 1.0 / 2067.05


@pytest.fixture(scope="session")
def harmonic_system():
    return SystemSpec(HARMONIC_MASS, Harmonic(HARMONIC_OMEGA), LinearCoupling(), True)


@pytest.fixture(scope="session")
def harmonic_bath():
    return discretize_exp_cutoff(60, 30.0, SpectralDensity.exp_cutoff(2.0, 6.0), 1.0)


@pytest.fixture(scope="session")
def morse_system():
    return SystemSpec(MORSE_MASS, Morse(MORSE_DEPTH, MORSE_ALPHA), MorseCoupling(MORSE_ALPHA), False)


@pytest.fixture(scope="session")
def morse_bath():
    return discretize_linear_ohmic(20, 2 * MORSE_OMEGA, MORSE_GAMMA, MORSE_BATH_MASS, MORSE_MASS)


@pytest.fixture(scope="session")
def uncoupled_bath():
    return BathSpec([1.0, 1.0], [1.5, 3.0], [0.0, 0.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def harmonic_period():
    return 2 * math.pi / HARMONIC_OMEGA


def morse_period():
    return 2 * math.pi / MORSE_OMEGA


class SmoothPath:
    """a + b sin(pi t / T) + c cos(2 pi t / T) and its first derivative."""

    def __init__(self, a, b, c, T):
        self.a, self.b, self.c, self.T = a, b, c, T

    def __call__(self, t, nu=0):
        x = np.pi * np.asarray(t) / self.T
        k = np.pi / self.T
        if nu == 0:
            return self.a + self.b * np.sin(x) + self.c * np.cos(2 * x)
        return self.b * k * np.cos(x) - 2 * self.c * k * np.sin(2 * x)


def order_ratios(system, bath, init, T, make_paths):
    """Successive error ratios of the discrete phase against the continuum for N = 32, 64, 128."""
    paths = ContinuousPaths(*make_paths(), T)
    ref = action_phi_continuum(paths, system, bath, init, quadrature_order=10, n_panels=256)
    errs = []
    # N from 32 up keeps omega_max * dt of the benchmark bath in the asymptotic regime
    for n in (32, 64, 128):
        t = np.linspace(0, T, n + 1)
        traj = TrajectoryPair(n, T / n, paths.s_plus(t, 0), paths.s_minus(t, 0))
        errs.append(abs(action_phi(traj, system, bath, init) - ref))
    return errs[0] / errs[1], errs[1] / errs[2]
