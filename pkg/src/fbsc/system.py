"""Quantum system definitions: potential V0(s) and bath coupling function f(s)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class Harmonic:
    """V0(s) = M Omega^2 s^2 / 2; Omega = 0 is the free particle."""

    omega: float


@dataclass(frozen=True)
class Morse:
    """V0(s) = D (exp(-2 a s) - 2 exp(-a s)), minimum -D at s = 0."""

    depth: float
    alpha: float


@dataclass(frozen=True)
class LinearCoupling:
    """f(s) = s."""


@dataclass(frozen=True)
class MorseCoupling:
    """f(s) = (1 - exp(-a s)) / a."""

    alpha: float


Potential = Union[Harmonic, Morse]
Coupling = Union[LinearCoupling, MorseCoupling]


@dataclass(frozen=True)
class SystemSpec:
    """System mass, potential family, coupling function and counter-term switch.

    The same coupling function is shared by every bath mode; each mode scales
    it by its own coupling constant.
    """

    mass: float
    potential: Potential
    coupling: Coupling = LinearCoupling()
    counter_term: bool = True

    def __post_init__(self):
        if not self.mass > 0:
            raise DomainError(f"system mass must be positive, got {self.mass}")
        pot = self.potential
        if isinstance(pot, Harmonic):
            if not pot.omega >= 0:
                raise DomainError("harmonic frequency must be non-negative")
        elif isinstance(pot, Morse):
            if not (pot.depth > 0 and pot.alpha > 0):
                raise DomainError("Morse depth and range parameter must be positive")
        else:
            raise DomainError(f"unknown potential {pot!r}")
        if isinstance(self.coupling, MorseCoupling):
            if not self.coupling.alpha > 0:
                raise DomainError("Morse coupling range parameter must be positive")
        elif not isinstance(self.coupling, LinearCoupling):
            raise DomainError(f"unknown coupling {self.coupling!r}")

    @property
    def frequency(self) -> float:
        """Harmonic frequency at the potential minimum."""
        pot = self.potential
        if isinstance(pot, Harmonic):
            return pot.omega
        return morse_frequency(pot.depth, pot.alpha, self.mass)

    @property
    def is_quadratic(self) -> bool:
        """True when V0 is quadratic and f is linear, so the action is quadratic in the path."""
        return isinstance(self.potential, Harmonic) and isinstance(self.coupling, LinearCoupling)

    def linearized(self) -> "SystemSpec":
        """Quadratic expansion of V0 and linear expansion of f about s = 0.

        Both supported potentials have their minimum at s = 0, and both
        couplings satisfy f(0) = 0, f'(0) = 1.
        """
        return SystemSpec(self.mass, Harmonic(self.frequency), LinearCoupling(), self.counter_term)


def morse_frequency(depth: float, alpha: float, mass: float) -> float:
    """Harmonic frequency of a Morse well, ``a * sqrt(2 D / M)``."""
    if not (depth > 0 and alpha > 0 and mass > 0):
        raise DomainError("Morse parameters and mass must be positive")
    return alpha * math.sqrt(2.0 * depth / mass)


def potential_eval(system: SystemSpec, s):
    """Return ``(V0, V0', V0'')`` at position(s) ``s``."""
    s = np.asarray(s, dtype=float)
    pot = system.potential
    if isinstance(pot, Harmonic):
        k = system.mass * pot.omega**2
        return 0.5 * k * s**2, k * s, np.full_like(s, k)
    a, d = pot.alpha, pot.depth
    e1 = np.exp(-a * s)
    e2 = e1 * e1
    return d * (e2 - 2.0 * e1), 2.0 * a * d * (e1 - e2), 2.0 * a * a * d * (2.0 * e2 - e1)


def coupling_eval(system: SystemSpec, s):
    """Return ``(f, f', f'')`` at position(s) ``s``."""
    s = np.asarray(s, dtype=float)
    cpl = system.coupling
    if isinstance(cpl, LinearCoupling):
        return s.copy(), np.ones_like(s), np.zeros_like(s)
    a = cpl.alpha
    e1 = np.exp(-a * s)
    # -expm1 keeps f accurate for |a s| << 1
    return -np.expm1(-a * s) / a, e1, -a * e1


def counter_term_eval(system: SystemSpec, bath, s):
    """Counter term ``sum_i c_i^2 f(s)^2 / (2 m_i w_i^2)`` and its derivative in s."""
    kappa = bath.reorganization_coefficient
    f, fp, _ = coupling_eval(system, s)
    return kappa * f * f, 2.0 * kappa * f * fp
