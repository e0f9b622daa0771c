"""Discretized harmonic baths and their initial phase-space conditions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError
from .system import SystemSpec, coupling_eval


class SpectralKind(str, Enum):
    EXP_CUTOFF_OHMIC = "exp_cutoff_ohmic"
    LINEAR_OHMIC = "linear_ohmic"


@dataclass(frozen=True)
class SpectralDensity:
    """Continuous bath spectral density J(omega).

    ``exp_cutoff_ohmic``: J = (pi/2) hbar xi omega exp(-omega/omega_c).
    ``linear_ohmic``: J = M gamma omega.
    """

    kind: SpectralKind
    xi: float = 0.0
    omega_c: float = 1.0
    system_mass: float = 1.0
    gamma: float = 0.0
    hbar: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SpectralKind(self.kind))
        if self.kind is SpectralKind.EXP_CUTOFF_OHMIC:
            if not self.omega_c > 0 or self.xi < 0:
                raise DomainError("exp-cutoff density needs omega_c > 0 and xi >= 0")
        else:
            if not self.system_mass > 0 or self.gamma < 0:
                raise DomainError("linear Ohmic density needs M > 0 and gamma >= 0")
        if not self.hbar > 0:
            raise DomainError("hbar must be positive")

    @classmethod
    def exp_cutoff(cls, xi, omega_c, hbar=1.0):
        return cls(SpectralKind.EXP_CUTOFF_OHMIC, xi=xi, omega_c=omega_c, hbar=hbar)

    @classmethod
    def linear_ohmic(cls, system_mass, gamma, hbar=1.0):
        return cls(SpectralKind.LINEAR_OHMIC, system_mass=system_mass, gamma=gamma, hbar=hbar)


def evaluate_spectral_density(J: SpectralDensity, omega):
    """J(omega) for omega >= 0."""
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise DomainError("spectral density is defined for omega >= 0")
    if J.kind is SpectralKind.EXP_CUTOFF_OHMIC:
        out = 0.5 * math.pi * J.hbar * J.xi * w * np.exp(-w / J.omega_c)
    else:
        out = J.system_mass * J.gamma * w
    return out if out.ndim else float(out)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BathSpec:
    """Per-mode masses m_i, frequencies omega_i and couplings c_i."""

    masses: np.ndarray
    frequencies: np.ndarray
    couplings: np.ndarray

    def __post_init__(self):
        m, w, c = (_frozen(np.atleast_1d(x)) for x in (self.masses, self.frequencies, self.couplings))
        if not (m.ndim == w.ndim == c.ndim == 1 and m.size == w.size == c.size >= 1):
            raise DomainError("bath arrays must be 1-d with equal length >= 1")
        if np.any(m <= 0) or np.any(w <= 0):
            raise DomainError("bath masses and frequencies must be positive")
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "frequencies", w)
        object.__setattr__(self, "couplings", c)

    @property
    def n_modes(self) -> int:
        return self.frequencies.size

    @property
    def reorganization_coefficient(self) -> float:
        """sum_i c_i^2 / (2 m_i w_i^2): the counter term is this times f(s)^2."""
        return float(np.sum(self.couplings**2 / (2.0 * self.masses * self.frequencies**2)))

    def scaled(self, factor: float) -> "BathSpec":
        """Same modes with every coupling multiplied by ``factor``."""
        return BathSpec(self.masses, self.frequencies, self.couplings * factor)

    def to_dict(self):
        return {
            "masses": self.masses.tolist(),
            "frequencies": self.frequencies.tolist(),
            "couplings": self.couplings.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["masses"], d["frequencies"], d["couplings"])


@dataclass(frozen=True, eq=False)
class BathPhasePoint:
    """Initial bath positions and momenta.

    The last axis indexes modes; a leading axis, if present, indexes samples.
    """

    x0: np.ndarray
    p0: np.ndarray = field(default=None)

    def __post_init__(self):
        x0 = _frozen(self.x0)
        p0 = _frozen(np.zeros_like(x0) if self.p0 is None else self.p0)
        if x0.shape != p0.shape:
            raise DomainError("x0 and p0 must have the same shape")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "p0", p0)

    @property
    def n_samples(self) -> int:
        return 1 if self.x0.ndim == 1 else self.x0.shape[0]

    def sample(self, i: int) -> "BathPhasePoint":
        if self.x0.ndim == 1:
            if i != 0:
                raise IndexError(i)
            return self
        return BathPhasePoint(self.x0[i], self.p0[i])

    def check(self, bath: BathSpec):
        if self.x0.shape[-1] != bath.n_modes:
            raise DomainError(f"phase point has {self.x0.shape[-1]} modes, bath has {bath.n_modes}")

    @classmethod
    def at_rest(cls, bath: BathSpec) -> "BathPhasePoint":
        return cls(np.zeros(bath.n_modes), np.zeros(bath.n_modes))


def _equal_spacing(n_modes, omega_max):
    if n_modes < 1:
        raise DomainError("n_modes must be >= 1")
    if not omega_max > 0:
        raise DomainError("maximum frequency must be positive")
    dw = omega_max / n_modes
    return dw, dw * np.arange(1, n_modes + 1)


def discretize_linear_ohmic(n_modes, omega_f, gamma, m, system_mass) -> BathSpec:
    """Equally spaced modes w_i = i dw with c_i = i sqrt(2 m M gamma dw^3 / pi)."""
    dw, w = _equal_spacing(n_modes, omega_f)
    c = np.arange(1, n_modes + 1) * math.sqrt(2.0 * m * system_mass * gamma * dw**3 / math.pi)
    return BathSpec(np.full(n_modes, float(m)), w, c)


def discretize_exp_cutoff(n_modes, omega_max, J: SpectralDensity, m) -> BathSpec:
    """Equally spaced modes with density-matching couplings c_i^2 = (2/pi) m w_i J(w_i) dw."""
    if J.kind is not SpectralKind.EXP_CUTOFF_OHMIC:
        raise DomainError("discretize_exp_cutoff needs an exp-cutoff spectral density")
    dw, w = _equal_spacing(n_modes, omega_max)
    c = np.sqrt(2.0 / math.pi * m * w * evaluate_spectral_density(J, w) * dw)
    return BathSpec(np.full(n_modes, float(m)), w, c)


def reconstruct_spectral_density(bath: BathSpec, omega, width):
    """Gaussian-smoothed (pi/2) sum_i c_i^2/(m_i w_i) delta(omega - w_i)."""
    omega = np.asarray(omega, dtype=float)[..., None]
    g = np.exp(-0.5 * ((omega - bath.frequencies) / width) ** 2) / (math.sqrt(2 * math.pi) * width)
    return 0.5 * math.pi * np.sum(bath.couplings**2 / (bath.masses * bath.frequencies) * g, axis=-1)


def wigner_variances(bath: BathSpec, beta, hbar=1.0):
    """Per-mode (Var x, Var p) of the thermal Wigner distribution; beta=inf is the ground state."""
    if not beta > 0:
        raise DomainError(f"beta must be positive (or inf), got {beta}")
    m, w = bath.masses, bath.frequencies
    th = np.ones_like(w) if math.isinf(beta) else np.tanh(0.5 * hbar * w * beta)
    return hbar / (2.0 * m * w * th), m * w * hbar / (2.0 * th)


def sample_wigner(bath: BathSpec, beta, seed, size=None, hbar=1.0, antithetic=False) -> BathPhasePoint:
    """Draw bath initial conditions from the thermal Wigner distribution.

    Draws come from a single PCG64 stream consumed in (sample, {x, p}, mode)
    order, so sample ``i`` is the same for any ``size > i``. With
    ``antithetic=True`` odd samples are the negation of the preceding even one.
    """
    var_x, var_p = wigner_variances(bath, beta, hbar)
    n = 1 if size is None else int(size)
    if n < 1:
        raise DomainError("size must be >= 1")
    rng = np.random.default_rng(seed)
    n_draw = (n + 1) // 2 if antithetic else n
    z = rng.standard_normal((n_draw, 2, bath.n_modes))
    if antithetic:
        z = np.stack([z, -z], axis=1).reshape(2 * n_draw, 2, bath.n_modes)[:n]
    x0 = z[:, 0] * np.sqrt(var_x)
    p0 = z[:, 1] * np.sqrt(var_p)
    if size is None:
        return BathPhasePoint(x0[0], p0[0])
    return BathPhasePoint(x0, p0)


def equilibrium_placement(bath: BathSpec, system: SystemSpec, s0) -> BathPhasePoint:
    """Bath at rest at the minimum of its potential for the system frozen at ``s0``."""
    f0 = float(coupling_eval(system, s0)[0])
    x0 = bath.couplings * f0 / (bath.masses * bath.frequencies**2)
    return BathPhasePoint(x0, np.zeros(bath.n_modes))
