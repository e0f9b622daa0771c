"""Semiclassical forward-backward propagation of a system coupled to a harmonic bath."""

from .action import (
    ActionEvaluation,
    PropagatorAmplitude,
    TrajectoryPair,
    action_phi,
    action_phi_continuum,
    evaluate_action,
    hessian,
    prefactor,
    residual,
)
from .bath import (
    BathPhasePoint,
    BathSpec,
    SpectralDensity,
    discretize_exp_cutoff,
    discretize_linear_ohmic,
    equilibrium_placement,
    evaluate_spectral_density,
    sample_wigner,
)
from .errors import (
    CausticError,
    ConfigError,
    ConvergenceError,
    DomainError,
    FBSCError,
    ModelError,
    NumericalFailure,
)
from .exact import build_normal_modes, exact_position_expectation, forced_oscillator_trajectory
from .propagator import (
    InitialSystemState,
    ObservableSeries,
    PropagationConfig,
    expectation_position,
    qsc_amplitude,
)
from .solver import SolverConfig, StationaryResult, harmonic_initial_guess, solve_stationary, solve_with_continuation
from .system import Harmonic, LinearCoupling, Morse, MorseCoupling, SystemSpec, coupling_eval, potential_eval

__all__ = [name for name in dir() if not name.startswith("_")]
