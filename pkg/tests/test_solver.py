import numpy as np
import pytest
import scipy.linalg

from conftest import MORSE_LENGTH, harmonic_period, morse_period
from fbsc.action import TrajectoryPair, residual
from fbsc.bath import BathPhasePoint, equilibrium_placement, sample_wigner
from fbsc.errors import ConvergenceError, DomainError
from fbsc.solver import (
    SolverConfig,
    StationarySolver,
    harmonic_initial_guess,
    newton_batch,
    solve_stationary,
    solve_with_continuation,
)
from fbsc.system import Harmonic, LinearCoupling, SystemSpec


def _zero(bath):
    n = bath.frequencies.size
    return BathPhasePoint(np.zeros(n), np.zeros(n))


def test_zero_guess(harmonic_system, harmonic_bath):
    g = harmonic_initial_guess([0, 0, 0, 0], harmonic_system, harmonic_bath, _zero(harmonic_bath), 16, 0.1)
    assert np.all(g.s_plus == 0) and np.all(g.s_minus == 0)


def test_linear_model_converges_from_guess(harmonic_system, harmonic_bath, rng):
    dt = harmonic_period() / 64
    phase = sample_wigner(harmonic_bath, 1.0, seed=4, size=100)
    worst = 0
    for i in range(100):
        init = BathPhasePoint(phase.x0[i], phase.p0[i])
        ends = rng.normal(0.0, 1.0, 4)
        guess = harmonic_initial_guess(ends, harmonic_system, harmonic_bath, init, 24, dt)
        res = solve_stationary(guess, harmonic_system, harmonic_bath, init)
        assert res.converged and res.residual_norm <= 1e-10
        worst = max(worst, res.iterations)
    assert worst <= 1


def test_uncoupled_guess_matches_tridiagonal_bvp(uncoupled_bath):
    m, omega, n, dt, L = 2.0, 1.3, 20, 0.07, 0.8
    system = SystemSpec(m, Harmonic(omega), LinearCoupling(), False)
    guess = harmonic_initial_guess([0.0, 0.0, L, 0.0], system, uncoupled_bath, _zero(uncoupled_bath), n, dt)
    # (m/dt)(s[k+1] - 2 s[k] + s[k-1]) + dt m omega^2 s[k] = 0, s[0] = 0, s[n] = L
    k = n - 1
    ab = np.zeros((3, k))
    ab[0, 1:] = ab[2, :-1] = m / dt
    ab[1] = -2 * m / dt + dt * m * omega**2
    rhs = np.zeros(k)
    rhs[-1] = -m / dt * L
    expected = scipy.linalg.solve_banded((1, 1), ab, rhs)
    np.testing.assert_allclose(guess.s_plus[1:-1], expected, rtol=1e-12, atol=1e-14)
    assert np.all(guess.s_minus == 0)


def test_morse_small_displacement(morse_system, morse_bath, rng):
    t = morse_period() / 2
    n = 32
    init = equilibrium_placement(morse_bath, morse_system, 0.0)
    for _ in range(10):
        ends = rng.uniform(-0.1, 0.1, 4) * MORSE_LENGTH
        guess = harmonic_initial_guess(ends, morse_system, morse_bath, init, n, t / n)
        res = solve_stationary(guess, morse_system, morse_bath, init)
        assert res.converged and res.iterations <= 8
        assert res.residual_norm <= 1e-10


@pytest.mark.parametrize("ends", [[0.0, 0.0, 1.5, 0.0], [0.0, 0.7, 0.0, 0.7]])
def test_free_particle_paths(uncoupled_bath, ends):
    system = SystemSpec(1.0, Harmonic(0.0), LinearCoupling(), False)
    n, dt = 10, 0.3
    guess = TrajectoryPair.straight([0.2, -0.1, 0.4, 0.9], n, dt)
    guess = TrajectoryPair(n, dt, np.r_[ends[0], guess.s_plus[1:-1], ends[2]],
                           np.r_[ends[1], guess.s_minus[1:-1], ends[3]])
    res = solve_stationary(guess, system, uncoupled_bath, _zero(uncoupled_bath))
    assert res.converged
    line = np.linspace(ends[0], ends[2], n + 1)
    np.testing.assert_allclose(res.trajectory.s_plus, line, atol=1e-12)
    np.testing.assert_allclose(res.trajectory.s_minus, np.full(n + 1, ends[1]), atol=1e-12)


def test_single_stage_continuation_is_plain_solve(morse_system, morse_bath):
    init = equilibrium_placement(morse_bath, morse_system, 2 * MORSE_LENGTH)
    t, n = morse_period() / 4, 16
    guess = harmonic_initial_guess([0.1, 0.12, 0.05, 0.06], morse_system, morse_bath, init, n, t / n)
    a = solve_stationary(guess, morse_system, morse_bath, init)
    b = solve_with_continuation(guess, morse_system, morse_bath, init, SolverConfig(continuation_stages=1))
    np.testing.assert_array_equal(a.trajectory.s_plus, b.trajectory.s_plus)
    np.testing.assert_array_equal(a.trajectory.s_minus, b.trajectory.s_minus)
    assert a.iterations == b.iterations


def test_continuation_rescues_far_endpoints(morse_system, morse_bath):
    T = morse_period()
    n = 32
    init = equilibrium_placement(morse_bath, morse_system, 2 * MORSE_LENGTH)
    ends = np.full(4, 2 * MORSE_LENGTH)
    guess = harmonic_initial_guess(ends, morse_system, morse_bath, init, n, T / n)
    one = solve_with_continuation(guess, morse_system, morse_bath, init, SolverConfig(continuation_stages=1))
    four = solve_with_continuation(guess, morse_system, morse_bath, init, SolverConfig(continuation_stages=4))
    assert not one.converged
    assert four.converged and four.residual_norm <= 1e-10


def test_continuation_failure_reports_stage(morse_system, morse_bath):
    init = equilibrium_placement(morse_bath, morse_system, 2 * MORSE_LENGTH)
    t, n = morse_period() / 4, 16
    guess = harmonic_initial_guess([0.1, 0.12, 0.05, 0.06], morse_system, morse_bath, init, n, t / n)
    with pytest.raises(ConvergenceError) as err:
        solve_with_continuation(guess, morse_system, morse_bath, init,
                                SolverConfig(max_iterations=0, continuation_stages=2))
    assert err.value.stage == 0.5


def test_converged_results_are_independently_stationary(morse_system, morse_bath, rng):
    init = equilibrium_placement(morse_bath, morse_system, MORSE_LENGTH)
    t, n = morse_period() / 3, 20
    for _ in range(5):
        ends = MORSE_LENGTH * rng.uniform(0.5, 1.5, 4)
        guess = harmonic_initial_guess(ends, morse_system, morse_bath, init, n, t / n)
        before = guess.endpoints
        res = solve_stationary(guess, morse_system, morse_bath, init)
        assert np.array_equal(res.trajectory.endpoints, before)
        assert np.array_equal(guess.endpoints, before)
        if res.converged:
            r = residual(res.trajectory, morse_system, morse_bath, init)
            assert np.max(np.abs(r)) <= 1e-10


def test_deterministic(morse_system, morse_bath):
    init = equilibrium_placement(morse_bath, morse_system, MORSE_LENGTH)
    t, n = morse_period() / 3, 20
    guess = harmonic_initial_guess(np.full(4, 1.3 * MORSE_LENGTH), morse_system, morse_bath, init, n, t / n)
    a = solve_stationary(guess, morse_system, morse_bath, init)
    b = solve_stationary(guess, morse_system, morse_bath, init)
    np.testing.assert_array_equal(a.trajectory.s_plus, b.trajectory.s_plus)
    assert a.history == b.history


def test_swapped_pair_is_stationary(morse_system, morse_bath):
    init = equilibrium_placement(morse_bath, morse_system, MORSE_LENGTH)
    t, n = morse_period() / 3, 20
    ends = MORSE_LENGTH * np.array([1.1, 0.9, 0.7, 1.2])
    guess = harmonic_initial_guess(ends, morse_system, morse_bath, init, n, t / n)
    res = solve_stationary(guess, morse_system, morse_bath, init)
    assert res.converged
    r = residual(res.trajectory.swapped(), morse_system, morse_bath, init)
    assert np.max(np.abs(r)) <= 1e-10


def test_failure_is_reported_not_raised(morse_system, morse_bath):
    init = equilibrium_placement(morse_bath, morse_system, 2 * MORSE_LENGTH)
    T, n = morse_period(), 32
    guess = harmonic_initial_guess(np.full(4, 2 * MORSE_LENGTH), morse_system, morse_bath, init, n, T / n)
    res = solve_stationary(guess, morse_system, morse_bath, init, SolverConfig(max_iterations=3))
    assert not res.converged
    assert res.iterations <= 3 and len(res.history) == res.iterations + 1
    assert res.residual_norm == pytest.approx(min(res.history))


def test_stall_exit_stops_early(morse_system, morse_bath):
    # s_f beyond the reachable range at a quarter period has no real stationary pair
    init = equilibrium_placement(morse_bath, morse_system, 0.0)
    t, n = morse_period() / 4, 16
    solver = StationarySolver(morse_system, morse_bath, n, t / n)
    ends = np.array([[-1.2, 1.2, -3.0, 3.0]]) * MORSE_LENGTH
    g = solver.drive(init.x0, init.p0)
    sp, sm = solver.linearized.solve(ends, g)
    res = newton_batch(solver.action, sp, sm, g, SolverConfig(max_iterations=200))
    if not res.converged[0]:
        assert res.iterations[0] < 200


def test_batched_solver_matches_single(morse_system, morse_bath, rng):
    init = equilibrium_placement(morse_bath, morse_system, MORSE_LENGTH)
    t, n = morse_period() / 3, 20
    ends = MORSE_LENGTH * rng.uniform(0.5, 1.5, (6, 4))
    solver = StationarySolver(morse_system, morse_bath, n, t / n)
    batch = solver.solve(ends, solver.drive(init.x0, init.p0))
    for i in range(6):
        guess = harmonic_initial_guess(ends[i], morse_system, morse_bath, init, n, t / n)
        one = solve_stationary(guess, morse_system, morse_bath, init)
        if one.converged and batch.converged[i]:
            np.testing.assert_allclose(batch.s_plus[i], one.trajectory.s_plus, atol=1e-9)


@pytest.mark.parametrize("kwargs", [
    dict(residual_tolerance=0.0),
    dict(step_scale=0.0),
    dict(backtrack_factor=1.5),
    dict(continuation_stages=0),
    dict(max_iterations=-1),
])
def test_config_validation(kwargs):
    with pytest.raises(DomainError):
        SolverConfig(**kwargs)


def test_guess_rejects_batched_phase_point(harmonic_system, harmonic_bath):
    phase = sample_wigner(harmonic_bath, 1.0, seed=0, size=2)
    with pytest.raises(DomainError):
        harmonic_initial_guess([0, 0, 0, 0], harmonic_system, harmonic_bath, phase, 8, 0.1)
