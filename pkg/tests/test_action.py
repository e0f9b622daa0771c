import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SmoothPath, order_ratios
from fbsc.action import (
    ActionEvaluation,
    DiscreteAction,
    PathKernel,
    TrajectoryPair,
    action_phi,
    action_phi_continuum,
    evaluate_action,
    hessian,
    inertia,
    prefactor,
    residual,
)
from fbsc.bath import BathPhasePoint, BathSpec, sample_wigner
from fbsc.errors import CausticError
from fbsc.system import Harmonic, LinearCoupling, SystemSpec

FREE = SystemSpec(2.0, Harmonic(0.0), LinearCoupling(), False)
NO_BATH = BathSpec([1.0], [1.0], [0.0])
REST = BathPhasePoint(np.zeros(1))


def smooth_pair(rng, n, dt, center=0.0, scale=1.0):
    t = np.linspace(0, 1, n + 1)

    def path():
        a = rng.normal(0, scale, 3)
        return center + a[0] + a[1] * np.sin(math.pi * t) + a[2] * np.cos(2 * math.pi * t)

    return TrajectoryPair(n, dt, path(), path())


def fd_gradient(f, x, h):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_identical_paths_give_zero(harmonic_system, harmonic_bath, rng):
    init = sample_wigner(harmonic_bath, 1.0, seed=1)
    p = smooth_pair(rng, 12, 0.1)
    same = TrajectoryPair(12, 0.1, p.s_plus, p.s_plus)
    assert action_phi(same, harmonic_system, harmonic_bath, init) == 0.0


def test_free_particle_straight_line():
    n, dt, L = 10, 0.3, 1.7
    traj = TrajectoryPair(n, dt, np.linspace(0, L, n + 1), np.zeros(n + 1))
    assert action_phi(traj, FREE, NO_BATH, REST) == pytest.approx(FREE.mass * L**2 / (2 * n * dt), rel=1e-13)


@pytest.mark.parametrize("counter", [True, False])
def test_constant_paths_closed_form(counter):
    # f piecewise constant in time makes every segment integral exact, so both forms match the closed form
    m, w, c, x0, p0 = 1.3, 2.1, 0.7, 0.4, -0.3
    system = SystemSpec(1.0, Harmonic(0.0), LinearCoupling(), counter)
    bath = BathSpec([m], [w], [c])
    init = BathPhasePoint(np.array([x0]), np.array([p0]))
    a, b, n, t = 0.8, -0.5, 16, 2.5
    traj = TrajectoryPair(n, t / n, np.full(n + 1, a), np.full(n + 1, b))
    D, S = a - b, a + b
    kappa = c**2 / (2 * m * w**2)
    expected = (D * (c * x0 * math.sin(w * t) / w + c * p0 * (1 - math.cos(w * t)) / (m * w**2))
                + D * S * c**2 / (2 * m * w) * (t / w - math.sin(w * t) / w**2))
    if counter:
        expected -= kappa * t * (a**2 - b**2)
    assert action_phi(traj, system, bath, init) == pytest.approx(expected, rel=1e-12)
    assert action_phi_continuum(traj, system, bath, init) == pytest.approx(expected, rel=1e-10)


def test_antisymmetry(harmonic_system, harmonic_bath, morse_system, morse_bath, rng):
    for system, bath, scale in ((harmonic_system, harmonic_bath, 1.0), (morse_system, morse_bath, 0.1)):
        init = BathPhasePoint(rng.normal(0, 0.1, bath.n_modes), rng.normal(0, 0.1, bath.n_modes))
        p = smooth_pair(rng, 12, 0.2, scale=scale)
        a = action_phi(p, system, bath, init)
        b = action_phi(p.swapped(), system, bath, init)
        assert abs(a + b) <= 1e-12 * abs(a)


@pytest.mark.parametrize("model", ["harmonic", "morse"])
def test_residual_and_hessian_match_finite_differences(model, request, rng):
    system = request.getfixturevalue(f"{model}_system")
    bath = request.getfixturevalue(f"{model}_bath")
    scale = 1.0 if model == "harmonic" else 0.1
    dt = 0.2 if model == "harmonic" else 400.0
    init = BathPhasePoint(rng.normal(0, scale, bath.n_modes), rng.normal(0, scale, bath.n_modes))
    p = smooth_pair(rng, 12, dt, scale=scale)
    n = 11

    def phi_of(x):
        return action_phi(p.with_interior(x), system, bath, init)

    x = p.interior
    h = 1e-4 * scale
    g = residual(p, system, bath, init)
    fd = fd_gradient(phi_of, x, h)
    assert np.max(np.abs(g - fd)) <= 1e-6 * np.max(np.abs(g))
    H, sig = hessian(p, system, bath, init)
    fd_H = np.column_stack([
        (residual(p.with_interior(x + h * e), system, bath, init)
         - residual(p.with_interior(x - h * e), system, bath, init)) / (2 * h)
        for e in np.eye(2 * n)])
    assert np.max(np.abs(H - fd_H)) <= 1e-6 * np.max(np.abs(H))
    np.testing.assert_array_equal(H, H.T)
    assert np.all(np.diag(H[:n, n:]) == 0.0)
    assert sum(sig) == 2 * n


def test_residual_zero_on_discrete_harmonic_bvp():
    M, Om, n, dt, L = 1.5, 0.9, 20, 0.15, 0.7
    system = SystemSpec(M, Harmonic(Om), LinearCoupling(), False)
    # interior equations: (M/dt)(2 s_k - s_{k-1} - s_{k+1}) - dt M Om^2 s_k = 0, solved as a banded system
    diag = 2 * M / dt - dt * M * Om**2
    ab = np.zeros((3, n - 1))
    ab[0, 1:] = -M / dt
    ab[1] = diag
    ab[2, :-1] = -M / dt
    rhs = np.zeros(n - 1)
    rhs[-1] = M / dt * L
    s = scipy.linalg.solve_banded((1, 1), ab, rhs)
    sp = np.concatenate([[0.0], s, [L]])
    traj = TrajectoryPair(n, dt, sp, np.zeros(n + 1))
    r = residual(traj, system, NO_BATH, REST)
    assert np.max(np.abs(r)) < 1e-12


def test_zero_paths_zero_residual(morse_system, morse_bath):
    traj = TrajectoryPair(8, 100.0, np.zeros(9), np.zeros(9))
    assert np.all(residual(traj, morse_system, morse_bath, BathPhasePoint.at_rest(morse_bath)) == 0)


@pytest.mark.parametrize("n", [4, 8, 16, 32])
def test_free_particle_determinant_and_prefactor(n):
    t = 1.3
    dt = t / n
    traj = TrajectoryPair(n, dt, np.zeros(n + 1), np.zeros(n + 1))
    H, sig = hessian(traj, FREE, NO_BATH, REST)
    block = H[: n - 1, : n - 1]
    expected = n * (FREE.mass / dt) ** (n - 1)
    assert np.linalg.det(block) == pytest.approx(expected, rel=1e-10)
    assert np.all(H[: n - 1, n - 1:] == 0)
    P = prefactor(evaluate_action(traj, FREE, NO_BATH, REST), FREE, n, dt)
    assert abs(P) == pytest.approx(FREE.mass / (2 * math.pi * t), rel=1e-10)
    assert sig.n_plus == sig.n_minus
    assert P.imag == pytest.approx(0.0, abs=1e-12 * abs(P))


def test_memory_structure(harmonic_system, harmonic_bath, uncoupled_bath, rng):
    p = smooth_pair(rng, 10, 0.2)
    H0, _ = hessian(p, harmonic_system, uncoupled_bath, BathPhasePoint.at_rest(uncoupled_bath))
    n = 9
    off = np.abs(np.subtract.outer(np.arange(n), np.arange(n))) > 1
    assert np.all(H0[:n, :n][off] == 0) and np.all(H0[:n, n:] == 0)
    H1, _ = hessian(p, harmonic_system, harmonic_bath, BathPhasePoint.at_rest(harmonic_bath))
    assert np.all(H1[:n, :n][off] != 0)
    assert np.all(np.abs(H1[:n, n:])[~np.eye(n, dtype=bool)] > 0)


def test_caustic_prefactor_raises():
    n = 8
    system = SystemSpec(1.0, Harmonic(1.0), LinearCoupling(), False)
    traj = TrajectoryPair(n, 0.1, np.zeros(n + 1), np.zeros(n + 1))
    ev = evaluate_action(traj, system, NO_BATH, REST)
    lam, vec = np.linalg.eigh(ev.hessian)
    singular = ev.hessian - lam[0] * np.outer(vec[:, 0], vec[:, 0])
    sig, logdet = inertia(singular)
    assert sig.n_zero == 1
    with pytest.raises(CausticError):
        prefactor(ActionEvaluation(ev.phi, ev.gradient, singular, sig, logdet), system, n, 0.1)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_inertia_matches_eigenvalues(seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(9, 9))
    A = A + A.T
    sig, logdet = inertia(A)
    lam = np.linalg.eigvalsh(A)
    assert (sig.n_plus, sig.n_minus) == (int(np.sum(lam > 0)), int(np.sum(lam < 0)))
    assert logdet == pytest.approx(float(np.sum(np.log(np.abs(lam)))), rel=1e-9, abs=1e-9)


def test_discretization_order_harmonic(harmonic_system, harmonic_bath):
    init = sample_wigner(harmonic_bath, 1.0, seed=2)
    T = 3.0
    r1, r2 = order_ratios(harmonic_system, harmonic_bath, init, T,
                          lambda: (SmoothPath(1.0, 0.5, 0.2, T), SmoothPath(0.8, -0.3, 0.1, T)))
    assert abs(r1 - 4.0) <= 0.5 and abs(r2 - 4.0) <= 0.5


def test_discretization_order_morse(morse_system, morse_bath):
    from fbsc.bath import equilibrium_placement

    init = equilibrium_placement(morse_bath, morse_system, 0.18)
    T = 4000.0
    r1, r2 = order_ratios(morse_system, morse_bath, init, T,
                          lambda: (SmoothPath(0.18, 0.05, 0.02, T), SmoothPath(0.15, -0.04, 0.03, T)))
    assert abs(r1 - 4.0) <= 0.5 and abs(r2 - 4.0) <= 0.5


def test_kernel_drive_matches_single_evaluation(harmonic_system, harmonic_bath):
    init = sample_wigner(harmonic_bath, 1.0, seed=3, size=4)
    k = PathKernel.build(harmonic_system, harmonic_bath, 8, 0.2)
    g = k.drive(init.x0, init.p0)
    assert g.shape == (4, 9)
    np.testing.assert_allclose(g[2], k.drive(init.x0[2], init.p0[2]))


def test_batched_phase_matches_single(harmonic_system, harmonic_bath, rng):
    act = DiscreteAction.build(harmonic_system, harmonic_bath, 10, 0.2)
    pairs = [smooth_pair(rng, 10, 0.2) for _ in range(3)]
    sp = np.stack([p.s_plus for p in pairs])
    sm = np.stack([p.s_minus for p in pairs])
    batch = act.phi(sp, sm, 0.0)
    single = [action_phi(p, harmonic_system, harmonic_bath, BathPhasePoint.at_rest(harmonic_bath)) for p in pairs]
    np.testing.assert_allclose(batch, single, rtol=1e-13)
