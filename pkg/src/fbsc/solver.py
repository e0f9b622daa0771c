"""Damped Newton root search for stationary forward-backward path pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .action import (
    ActionEvaluation,
    DiscreteAction,
    PathKernel,
    TrajectoryPair,
    batched_inertia,
    evaluate_action,
    inertia,
    log_prefactor,
)
from .bath import BathPhasePoint, BathSpec
from .errors import CausticError, ConvergenceError, DomainError
from .system import SystemSpec

logger = logging.getLogger(__name__)

SINGULAR_SHIFT = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    """Newton settings.

    ``step_scale`` is the first trial step length and ``backtrack_factor`` the
    factor applied on each rejected trial. An item stalls, and is given up,
    when its residual norm has not fallen below ``stall_ratio`` times its value
    ``stall_window`` iterations earlier.
    """

    max_iterations: int = 50
    residual_tolerance: float = 1e-10
    step_scale: float = 1.0
    backtrack_factor: float = 0.5
    continuation_stages: int = 1
    max_backtracks: int = 30
    stall_window: int = 6
    stall_ratio: float = 0.5

    def __post_init__(self):
        if self.max_iterations < 0:
            raise DomainError("max_iterations must be >= 0")
        if not self.residual_tolerance > 0:
            raise DomainError("residual_tolerance must be positive")
        for name in ("step_scale", "backtrack_factor"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise DomainError(f"{name} must lie in (0, 1]")
        if self.continuation_stages < 1:
            raise DomainError("continuation_stages must be >= 1")
        if self.stall_window < 1 or not 0 < self.stall_ratio <= 1:
            raise DomainError("stall_window must be >= 1 and stall_ratio in (0, 1]")


@dataclass(frozen=True, eq=False)
class StationaryResult:
    trajectory: TrajectoryPair
    residual_norm: float
    iterations: int
    converged: bool
    action_eval: ActionEvaluation | None
    history: tuple = field(default=())
    coupling_scale: float = 1.0


def _set_interior(sp, sm, x):
    n = sp.shape[-1] - 2
    sp = sp.copy()
    sm = sm.copy()
    sp[..., 1:-1] = x[..., :n]
    sm[..., 1:-1] = x[..., n:]
    return sp, sm


def _interior(sp, sm):
    return np.concatenate([sp[..., 1:-1], sm[..., 1:-1]], axis=-1)


def _solve_one(H, b):
    try:
        return np.linalg.solve(H, b)
    except np.linalg.LinAlgError:
        pass
    shift = SINGULAR_SHIFT * max(np.max(np.abs(H)), 1.0)
    try:
        return np.linalg.solve(H + shift * np.eye(H.shape[0]), b)
    except np.linalg.LinAlgError:
        return None


def _newton_steps(H, rhs):
    """Solve each system, with one diagonally perturbed retry if singular."""
    try:
        step = np.linalg.solve(H, rhs[..., None])[..., 0]
        ok = np.all(np.isfinite(step), axis=-1)
        return step, ok
    except np.linalg.LinAlgError:
        pass
    step = np.zeros_like(rhs)
    ok = np.zeros(rhs.shape[0], dtype=bool)
    for i in range(rhs.shape[0]):
        s = _solve_one(H[i], rhs[i])
        if s is not None and np.all(np.isfinite(s)):
            step[i], ok[i] = s, True
    return step, ok


@dataclass(eq=False)
class NewtonBatch:
    s_plus: np.ndarray
    s_minus: np.ndarray
    residual_norm: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    history: list


def newton_batch(action: DiscreteAction, sp, sm, g, cfg: SolverConfig) -> NewtonBatch:
    """Damped Newton on a batch of path pairs ``(B, N + 1)`` with fixed endpoints."""
    sp = np.array(sp, dtype=float)
    sm = np.array(sm, dtype=float)
    g = np.broadcast_to(g, sp.shape)
    tol = cfg.residual_tolerance
    r = action.residual(sp, sm, g)
    norm = np.max(np.abs(r), axis=-1)
    norm[~np.isfinite(norm)] = np.inf
    iters = np.zeros(sp.shape[0], dtype=int)
    failed = np.zeros(sp.shape[0], dtype=bool)
    history = [norm.copy()]
    for _ in range(cfg.max_iterations):
        idx = np.flatnonzero((norm > tol) & ~failed)
        if idx.size == 0:
            break
        H = action.hessian_interior(sp[idx], sm[idx], g[idx])
        step, ok = _newton_steps(H, -r[idx])
        failed[idx[~ok]] = True
        idx, step = idx[ok], step[ok]
        x0 = _interior(sp[idx], sm[idx])
        alpha = np.full(idx.size, cfg.step_scale)
        pending = np.ones(idx.size, dtype=bool)
        for _ in range(cfg.max_backtracks + 1):
            j = np.flatnonzero(pending)
            if j.size == 0:
                break
            k = idx[j]
            tsp, tsm = _set_interior(sp[k], sm[k], x0[j] + alpha[j, None] * step[j])
            with np.errstate(over="ignore", invalid="ignore"):
                tr = action.residual(tsp, tsm, g[k])
                tn = np.max(np.abs(tr), axis=-1)
            good = np.isfinite(tn) & (tn < norm[k])
            kg = k[good]
            sp[kg], sm[kg], r[kg], norm[kg] = tsp[good], tsm[good], tr[good], tn[good]
            pending[j[good]] = False
            alpha[j[~good]] *= cfg.backtrack_factor
        failed[idx[pending]] = True
        iters[idx] += 1
        history.append(norm.copy())
        if len(history) > cfg.stall_window:
            failed |= (norm > tol) & (norm > cfg.stall_ratio * history[-1 - cfg.stall_window])
    return NewtonBatch(sp, sm, norm, iters, norm <= tol, history)


class LinearizedProblem:
    """Stationarity of the linearized system, whose residual is affine in the interior points."""

    def __init__(self, system: SystemSpec, kernel: PathKernel):
        self.action = DiscreteAction(system.linearized(), kernel)
        n = kernel.n_steps + 1
        zero = np.zeros(n)
        self.hessian = self.action.hessian_interior(zero, zero, 0.0)
        sig, logdet = inertia(self.hessian)
        if sig.n_zero:
            raise CausticError("linearized stationarity system is singular")
        self.signature, self.log_abs_det = sig, logdet
        self._lu = scipy.linalg.lu_factor(self.hessian)

    def solve(self, endpoints, g):
        """Exact stationary pairs for endpoints ``(B, 4)`` ordered ``(s0+, s0-, sf+, sf-)``."""
        e = np.atleast_2d(np.asarray(endpoints, dtype=float))
        n = self.action.n_steps + 1
        sp = np.zeros((e.shape[0], n))
        sm = np.zeros((e.shape[0], n))
        sp[:, 0], sm[:, 0], sp[:, -1], sm[:, -1] = e.T
        g = np.broadcast_to(g, sp.shape)
        r0 = self.action.residual(sp, sm, g)
        x = -scipy.linalg.lu_solve(self._lu, r0.T).T
        return _set_interior(sp, sm, x)


@dataclass(eq=False)
class BatchSolution:
    s_plus: np.ndarray
    s_minus: np.ndarray
    residual_norm: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    phi: np.ndarray
    log_prefactor: np.ndarray
    caustic: np.ndarray
    failed_stage: np.ndarray

    @property
    def usable(self):
        return self.converged & ~self.caustic


class StationarySolver:
    """Batched stationary solves and amplitudes at fixed (system, bath, n_steps, dt)."""

    def __init__(self, system: SystemSpec, bath: BathSpec, n_steps: int, dt: float,
                 cfg: SolverConfig = SolverConfig(), hbar: float = 1.0):
        self.system, self.bath, self.cfg, self.hbar = system, bath, cfg, hbar
        self.n_steps, self.dt = n_steps, dt
        self.kernel = PathKernel.build(system, bath, n_steps, dt)
        self.action = DiscreteAction(system, self.kernel)
        self._stages = {}

    def drive(self, x0, p0):
        return self.kernel.drive(x0, p0)

    def _stage(self, scale):
        if scale not in self._stages:
            if scale == 1.0:
                kernel = self.kernel
            else:
                kernel = PathKernel.build(self.system, self.bath.scaled(scale), self.n_steps, self.dt)
            self._stages[scale] = (DiscreteAction(self.system, kernel), LinearizedProblem(self.system, kernel))
        return self._stages[scale]

    @property
    def linearized(self) -> LinearizedProblem:
        return self._stage(1.0)[1]

    def stationary(self, endpoints, g, stages=None) -> NewtonBatch:
        """Newton from the linearized guess, ramping the coupling over ``stages`` steps."""
        K = self.cfg.continuation_stages if stages is None else stages
        g = np.asarray(g, dtype=float)
        e = np.atleast_2d(endpoints)
        scales = [k / K for k in range(1, K + 1)]
        action, lin = self._stage(scales[0])
        sp, sm = lin.solve(e, scales[0] * g)
        failed_stage = np.full(e.shape[0], np.nan)
        for lam in scales:
            action = self._stage(lam)[0]
            res = newton_batch(action, sp, sm, lam * g, self.cfg)
            sp, sm = res.s_plus, res.s_minus
            bad = ~res.converged & np.isnan(failed_stage)
            failed_stage[bad] = lam
        res.failed_stage = failed_stage
        return res

    def endpoint_homotopy(self, endpoints, g, anchor=None, steps=8) -> NewtonBatch:
        """March the endpoints from an anchor problem to the target, warm-starting each step.

        ``anchor`` is a pair ``(s_plus, s_minus)`` of stationary paths whose
        endpoints define the start; by default the diagonal midpoint problem is
        solved first.
        """
        e = np.atleast_2d(np.asarray(endpoints, dtype=float))
        g = np.broadcast_to(g, (e.shape[0], self.n_steps + 1))
        if anchor is None:
            mid = np.repeat(0.5 * (e[:, 0:1] + e[:, 1:2]), 2, axis=1)
            mid_f = np.repeat(0.5 * (e[:, 2:3] + e[:, 3:4]), 2, axis=1)
            start = np.concatenate([mid, mid_f], axis=1)
            res = self.stationary(start, g)
            sp, sm, alive = res.s_plus, res.s_minus, res.converged.copy()
        else:
            sp, sm = (np.array(a, dtype=float) for a in anchor)
            start = np.stack([sp[:, 0], sm[:, 0], sp[:, -1], sm[:, -1]], axis=-1)
            alive = np.ones(e.shape[0], dtype=bool)
        iters = np.zeros(e.shape[0], dtype=int)
        for k in range(1, steps + 1):
            ek = start + (k / steps) * (e - start)
            sp[:, 0], sm[:, 0], sp[:, -1], sm[:, -1] = ek.T
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            step = newton_batch(self.action, sp[idx], sm[idx], g[idx], self.cfg)
            sp[idx], sm[idx] = step.s_plus, step.s_minus
            alive[idx] = step.converged
            iters[idx] += step.iterations
        r = self.action.residual(sp, sm, g)
        norm = np.max(np.abs(r), axis=-1)
        return NewtonBatch(sp, sm, norm, iters, alive & (norm <= self.cfg.residual_tolerance), [])

    def robust_stationary(self, endpoints, g, anchor=None) -> NewtonBatch:
        """``stationary`` with fallbacks for failures: more coupling stages, then endpoint continuation.

        The continuation starts from ``anchor`` (known stationary pairs, one per
        endpoint set) when given.
        """
        e = np.atleast_2d(np.asarray(endpoints, dtype=float))
        g = np.broadcast_to(np.asarray(g, dtype=float), (e.shape[0], self.n_steps + 1))
        res = self.stationary(e, g)
        for attempt in ("stages", "endpoints"):
            bad = np.flatnonzero(~res.converged)
            if bad.size == 0:
                break
            if attempt == "stages":
                retry = self.stationary(e[bad], g[bad], stages=max(4, 2 * self.cfg.continuation_stages))
            else:
                start = None if anchor is None else (anchor[0][bad], anchor[1][bad])
                retry = self.endpoint_homotopy(e[bad], g[bad], anchor=start)
            fixed = retry.converged
            k = bad[fixed]
            res.s_plus[k], res.s_minus[k] = retry.s_plus[fixed], retry.s_minus[fixed]
            res.residual_norm[k] = retry.residual_norm[fixed]
            res.converged[k] = True
        return res

    def solve(self, endpoints, g, chunk=None, anchor=None) -> BatchSolution:
        """Stationary pairs, phases and log-prefactors for a batch of endpoint sets."""
        e = np.atleast_2d(np.asarray(endpoints, dtype=float))
        g = np.broadcast_to(np.asarray(g, dtype=float), (e.shape[0], self.n_steps + 1))
        if chunk is None:
            chunk = 4096 if self.system.is_quadratic else 128

        def part(i):
            a = None if anchor is None else (anchor[0][i:i + chunk], anchor[1][i:i + chunk])
            return self._solve_chunk(e[i:i + chunk], g[i:i + chunk], a)

        parts = [part(i) for i in range(0, e.shape[0], chunk)]
        return BatchSolution(*(np.concatenate([getattr(p, f) for p in parts])
                               for f in BatchSolution.__dataclass_fields__))

    def _solve_chunk(self, e, g, anchor=None):
        res = self.robust_stationary(e, g, anchor)
        sp, sm = res.s_plus, res.s_minus
        phi = self.action.phi(sp, sm, g)
        if self.system.is_quadratic:
            lin = self.linearized
            n = e.shape[0]
            n_plus = np.full(n, lin.signature.n_plus)
            n_minus = np.full(n, lin.signature.n_minus)
            n_zero = np.full(n, lin.signature.n_zero)
            logdet = np.full(n, lin.log_abs_det)
        else:
            H = self.action.hessian_interior(sp, sm, g)
            n_plus, n_minus, n_zero, logdet = batched_inertia(H)
        logp = log_prefactor(self.system.mass, self.n_steps, self.dt, logdet, n_plus, n_minus, self.hbar)
        if logger.isEnabledFor(logging.DEBUG):
            for i in range(e.shape[0]):
                logger.debug("stationary solve", extra={"solve": {
                    "endpoints": e[i].tolist(), "iterations": int(res.iterations[i]),
                    "residual": float(res.residual_norm[i]), "converged": bool(res.converged[i])}})
        return BatchSolution(sp, sm, res.residual_norm, res.iterations, res.converged, phi,
                             logp, n_zero > 0, res.failed_stage)


def _drive_and_check(system, bath, init, n_steps, dt):
    init.check(bath)
    if init.x0.ndim != 1:
        raise DomainError("expected a single bath phase point")
    kernel = PathKernel.build(system, bath, n_steps, dt)
    return kernel, kernel.drive(init.x0, init.p0)


def harmonic_initial_guess(endpoints, system: SystemSpec, bath: BathSpec, init: BathPhasePoint,
                           n_steps: int, dt: float) -> TrajectoryPair:
    """Exact stationary pair of the problem with V0 quadratic and f linear about s = 0."""
    kernel, g = _drive_and_check(system, bath, init, n_steps, dt)
    sp, sm = LinearizedProblem(system, kernel).solve(endpoints, g)
    return TrajectoryPair(n_steps, dt, sp[0], sm[0])


def _finish(traj, res: NewtonBatch, system, bath, init, scale=1.0):
    out = TrajectoryPair(traj.n_steps, traj.dt, res.s_plus[0], res.s_minus[0])
    ev = evaluate_action(out, system, bath, init)
    result = StationaryResult(out, float(res.residual_norm[0]), int(res.iterations[0]),
                              bool(res.converged[0]), ev, tuple(float(h[0]) for h in res.history), scale)
    logger.info("stationary solve", extra={"solve": {
        "endpoints": [float(x) for x in out.endpoints], "iterations": result.iterations,
        "residual": result.residual_norm, "converged": result.converged}})
    return result


def solve_stationary(guess: TrajectoryPair, system: SystemSpec, bath: BathSpec, init: BathPhasePoint,
                     cfg: SolverConfig = SolverConfig()) -> StationaryResult:
    """Damped Newton from ``guess``; endpoints are left untouched.

    Non-convergence is reported through ``converged=False``.
    """
    kernel, g = _drive_and_check(system, bath, init, guess.n_steps, guess.dt)
    action = DiscreteAction(system, kernel)
    res = newton_batch(action, guess.s_plus[None], guess.s_minus[None], g, cfg)
    return _finish(guess, res, system, bath, init)


def solve_with_continuation(guess: TrajectoryPair, system: SystemSpec, bath: BathSpec,
                            init: BathPhasePoint, cfg: SolverConfig = SolverConfig()) -> StationaryResult:
    """Solve with couplings scaled by k/K for k = 1..K, each stage warm-started from the last.

    Raises ``ConvergenceError`` carrying the failing scale if an intermediate stage fails.
    """
    K = cfg.continuation_stages
    if K == 1:
        return solve_stationary(guess, system, bath, init, cfg)
    sp, sm = guess.s_plus[None], guess.s_minus[None]
    kernel, g = _drive_and_check(system, bath, init, guess.n_steps, guess.dt)
    for k in range(1, K + 1):
        lam = k / K
        stage_kernel = PathKernel.build(system, bath.scaled(lam), guess.n_steps, guess.dt)
        res = newton_batch(DiscreteAction(system, stage_kernel), sp, sm, lam * g, cfg)
        if not res.converged[0] and k < K:
            partial = _finish(guess, res, system, bath.scaled(lam), BathPhasePoint(init.x0, init.p0), lam)
            raise ConvergenceError(f"continuation failed at coupling scale {lam:g}", stage=lam, result=partial)
        sp, sm = res.s_plus, res.s_minus
    return _finish(guess, res, system, bath, init)
