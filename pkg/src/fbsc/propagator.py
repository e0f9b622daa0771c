"""Semiclassical reduced-density propagation and the position expectation value.

The endpoint integral over (s0+, s0-, s_f) uses centre/offset coordinates
q0 = (s0+ + s0-)/2 and r0 = s0+ - s0-. For each q0 the final-point grid is
centred on the ridge where dPhi/dr0 vanishes at r0 = 0 and scaled by the
width of the Gaussian that the r0 integral produces there.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .action import TrajectoryPair
from .bath import BathPhasePoint, BathSpec, equilibrium_placement, sample_wigner
from .errors import DomainError, NumericalFailure
from .solver import SolverConfig, StationarySolver
from .system import SystemSpec, coupling_eval, potential_eval

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InitialSystemState:
    """Displaced Gaussian wave packet psi(s) ~ exp(-(s - center)^2 / (2 sigma^2))."""

    center: float
    sigma: float
    kind: str = "displaced_gaussian"

    def __post_init__(self):
        if self.kind != "displaced_gaussian":
            raise DomainError(f"unsupported initial state {self.kind!r}")
        if not self.sigma > 0:
            raise DomainError("wave-packet width must be positive")

    @classmethod
    def displaced_gaussian(cls, center, *, sigma=None, omega=None, mass=None, hbar=1.0):
        """Width either explicit or from a harmonic ground state, sigma^2 = hbar / (M Omega)."""
        if sigma is None:
            if omega is None or mass is None:
                raise DomainError("give sigma, or both omega and mass")
            if not (omega > 0 and mass > 0):
                raise DomainError("omega and mass must be positive")
            sigma = math.sqrt(hbar / (mass * omega))
        return cls(float(center), float(sigma))


def initial_density(state: InitialSystemState, s0_plus, s0_minus):
    """<s0+| rho_s(0) |s0->."""
    a, sig = state.center, state.sigma
    u = (np.asarray(s0_plus) - a) ** 2 + (np.asarray(s0_minus) - a) ** 2
    return np.exp(-0.5 * u / sig**2) / (math.sqrt(math.pi) * sig)


class BathInit(str, Enum):
    WIGNER = "wigner"
    EQUILIBRIUM = "equilibrium"
    REST = "rest"


@dataclass(frozen=True)
class PropagationConfig:
    """Numerical settings of ``expectation_position``.

    ``dt_max`` defaults to one 32nd of the system period.
    """

    n_center_nodes: int = 8
    n_offset_nodes: int = 24
    n_final_nodes: int = 8
    prune_tolerance: float = 1e-14
    n_samples: int = 200
    bath_init: BathInit = BathInit.WIGNER
    beta: float = math.inf
    seed: int = 0
    antithetic: bool = False
    dt_max: float | None = None
    min_steps: int = 16
    solver: SolverConfig = SolverConfig()
    max_drop_fraction: float = 0.01
    trace_tolerance: float = 0.05
    hbar: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "bath_init", BathInit(self.bath_init))
        if min(self.n_center_nodes, self.n_offset_nodes, self.n_final_nodes) < 2:
            raise DomainError("quadrature node counts must be >= 2")
        if self.n_samples < 1:
            raise DomainError("n_samples must be >= 1")
        if self.dt_max is not None and not self.dt_max > 0:
            raise DomainError("dt_max must be positive")
        if self.min_steps < 2:
            raise DomainError("min_steps must be >= 2")


_SERIES_DEFAULTS = {
    "trace_imag": float, "values_imag": float, "standard_error": float, "converged": int, "dropped": int,
    "dropped_weight": float, "total_weight": float, "n_steps": int, "valid": bool,
}


@dataclass(frozen=True, eq=False)
class ObservableSeries:
    """Position expectation and diagnostics on a time grid.

    ``converged``/``dropped`` count quadrature configurations per time point;
    ``dropped_weight``/``total_weight`` are the same in units of the
    quadrature weight magnitude. ``values_imag`` is the imaginary part of the
    normalized estimator, discarded from ``values``.
    """

    times: np.ndarray
    values: np.ndarray
    norm_trace: np.ndarray
    trace_imag: np.ndarray = None
    values_imag: np.ndarray = None
    standard_error: np.ndarray = None
    converged: np.ndarray = None
    dropped: np.ndarray = None
    dropped_weight: np.ndarray = None
    total_weight: np.ndarray = None
    n_steps: np.ndarray = None
    valid: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times)
        for name, kind in _SERIES_DEFAULTS.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, np.full(n, kind(name == "valid"), dtype=kind))
        for name in ("times", "values", "norm_trace", *_SERIES_DEFAULTS):
            if len(getattr(self, name)) != n:
                raise DomainError(f"{name} must have the same length as times")

    @property
    def sample_counts(self):
        return self.converged, self.dropped

    @property
    def drop_fraction(self) -> float:
        """Dropped share of the total quadrature weight over the whole run."""
        total = float(np.sum(self.total_weight))
        return float(np.sum(self.dropped_weight)) / total if total else 0.0

    @property
    def drop_count_fraction(self) -> float:
        total = np.sum(self.converged) + np.sum(self.dropped)
        return float(np.sum(self.dropped) / total) if total else 0.0


def n_steps_for(t, dt_max, min_steps=16):
    """max(min_steps, ceil(t / dt_max)), robust to rounding when t is a multiple of dt_max."""
    return max(int(min_steps), int(math.ceil(t / dt_max * (1.0 - 1e-12))))


def qsc_amplitude(endpoints, init: BathPhasePoint, system: SystemSpec, bath: BathSpec,
                  n_steps: int, dt: float, cfg: SolverConfig = SolverConfig(), hbar=1.0):
    """Semiclassical propagator amplitude for one endpoint set and one bath phase point."""
    from .action import PropagatorAmplitude

    init.check(bath)
    solver = StationarySolver(system, bath, n_steps, dt, cfg, hbar)
    sol = solver.solve(np.asarray(endpoints, float)[None], solver.drive(init.x0, init.p0))
    if not sol.usable[0]:
        return PropagatorAmplitude(complex("nan"), bool(sol.caustic[0]), bool(sol.converged[0]))
    value = np.exp(sol.log_prefactor[0] + 1j * sol.phi[0] / hbar)
    return PropagatorAmplitude(complex(value), False, True)


def stationary_trajectory(endpoints, init, system, bath, n_steps, dt, cfg=SolverConfig()):
    """Stationary pair used by ``qsc_amplitude``; convenience for inspection."""
    solver = StationarySolver(system, bath, n_steps, dt, cfg)
    sol = solver.solve(np.asarray(endpoints, float)[None], solver.drive(init.x0, init.p0))
    return TrajectoryPair(n_steps, dt, sol.s_plus[0], sol.s_minus[0]), bool(sol.converged[0])


def bath_initial_conditions(system, bath, state, cfg: PropagationConfig) -> BathPhasePoint:
    if cfg.bath_init is BathInit.WIGNER:
        return sample_wigner(bath, cfg.beta, cfg.seed, size=cfg.n_samples, hbar=cfg.hbar,
                             antithetic=cfg.antithetic)
    if cfg.bath_init is BathInit.EQUILIBRIUM:
        p = equilibrium_placement(bath, system, state.center)
    else:
        p = BathPhasePoint.at_rest(bath)
    return BathPhasePoint(p.x0[None], p.p0[None])


def _ridge_terms(action, sp, sm, g):
    """dPhi/dr0 at r0 = 0 and its total derivative along s_f+ = s_f- (interior kept stationary)."""
    n = action.n_steps + 1
    ii = action.interior_index
    Gp, Gm = action.gradient(sp, sm, g)
    h = 0.5 * (Gp[:, 0] - Gm[:, 0])
    H = action.hessian_full(sp, sm, g)
    Hu = 0.5 * (H[:, 0, :] - H[:, n, :])
    Hv = H[:, :, n - 1] + H[:, :, 2 * n - 1]
    try:
        x = np.linalg.solve(H[:, ii[:, None], ii[None, :]], Hv[:, ii, None])[..., 0]
    except np.linalg.LinAlgError:
        x = np.full((sp.shape[0], ii.size), np.nan)
    slope = Hu[:, n - 1] + Hu[:, 2 * n - 1] - np.sum(Hu[:, ii] * x, axis=-1)
    return h, slope


def rest_trajectory(action, s0, g):
    """Diagonal stationary paths s+ = s- that leave ``s0`` with zero initial gradient.

    On the diagonal the memory couples only to earlier points, so the interior
    stationarity equations and dPhi/dr0 = 0 at the start can be solved forward in
    time, one point at a time.
    """
    k, system = action.kernel, action.system
    s0 = np.atleast_1d(np.asarray(s0, dtype=float))
    g = np.broadcast_to(g, (s0.size, k.n_steps + 1))
    scale = k.dt / system.mass
    ct = 2.0 * k.counter * k.weights
    s = np.empty((s0.size, k.n_steps + 1))
    S = np.zeros_like(s)
    s[:, 0] = s0
    for j in range(k.n_steps):
        dV = potential_eval(system, s[:, j])[1]
        F, dF, _ = coupling_eval(system, s[:, j])
        S[:, j] = 2.0 * F
        A = g[:, j] + S[:, :j + 1] @ k.memory[j, :j + 1] - ct[j] * F
        force = -k.weights[j] * dV + dF * A
        prev = s[:, j] if j == 0 else 2.0 * s[:, j] - s[:, j - 1]
        s[:, j + 1] = prev + scale * force
    return s


def _ridge(solver: StationarySolver, q, g):
    """Ridge paths from each centre node, their final points and the slope of dPhi/dr0 in s_f."""
    with np.errstate(over="ignore", invalid="ignore"):
        paths = rest_trajectory(solver.action, q, g)
        ok = np.all(np.isfinite(paths), axis=-1)
        _, slope = _ridge_terms(solver.action, np.where(ok[:, None], paths, 0.0),
                                np.where(ok[:, None], paths, 0.0), g)
    ok &= np.isfinite(slope) & (slope != 0)
    return paths, paths[:, -1], slope, ok


def _scatter(base, idx, values):
    out = base.copy()
    out[idx] = values
    return out


@dataclass(frozen=True)
class _TimePoint:
    value: float
    value_imag: float
    trace: complex
    standard_error: float
    converged: int
    dropped: int
    dropped_weight: float
    total_weight: float
    n_steps: int
    valid: bool


def _nodes(n):
    x, w = np.polynomial.hermite.hermgauss(n)
    return x, w


def _time_point(t, state, system, bath, phase: BathPhasePoint, cfg: PropagationConfig, dt_max):
    if t == 0.0:
        return _TimePoint(state.center, 0.0, 1.0 + 0j, 0.0, 0, 0, 0.0, 0.0, 0, True)
    N = n_steps_for(t, dt_max, cfg.min_steps)
    dt = t / N
    solver = StationarySolver(system, bath, N, dt, cfg.solver, cfg.hbar)
    S = phase.n_samples
    g_all = solver.drive(phase.x0, phase.p0)
    sig, hbar = state.sigma, cfg.hbar

    xq, wq = _nodes(cfg.n_center_nodes)
    xr, wr = _nodes(cfg.n_offset_nodes)
    xu, wu = _nodes(cfg.n_final_nodes)
    q = state.center + sig * xq
    r = 2.0 * sig * xr

    # ridge for every (sample, q0 node)
    gq = np.repeat(g_all, len(q), axis=0)
    qq = np.tile(q, S)
    ridge_paths, sf_star, slope, ridge_ok = _ridge(solver, qq, gq)
    with np.errstate(divide="ignore"):
        ell = np.where(ridge_ok, hbar / (sig * np.abs(slope)), 0.0)

    w3 = wq[:, None, None] * wr[None, :, None] * wu[None, None, :]
    jq, kr, lu = np.nonzero(w3 >= cfg.prune_tolerance * w3.max())
    n_nodes = jq.size
    node_w = w3[jq, kr, lu] * np.exp(xu[lu] ** 2) * 2.0 * sig / math.sqrt(math.pi)

    ridx = np.arange(S)[:, None] * len(q) + jq[None, :]
    sf = sf_star[ridx] + ell[ridx] * xu[lu][None, :]
    s0p = np.broadcast_to(q[jq] + 0.5 * r[kr], sf.shape)
    s0m = np.broadcast_to(q[jq] - 0.5 * r[kr], sf.shape)
    weight = node_w[None, :] * ell[ridx]
    ok = np.broadcast_to(ridge_ok[ridx], sf.shape).copy()

    endpoints = np.stack([s0p, s0m, sf, sf], axis=-1).reshape(-1, 4)
    g_cfg = np.repeat(g_all, n_nodes, axis=0)
    flat_ok = ok.ravel()
    amp = np.zeros(endpoints.shape[0], dtype=complex)
    usable = np.zeros(endpoints.shape[0], dtype=bool)
    sel = np.flatnonzero(flat_ok)
    if sel.size:
        anchor_rows = ridx.ravel()[sel]
        anchor = (ridge_paths[anchor_rows], ridge_paths[anchor_rows])
        sol = solver.solve(endpoints[sel], g_cfg[sel], anchor=anchor)
        good = sol.usable
        amp[sel[good]] = np.exp(sol.log_prefactor[good] + 1j * sol.phi[good] / hbar)
        usable[sel[good]] = True
    amp = amp.reshape(sf.shape)
    usable = usable.reshape(sf.shape)
    wq_amp = np.where(usable, weight * amp, 0.0)
    den = np.sum(wq_amp, axis=1)
    num = np.sum(wq_amp * sf, axis=1)

    n_drop = int(np.sum(~usable))
    n_conv = int(usable.size - n_drop)
    # failed ridges have no width; account for them with the typical width at this time
    ell_ref = np.median(ell[ridge_ok]) if np.any(ridge_ok) else sig
    w_abs = node_w[None, :] * np.where(ridge_ok, ell, ell_ref)[ridx]
    w_drop, w_total = float(np.sum(w_abs[~usable])), float(np.sum(w_abs))
    D = np.sum(den)
    if not abs(D) > 1e-12 * max(1.0, float(np.sum(np.abs(den)))):
        return _TimePoint(math.nan, math.nan, complex(D / S), math.nan, n_conv, n_drop, w_drop, w_total, N, False)
    R = np.sum(num) / D
    y = ((num - R * den) / (D / S)).real
    if cfg.antithetic and cfg.bath_init is BathInit.WIGNER:
        # antithetic partners are not independent; the pair is the sampling unit
        y = np.add.reduceat(y, np.arange(0, S, 2)) / np.minimum(2, S - np.arange(0, S, 2))
    se = float(np.std(y, ddof=1) / math.sqrt(y.size)) if y.size > 1 else 0.0
    return _TimePoint(float(R.real), float(R.imag), complex(D / S), se, n_conv, n_drop, w_drop, w_total, N, True)


def expectation_position(state: InitialSystemState, system: SystemSpec, bath: BathSpec, t_grid,
                         cfg: PropagationConfig = PropagationConfig(), threads: int = 1,
                         strict: bool = True) -> ObservableSeries:
    """Semiclassical <s>(t) on ``t_grid`` (non-negative, increasing).

    Each time point uses its own step count. With ``strict`` a
    ``NumericalFailure`` carrying the series is raised when the fraction of
    dropped quadrature weight exceeds ``cfg.max_drop_fraction``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise DomainError("t_grid must be a non-empty 1-d array")
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) <= 0):
        raise DomainError("t_grid must be non-negative and strictly increasing")
    if cfg.dt_max is None and not system.frequency > 0:
        raise DomainError("dt_max must be given for a system without an oscillation period")
    dt_max = cfg.dt_max if cfg.dt_max is not None else 2.0 * math.pi / system.frequency / 32.0
    phase = bath_initial_conditions(system, bath, state, cfg)

    def work(t):
        return _time_point(float(t), state, system, bath, phase, cfg, dt_max)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(work, t_grid))
    else:
        points = [work(t) for t in t_grid]

    series = ObservableSeries(
        times=t_grid,
        values=np.array([p.value for p in points]),
        norm_trace=np.array([p.trace.real for p in points]),
        trace_imag=np.array([p.trace.imag for p in points]),
        values_imag=np.array([p.value_imag for p in points]),
        standard_error=np.array([p.standard_error for p in points]),
        converged=np.array([p.converged for p in points]),
        dropped=np.array([p.dropped for p in points]),
        dropped_weight=np.array([p.dropped_weight for p in points]),
        total_weight=np.array([p.total_weight for p in points]),
        n_steps=np.array([p.n_steps for p in points]),
        valid=np.array([p.valid for p in points]),
        meta={"n_samples": phase.n_samples, "dt_max": dt_max},
    )
    for t, p in zip(t_grid, points):
        logger.info("time point", extra={"point": {"t": float(t), "value": p.value, "dropped": p.dropped,
                                                   "n_steps": p.n_steps}})
    if strict and series.drop_fraction > cfg.max_drop_fraction:
        err = NumericalFailure(f"dropped fraction {series.drop_fraction:.3%} exceeds "
                               f"{cfg.max_drop_fraction:.3%}")
        err.series = series
        raise err
    return series


def trace_deviation(series: ObservableSeries) -> float:
    """Largest |trace - 1| over the valid time points."""
    tr = series.norm_trace + 1j * series.trace_imag
    return float(np.max(np.abs(tr[series.valid] - 1.0))) if np.any(series.valid) else math.inf
