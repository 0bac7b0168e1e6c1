"""Multiplicative control by division, the staged pipeline and time-optimal search.

The pipeline lets the state decay freely until it is small (phases 1 and 2),
steers it to zero with an additive control ``v`` on a final window (phase 3),
and converts ``v`` into a multiplicative control ``u = v / (g(Y) - theta)``.
Resimulating the equation with source ``u (g(y) - theta)`` reproduces the
additively controlled state, since both solve the same implicit scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .carleman import CarlemanWeights, build_weights
from .errors import (
    AdaptiveWaitExhausted,
    CGStalled,
    FixedPointDiverged,
    InfeasibleAtHi,
    SafeguardViolated,
    SolverDiverged,
)
from .estimates import GNConstant, gate_threshold, t1_theory
from .null_control import (
    ControlSchedule,
    FixedPointParams,
    PenaltyParams,
    fixed_point_null_control,
)
from .pde_core import (
    DiffusionSpec,
    Grid,
    ReactionTerm,
    Trajectory,
    l2_norm,
    solve_forward,
    space_time_l2,
    step_implicit,
)


@dataclass(frozen=True)
class ReactionSpec:
    """Reaction ``g``, target ``theta`` and its lower bound ``theta0`` on omega.

    ``theta`` is a constant or a function ``theta(x, t)`` accepting arrays.
    """

    g: Callable
    g_prime: Callable
    theta: object = 1.0
    theta0: float = 1.0

    def __post_init__(self):
        if abs(float(self.g(np.array([0.0]))[0])) > 1e-14:
            raise ValueError("g(0) must be 0")
        if not self.theta0 > 0:
            raise ValueError("theta0 must be positive")

    def theta_values(self, grid: Grid, t_offset=0.0) -> np.ndarray:
        if callable(self.theta):
            X, Tm = np.meshgrid(grid.x, grid.t + t_offset)
            return np.asarray(self.theta(X, Tm), dtype=float) * np.ones(grid.shape)
        return np.full(grid.shape, float(self.theta))

    def check_theta(self, grid: Grid, omega, t_offset=0.0):
        """Verify |theta| >= theta0 on the omega nodes at every tabulated time."""
        th = self.theta_values(grid, t_offset)[:, grid.mask(omega)]
        worst = float(np.min(np.abs(th)))
        if worst < self.theta0:
            raise ValueError(f"min |theta| on omega is {worst:.6g} < theta0 = {self.theta0}")
        return worst

    def lipschitz(self, A, n=4001) -> float:
        """Local Lipschitz constant of g on [-A, A] by dense sampling."""
        s = np.linspace(-A, A, n)
        return float(np.max(np.abs(self.g_prime(s))))


@dataclass(frozen=True)
class PipelineParams:
    """Phase-2 waiting controls.

    ``t2_fixed`` skips the doubling search; ``terminal_tol`` is absolute and
    defaults to ``terminal_rel_tol * ||y0||``.
    """

    t2_init: float = 0.05
    max_doublings: int = 20
    terminal_rel_tol: float = 1e-3
    terminal_tol: float | None = None
    t2_fixed: float | None = None


@dataclass(frozen=True)
class TimeOptimalParams:
    sigma: float
    T_hi: float
    bisect_tol: float = 0.02
    terminal_tol: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.bisect_tol > 0:
            raise ValueError("bisect_tol must be positive")
        if not self.T_hi > 0:
            raise ValueError("T_hi must be positive")


class Synthesis(NamedTuple):
    u: ControlSchedule
    min_denominator: float


def synthesize_multiplicative(v: ControlSchedule, Y: Trajectory, rs: ReactionSpec, t_offset=0.0) -> Synthesis:
    """Divide an additive control by ``g(Y) - theta`` on omega.

    The safeguard ``|g(Y)| <= theta0 / 2`` is checked on omega over the
    control window ``t >= v.phase_start``.

    Raises
    ------
    SafeguardViolated
        At the node where ``|g(Y)|`` is largest, if it exceeds theta0/2.
    """
    grid = v.grid
    mask = grid.mask(v.omega)
    window = grid.t >= v.phase_start - 1e-12 * grid.T
    gY = rs.g(Y.values)
    sub = np.abs(gY[np.ix_(window, mask)])
    if sub.size:
        worst = float(np.max(sub))
        if worst > rs.theta0 / 2:
            kk, ii = np.unravel_index(np.argmax(sub), sub.shape)
            x = float(grid.x[mask][ii])
            t = float(grid.t[window][kk])
            raise SafeguardViolated(
                f"|g(Y)| = {worst:.6g} > theta0/2 = {rs.theta0 / 2} at x = {x:.4g}, t = {t:.4g}",
                x=x, t=t, value=worst,
            )
    denom = gY - rs.theta_values(grid, t_offset)
    u = np.zeros(grid.shape)
    region = np.ix_(window, mask)
    u[region] = v.values[region] / denom[region]
    min_den = float(np.min(np.abs(denom[region]))) if sub.size else math.inf
    return Synthesis(ControlSchedule(grid, v.omega, u, v.phase_start), min_den)


@dataclass(frozen=True)
class MultPipelineResult:
    t1: float
    t2: float
    t3: float
    u: ControlSchedule
    y: Trajectory
    terminal_norm: float
    min_denominator: float
    linf_u: float
    linf_v: float = 0.0
    identification_error: float = 0.0
    y0_l2: float = 0.0
    t1_theory: float = 0.0
    outer_iterations: int = 0
    trials: tuple = ()

    @property
    def T(self) -> float:
        return self.t1 + self.t2 + self.t3

    @property
    def terminal_ratio(self) -> float:
        return self.terminal_norm / self.y0_l2 if self.y0_l2 > 0 else 0.0

    def summary(self) -> dict:
        return {
            "t1": self.t1,
            "t2": self.t2,
            "t3": self.t3,
            "T": self.T,
            "terminal_norm": self.terminal_norm,
            "terminal_ratio": self.terminal_ratio,
            "min_denominator": self.min_denominator,
            "linf_u": self.linf_u,
            "linf_v": self.linf_v,
            "identification_error": self.identification_error,
            "t1_theory": self.t1_theory,
            "outer_iterations": self.outer_iterations,
            "trials": [list(t) for t in self.trials],
        }


class _Prefix:
    """Free evolution computed once and extended on demand."""

    def __init__(self, y0, spec, dt):
        self.spec = spec
        self.dt = dt
        self.levels = [np.asarray(y0, dtype=float)]

    def __getitem__(self, k):
        while len(self.levels) <= k:
            self.levels.append(step_implicit(self.levels[-1], self.dt, None, self.spec))
        return self.levels[k]


def _phase1_index(prefix: _Prefix, spec, C0, max_steps) -> int:
    if spec.M == 0:
        return 0
    k_theory = int(math.ceil(t1_theory(spec, C0) / prefix.dt - 1e-9))
    gate = gate_threshold(spec, C0)
    for k in range(min(k_theory, max_steps) + 1):
        if float(np.max(np.abs(prefix[k]))) <= gate:
            return k
    if k_theory <= max_steps:
        return k_theory
    raise AdaptiveWaitExhausted(f"smallness gate not reached within {max_steps} steps")


class _Trial(NamedTuple):
    ok: bool
    reason: str
    v: ControlSchedule | None
    Y: Trajectory | None
    outer: int


def _control_window(start, spec, rs, w, omega, pp, fp, n3, terminal_tol, t_offset):
    grid = Grid(w.grid.n_x, n3, n3 * w.grid.dt)
    ww = build_weights(w.psi, w.lam, w.s, grid)
    try:
        res = fixed_point_null_control(start, spec, ww, omega, pp, fp)
    except (CGStalled, FixedPointDiverged, SolverDiverged) as exc:
        return _Trial(False, type(exc).__name__, None, None, 0)
    if res.report.terminal_norm > terminal_tol:
        return _Trial(False, f"terminal {res.report.terminal_norm:.3e}", res.u, res.y, res.report.outer_iterations)
    gY = np.abs(rs.g(res.y.values[:, grid.mask(omega)]))
    if gY.size and float(np.max(gY)) > rs.theta0 / 2:
        return _Trial(False, f"safeguard {float(np.max(gY)):.3e}", res.u, res.y, res.report.outer_iterations)
    return _Trial(True, "ok", res.u, res.y, res.report.outer_iterations)


def _assemble(y0, prefix, k_start, trial, spec, rs, omega, dt, t1, t2, t3, y0_l2, t1_th, trials):
    n_x = len(y0) - 2
    n3 = trial.v.grid.n_t
    n_total = k_start + n3
    grid = Grid(n_x, n_total, n_total * dt)
    v = np.zeros(grid.shape)
    v[k_start:] = trial.v.values
    Yfull = np.vstack([np.array([prefix[k] for k in range(k_start)]).reshape(k_start, n_x + 2),
                       trial.Y.values])
    t_start = float(grid.t[k_start])
    v_sched = ControlSchedule(grid, omega, v, phase_start=t_start)
    Y = Trajectory(grid, Yfull)
    synth = synthesize_multiplicative(v_sched, Y, rs)
    reaction = ReactionTerm(synth.u.values, rs.theta_values(grid), rs.g, rs.g_prime)
    y = solve_forward(np.asarray(y0, dtype=float), None, grid, spec, reaction=reaction)
    return MultPipelineResult(
        t1=t1, t2=t2, t3=t3,
        u=synth.u,
        y=y,
        terminal_norm=l2_norm(y.final, grid.dx),
        min_denominator=synth.min_denominator,
        linf_u=synth.u.linf,
        linf_v=v_sched.linf,
        identification_error=space_time_l2(y.values - Y.values, grid),
        y0_l2=y0_l2,
        t1_theory=t1_th,
        outer_iterations=trial.outer,
        trials=tuple(trials),
    )


def _zero_result(y0, w, omega, t3, spec, C0):
    n3 = max(int(round(t3 / w.grid.dt)), 2)
    grid = Grid(w.grid.n_x, n3, n3 * w.grid.dt)
    u = ControlSchedule.zeros(grid, omega)
    return MultPipelineResult(0.0, 0.0, grid.T, u, Trajectory(grid, np.zeros(grid.shape)), 0.0,
                              math.inf, 0.0, t1_theory=t1_theory(spec, C0))


def theorem1_pipeline(y0, spec: DiffusionSpec, rs: ReactionSpec, w: CarlemanWeights, omega,
                      C0=GNConstant(), pp=PenaltyParams(), fp=FixedPointParams(), t3=0.2,
                      params=PipelineParams(), _prefix=None) -> MultPipelineResult:
    """Free decay, adaptive waiting, additive control and division.

    The time step and spatial grid come from ``w.grid``; the Carleman weights
    are rebuilt on each trial control window from ``w.psi``, ``w.lam`` and
    ``w.s``.  Phase 2 doubles ``t2`` from ``params.t2_init`` until the control
    on (t1 + t2, t1 + t2 + t3) meets the terminal tolerance and keeps
    ``|g(Y)| <= theta0/2`` on omega.  All reported times are durations on the
    uniform grid of the final resimulation.

    Raises
    ------
    AdaptiveWaitExhausted
        If ``params.max_doublings`` doublings do not produce a valid window.
    """
    y0 = np.asarray(y0, dtype=float)
    dt = w.grid.dt
    t3 = float(t3)
    if not t3 > 0:
        raise ValueError("t3 must be positive")
    y0_l2 = l2_norm(y0)
    if not np.any(y0):
        return _zero_result(y0, w, omega, t3, spec, C0)
    tol = params.terminal_tol if params.terminal_tol is not None else params.terminal_rel_tol * y0_l2
    n3 = max(int(round(t3 / dt)), 4)
    prefix = _prefix or _Prefix(y0, spec, dt)
    t1_th = t1_theory(spec, C0)
    max_steps = int(math.ceil(params.t2_init * 2 ** params.max_doublings / dt))
    k1 = _phase1_index(prefix, spec, C0, max_steps)
    trials = []
    if params.t2_fixed is not None:
        candidates = [max(int(round(params.t2_fixed / dt)), 1)]
    else:
        k2 = max(int(round(params.t2_init / dt)), 1)
        candidates = [k2 * 2 ** j for j in range(params.max_doublings + 1)]
    for k2 in candidates:
        start = prefix[k1 + k2]
        trial = _control_window(start, spec, rs, w, omega, pp, fp, n3, tol, (k1 + k2) * dt)
        trials.append((k2 * dt, trial.ok, trial.reason))
        if trial.ok:
            return _assemble(y0, prefix, k1 + k2, trial, spec, rs, omega, dt,
                             k1 * dt, k2 * dt, n3 * dt, y0_l2, t1_th, trials)
    raise AdaptiveWaitExhausted(f"no admissible waiting time after {len(candidates)} trials: {trials[-1][2]}")


class AdmissibleReport(NamedTuple):
    admissible: bool
    linf_u: float
    terminal_norm: float


def admissible_check(u, y_terminal, top: TimeOptimalParams) -> AdmissibleReport:
    """||u||_inf <= sigma and ||y(T)||_{L^2} <= terminal_tol."""
    uv = u.values if hasattr(u, "values") else np.asarray(u, dtype=float)
    linf = float(np.max(np.abs(uv))) if np.size(uv) else 0.0
    term = l2_norm(np.asarray(y_terminal, dtype=float))
    tol = top.terminal_tol if top.terminal_tol is not None else 0.0
    return AdmissibleReport(bool(linf <= top.sigma and term <= tol), linf, term)


@dataclass
class _HorizonTrials:
    """Memo of pipeline runs by total step count, shared across sigma values."""

    y0: np.ndarray
    spec: DiffusionSpec
    rs: ReactionSpec
    w: CarlemanWeights
    omega: tuple
    C0: GNConstant
    pp: PenaltyParams
    fp: FixedPointParams
    t3_hi: float
    T_hi: float
    terminal_tol: float
    cache: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dt = self.w.grid.dt
        self.prefix = _Prefix(self.y0, self.spec, self.dt)
        self.k1 = _phase1_index(self.prefix, self.spec, self.C0, int(math.ceil(self.T_hi / self.dt)))
        self.n_hi = int(round(self.T_hi / self.dt))
        # fraction of the post-phase-1 time given to the control window
        self.frac = min(self.t3_hi / max((self.n_hi - self.k1) * self.dt, self.dt), 1.0)

    def run(self, n_total):
        if n_total in self.cache:
            return self.cache[n_total]
        rem = n_total - self.k1
        n3 = int(round(self.frac * rem))
        k2 = rem - n3
        result = None
        if n3 >= 4 and k2 >= 1:
            params = PipelineParams(t2_fixed=k2 * self.dt, terminal_tol=self.terminal_tol)
            try:
                result = theorem1_pipeline(self.y0, self.spec, self.rs, self.w, self.omega, self.C0,
                                           self.pp, self.fp, n3 * self.dt, params, _prefix=self.prefix)
            except (AdaptiveWaitExhausted, SafeguardViolated, SolverDiverged):
                result = None
        self.cache[n_total] = result
        return result


class SearchResult(NamedTuple):
    T_star: float
    sigma: float
    feasible: MultPipelineResult | None
    infeasible: MultPipelineResult | None
    infeasible_T: float
    anomaly: bool
    evaluations: tuple

    def summary(self) -> dict:
        return {
            "sigma": self.sigma,
            "T_star": self.T_star,
            "infeasible_T": self.infeasible_T,
            "anomaly": self.anomaly,
            "feasible_linf_u": None if self.feasible is None else self.feasible.linf_u,
            "feasible_terminal_norm": None if self.feasible is None else self.feasible.terminal_norm,
            "infeasible_linf_u": None if self.infeasible is None else self.infeasible.linf_u,
            "infeasible_terminal_norm": None if self.infeasible is None else self.infeasible.terminal_norm,
            "evaluations": [list(e) for e in self.evaluations],
        }


def _feasible(run, top, tol):
    if run is None:
        return False
    top = TimeOptimalParams(top.sigma, top.T_hi, top.bisect_tol, tol)
    return admissible_check(run.u, run.y.final, top).admissible


def time_optimal_search(y0, spec, rs, w, omega, C0=GNConstant(), pp=PenaltyParams(), fp=FixedPointParams(),
                        top: TimeOptimalParams | None = None, t3=0.2, _trials=None) -> SearchResult:
    """Bisection for the shortest horizon with an admissible pipeline control.

    Trial horizons are whole multiples of the time step.  At each trial the
    phase-1 time is kept and the remaining time is split between waiting and
    control in the proportion of the run at ``T_hi``.  The result is an upper
    estimate of the minimal time within the pipeline's control class.  The
    certificate pair is the feasible run at ``T_star`` and the run at
    ``T_star - bisect_tol``; ``anomaly`` is set if the latter is feasible.

    Raises
    ------
    InfeasibleAtHi
        If the run at ``T_hi`` is not admissible.
    """
    y0 = np.asarray(y0, dtype=float)
    y0_l2 = l2_norm(y0)
    if not np.any(y0):
        return SearchResult(0.0, top.sigma, None, None, 0.0, False, ())
    tol = top.terminal_tol if top.terminal_tol is not None else 1e-3 * y0_l2
    trials = _trials or _HorizonTrials(y0, spec, rs, w, tuple(omega), C0, pp, fp, t3, top.T_hi, tol)
    dt = trials.dt
    hi = trials.n_hi
    evaluations = []

    def feasible(n):
        ok = _feasible(trials.run(n), top, tol)
        evaluations.append((n * dt, ok))
        return ok

    if not feasible(hi):
        run = trials.run(hi)
        detail = "pipeline failed" if run is None else f"linf_u = {run.linf_u:.4g}, terminal = {run.terminal_norm:.3e}"
        raise InfeasibleAtHi(f"not admissible at T_hi = {top.T_hi} for sigma = {top.sigma} ({detail})")
    lo = trials.k1
    step_tol = max(int(math.floor(top.bisect_tol / dt + 1e-9)), 1)
    while hi - lo > step_tol:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    below = max(hi - step_tol, 0)
    below_ok = feasible(below) if below > trials.k1 else False
    return SearchResult(
        T_star=hi * dt,
        sigma=top.sigma,
        feasible=trials.run(hi),
        infeasible=trials.cache.get(below),
        infeasible_T=below * dt,
        anomaly=bool(below_ok),
        evaluations=tuple(evaluations),
    )


def time_optimal_sweep(sigmas, y0, spec, rs, w, omega, C0=GNConstant(), pp=PenaltyParams(),
                       fp=FixedPointParams(), T_hi=1.0, bisect_tol=0.02, terminal_tol=None, t3=0.2):
    """Run :func:`time_optimal_search` for several bounds, sharing pipeline runs.

    Feasibility of a fixed run only depends on sigma through ``||u||_inf``, so
    runs at a given horizon are reused across sigma values.
    """
    y0 = np.asarray(y0, dtype=float)
    tol = terminal_tol if terminal_tol is not None else 1e-3 * l2_norm(y0)
    trials = None
    if np.any(y0):
        trials = _HorizonTrials(y0, spec, rs, w, tuple(omega), C0, pp, fp, t3, T_hi, tol)
    out = []
    for sigma in sigmas:
        top = TimeOptimalParams(sigma, T_hi, bisect_tol, tol)
        out.append(time_optimal_search(y0, spec, rs, w, omega, C0, pp, fp, top, t3, _trials=trials))
    return out
