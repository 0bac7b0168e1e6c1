"""Additive null control by penalized HUM and Picard iteration.

For a frozen coefficient ``b`` the penalized problem

    min  int int u^2 / w  +  (1/eps) ||y(T)||^2,    w = exp(2 s beta) phi^3 on omega,

has the optimal control ``u = w p`` where ``p`` solves the adjoint equation
with terminal value ``q``.  Writing ``Lambda q`` for the terminal state driven
from zero by that control, optimality reduces to the n_x-dimensional SPD system

    (Lambda + eps I) q = -y_free(T),

solved here by conjugate gradients.  The weight is normalized by its grid
maximum (see :mod:`qparctl.carleman`), so ``eps`` is measured relative to the
peak weight.  On the grid the optimality condition pairs ``u`` at level k with
``p`` at level k - 1, matching the discrete duality of the solvers.

The quasilinear problem is handled by Picard iteration on the frozen
coefficient ``a(y~)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .carleman import CarlemanWeights, build_weights
from .errors import CGStalled, FixedPointDiverged, NonSymmetric
from .pde_core import (
    DiffusionSpec,
    Grid,
    SourceField,
    Trajectory,
    TridiagonalSequence,
    l2_norm,
    midpoint_coefficient,
    profile_derivative,
    solve_forward,
    space_time_l2,
    step_implicit,
    trapezoid_x,
)

DEFAULT_EPS = tuple(10.0 ** -k for k in range(1, 9))


@dataclass(frozen=True)
class ControlSchedule:
    """Space-time control supported in ``omega`` and vanishing before ``phase_start``."""

    grid: Grid
    omega: tuple
    values: np.ndarray
    phase_start: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        grid = self.grid
        if v.shape != grid.shape:
            raise ValueError(f"control shape {v.shape} != grid shape {grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("control contains non-finite values")
        lo, hi = self.omega
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError(f"omega = {self.omega} is not a subinterval of (0, 1)")
        if np.any(v[:, ~grid.mask(self.omega)] != 0):
            raise ValueError("control is nonzero outside omega")
        if np.any(v[0] != 0) or np.any(v[-1] != 0):
            raise ValueError("control is nonzero at an endpoint time level")
        early = grid.t < self.phase_start - 1e-12 * grid.T
        if np.any(v[early] != 0):
            raise ValueError("control is nonzero before phase_start")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "omega", (float(lo), float(hi)))

    @classmethod
    def zeros(cls, grid, omega, phase_start=0.0):
        return cls(grid, omega, np.zeros(grid.shape), phase_start)

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class PenaltyParams:
    eps_schedule: tuple = DEFAULT_EPS
    cg_tol: float = 1e-10
    cg_max_iter: int = 500

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_schedule)
        if not eps or any(e <= 0 for e in eps):
            raise ValueError("eps_schedule must be nonempty and positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_schedule must be strictly decreasing")
        object.__setattr__(self, "eps_schedule", eps)


@dataclass(frozen=True)
class FixedPointParams:
    delta: float = 1.0
    max_outer: int = 10
    contraction_tol: float = 1e-9

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")


@dataclass(frozen=True)
class CostReport:
    l2_cost: float
    linf_cost: float
    c1_ratio: float
    c2_ratio: float
    terminal_norm: float
    K_membership: dict
    outer_iterations: int = 0
    distances: tuple = ()
    continuation_terminal_norms: tuple = ()
    cg_iterations: int = 0

    def as_dict(self) -> dict:
        out = dict(self.__dict__)
        out["distances"] = list(self.distances)
        out["continuation_terminal_norms"] = list(self.continuation_terminal_norms)
        out["K_membership"] = dict(self.K_membership)
        return out


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def conjugate_gradient(apply, rhs, x0=None, tol=1e-10, max_iter=500, stall_window=60) -> CGResult:
    """Conjugate gradients for an SPD operator given as a function.

    Stops at relative residual ``tol``.  If the best residual has not improved
    by a factor two over ``stall_window`` iterations, or ``max_iter`` is hit,
    :class:`CGStalled` carries the best iterate.
    """
    rhs = np.asarray(rhs, dtype=float)
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return CGResult(np.zeros_like(rhs), 0, 0.0)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float)
    r = rhs - apply(x) if x0 is not None else rhs.copy()
    rel = float(np.linalg.norm(r)) / bnorm
    if rel <= tol:
        return CGResult(x, 0, rel)
    d = r.copy()
    rs = float(r @ r)
    best = (rel, x.copy())
    last_gain = 0
    for it in range(1, max_iter + 1):
        Ad = apply(d)
        curv = float(d @ Ad)
        if curv <= 0:
            raise CGStalled("operator is not positive definite along a search direction",
                            best=best[1], residual=best[0], iterations=it)
        alpha = rs / curv
        x += alpha * d
        if it % 50 == 0:
            r = rhs - apply(x)
        else:
            r -= alpha * Ad
        rs_new = float(r @ r)
        rel = math.sqrt(rs_new) / bnorm
        if rel <= tol:
            return CGResult(x, it, rel)
        if rel < 0.5 * best[0]:
            last_gain = it
        if rel < best[0]:
            best = (rel, x.copy())
        if it - last_gain >= stall_window:
            raise CGStalled(f"CG residual plateaued at {best[0]:.3e}", best=best[1],
                            residual=best[0], iterations=it)
        d = r + (rs_new / rs) * d
        rs = rs_new
    raise CGStalled(f"CG reached {max_iter} iterations at residual {best[0]:.3e}",
                    best=best[1], residual=best[0], iterations=max_iter)


class LQSolution(NamedTuple):
    u: ControlSchedule
    y: Trajectory
    p: Trajectory
    q: np.ndarray
    cg_iterations: int
    cg_residual: float


class PenalizedLQ:
    """Frozen-coefficient penalized control problem on one time window.

    Parameters
    ----------
    bm : array, shape (n_t+1, n_x+1)
        Coefficient at cell midpoints.
    w : CarlemanWeights
    omega : interval
    """

    def __init__(self, bm, w: CarlemanWeights, omega, check_symmetry=True):
        self.grid = w.grid
        self.omega = tuple(omega)
        self.ops = TridiagonalSequence(bm, self.grid)
        mask = self.grid.mask(omega)[1:-1]
        weight = w.control_weight[:, 1:-1] * mask[None, :]
        weight[0] = weight[-1] = 0.0
        self.weight = weight
        self.weights = w
        if check_symmetry:
            self.symmetry_defect = self.symmetry_check()

    def control(self, p_int):
        """u^k = w^k p^{k-1}, interior nodes."""
        u = np.zeros_like(p_int)
        u[1:] = self.weight[1:] * p_int[:-1]
        return u

    def apply(self, q):
        p = self.ops.adjoint(q)
        return self.ops.forward(np.zeros_like(q), self.control(p))[-1]

    def symmetry_check(self, seed=0, tol=1e-8):
        rng = np.random.default_rng(seed)
        q1, q2 = rng.standard_normal((2, self.grid.n_x))
        Lq1, Lq2 = self.apply(q1), self.apply(q2)
        defect = abs(float(Lq1 @ q2 - q1 @ Lq2))
        scale = max(float(np.linalg.norm(Lq1) * np.linalg.norm(q2)),
                    float(np.linalg.norm(q1) * np.linalg.norm(Lq2)), 1e-300)
        if defect > tol * scale:
            raise NonSymmetric(f"Lambda symmetry defect {defect / scale:.3e} exceeds {tol}")
        return defect / scale

    def free_terminal(self, y0):
        return self.ops.forward(np.asarray(y0, dtype=float)[1:-1])[-1]

    def solve(self, y0, eps, tol=1e-10, max_iter=500, q0=None) -> LQSolution:
        grid = self.grid
        y0 = np.asarray(y0, dtype=float)
        rhs = -self.free_terminal(y0)
        res = conjugate_gradient(lambda v: self.apply(v) + eps * v, rhs, x0=q0, tol=tol, max_iter=max_iter)
        p = self.ops.adjoint(res.x)
        u = self.control(p)
        y = self.ops.forward(y0[1:-1], u)
        return LQSolution(
            u=ControlSchedule(grid, self.omega, _embed(u, grid)),
            y=Trajectory(grid, _embed(y, grid)),
            p=Trajectory(grid, _embed(p, grid)),
            q=res.x,
            cg_iterations=res.iterations,
            cg_residual=res.residual,
        )

    def objective(self, u_values, y0, eps):
        """Normalized penalized objective and its gradient in the space-time pairing.

        The gradient at level k is ``2 u^k / w^k + (2/eps) p~^{k-1}`` on the
        support, with ``p~`` the adjoint of terminal data ``y(T)``; it is zero
        off the support.
        """
        grid = self.grid
        u = np.asarray(u_values, dtype=float)[:, 1:-1]
        support = self.weight > 0
        y = self.ops.forward(np.asarray(y0, dtype=float)[1:-1], u)
        yT = y[-1]
        ratio = np.zeros_like(u)
        ratio[support] = u[support] / self.weight[support]
        J = grid.dt * grid.dx * float(np.sum(u * ratio)) + grid.dx * float(yT @ yT) / eps
        pt = self.ops.adjoint(yT)
        grad = np.zeros_like(u)
        grad[1:] = 2 * ratio[1:] + (2.0 / eps) * pt[:-1]
        grad[~support] = 0.0
        return J, _embed(grad, grid)


def _embed(interior, grid):
    out = np.zeros(grid.shape)
    out[:, 1:-1] = interior
    return out


def _midpoints_from(b, grid):
    bv = b.values if isinstance(b, SourceField) else np.broadcast_to(np.asarray(b, dtype=float), grid.shape)
    return midpoint_coefficient(bv)


def solve_lq_penalized(b, y0, w: CarlemanWeights, eps, omega, params=PenaltyParams(), q0=None) -> LQSolution:
    """Penalized control for the frozen-coefficient equation ``y_t - (b y_x)_x = 1_omega u``.

    Returns the control, the state it drives from ``y0``, the adjoint state and
    the terminal adjoint ``q``.  A zero free terminal state gives ``u = 0``
    without iterating.

    Raises
    ------
    CGStalled
        Residual plateau before ``params.cg_tol``.
    NonSymmetric
        If the symmetry self-test of ``Lambda`` fails.
    """
    lq = PenalizedLQ(_midpoints_from(b, w.grid), w, omega)
    return lq.solve(y0, float(eps), params.cg_tol, params.cg_max_iter, q0=q0)


def _continuation(lq: PenalizedLQ, y0, eps_list, params, q0=None):
    norms = []
    sol = None
    iters = 0
    for eps in eps_list:
        sol = lq.solve(y0, eps, params.cg_tol, params.cg_max_iter, q0=q0)
        q0 = sol.q
        iters += sol.cg_iterations
        norms.append(l2_norm(sol.y.final, lq.grid.dx))
    return sol, norms, iters


def cost_report(u: ControlSchedule, y: Trajectory, y0, delta=1.0, **extra) -> CostReport:
    """Costs, normalized cost ratios, terminal norm and K-membership checks."""
    grid = y.grid
    uv = u.values
    ut = np.zeros_like(uv)
    ut[:-1] = np.diff(uv, axis=0) / grid.dt
    l2_cost = space_time_l2(uv, grid) ** 2 + space_time_l2(ut, grid) ** 2
    linf = float(np.max(np.abs(uv)))
    y0_l2 = l2_norm(y0, grid.dx)
    c1 = l2_cost / y0_l2 ** 2 if y0_l2 > 0 else (0.0 if l2_cost == 0 else math.inf)
    c2 = linf / y0_l2 if y0_l2 > 0 else (0.0 if linf == 0 else math.inf)
    yv = y.values
    yx = profile_derivative(yv, grid.dx)
    yt = np.diff(yv, axis=0) / grid.dt
    yxt = np.diff(yx, axis=0) / grid.dt
    yx_inf = float(np.max(np.abs(yx)))
    sqrt_t_yt = float(np.max(np.sqrt(grid.t[1:])[:, None] * np.abs(yt)))
    yxt_l2 = math.sqrt(grid.dt * float(np.sum(trapezoid_x(yxt ** 2, grid.dx))))
    K = {
        "delta": float(delta),
        "yx_inf": yx_inf,
        "sqrt_t_yt_inf": sqrt_t_yt,
        "yxt_l2": yxt_l2,
        "in_K": bool(yx_inf <= delta and sqrt_t_yt <= delta and yxt_l2 <= delta),
    }
    return CostReport(
        l2_cost=float(l2_cost),
        linf_cost=linf,
        c1_ratio=float(c1),
        c2_ratio=float(c2),
        terminal_norm=l2_norm(y.final, grid.dx),
        K_membership=K,
        **extra,
    )


class NullControlResult(NamedTuple):
    u: ControlSchedule
    y: Trajectory
    report: CostReport


def _state_midpoints(spec, values):
    return spec.a(0.5 * (values[:, 1:] + values[:, :-1]))


def fixed_point_null_control(y0, spec: DiffusionSpec, w: CarlemanWeights, omega,
                             pp=PenaltyParams(), fp=FixedPointParams()) -> NullControlResult:
    """Null control of the quasilinear equation by Picard iteration.

    Each outer step freezes the coefficient at ``a(y~)`` (evaluated at cell
    midpoints, as in the quasilinear stencil), solves the penalized problem
    and resimulates the quasilinear equation with the new control.  The first
    step walks the whole penalty schedule; later steps warm-start at its last
    value.  Iteration stops when the L^2(Q_T) change of ``y~`` drops below
    ``fp.contraction_tol`` or the frozen coefficient no longer changes.

    Raises
    ------
    FixedPointDiverged
        If the change grows three outer iterations in a row.
    """
    grid = w.grid
    y0 = np.asarray(y0, dtype=float)
    if not np.any(y0):
        u = ControlSchedule.zeros(grid, omega)
        y = Trajectory(grid, np.zeros(grid.shape))
        return NullControlResult(u, y, cost_report(u, y, y0, fp.delta, outer_iterations=0))
    ytilde = solve_forward(y0, None, grid, spec).values
    bm = _state_midpoints(spec, ytilde)
    q = None
    distances = []
    norms = []
    total_cg = 0
    growth = 0
    for outer in range(1, fp.max_outer + 1):
        lq = PenalizedLQ(bm, w, omega)
        eps_list = pp.eps_schedule if outer == 1 else pp.eps_schedule[-1:]
        sol, run_norms, iters = _continuation(lq, y0, eps_list, pp, q0=q)
        if outer == 1:
            norms = run_norms
        total_cg += iters
        q = sol.q
        y_new = solve_forward(y0, sol.u.values, grid, spec).values
        dist = space_time_l2(y_new - ytilde, grid)
        distances.append(dist)
        bm_new = _state_midpoints(spec, y_new)
        ytilde = y_new
        if dist <= fp.contraction_tol or np.array_equal(bm_new, bm):
            break
        growth = growth + 1 if len(distances) > 1 and dist > distances[-2] else 0
        if growth >= 3:
            raise FixedPointDiverged(f"Picard distance grew 3 times in a row (last {dist:.3e})",
                                     distances=distances)
        bm = bm_new
    y = Trajectory(grid, ytilde)
    report = cost_report(sol.u, y, y0, fp.delta, outer_iterations=outer, distances=tuple(distances),
                         continuation_terminal_norms=tuple(norms), cg_iterations=total_cg)
    return NullControlResult(sol.u, y, report)


def _time_index(grid: Grid, t0) -> int:
    k = int(round(t0 / grid.dt))
    if abs(k * grid.dt - t0) > 1e-9 * max(grid.T, 1.0):
        raise ValueError(f"t0 = {t0} is not on the time grid")
    return k


def free_evolution(y0, spec, dt, n_steps) -> np.ndarray:
    """Levels 0..n_steps of the unforced quasilinear equation."""
    out = np.zeros((n_steps + 1, np.size(y0)))
    out[0] = y0
    for k in range(1, n_steps + 1):
        out[k] = step_implicit(out[k - 1], dt, None, spec)
    return out


def staged_control(y0, t0, spec: DiffusionSpec, w: CarlemanWeights, omega,
                   pp=PenaltyParams(), fp=FixedPointParams()) -> NullControlResult:
    """Let the state decay freely on (0, t0), then control on (t0, T).

    The Carleman weights are rebuilt on the control window so that their
    singularities sit at t0 and T.  The returned schedule has
    ``phase_start = t0``.
    """
    grid = w.grid
    k0 = _time_index(grid, t0)
    if k0 == 0:
        return fixed_point_null_control(y0, spec, w, omega, pp, fp)
    if not 0 < k0 < grid.n_t:
        raise ValueError("t0 must lie strictly inside (0, T)")
    y0 = np.asarray(y0, dtype=float)
    prefix = free_evolution(y0, spec, grid.dt, k0)
    w_window = w.restricted(k0)
    inner = fixed_point_null_control(prefix[-1], spec, w_window, omega, pp, fp)
    yv = np.vstack([prefix[:-1], inner.y.values])
    uv = np.zeros(grid.shape)
    uv[k0:] = inner.u.values
    u = ControlSchedule(grid, omega, uv, phase_start=float(grid.t[k0]))
    y = Trajectory(grid, yv)
    rep = inner.report
    report = cost_report(u, y, y0, fp.delta, outer_iterations=rep.outer_iterations,
                         distances=rep.distances,
                         continuation_terminal_norms=rep.continuation_terminal_norms,
                         cg_iterations=rep.cg_iterations)
    return NullControlResult(u, y, report)


def auto_tune_s(y0, spec: DiffusionSpec, psi, lam, grid: Grid, omega, pp=PenaltyParams(),
                s_values=(0.25, 0.5, 1.0, 2.0, 4.0, 8.0), rel_change=0.1):
    """Smallest ``s`` after which the penalized problem's conditioning settles.

    For each candidate ``s`` the penalized problem at the smallest penalty is
    solved with the coefficient of the free evolution; the CG iteration count
    is the conditioning proxy.  Returns the first ``s`` whose count differs
    from the previous candidate's by at most ``rel_change``, else the last.
    """
    y_free = solve_forward(np.asarray(y0, dtype=float), None, grid, spec).values
    bm = _state_midpoints(spec, y_free)
    prev = None
    for s in s_values:
        w = build_weights(psi, lam, s, grid)
        lq = PenalizedLQ(bm, w, omega)
        sol, _, iters = _continuation(lq, y0, pp.eps_schedule, pp)
        if prev is not None and abs(iters - prev) <= rel_change * max(prev, 1):
            return s
        prev = iters
    return s_values[-1]
