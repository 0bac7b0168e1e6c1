"""Decay, maximum-modulus and regularity diagnostics on computed trajectories.

All functions are pure: they read a trajectory and return numbers.  Discrete
norms follow the solver: trapezoid rule for L^2, centered differences for
``y_x``, grid maxima for L^infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import GateNeverActive, HorizonTooShort
from .pde_core import DiffusionSpec, SourceField, Trajectory, l2_norm, profile_derivative, trapezoid_x

# exponent of the gated H^1 decay estimate, per unit of rho
H1_RATE_FACTOR = (2 * math.pi ** 2 - 1) / (2 * (math.pi ** 2 + 1))
RATE_TOLERANCE = 0.05
MONOTONE_TOL = 1e-10


@dataclass(frozen=True)
class GNConstant:
    """Gagliardo-Nirenberg constant used in the smallness thresholds."""

    C0: float = 2.0
    max_observed_ratio: float | None = None
    n_samples: int = 0

    def __post_init__(self):
        if not self.C0 > 0:
            raise ValueError("C0 must be positive")


@dataclass(frozen=True)
class DecayReport:
    """Time series and verdicts of the free-decay estimates.

    ``linf_decay_report`` fills the L^infinity part, ``h1_decay_report`` the
    energy part; :meth:`merge` combines the two.
    """

    times: np.ndarray
    M_profile: np.ndarray | None = None
    linf_bound_profile: np.ndarray | None = None
    monotone_violation: float | None = None
    bound_violation: float | None = None
    slack: float | None = None
    E_profile: np.ndarray | None = None
    h1_rate_estimate: float | None = None
    rate_threshold: float | None = None
    gate_index: int | None = None
    degenerate: bool = False

    @property
    def monotone_ok(self) -> bool:
        return self.monotone_violation is not None and self.monotone_violation <= MONOTONE_TOL

    @property
    def bound_ok(self) -> bool:
        return self.bound_violation is not None and self.bound_violation <= self.slack

    @property
    def rate_ok(self) -> bool:
        """True when the fitted H^1 rate clears the threshold (or the run is degenerate)."""
        if self.degenerate:
            return True
        if self.h1_rate_estimate is None:
            return False
        return self.h1_rate_estimate >= self.rate_threshold

    def merge(self, other: "DecayReport") -> "DecayReport":
        updates = {k: v for k, v in other.__dict__.items() if v is not None and k != "times"}
        updates["degenerate"] = self.degenerate or other.degenerate
        return replace(self, **updates)

    def as_dict(self) -> dict:
        out = {}
        for key, val in self.__dict__.items():
            out[key] = val.tolist() if isinstance(val, np.ndarray) else val
        out.update(monotone_ok=self.monotone_ok, rate_ok=self.rate_ok)
        if self.slack is not None:
            out["bound_ok"] = self.bound_ok
        return out


def sup_profile(traj: Trajectory) -> np.ndarray:
    """M(t) = max_x |y(x, t)| at every time node."""
    return np.max(np.abs(traj.values), axis=1)


def energy_profile(traj: Trajectory) -> np.ndarray:
    """E(t) = 1/2 int (y^2 + y_x^2) at every time node."""
    y = traj.values
    yx = profile_derivative(y, traj.grid.dx)
    return 0.5 * trapezoid_x(y * y + yx * yx, traj.grid.dx)


def h1_profile(traj: Trajectory) -> np.ndarray:
    return np.sqrt(2.0 * energy_profile(traj))


def decay_slack(grid, y0_l2) -> float:
    return 10.0 * (grid.dx ** 2 + grid.dt) * y0_l2


def linf_decay_report(traj: Trajectory, spec: DiffusionSpec, y0_l2=None) -> DecayReport:
    """Check monotonicity of M(t) and the bound (2 rho)^{-1/2} ||y0|| t^{-1/2}.

    The trajectory must come from a free evolution (f = 0); this is not
    checked.
    """
    grid = traj.grid
    if y0_l2 is None:
        y0_l2 = l2_norm(traj.initial, grid.dx)
    t = grid.t
    M = sup_profile(traj)
    bound = np.full_like(t, np.inf)
    bound[1:] = y0_l2 / np.sqrt(2.0 * spec.rho * t[1:])
    jumps = np.diff(M)
    return DecayReport(
        times=t,
        M_profile=M,
        linf_bound_profile=bound,
        monotone_violation=float(max(0.0, np.max(jumps))),
        bound_violation=float(np.max(M[1:] - bound[1:])),
        slack=decay_slack(grid, y0_l2),
    )


def gate_threshold(spec: DiffusionSpec, C0) -> float:
    """rho / (4 M C0^2), or +inf when M = 0."""
    C0 = C0.C0 if isinstance(C0, GNConstant) else float(C0)
    if spec.M == 0:
        return math.inf
    return spec.rho / (4.0 * spec.M * C0 ** 2)


def fit_log_rate(times, values) -> float | None:
    """Least-squares decay rate of ``values`` (minus the slope of log values)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values) & (values > 0)
    if np.count_nonzero(keep) < 2:
        return None
    slope = np.polyfit(times[keep], np.log(values[keep]), 1)[0]
    return float(-slope)


def h1_decay_report(traj: Trajectory, spec: DiffusionSpec, C0=GNConstant()) -> DecayReport:
    """Energy series and gated H^1 decay rate.

    The rate is fitted on the last half of the window where the smallness
    gate ``||y||_inf <= rho/(4 M C0^2)`` holds.

    Raises
    ------
    GateNeverActive
        If the gate fails at every time node.
    """
    grid = traj.grid
    E = energy_profile(traj)
    threshold = (H1_RATE_FACTOR - RATE_TOLERANCE) * spec.rho
    if not np.any(E > 0):
        return DecayReport(times=grid.t, E_profile=E, rate_threshold=threshold, degenerate=True)
    gate = gate_threshold(spec, C0)
    active = np.nonzero(sup_profile(traj) <= gate)[0]
    if active.size == 0:
        raise GateNeverActive(f"||y||_inf never drops below {gate:.6g} within T = {grid.T}")
    first = int(active[0])
    start = first + (grid.n_t - first) // 2
    rate = fit_log_rate(grid.t[start:], np.sqrt(2.0 * E[start:]))
    return DecayReport(
        times=grid.t,
        E_profile=E,
        h1_rate_estimate=rate,
        rate_threshold=threshold,
        gate_index=first,
        degenerate=rate is None,
    )


def max_modulus_bound(y0, f, spec: DiffusionSpec) -> float:
    """sup|y0| + (6/rho) ||f||_inf."""
    sup0 = float(np.max(np.abs(np.asarray(y0, dtype=float))))
    if f is None:
        return sup0
    fv = f.values if isinstance(f, SourceField) else np.asarray(f, dtype=float)
    return sup0 + 6.0 / spec.rho * float(np.max(np.abs(fv)))


class RegularityRatio(NamedTuple):
    ratio: float
    degenerate: bool


def regularity_ratio(traj: Trajectory, spec: DiffusionSpec, t0) -> RegularityRatio:
    """[int (A(y))_xx^2 + y_x^2 + y^2 at t0] / [int y0^2 + (y0)_x^2].

    ``t0`` must lie on the time grid.  A zero initial state gives a
    degenerate result with ``ratio = nan``.
    """
    grid = traj.grid
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    k = int(round(t0 / grid.dt))
    if k > grid.n_t or abs(k * grid.dt - t0) > 1e-9 * max(1.0, t0):
        raise ValueError(f"t0 = {t0} is not a grid time")
    dx = grid.dx
    y0 = traj.initial
    denom = float(trapezoid_x(y0 ** 2 + profile_derivative(y0, dx) ** 2, dx))
    if denom == 0.0:
        return RegularityRatio(math.nan, True)
    y = traj.values[k]
    need = 2.0 * float(np.max(np.abs(y)))
    if need > spec.primitive_bound:
        spec = spec.with_primitive_range(need)
    z = spec.A(y)
    zxx = (z[2:] - 2 * z[1:-1] + z[:-2]) / dx ** 2
    num = dx * float(np.sum(zxx ** 2)) + float(trapezoid_x(y ** 2 + profile_derivative(y, dx) ** 2, dx))
    return RegularityRatio(num / denom, False)


class SmallnessTimes(NamedTuple):
    t1_theory: float
    t1_observed: float
    t2_observed: float


def t1_theory(spec: DiffusionSpec, C0=GNConstant()) -> float:
    """32 M^2 C0^4 / rho^3."""
    C0 = C0.C0 if isinstance(C0, GNConstant) else float(C0)
    return 32.0 * spec.M ** 2 * C0 ** 4 / spec.rho ** 3


def smallness_times(traj: Trajectory, spec: DiffusionSpec, C0=GNConstant(), eta=0.05) -> SmallnessTimes:
    """Theoretical and observed gate times of a free evolution.

    ``t1_observed`` is the first grid time where the L^infinity gate holds
    (0 when M = 0); ``t2_observed`` is the first grid time at or after it with
    ``||y||_{H^1} < eta``.  Both are absolute times.

    Raises
    ------
    HorizonTooShort
        If either gate is never reached.
    """
    grid = traj.grid
    theory = t1_theory(spec, C0)
    if spec.M == 0:
        k1 = 0
    else:
        hits = np.nonzero(sup_profile(traj) <= gate_threshold(spec, C0))[0]
        if hits.size == 0:
            raise HorizonTooShort("L-infinity smallness gate not reached within the horizon")
        k1 = int(hits[0])
    h1 = h1_profile(traj)
    hits = np.nonzero(h1[k1:] < eta)[0]
    if hits.size == 0:
        raise HorizonTooShort(f"H^1 norm never drops below eta = {eta} within the horizon")
    k2 = k1 + int(hits[0])
    return SmallnessTimes(theory, float(grid.t[k1]), float(grid.t[k2]))


def _gn_parts(coef, x):
    k = np.arange(1, coef.size + 1) * math.pi
    s = np.sin(np.outer(x, k))
    c = np.cos(np.outer(x, k))
    u = s @ coef
    ux = c @ (coef * k)
    uxx = -(s @ (coef * k * k))
    return u, ux, uxx


def gn_sampler(C0=2.0, n_samples=1000, seed=0, n_points=2001, max_modes=16) -> GNConstant:
    """Check the Gagliardo-Nirenberg inequality on random sine polynomials.

    Evaluates ``||u_x||_4 / (||u||_inf^{1/2} ||u_xx||_2^{1/2} + ||u||_2)`` for
    ``n_samples`` random ``u = sum_k c_k sin(k pi x)``.  If the largest ratio
    exceeds ``C0`` the returned constant is raised to 1.1 times that ratio.
    """
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n_points)
    dx = x[1] - x[0]

    def integral(v):
        return dx * (v[1:-1].sum() + 0.5 * (v[0] + v[-1]))

    worst = 0.0
    for _ in range(n_samples):
        n_modes = int(rng.integers(1, max_modes + 1))
        coef = rng.standard_normal(n_modes) / np.arange(1, n_modes + 1) ** rng.uniform(0.0, 2.0)
        u, ux, uxx = _gn_parts(coef, x)
        lhs = integral(ux ** 4) ** 0.25
        rhs = math.sqrt(np.max(np.abs(u))) * integral(uxx ** 2) ** 0.25 + math.sqrt(integral(u ** 2))
        worst = max(worst, lhs / rhs)
    C = float(C0) if worst <= C0 else 1.1 * worst
    return GNConstant(C, float(worst), n_samples)
