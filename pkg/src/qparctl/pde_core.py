"""Grids, diffusion coefficients and implicit solvers.

The state equation is ``y_t - (a(y) y_x)_x = f`` on (0, 1) with homogeneous
Dirichlet data.  Every solver works on a uniform grid whose profiles carry the
two boundary nodes, so a profile has ``n_x + 2`` entries and a space-time field
has shape ``(n_t + 1, n_x + 2)``.

Time stepping is backward Euler with the source taken at the new level,

    y^{n+1} - dt D(y^{n+1}) = y^n + dt f^{n+1},

where ``D`` is the conservative flux divergence with the coefficient evaluated
at the arithmetic mean of neighbouring states.  The linear (frozen coefficient)
forward solver and the adjoint solver share the same factored tridiagonal
operators ``I - dt L_k``, which makes the discrete duality

    <y^N, p^N> - <y^0, p^0> = sum_{k=1}^{N} dt <u^k, p^{k-1}>

hold to rounding error.  :func:`space_time_pairing` implements the right-hand
side of that identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import quad_vec
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import solve_banded
from scipy.linalg.lapack import dpttrf, dpttrs

from .errors import (
    InverseLookupFailure,
    NonellipticCoefficient,
    RejectedCoefficient,
    SolverDiverged,
)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
# absolute resolution of the inverse lookup B near zero; residuals of the
# transformed equation cannot drop below it
LOOKUP_RESOLUTION = 1e-14


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid on (0, 1) x (0, T)."""

    n_x: int
    n_t: int
    T: float

    def __post_init__(self):
        if int(self.n_x) < 3:
            raise ValueError(f"n_x must be >= 3, got {self.n_x}")
        if int(self.n_t) < 2:
            raise ValueError(f"n_t must be >= 2, got {self.n_t}")
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"T must be positive, got {self.T}")
        object.__setattr__(self, "n_x", int(self.n_x))
        object.__setattr__(self, "n_t", int(self.n_t))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dx(self) -> float:
        return 1.0 / (self.n_x + 1)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_x + 2) / (self.n_x + 1)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t + 1) / self.n_t * self.T

    @property
    def shape(self) -> tuple:
        return (self.n_t + 1, self.n_x + 2)

    def mask(self, interval) -> np.ndarray:
        """Boolean mask of nodes strictly inside the open ``interval``."""
        lo, hi = interval
        x = self.x
        return (x > lo) & (x < hi)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


def _vectorized(fn):
    probe = np.array([0.0, 0.5])
    try:
        out = np.asarray(fn(probe), dtype=float)
        if out.shape == probe.shape:
            return fn
    except Exception:
        pass
    vec = np.vectorize(fn, otypes=[float])
    return lambda s: vec(np.asarray(s, dtype=float))


class _PrimitiveTable:
    """Tabulated A(s) = int_0^s a on [-bound, bound] with Hermite interpolation."""

    def __init__(self, a, bound, h=0.005):
        bound = float(max(bound, 0.1))
        m = int(math.ceil(bound / h))
        nodes = np.linspace(-bound, bound, 2 * m + 1)
        lo = nodes[:-1]
        widths = np.diff(nodes)
        pieces, _ = quad_vec(
            lambda tau: a(lo + tau * widths) * widths, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13
        )
        values = np.empty_like(nodes)
        values[m] = 0.0
        values[m + 1:] = np.cumsum(pieces[m:])
        values[:m] = -np.cumsum(pieces[:m][::-1])[::-1]
        self.a = a
        self.bound = bound
        self.nodes = nodes
        self.values = values
        self._spline = CubicHermiteSpline(nodes, values, a(nodes))

    def A(self, s):
        s = np.asarray(s, dtype=float)
        if s.size and np.max(np.abs(s)) > self.bound:
            raise InverseLookupFailure(
                f"state {np.max(np.abs(s)):.6g} outside primitive table [-{self.bound}, {self.bound}]"
            )
        return self._spline(s)

    def B(self, z):
        z = np.asarray(z, dtype=float)
        if z.size and (np.min(z) < self.values[0] or np.max(z) > self.values[-1]):
            raise InverseLookupFailure(
                f"value range [{np.min(z):.6g}, {np.max(z):.6g}] outside "
                f"A-range [{self.values[0]:.6g}, {self.values[-1]:.6g}]"
            )
        y = np.interp(z, self.values, self.nodes)
        for _ in range(8):
            step = (self._spline(y) - z) / self.a(y)
            y = np.clip(y - step, -self.bound, self.bound)
            if np.max(np.abs(step), initial=0.0) <= 1e-15 * (1.0 + np.max(np.abs(y), initial=0.0)):
                break
        return y


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficient ``a`` with certified bounds and its primitive ``A``.

    ``rho``, ``kappa`` and ``M`` carry the 1% safety margin; the ``*_raw``
    fields hold the sampled extremes.
    """

    a: Callable
    a_prime: Callable
    rho: float
    kappa: float
    M: float
    rho_raw: float
    kappa_raw: float
    M_raw: float
    sample_range: tuple
    table: _PrimitiveTable = field(repr=False, compare=False)

    def A(self, s):
        return self.table.A(s)

    def B(self, z):
        """Inverse of ``A``."""
        return self.table.B(z)

    @property
    def primitive_bound(self) -> float:
        return self.table.bound

    def with_primitive_range(self, bound) -> "DiffusionSpec":
        return replace(self, table=_PrimitiveTable(self.a, bound))


def build_diffusion_spec(a, a_prime, sample_range=(-10.0, 10.0), n_samples=2001,
                         margin=0.01, primitive_range=None) -> DiffusionSpec:
    """Sample ``a`` and ``a'`` and certify the parabolicity bounds.

    Raises
    ------
    RejectedCoefficient
        If ``a`` is not strictly positive on the samples.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    lo, hi = float(sample_range[0]), float(sample_range[1])
    if not hi > lo:
        raise ValueError("sample_range must be an increasing interval")
    a = _vectorized(a)
    a_prime = _vectorized(a_prime)
    s = np.linspace(lo, hi, int(n_samples))
    av = a(s)
    apv = a_prime(s)
    if not (np.all(np.isfinite(av)) and np.all(np.isfinite(apv))):
        raise RejectedCoefficient("coefficient is not finite on the sample range")
    a_min = float(np.min(av))
    if a_min <= 0:
        raise RejectedCoefficient(
            f"min a = {a_min:.6g} <= 0 at s = {s[np.argmin(av)]:.6g}; uniform parabolicity fails"
        )
    a_max = float(np.max(av))
    m_raw = float(np.max(np.abs(apv)))
    bound = primitive_range if primitive_range is not None else max(abs(lo), abs(hi))
    return DiffusionSpec(
        a=a,
        a_prime=a_prime,
        rho=(1.0 - margin) * a_min,
        kappa=(1.0 + margin) * a_max,
        M=(1.0 + margin) * m_raw,
        rho_raw=a_min,
        kappa_raw=a_max,
        M_raw=m_raw,
        sample_range=(lo, hi),
        table=_PrimitiveTable(a, bound),
    )


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Trajectory:
    """Space-time field y(x, t) with zero boundary nodes."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != self.grid.shape:
            raise ValueError(f"trajectory shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory contains non-finite values")
        if np.any(v[:, 0] != 0.0) or np.any(v[:, -1] != 0.0):
            raise ValueError("trajectory boundary nodes must be exactly zero")
        object.__setattr__(self, "values", v)

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


@dataclass(frozen=True)
class SourceField:
    """Space-time source or coefficient field on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(np.broadcast_to(np.asarray(self.values, dtype=float), self.grid.shape))
        if not np.all(np.isfinite(v)):
            raise ValueError("source field contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))


class ReactionTerm(NamedTuple):
    """State-dependent source ``coef * (g(y) - theta)`` tabulated on a grid."""

    coef: np.ndarray
    theta: np.ndarray
    g: Callable
    g_prime: Callable


# ---------------------------------------------------------------------------
# discrete norms


def l2_norm(profile, dx=None) -> float:
    profile = np.asarray(profile, dtype=float)
    if dx is None:
        dx = 1.0 / (profile.shape[-1] - 1)
    inner = profile[1:-1]
    edge = 0.5 * (profile[0] ** 2 + profile[-1] ** 2)
    return math.sqrt(dx * (float(np.dot(inner, inner)) + edge))


def profile_derivative(profile, dx=None) -> np.ndarray:
    """Centered differences inside, second-order one-sided at the ends."""
    y = np.asarray(profile, dtype=float)
    if dx is None:
        dx = 1.0 / (y.shape[-1] - 1)
    d = np.empty_like(y)
    d[..., 1:-1] = (y[..., 2:] - y[..., :-2]) / (2 * dx)
    d[..., 0] = (-3 * y[..., 0] + 4 * y[..., 1] - y[..., 2]) / (2 * dx)
    d[..., -1] = (3 * y[..., -1] - 4 * y[..., -2] + y[..., -3]) / (2 * dx)
    return d


def trapezoid_x(values, dx) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return dx * (values[..., 1:-1].sum(axis=-1) + 0.5 * (values[..., 0] + values[..., -1]))


def h1_norm(profile, dx=None) -> float:
    y = np.asarray(profile, dtype=float)
    if dx is None:
        dx = 1.0 / (y.shape[-1] - 1)
    yx = profile_derivative(y, dx)
    return math.sqrt(float(trapezoid_x(y * y + yx * yx, dx)))


def space_time_l2(values, grid: Grid) -> float:
    """L^2(Q_T) norm by the trapezoid rule in x and t."""
    v = np.asarray(values, dtype=float)
    per_level = trapezoid_x(v * v, grid.dx)
    total = grid.dt * (per_level[1:-1].sum() + 0.5 * (per_level[0] + per_level[-1]))
    return math.sqrt(max(float(total), 0.0))


def space_time_pairing(u, p, grid: Grid) -> float:
    """Discrete pairing ``sum_k dt dx sum_i u_i^k p_i^{k-1}`` dual to the solvers."""
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    return float(grid.dt * grid.dx * np.sum(u[1:, 1:-1] * p[:-1, 1:-1]))


# ---------------------------------------------------------------------------
# quasilinear stepping


def _flux_parts(y, spec, dx):
    d = np.diff(y)
    mid = 0.5 * (y[1:] + y[:-1])
    am = spec.a(mid)
    apm = spec.a_prime(mid)
    flux = am * d
    right = 0.5 * apm * d + am
    left = 0.5 * apm * d - am
    return flux, left, right


def flux_divergence(y, spec, dx=None) -> np.ndarray:
    """Conservative ``(a(y) y_x)_x`` at interior nodes."""
    y = np.asarray(y, dtype=float)
    if dx is None:
        dx = 1.0 / (y.size - 1)
    flux, _, _ = _flux_parts(y, spec, dx)
    return (flux[1:] - flux[:-1]) / dx ** 2


def _newton_step(y_prev, dt, rhs, spec, theta=1.0, reaction=None,
                 tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    """Solve ``y - theta*dt*D(y) - dt*R(y) = rhs`` at interior nodes."""
    n = y_prev.size - 2
    dx = 1.0 / (n + 1)
    r = theta * dt / dx ** 2
    y = np.array(y_prev, dtype=float)
    y[0] = y[-1] = 0.0

    def residual(yy):
        flux, left, right = _flux_parts(yy, spec, dx)
        res = yy[1:-1] - r * (flux[1:] - flux[:-1]) - rhs
        if reaction is not None:
            coef, th, g, _ = reaction
            res = res - dt * coef[1:-1] * (g(yy[1:-1]) - th[1:-1])
        return res, left, right

    res, left, right = residual(y)
    nrm = float(np.max(np.abs(res)))
    for it in range(max_iter + 1):
        scale = max(float(np.max(np.abs(rhs))), float(np.max(np.abs(y))))
        if nrm == 0.0 or (it > 0 and nrm <= tol * scale):
            return y, it
        if it == max_iter:
            break
        ab = np.zeros((3, n))
        ab[0, 1:] = -r * right[1:n]
        ab[1, :] = 1.0 - r * (left[1:n + 1] - right[0:n])
        ab[2, :-1] = r * left[1:n]
        if reaction is not None:
            coef, _, _, gp = reaction
            ab[1, :] -= dt * coef[1:-1] * gp(y[1:-1])
        delta = solve_banded((1, 1), ab, -res, check_finite=False)
        step = 1.0
        while True:
            trial = y.copy()
            trial[1:-1] += step * delta
            res_t, left_t, right_t = residual(trial)
            nrm_t = float(np.max(np.abs(res_t)))
            if (nrm_t <= nrm or step < 1e-3) and np.isfinite(nrm_t):
                break
            step *= 0.5
        y, res, left, right, nrm = trial, res_t, left_t, right_t, nrm_t
    raise SolverDiverged(
        f"Newton did not converge in {max_iter} iterations (residual {nrm:.3e})", residual=nrm
    )


def step_implicit(y_prev, dt, f_slice, spec: DiffusionSpec, reaction=None) -> np.ndarray:
    """One backward-Euler step of the quasilinear equation.

    Parameters
    ----------
    y_prev : array
        Profile at the old level, boundary entries zero.
    dt : float
        Time step.
    f_slice : array or None
        Source at the new level.
    spec : DiffusionSpec
    reaction : ReactionTerm slice, optional
        Tuple ``(coef, theta, g, g_prime)`` of new-level profiles adding the
        implicit source ``coef * (g(y) - theta)``.

    Returns
    -------
    array
        Profile at the new level with boundary entries forced to zero.
    """
    y_prev = np.asarray(y_prev, dtype=float)
    rhs = y_prev[1:-1].copy()
    if f_slice is not None:
        f_slice = np.asarray(f_slice, dtype=float)
        if f_slice.shape != y_prev.shape:
            raise ValueError("f_slice and y_prev lengths differ")
        rhs += dt * f_slice[1:-1]
    y, _ = _newton_step(y_prev, dt, rhs, spec, reaction=reaction)
    return y


def _source_values(f, grid):
    if f is None:
        return None
    vals = f.values if isinstance(f, SourceField) else np.broadcast_to(np.asarray(f, dtype=float), grid.shape)
    return vals


def solve_forward(y0, f, grid: Grid, spec: DiffusionSpec, scheme="backward-euler",
                  reaction: ReactionTerm | None = None) -> Trajectory:
    """Integrate the quasilinear equation from ``y0`` over ``grid``.

    ``scheme`` is ``"backward-euler"`` (default) or ``"crank-nicolson"``.
    ``reaction`` adds the implicit multiplicative source used by the
    bilinear-control resimulation (backward Euler only).
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (grid.n_x + 2,):
        raise ValueError(f"y0 has length {y0.size}, expected {grid.n_x + 2}")
    if y0[0] != 0.0 or y0[-1] != 0.0:
        raise ValueError("y0 boundary entries must be zero")
    if not np.all(np.isfinite(y0)):
        raise ValueError("y0 must be finite")
    if scheme not in ("backward-euler", "crank-nicolson"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if reaction is not None and scheme != "backward-euler":
        raise ValueError("reaction terms are only supported with backward Euler")
    fv = _source_values(f, grid)
    dt = grid.dt
    out = np.zeros(grid.shape)
    out[0] = y0
    y = y0
    for k in range(1, grid.n_t + 1):
        rhs = y[1:-1].copy()
        if scheme == "backward-euler":
            if fv is not None:
                rhs += dt * fv[k, 1:-1]
            theta = 1.0
        else:
            rhs += 0.5 * dt * flux_divergence(y, spec, grid.dx)
            if fv is not None:
                rhs += 0.5 * dt * (fv[k, 1:-1] + fv[k - 1, 1:-1])
            theta = 0.5
        rslice = None
        if reaction is not None:
            rslice = (reaction.coef[k], reaction.theta[k], reaction.g, reaction.g_prime)
        try:
            y, _ = _newton_step(y, dt, rhs, spec, theta=theta, reaction=rslice)
        except SolverDiverged as exc:
            raise SolverDiverged(f"{exc} at time index {k}", residual=exc.residual, time_index=k) from exc
        out[k] = y
    return Trajectory(grid, out)


def solve_forward_kirchhoff(y0, f, grid: Grid, spec: DiffusionSpec) -> Trajectory:
    """Integrate the transformed equation ``B(z)_t - z_xx = f`` with ``z = A(y)``.

    The primitive table is sized to twice the maximum-modulus bound of the
    data; if the iterate still leaves it the table is doubled once before
    :class:`InverseLookupFailure` propagates.
    """
    y0 = np.asarray(y0, dtype=float)
    fv = _source_values(f, grid)
    f_inf = float(np.max(np.abs(fv))) if fv is not None else 0.0
    need = 2.0 * (float(np.max(np.abs(y0))) + 6.0 / spec.rho * f_inf)
    if need > spec.primitive_bound:
        spec = spec.with_primitive_range(need)
    try:
        return _kirchhoff(y0, fv, grid, spec)
    except InverseLookupFailure:
        return _kirchhoff(y0, fv, grid, spec.with_primitive_range(2.0 * spec.primitive_bound))


def _kirchhoff(y0, fv, grid, spec):
    n = grid.n_x
    dt = grid.dt
    r = dt / grid.dx ** 2
    out = np.zeros(grid.shape)
    out[0] = y0
    z = spec.A(y0)
    z[0] = z[-1] = 0.0
    for k in range(1, grid.n_t + 1):
        rhs = out[k - 1, 1:-1].copy()
        if fv is not None:
            rhs += dt * fv[k, 1:-1]

        def residual(zz):
            lap = zz[2:] - 2 * zz[1:-1] + zz[:-2]
            yy = spec.B(zz[1:-1])
            return yy - r * lap - rhs, yy

        res, yy = residual(z)
        nrm = float(np.max(np.abs(res)))
        for it in range(NEWTON_MAX_ITER + 1):
            scale = max(float(np.max(np.abs(rhs))), float(np.max(np.abs(yy))))
            if nrm == 0.0 or (it > 0 and nrm <= max(NEWTON_TOL * scale, LOOKUP_RESOLUTION)):
                break
            if it == NEWTON_MAX_ITER:
                raise SolverDiverged(
                    f"Kirchhoff Newton did not converge at time index {k} (residual {nrm:.3e})",
                    residual=nrm, time_index=k,
                )
            ab = np.zeros((3, n))
            ab[0, 1:] = -r
            ab[1, :] = 1.0 / spec.a(yy) + 2 * r
            ab[2, :-1] = -r
            delta = solve_banded((1, 1), ab, -res, check_finite=False)
            step = 1.0
            while True:
                trial = z.copy()
                trial[1:-1] += step * delta
                res_t, yy_t = residual(trial)
                nrm_t = float(np.max(np.abs(res_t)))
                if nrm_t <= nrm or step < 1e-3:
                    break
                step *= 0.5
            z, res, yy, nrm = trial, res_t, yy_t, nrm_t
        out[k, 1:-1] = yy
    return Trajectory(grid, out)


# ---------------------------------------------------------------------------
# frozen-coefficient linear solvers


def midpoint_coefficient(b_values) -> np.ndarray:
    """Average nodal coefficients onto cell midpoints, shape (n_t+1, n_x+1)."""
    b = np.asarray(b_values, dtype=float)
    return 0.5 * (b[..., 1:] + b[..., :-1])


class TridiagonalSequence:
    """Factored ``I - dt L_k`` for every time level, from midpoint coefficients.

    ``L_k`` is the symmetric conservative stencil built from the midpoint
    coefficients of level ``k``; level 0 is never used.
    """

    def __init__(self, bm, grid: Grid):
        bm = np.asarray(bm, dtype=float)
        if bm.shape != (grid.n_t + 1, grid.n_x + 1):
            raise ValueError(f"midpoint coefficient has shape {bm.shape}")
        if np.min(bm[1:]) <= 0:
            raise NonellipticCoefficient(f"min coefficient {np.min(bm[1:]):.6g} <= 0")
        self.grid = grid
        r = grid.dt / grid.dx ** 2
        d = 1.0 + r * (bm[:, :-1] + bm[:, 1:])
        e = -r * bm[:, 1:-1]
        self._d = [None]
        self._e = [None]
        for k in range(1, grid.n_t + 1):
            dk, ek, info = dpttrf(d[k], e[k])
            if info != 0:
                raise NonellipticCoefficient(f"factorization failed at level {k} (info={info})")
            self._d.append(dk)
            self._e.append(ek)

    def solve(self, k, rhs):
        x, info = dpttrs(self._d[k], self._e[k], rhs)
        return x

    def forward(self, y0_int, src_int=None):
        """Interior-node forward sweep; ``src_int`` has shape (n_t+1, n_x[, m])."""
        dt = self.grid.dt
        out = np.empty((self.grid.n_t + 1,) + np.shape(y0_int))
        out[0] = y0_int
        y = out[0]
        for k in range(1, self.grid.n_t + 1):
            rhs = y if src_int is None else y + dt * src_int[k]
            y = self.solve(k, rhs)
            out[k] = y
        return out

    def adjoint(self, pT_int, h_int=None):
        """Interior-node backward sweep ``A_k p^{k-1} = p^k - dt h^{k-1}``."""
        dt = self.grid.dt
        n_t = self.grid.n_t
        out = np.empty((n_t + 1,) + np.shape(pT_int))
        out[n_t] = pT_int
        p = out[n_t]
        for k in range(n_t, 0, -1):
            rhs = p if h_int is None else p - dt * h_int[k - 1]
            p = self.solve(k, rhs)
            out[k - 1] = p
        return out


def _coefficient_values(b, grid):
    vals = b.values if isinstance(b, SourceField) else np.broadcast_to(np.asarray(b, dtype=float), grid.shape)
    if np.min(vals) <= 0:
        raise NonellipticCoefficient(f"min b = {np.min(vals):.6g} <= 0")
    return vals


def _embed(interior, grid):
    out = np.zeros(grid.shape)
    out[:, 1:-1] = interior
    return out


def solve_linear_forward(b, y0, f, grid: Grid) -> Trajectory:
    """Frozen-coefficient forward problem ``y_t - (b y_x)_x = f``."""
    ops = TridiagonalSequence(midpoint_coefficient(_coefficient_values(b, grid)), grid)
    y0 = np.asarray(y0, dtype=float)
    fv = _source_values(f, grid)
    src = None if fv is None else fv[:, 1:-1]
    return Trajectory(grid, _embed(ops.forward(y0[1:-1], src), grid))


def solve_adjoint(b, p_T, h, grid: Grid) -> Trajectory:
    """Backward problem ``p_t + (b p_x)_x = h`` with ``p(T) = p_T``.

    Raises
    ------
    NonellipticCoefficient
        If ``b`` has a non-positive entry.
    """
    ops = TridiagonalSequence(midpoint_coefficient(_coefficient_values(b, grid)), grid)
    p_T = np.asarray(p_T, dtype=float)
    if p_T[0] != 0.0 or p_T[-1] != 0.0:
        raise ValueError("p_T boundary entries must be zero")
    hv = _source_values(h, grid)
    src = None if hv is None else hv[:, 1:-1]
    return Trajectory(grid, _embed(ops.adjoint(p_T[1:-1], src), grid))
