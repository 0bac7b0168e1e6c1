"""Auxiliary function psi, Carleman weight fields and the observability probe.

The weights

    beta(x, t) = (exp(lambda psi) - exp(2 lambda ||psi||)) / (t (T - t)),
    phi(x, t)  = exp(lambda psi) / (t (T - t))

are singular at t = 0 and t = T.  For the control weight exp(2 s beta) phi^3
the values underflow double precision for any practical (s, T), so the fields
are kept in the log domain.  ``control_weight`` is the weight divided by its
grid maximum; quantities that need absolute scale go through ``log_weight``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import logsumexp

from .errors import ConstructionFailed, ParameterRejected
from .pde_core import Grid, SourceField, TridiagonalSequence, midpoint_coefficient

MAX_PSI_RETRIES = 5


@dataclass(frozen=True)
class PsiFunction:
    """psi = q o m with q(x) = x (1 - x) and m a monotone C^2 reparameterization."""

    omega0: tuple
    center: float
    m: CubicSpline = field(repr=False, compare=False)
    x: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    d1: np.ndarray = field(repr=False)
    d2: np.ndarray = field(repr=False)
    norm: float = 0.25
    min_abs_grad_outside: float = 0.0

    def evaluate(self, x):
        """psi, psi' and psi'' at arbitrary points of [0, 1]."""
        x = np.asarray(x, dtype=float)
        m, m1, m2 = self.m(x), self.m(x, 1), self.m(x, 2)
        return m * (1 - m), (1 - 2 * m) * m1, -2 * m1 ** 2 + (1 - 2 * m) * m2


def _reparameterization(c, steepness):
    # steepen the end tangent on the short side of c, where the spline overshoots
    d0 = 0.5 / c * (steepness if c < 0.5 else 1.0)
    d1 = 0.5 / (1 - c) * (steepness if c > 0.5 else 1.0)
    return CubicSpline([0.0, c, 1.0], [0.0, 0.5, 1.0], bc_type=((1, d0), (1, d1)))


def construct_psi(omega0, grid: Grid) -> PsiFunction:
    """Build psi > 0 on (0, 1), vanishing at 0 and 1, with psi' != 0 off omega0.

    The single critical point of psi sits at the midpoint of ``omega0``.  The
    construction is checked on a grid eight times finer than ``grid``; a
    failed check is retried with a steeper end tangent on the short side.
    """
    lo, hi = float(omega0[0]), float(omega0[1])
    if not (0.0 < lo < hi < 1.0):
        raise ValueError(f"closure of omega0 = ({lo}, {hi}) must lie inside (0, 1)")
    c = 0.5 * (lo + hi)
    fine = np.linspace(0.0, 1.0, 8 * (grid.n_x + 1) + 1)
    outside = (fine <= lo) | (fine >= hi)
    steepness = 1.0
    for _ in range(MAX_PSI_RETRIES + 1):
        m = _reparameterization(c, steepness)
        mv, m1 = m(fine), m(fine, 1)
        psi = mv * (1 - mv)
        grad = (1 - 2 * mv) * m1
        ok = (
            np.all(m1 > 0)
            and np.all(psi[1:-1] > 0)
            and abs(psi[0]) < 1e-15
            and abs(psi[-1]) < 1e-15
            and np.min(np.abs(grad[outside])) > 0
        )
        if ok:
            x = grid.x
            mx, mx1, mx2 = m(x), m(x, 1), m(x, 2)
            values = mx * (1 - mx)
            values[0] = values[-1] = 0.0
            return PsiFunction(
                omega0=(lo, hi),
                center=c,
                m=m,
                x=x,
                values=values,
                d1=(1 - 2 * mx) * mx1,
                d2=-2 * mx1 ** 2 + (1 - 2 * mx) * mx2,
                norm=0.25,  # m(c) = 1/2 is the maximum of q o m
                min_abs_grad_outside=float(np.min(np.abs(grad[outside]))),
            )
        steepness += 0.5
    raise ConstructionFailed(f"no admissible psi for omega0 = ({lo}, {hi})")


def default_lambda(psi: PsiFunction) -> float:
    """Smallest admissible sharpness, 2 / ||psi||."""
    return 2.0 / psi.norm


@dataclass(frozen=True)
class CarlemanWeights:
    """Tabulated beta, phi and the log control weight on a grid.

    Rows 0 and n_t (t = 0, T) carry ``beta = -inf`` and ``phi = +inf``; the
    control weight is zero there.
    """

    psi: PsiFunction
    lam: float
    s: float
    grid: Grid
    beta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    log_weight: np.ndarray = field(repr=False)
    log_scale: float = 0.0

    @property
    def delta0(self) -> float:
        return self.s / 4.0

    @property
    def control_weight(self) -> np.ndarray:
        """exp(2 s beta) phi^3 divided by its grid maximum (peak value 1)."""
        return np.exp(self.log_weight - self.log_scale)

    def restricted(self, k0: int) -> "CarlemanWeights":
        """Weights rebuilt on the sub-window starting at time index ``k0``."""
        g = self.grid
        sub = Grid(g.n_x, g.n_t - k0, g.T - k0 * g.dt)
        return build_weights(self.psi, self.lam, self.s, sub)


def build_weights(psi: PsiFunction, lam, s, grid: Grid) -> CarlemanWeights:
    """Tabulate the Carleman weights.

    Raises
    ------
    ParameterRejected
        If ``lam * ||psi|| < 2`` or ``s <= 0``.
    """
    lam = float(lam)
    s = float(s)
    if lam * psi.norm < 2.0 - 1e-12:
        raise ParameterRejected(f"lambda * ||psi|| = {lam * psi.norm:.6g} < 2")
    if not s > 0:
        raise ParameterRejected(f"s must be positive, got {s}")
    if grid.n_t < 4:
        raise ValueError("Carleman weights need n_t >= 4")
    if psi.x.size != grid.n_x + 2:
        psi = construct_psi(psi.omega0, grid)
    t = grid.t
    tt = t * (grid.T - t)
    lam_psi = lam * psi.values
    numer = np.exp(lam_psi) - math.exp(2 * lam * psi.norm)
    beta = np.full(grid.shape, -np.inf)
    phi = np.full(grid.shape, np.inf)
    log_w = np.full(grid.shape, -np.inf)
    inner = slice(1, grid.n_t)
    beta[inner] = numer[None, :] / tt[inner, None]
    phi[inner] = np.exp(lam_psi)[None, :] / tt[inner, None]
    log_w[inner] = 2 * s * beta[inner] + 3 * (lam_psi[None, :] - np.log(tt[inner, None]))
    for arr in (beta, phi, log_w):
        arr.setflags(write=False)
    return CarlemanWeights(psi, lam, s, grid, beta, phi, log_w, float(np.max(log_w)))


def _quad_log_weights(grid: Grid, mask):
    """log of trapezoid weights on interior times x nodes in ``mask``."""
    lq = np.full(grid.shape, -np.inf)
    lq[1:-1, mask] = math.log(grid.dt * grid.dx)
    return lq


def log_weighted_control_norm(u, w: CarlemanWeights) -> float:
    """log of int int exp(-2 s beta) phi^{-3} u^2 (``-inf`` for u = 0)."""
    values = u.values if hasattr(u, "values") else np.asarray(u, dtype=float)
    grid = w.grid
    inner = np.zeros(grid.shape, dtype=bool)
    inner[1:-1, 1:-1] = True
    nz = inner & (values != 0)
    if not np.any(nz):
        return -math.inf
    terms = 2 * np.log(np.abs(values[nz])) - w.log_weight[nz] + math.log(grid.dt * grid.dx)
    return float(logsumexp(terms))


def weighted_control_norm(u, w: CarlemanWeights) -> float:
    """int int exp(-2 s beta) phi^{-3} u^2 over interior time nodes.

    Endpoint time levels contribute nothing.  The result may overflow to
    ``inf``; :func:`log_weighted_control_norm` gives the logarithm.
    """
    lv = log_weighted_control_norm(u, w)
    if lv == -math.inf:
        return 0.0
    return math.exp(lv) if lv < 709.0 else math.inf


def random_sine_polynomials(x, n_samples, rng, n_modes=6):
    """Random sine polynomials on ``x``, normalized to unit trapezoid L^2 norm.

    Returns shape (n_samples, x.size); coefficients are drawn from ``rng`` and
    do not depend on ``x``, so the same seed gives the same functions on
    different grids.
    """
    coef = rng.standard_normal((n_samples, n_modes))
    coef[np.all(coef == 0, axis=1), 0] = 1.0
    k = np.arange(1, n_modes + 1) * math.pi
    samples = coef @ np.sin(np.outer(k, x))
    samples[:, 0] = samples[:, -1] = 0.0
    # exact L^2 norm of the continuous polynomial is |coef| / sqrt(2)
    samples /= (np.linalg.norm(coef, axis=1) / math.sqrt(2.0))[:, None]
    return samples


@dataclass(frozen=True)
class ProbeResult:
    """Observability ratios int p(0)^2 / int int_omega exp(2 s beta) phi^3 p^2."""

    log_ratios: np.ndarray = field(repr=False)
    bx_inf: float = 0.0
    sqrt_t_bt_inf: float = 0.0

    @property
    def log10_max(self) -> float:
        return float(np.max(self.log_ratios) / math.log(10))

    @property
    def log10_median(self) -> float:
        return float(np.median(self.log_ratios) / math.log(10))

    @property
    def max_ratio(self) -> float:
        return math.exp(min(float(np.max(self.log_ratios)), 709.0))

    @property
    def median_ratio(self) -> float:
        return math.exp(min(float(np.median(self.log_ratios)), 709.0))

    @property
    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.log_ratios)))

    def as_dict(self) -> dict:
        return {
            "log10_max_ratio": self.log10_max,
            "log10_median_ratio": self.log10_median,
            "all_finite": self.all_finite,
            "n_samples": int(self.log_ratios.size),
            "bx_inf": self.bx_inf,
            "sqrt_t_bt_inf": self.sqrt_t_bt_inf,
        }


def observability_probe(b, w: CarlemanWeights, omega, n_samples=100, grid=None, seed=0,
                        samples=None) -> ProbeResult:
    """Estimate the observability constant on random terminal data.

    Each sample solves the homogeneous adjoint problem with coefficient ``b``
    from a random normalized sine polynomial at t = T.  Ratios are kept as
    logarithms because the weight is far below the double range.  ``samples``
    overrides the random draw (shape (n, n_x + 2)).
    """
    grid = grid or w.grid
    bv = b.values if isinstance(b, SourceField) else np.broadcast_to(np.asarray(b, dtype=float), grid.shape)
    if samples is None:
        samples = random_sine_polynomials(grid.x, n_samples, np.random.default_rng(seed))
    samples = np.asarray(samples, dtype=float)
    ops = TridiagonalSequence(midpoint_coefficient(bv), grid)
    p = ops.adjoint(samples[:, 1:-1].T.copy())  # (n_t+1, n_x, n)
    num = grid.dx * np.sum(p[0] ** 2, axis=0)
    mask = grid.mask(omega)[1:-1]
    lw = w.log_weight[1:-1, 1:-1][:, mask]  # interior times x omega nodes
    pw = p[1:-1][:, mask, :]
    with np.errstate(divide="ignore"):
        terms = lw[:, :, None] + np.log(pw ** 2)
    log_den = logsumexp(terms.reshape(-1, terms.shape[-1]), axis=0) + math.log(grid.dt * grid.dx)
    log_r = np.log(num) - log_den
    bx = np.diff(bv, axis=1) / grid.dx
    bt = np.diff(bv, axis=0) / grid.dt
    sqrt_t = np.sqrt(grid.t[1:])[:, None]
    return ProbeResult(
        log_ratios=log_r,
        bx_inf=float(np.max(np.abs(bx))),
        sqrt_t_bt_inf=float(np.max(np.abs(sqrt_t * bt))),
    )
