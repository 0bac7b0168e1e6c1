import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qparctl.errors import GateNeverActive, HorizonTooShort
from qparctl.estimates import (
    H1_RATE_FACTOR,
    GNConstant,
    gn_sampler,
    h1_decay_report,
    linf_decay_report,
    max_modulus_bound,
    regularity_ratio,
    smallness_times,
    t1_theory,
)
from qparctl.pde_core import Grid, SourceField, Trajectory, build_diffusion_spec, solve_forward

from conftest import sine_profile

# (2 pi^2 - 1) / (2 (pi^2 + 1)), 20 digits from mpmath
RATE_CONSTANT = 0.86200049747443715
# (1 + pi^4 + pi^2) exp(-0.2 pi^2) / (1 + pi^2), 20 digits from mpmath
EIGEN_REGULARITY_RATIO = 1.3837777092058036


def test_rate_constant():
    assert H1_RATE_FACTOR == pytest.approx(RATE_CONSTANT, abs=1e-15)
    assert round(H1_RATE_FACTOR, 4) == 0.8620


class TestLinfDecay:
    def test_zero_trajectory(self, spec_sine):
        g = Grid(16, 16, 1.0)
        rep = linf_decay_report(Trajectory(g, np.zeros(g.shape)), spec_sine)
        assert np.all(rep.M_profile == 0)
        assert rep.monotone_ok and rep.bound_ok

    def test_eigenmode_bound(self, spec_one):
        g = Grid(64, 256, 1.0)
        rep = linf_decay_report(solve_forward(sine_profile(g), None, g, spec_one), spec_one)
        assert rep.monotone_ok and rep.bound_ok
        # closed form at t = 0.25
        assert math.exp(-math.pi ** 2 * 0.25) == pytest.approx(0.0848, abs=5e-4)
        assert rep.M_profile[64] == pytest.approx(math.exp(-math.pi ** 2 * 0.25), rel=0.05)
        assert rep.linf_bound_profile[64] == pytest.approx(
            math.sqrt(0.5) / math.sqrt(2 * spec_one.rho * 0.25), rel=1e-9)

    def test_sine_coefficient_mode_two(self, spec_sine):
        g = Grid(64, 256, 1.0)
        rep = linf_decay_report(solve_forward(sine_profile(g, 0.8, 2), None, g, spec_sine), spec_sine)
        assert rep.monotone_ok and rep.bound_ok

    def test_pure(self, spec_sine):
        g = Grid(16, 32, 0.5)
        traj = solve_forward(sine_profile(g, 0.3), None, g, spec_sine)
        a = linf_decay_report(traj, spec_sine).as_dict()
        b = linf_decay_report(traj, spec_sine).as_dict()
        assert a == b


class TestH1Decay:
    def test_eigenmode_rate(self, spec_one):
        g = Grid(64, 256, 1.0)
        rep = h1_decay_report(solve_forward(sine_profile(g, 0.1), None, g, spec_one), spec_one)
        assert rep.gate_index == 0
        assert rep.h1_rate_estimate == pytest.approx(math.pi ** 2, rel=0.03)
        assert rep.rate_ok

    def test_zero_is_degenerate(self, spec_sine):
        g = Grid(8, 8, 1.0)
        rep = h1_decay_report(Trajectory(g, np.zeros(g.shape)), spec_sine)
        assert rep.degenerate and rep.h1_rate_estimate is None and rep.rate_ok

    def test_gate_never_active(self, spec_sine):
        g = Grid(16, 4, 1e-3)
        with pytest.raises(GateNeverActive):
            h1_decay_report(solve_forward(sine_profile(g, 2.0), None, g, spec_sine), spec_sine)

    def test_merge(self, spec_one):
        g = Grid(32, 64, 0.5)
        traj = solve_forward(sine_profile(g, 0.1), None, g, spec_one)
        rep = linf_decay_report(traj, spec_one).merge(h1_decay_report(traj, spec_one))
        assert rep.monotone_ok and rep.bound_ok and rep.rate_ok
        assert rep.as_dict()["rate_ok"] is True


class TestMaxModulus:
    def test_formula(self):
        spec = SimpleNamespace(rho=1.0)
        y0 = np.array([0.0, -0.3, 0.2, 0.0])
        f = np.full((3, 4), 0.1)
        assert max_modulus_bound(y0, f, spec) == pytest.approx(0.9, abs=1e-15)
        assert max_modulus_bound(y0, None, spec) == 0.3

    def test_accepts_source_field(self, spec_one):
        g = Grid(3, 2, 1.0)
        assert max_modulus_bound(np.zeros(5), SourceField(g, -0.5), spec_one) == pytest.approx(3.0 / spec_one.rho)

    def test_random_forced_runs(self, spec_sine):
        g = Grid(32, 64, 0.5)
        rng = np.random.default_rng(7)
        for _ in range(50):
            y0 = np.concatenate([[0.0], rng.uniform(-1, 1, g.n_x), [0.0]])
            f = rng.uniform(-1, 1) * np.outer(np.cos(3 * g.t), np.sin(math.pi * g.x) + 0.5)
            traj = solve_forward(y0, f, g, spec_sine)
            slack = 10 * (g.dx ** 2 + g.dt) * max(1.0, float(np.max(np.abs(y0))))
            assert np.max(np.abs(traj.values)) <= max_modulus_bound(y0, f, spec_sine) + slack


class TestRegularity:
    def test_zero_is_degenerate(self, spec_one):
        g = Grid(8, 10, 1.0)
        r = regularity_ratio(Trajectory(g, np.zeros(g.shape)), spec_one, 0.1)
        assert r.degenerate and math.isnan(r.ratio)

    def test_eigenmode(self, spec_one):
        g = Grid(128, 512, 0.2)
        traj = solve_forward(sine_profile(g, 0.05), None, g, spec_one)
        r = regularity_ratio(traj, spec_one, 0.1)
        assert not r.degenerate
        assert r.ratio == pytest.approx(EIGEN_REGULARITY_RATIO, rel=10 * (g.dx ** 2 + g.dt))

    def test_off_grid_time(self, spec_one):
        g = Grid(8, 10, 1.0)
        with pytest.raises(ValueError):
            regularity_ratio(Trajectory(g, np.zeros(g.shape)), spec_one, 0.15)

    def test_bounded_over_random_data(self, spec_sine):
        g = Grid(64, 128, 0.2)
        rng = np.random.default_rng(11)
        ratios = []
        for _ in range(20):
            # leading mode kept dominant; random amplitude and higher-mode content
            c = np.concatenate([[rng.uniform(0.5, 1.0)], rng.uniform(-0.5, 0.5, 3)]) / np.arange(1, 5) ** 2
            y0 = rng.uniform(0.005, 0.05) * sum(ck * np.sin((k + 1) * math.pi * g.x) for k, ck in enumerate(c))
            y0[[0, -1]] = 0.0
            r = regularity_ratio(solve_forward(y0, None, g, spec_sine), spec_sine, 0.1)
            assert math.isfinite(r.ratio)
            ratios.append(r.ratio)
        assert max(ratios) / min(ratios) <= 10


class TestSmallnessTimes:
    def test_formula(self):
        assert t1_theory(SimpleNamespace(M=0.5, rho=1.0), 1.0) == 8.0
        assert t1_theory(SimpleNamespace(M=0.5, rho=1.0), GNConstant(1.0)) == 8.0

    def test_constant_coefficient(self, spec_one):
        g = Grid(32, 64, 1.0)
        st_ = smallness_times(solve_forward(sine_profile(g, 0.01), None, g, spec_one), spec_one)
        assert st_.t1_theory == 0.0 and st_.t1_observed == 0.0
        assert st_.t2_observed == 0.0

    def test_sine_ordering(self, spec_sine):
        g = Grid(64, 256, 1.0)
        st_ = smallness_times(solve_forward(sine_profile(g, 0.8), None, g, spec_sine), spec_sine, eta=0.05)
        assert math.isfinite(st_.t2_observed)
        assert st_.t1_observed <= st_.t1_theory
        assert st_.t1_observed <= st_.t2_observed <= g.T

    def test_horizon_too_short(self, spec_sine):
        g = Grid(16, 4, 1e-3)
        with pytest.raises(HorizonTooShort):
            smallness_times(solve_forward(sine_profile(g, 0.8), None, g, spec_sine), spec_sine)


class TestGNSampler:
    def test_default_constant_holds(self):
        C = gn_sampler(2.0, n_samples=1000, seed=0)
        assert C.C0 == 2.0
        assert isinstance(C.max_observed_ratio, float)
        assert 0 < C.max_observed_ratio < 2.0
        assert C.n_samples == 1000

    def test_raises_small_constant(self):
        C = gn_sampler(0.1, n_samples=50, seed=1)
        assert C.C0 == pytest.approx(1.1 * C.max_observed_ratio)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            GNConstant(0.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), amp=st.floats(0.01, 2.0), alpha=st.floats(0.05, 0.6))
def test_free_decay_properties(seed, amp, alpha):
    spec = build_diffusion_spec(lambda s: 1 + alpha * np.arctan(s), lambda s: alpha / (1 + s * s))
    g = Grid(24, 48, 0.5)
    rng = np.random.default_rng(seed)
    y0 = np.concatenate([[0.0], amp * rng.uniform(-1, 1, g.n_x), [0.0]])
    rep = linf_decay_report(solve_forward(y0, None, g, spec), spec)
    assert rep.monotone_ok
    assert rep.bound_ok
