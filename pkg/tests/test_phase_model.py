import csv

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from scipy import integrate

from iongate.errors import BoundaryViolation, CriticalTimeProximity
from iongate.force_design import CONFIGS, design_different_mass, design_equal_mass
from iongate.normal_modes import IonPair
from iongate.phase_model import (
    action_integral,
    config_phase,
    delta_phi,
    gate_phase_double_integral,
    gate_phase_single_integral,
    lewis_riesenfeld_phase,
    newton_oracle,
    offset_sensitivity,
    phase_decomposition,
    quadrature_path,
    rotating_area,
    solve_forced_oscillator,
    wrap_phase,
)

US = 1e-6


def quad(fn, a, b):
    # plain adaptive quadrature as an independent reference
    val, _ = integrate.quad(lambda s: float(fn(np.float64(s))), a, b, epsabs=1e-13, epsrel=1e-13, limit=500)
    return val


@pytest.fixture(scope="module")
def eq_design(be_pair):
    return design_equal_mass(be_pair, 0.5 * US)[0]


@pytest.fixture(scope="module")
def bm_design(be_mg):
    return design_different_mass(be_mg, 0.6 * US)[0]


def random_design(mu, t_f_us):
    ions = IonPair.from_amu(9, 9 * mu, 2 * np.pi * 2e6)
    if mu == 1:
        return design_equal_mass(ions, t_f_us * US)[0]
    try:
        return design_different_mass(ions, t_f_us * US)[0]
    except CriticalTimeProximity:
        assume(False)


designs = st.builds(random_design,
                    st.one_of(st.just(1.0), st.floats(1.2, 20.0)),
                    st.floats(0.1, 2.0))


class TestForcedOscillator:
    def test_free_orbit(self):
        z0 = 0.3 - 0.7j
        traj = solve_forced_oscillator(lambda s: np.zeros_like(s), 1.7, 5.0, z0)
        _, _, z = traj.evaluate(traj.t)
        assert np.allclose(z, np.exp(-1.7j * traj.t) * z0, rtol=0, atol=1e-15)

    def test_designed_force_returns_to_rest(self, eq_design):
        d = eq_design
        f = lambda s: d.mode_force("ud", "+", s)
        W = d.omega("+")
        traj = solve_forced_oscillator(f, W, d.tau)
        assert traj.endpoint_residual() < 1e-8
        t, y, v = newton_oracle(f, W, d.tau, t_eval=traj.t)
        peak = np.max(np.abs(y))
        assert np.max(np.abs(traj.y - y)) < 1e-9 * peak
        assert np.max(np.abs(traj.ydot - v)) < 1e-9 * peak * W
        assert np.max(np.abs(traj.y - d.alpha("ud", "+", traj.t))) < 1e-10 * peak

    def test_nonzero_start_closes_on_free_orbit(self, bm_design):
        d = bm_design
        f = lambda s: d.mode_force("ud", "-", s)
        W = d.omega("-")
        z0 = 0.4 + 0.2j
        traj = solve_forced_oscillator(f, W, d.tau, z0)
        _, _, zf = traj.evaluate(d.tau)
        assert abs(zf[0] - np.exp(-1j * W * d.tau) * z0) < 1e-8 * max(abs(z0), 1.0)
        t, y, _ = newton_oracle(f, W, d.tau, np.sqrt(2 / W) * z0.real, np.sqrt(2 * W) * z0.imag,
                                t_eval=traj.t)
        assert np.max(np.abs(traj.y - y)) < 1e-9 * np.max(np.abs(y))

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            solve_forced_oscillator(np.sin, 0.0, 1.0)
        with pytest.raises(ValueError):
            solve_forced_oscillator(np.sin, 1.0, 0.0)


class TestLewisRiesenfeld:
    def test_undriven(self):
        assert lewis_riesenfeld_phase(3, 2.0, None, t_f=1.5) == -(3.5) * 3.0

    def test_level_spacing_is_rigid(self, eq_design):
        d = eq_design
        traj = solve_forced_oscillator(lambda s: d.mode_force("ud", "+", s), d.omega("+"), d.tau)
        th = [lewis_riesenfeld_phase(n, d.omega("+"), traj) for n in range(4)]
        assert np.allclose(np.diff(th), -d.omega("+") * d.tau, rtol=1e-14, atol=0)

    @pytest.mark.parametrize("config,mode", [("ud", "+"), ("uu", "-")])
    def test_action_equals_force_work(self, eq_design, config, mode):
        d = eq_design
        f = lambda s: d.mode_force(config, mode, s)
        traj = solve_forced_oscillator(f, d.omega(mode), d.tau)
        work = 0.5 * quad(lambda s: d.mode_force(config, mode, s) * d.alpha(config, mode, s), 0, d.tau)
        assert -action_integral(traj) == pytest.approx(work, abs=1e-9)

    def test_needs_duration_without_trajectory(self):
        with pytest.raises(ValueError):
            lewis_riesenfeld_phase(0, 1.0, None)


class TestSingleIntegral:
    def test_zero_force(self):
        zero = lambda s: np.zeros_like(np.asarray(s, dtype=float))
        assert gate_phase_single_integral([zero, zero], [zero, zero], 2.0) == 0.0

    def test_equal_mass_closed_form(self, eq_design):
        d = eq_design
        phi = {c: config_phase(d, c) for c in ("ud", "uu")}
        assert 2 * (phi["ud"] - phi["uu"]) == pytest.approx(d.gamma, abs=1e-9)
        assert 2 * (phi["ud"] - phi["uu"]) == pytest.approx(d.analytic_delta_phi(), abs=1e-9)

    def test_different_mass_closed_form(self, bm_design):
        assert delta_phi(bm_design) == pytest.approx(bm_design.gamma, abs=1e-9)

    def test_configuration_symmetry(self, eq_design):
        phi = {c: config_phase(eq_design, c) for c in CONFIGS}
        assert phi["uu"] == pytest.approx(phi["dd"], abs=1e-12)
        assert phi["ud"] == pytest.approx(phi["du"], abs=1e-12)

    def test_boundary_violation(self):
        f = lambda s: np.cos(s)
        a = lambda s: np.sin(s) + 0.1
        with pytest.raises(BoundaryViolation):
            gate_phase_single_integral([f], [a], 3.0)


class TestDoubleIntegral:
    def test_zero(self):
        assert gate_phase_double_integral([lambda s: 0.0 * s], [1.3], 2.0) == 0.0

    def test_triangle_equals_square(self, eq_design):
        d = eq_design
        f = [lambda s: d.mode_force("ud", "+", s)]
        tri = gate_phase_double_integral(f, [d.omega("+")], d.tau)
        sq = gate_phase_double_integral(f, [d.omega("+")], d.tau, form="square")
        assert tri == pytest.approx(sq, abs=1e-10)

    def test_matches_single_integral(self, bm_design):
        d = bm_design
        for c in ("ud", "uu"):
            assert config_phase(d, c, "double") == pytest.approx(config_phase(d, c), abs=1e-8)

    def test_bad_form(self):
        with pytest.raises(ValueError):
            gate_phase_double_integral([np.sin], [1.0], 1.0, form="disc")


class TestDecomposition:
    def test_identities(self, bm_design):
        d = bm_design
        f = lambda s: d.mode_force("ud", "+", s)
        pb = phase_decomposition(f, d.omega("+"), d.tau)
        assert max(pb.identity_residuals().values()) < 1e-6
        assert pb.geometric == pytest.approx(-pb.total, abs=1e-6)
        assert pb.total == pytest.approx(config_phase(d, "ud") - 0.5 * d.mode_weights("ud")["-"] ** 2
                                          * d.drive_integrals()["-"], abs=1e-9)

    @given(re=st.floats(-2, 2), im=st.floats(-2, 2))
    @settings(max_examples=4, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    def test_independent_of_initial_state(self, eq_design, re, im):
        d = eq_design
        f = lambda s: d.mode_force("uu", "-", s)
        base = phase_decomposition(f, d.omega("-"), d.tau)
        other = phase_decomposition(f, d.omega("-"), d.tau, complex(re, im))
        assert other.dynamical == pytest.approx(base.dynamical, abs=1e-6)
        assert other.area == pytest.approx(base.area, abs=1e-6)

    def test_no_force(self):
        pb = phase_decomposition(lambda s: np.zeros_like(s), 1.0, 4.0)
        assert (pb.total, pb.dynamical, pb.geometric, pb.area) == (0, 0, 0, 0)


class TestOffset:
    def test_odd_trajectory_is_insensitive(self, eq_design):
        d = eq_design
        for c, m in (("ud", "+"), ("uu", "-")):
            assert abs(offset_sensitivity(lambda s: d.alpha(c, m, s), 0.01, d.tau)) < 1e-10

    def test_zero_offset(self):
        assert offset_sensitivity(np.sin, 0.0, 1.0) == 0.0

    def test_asymmetric_trajectory(self):
        t_f = 7.3
        a = lambda s: np.sin(np.pi * s / t_f) ** 2 * s
        got = offset_sensitivity(a, 0.02, t_f)
        assert got == pytest.approx(0.01 * quad(a, 0, t_f), rel=1e-12)
        # closed form: int_0^T t sin^2(pi t/T) dt = T^2/4
        assert got == pytest.approx(0.01 * t_f**2 / 4, rel=1e-12)


class TestQuadraturePath:
    def path(self, ions, t_f, n=20001):
        d = design_equal_mass(ions, t_f)[0]
        t = np.linspace(0, d.tau, n)
        return d, quadrature_path(t, d.alpha("ud", "+", t), d.alpha("ud", "+", t, 1), d.omega("+"))

    def test_closed_in_both_frames(self, be_pair):
        _, p = self.path(be_pair, 0.5 * US)
        r = p.max_radius()
        for arr in (p.X, p.P, p.X_r, p.P_r):
            assert abs(arr[0]) < 1e-12 * r and abs(arr[-1]) < 1e-10 * r

    def test_shorter_gates_go_further(self, be_pair):
        assert self.path(be_pair, 0.8 * US)[1].max_radius() > self.path(be_pair, 1.0 * US)[1].max_radius()

    def test_area_gives_phase(self, be_pair):
        d, p = self.path(be_pair, 0.5 * US, n=400_001)
        w2 = d.mode_weights("ud")["+"] ** 2
        phi_plus = 0.5 * w2 * d.drive_integrals()["+"]
        assert 2 * p.enclosed_area() == pytest.approx(phi_plus, abs=1e-6)

    def test_rotating_area_matches(self, eq_design):
        d = eq_design
        traj = solve_forced_oscillator(lambda s: d.mode_force("ud", "+", s), d.omega("+"), d.tau)
        assert 2 * rotating_area(traj) == pytest.approx(config_phase(d, "ud"), abs=1e-6)

    def test_csv(self, be_pair, tmp_path):
        _, p = self.path(be_pair, 0.5 * US, n=5)
        p.to_csv(tmp_path / "q.csv")
        rows = list(csv.reader(open(tmp_path / "q.csv")))
        assert rows[0] == ["t", "X", "P", "X_r", "P_r"]
        assert np.allclose(np.array(rows[1:], dtype=float)[:, 1], p.X, rtol=1e-15, atol=0)

    def test_quadrature_scaling(self):
        t = np.array([0.0, 0.5])
        p = quadrature_path(t, np.array([2.0, 2.0]), np.array([0.0, 3.0]), 2.0)
        assert p.X[0] == pytest.approx(2.0)
        assert p.P[1] == pytest.approx(1.5)
        z = np.exp(1j) * (p.X[1] + 1j * p.P[1])
        assert (p.X_r[1], p.P_r[1]) == pytest.approx((z.real, z.imag))


@given(d=designs)
@settings(max_examples=4, deadline=None)
def test_phase_routes_agree(d):
    ref = delta_phi(d)
    assert ref == pytest.approx(d.gamma, abs=1e-9)
    for method in ("action", "double", "area"):
        assert delta_phi(d, method) == pytest.approx(ref, abs=1e-6)


def test_wrap_phase():
    assert wrap_phase(-np.pi) == pytest.approx(np.pi)
    assert wrap_phase(2 * np.pi) == 0.0
    assert np.all((wrap_phase(np.linspace(-20, 20, 101)) >= 0) & (wrap_phase(np.linspace(-20, 20, 101)) < 2 * np.pi))
