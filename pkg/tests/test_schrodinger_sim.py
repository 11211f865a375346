import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ground_state_on
from iongate.errors import BoundaryLeak, GridMismatch, GridTooNarrow
from iongate.force_design import design_different_mass, design_equal_mass
from iongate.normal_modes import IonPair, coulomb_potential, equilibrium_config, mode_frequencies
from iongate.schrodinger_sim import (
    ForceModel,
    ForceVariant,
    Grid2D,
    SimResult,
    WaveFunction2D,
    build_potential,
    check_grid,
    delta_k_for_periods,
    differential_phase_experiment,
    energy,
    fock_initial_state,
    lamb_dicke_validity,
    make_grid,
    overlap,
    overlap_and_phase,
    predicted_overlap_phase,
    propagate_real_time,
    read_snapshot,
    superposition_fidelity,
    worst_case_infidelity,
    write_snapshot,
)

US = 1e-6
HOM = ForceModel()


@pytest.fixture(scope="module")
def static_grid(be_pair):
    return make_grid(be_pair)


@pytest.fixture(scope="module")
def ground(static_grid, be_pair):
    return ground_state_on(static_grid, be_pair)


class TestGrid:
    def test_powers_of_two(self):
        with pytest.raises(ValueError):
            Grid2D(100, 128, 0, 1, 0, 1, 1.0)
        with pytest.raises(ValueError):
            Grid2D(128, 128, 1, 0, 0, 1, 1.0)

    def test_default_grid_covers_design(self, be_pair):
        d, _ = design_equal_mass(be_pair, 0.5 * US)
        g = make_grid(be_pair, d)
        check_grid(g, be_pair, d)
        assert g.n1 == g.n2 == 256

    def test_too_narrow(self, be_pair):
        geom = equilibrium_config(be_pair)
        w = 1e-9
        g = Grid2D(64, 64, geom.x1_0 - w, geom.x1_0 + w, geom.x2_0 - w, geom.x2_0 + w,
                   be_pair.units().length)
        with pytest.raises(GridTooNarrow):
            check_grid(g, be_pair, None)


class TestPotential:
    def test_zero_at_equilibrium(self, static_grid, be_pair):
        V = build_potential("ud", 0.0, HOM, be_pair, static_grid)
        c = static_grid.n1 // 2
        x1, x2 = static_grid.axes()
        geom = equilibrium_config(be_pair)
        ell = static_grid.length_unit
        assert x1[c] == pytest.approx(geom.x1_0 / ell, abs=1e-9)
        assert abs(V[c, c]) < 1e-12

    def test_matches_lab_coulomb_form(self, static_grid, be_pair):
        u = be_pair.units()
        V = build_potential("uu", 0.0, HOM, be_pair, static_grid)
        x1, x2 = static_grid.axes()
        idx = np.arange(32, 224, 16)
        X1, X2 = np.meshgrid(x1[idx] * u.length, x2[idx] * u.length, indexing="ij")
        ref = coulomb_potential(X1, X2, be_pair) / u.energy
        assert np.allclose(V[np.ix_(idx, idx)], ref, rtol=1e-8, atol=1e-8)

    def test_curvature_matches_modes(self, be_mg):
        grid = make_grid(be_mg)
        V = build_potential("uu", 0.0, HOM, be_mg, grid)
        c1, c2 = grid.n1 // 2, grid.n2 // 2
        h1, h2 = grid.dx1 / grid.length_unit, grid.dx2 / grid.length_unit
        H = np.empty((2, 2))
        H[0, 0] = (V[c1 + 1, c2] - 2 * V[c1, c2] + V[c1 - 1, c2]) / h1**2
        H[1, 1] = (V[c1, c2 + 1] - 2 * V[c1, c2] + V[c1, c2 - 1]) / h2**2
        H[0, 1] = H[1, 0] = (V[c1 + 1, c2 + 1] - V[c1 + 1, c2 - 1] - V[c1 - 1, c2 + 1]
                             + V[c1 - 1, c2 - 1]) / (4 * h1 * h2)
        m = np.array([1.0, be_mg.mass_ratio])
        eig = np.sqrt(np.linalg.eigvalsh(H / np.sqrt(np.outer(m, m))))
        Wp, Wm = mode_frequencies(be_mg)
        assert eig == pytest.approx(np.array([Wm, Wp]) / be_mg.omega1, rel=1e-6)

    def test_sinusoidal_extrema_at_equilibria(self, be_pair):
        ell = be_pair.units().length
        geom = equilibrium_config(be_pair)
        for periods in (4, 8):
            model = ForceModel("sinusoidal", delta_k_for_periods(be_pair, periods))
            h = 1e-6
            for x in (geom.x1_0 / ell, geom.x2_0 / ell):
                slope = (model.profile(np.array([x + h]), ell) - model.profile(np.array([x - h]), ell)) / (2 * h)
                assert abs(slope[0]) == pytest.approx(1.0, abs=1e-8)

    def test_sinusoidal_reduces_to_homogeneous(self):
        x = np.linspace(-3, 3, 11)
        # sin(k x)/k = x (1 - (k x)^2 / 6 + ...)
        model = ForceModel("sinusoidal", 1e-4)
        assert np.allclose(model.profile(x, 1.0), x, rtol=2e-8, atol=0)

    def test_sinusoidal_needs_wavenumber(self):
        with pytest.raises(ValueError):
            ForceModel(ForceVariant.SINUSOIDAL, 0.0)

    def test_force_term_linear_in_position(self, static_grid, be_pair):
        d, _ = design_equal_mass(be_pair, 0.5 * US)
        t = 0.3 * d.tau
        V = build_potential("ud", t, HOM, be_pair, static_grid, d) - build_potential("ud", t, HOM, be_pair, static_grid)
        x1, x2 = static_grid.axes()
        F1, F2 = d.config_forces("ud", t)
        assert np.allclose(V, F1 * x1[:, None] + F2 * x2[None, :], rtol=1e-9, atol=1e-9)

    def test_delta_k_presets(self, be_pair):
        # the 8-period preset lands on the quoted wavenumber
        assert delta_k_for_periods(be_pair, 8) == pytest.approx(8.67e6, rel=3e-3)
        with pytest.raises(ValueError):
            delta_k_for_periods(be_pair, 0)


class TestGroundState:
    def test_energy_and_monotone(self, ground, be_pair):
        Wp, Wm = mode_frequencies(be_pair)
        assert ground.energy == pytest.approx(0.5 * (Wp + Wm) / be_pair.omega1, rel=1e-3)
        e = np.array(ground.energies)
        assert np.all(np.diff(e) <= 1e-12 * abs(e[-1]))

    def test_moments(self, ground, be_pair):
        m = ground.state.moments()
        geom = equilibrium_config(be_pair)
        ell = be_pair.units().length
        # the anharmonic shift of the mean is far below the grid spacing
        assert m["mean1"] == pytest.approx(-geom.x0 / 2 / ell, abs=0.1 * ground.state.grid.dx1 / ell)
        assert m["mean2"] == pytest.approx(-m["mean1"], rel=1e-12)
        assert m["width1"] == pytest.approx(0.5 * math.sqrt(1 + 1 / math.sqrt(3)), rel=1e-3)
        assert ground.state.norm() == pytest.approx(1.0, abs=1e-10)

    def test_harmonic_state_agrees(self, ground, static_grid, be_pair):
        h = fock_initial_state(static_grid, be_pair, 0)
        assert abs(overlap(h, ground.state)) > 0.9999


class TestFock:
    def test_orthonormal(self, be_mg):
        grid = make_grid(be_mg, fock=5)
        states = [fock_initial_state(grid, be_mg, n) for n in range(6)]
        gram = np.array([[overlap(a, b) for b in states] for a in states])
        assert np.max(np.abs(gram - np.eye(6))) < 1e-8

    def test_mixed_occupation(self, be_pair):
        grid = make_grid(be_pair, fock=1)
        a = fock_initial_state(grid, be_pair, 1, 0)
        b = fock_initial_state(grid, be_pair, 0, 1)
        assert abs(overlap(a, b)) < 1e-10

    def test_energy_ladder(self, be_pair):
        grid = make_grid(be_pair, fock=1)
        Wp = mode_frequencies(be_pair)[0] / be_pair.omega1
        e0 = energy(fock_initial_state(grid, be_pair, 0), be_pair)
        e1 = energy(fock_initial_state(grid, be_pair, 1), be_pair)
        assert e1 - e0 == pytest.approx(Wp, rel=1e-3)

    def test_grid_check(self, be_pair):
        geom = equilibrium_config(be_pair)
        ell = be_pair.units().length
        w = 6 * ell
        g = Grid2D(64, 64, geom.x1_0 - w, geom.x1_0 + w, geom.x2_0 - w, geom.x2_0 + w, ell)
        fock_initial_state(g, be_pair, 0)
        with pytest.raises(GridTooNarrow):
            fock_initial_state(g, be_pair, 20)


class TestOverlap:
    def test_identity_and_global_phase(self, ground):
        wf = ground.state
        S, a, ph = overlap_and_phase(wf, wf)
        assert S == pytest.approx(1.0, abs=1e-12) and ph == pytest.approx(0.0, abs=1e-12)
        for theta in (0.3, -1.0, 7.0):
            rot = WaveFunction2D(wf.psi * np.exp(1j * theta), wf.grid)
            assert overlap_and_phase(wf, rot)[2] == pytest.approx(theta % (2 * np.pi), abs=1e-12)

    def test_grid_mismatch(self, ground, be_pair):
        other = make_grid(be_pair, n=128)
        with pytest.raises(GridMismatch):
            overlap(ground.state, fock_initial_state(other, be_pair, 0))

    def test_snapshot_round_trip(self, ground, tmp_path):
        wf = WaveFunction2D(ground.state.psi * np.exp(0.4j), ground.state.grid, None, 1.25e-7)
        write_snapshot(wf, tmp_path / "s.bin")
        back = read_snapshot(tmp_path / "s.bin", wf.grid.length_unit)
        assert back.grid.same_as(wf.grid) and back.time == wf.time
        assert np.allclose(back.psi, wf.psi, rtol=1e-14, atol=0)
        raw = (tmp_path / "s.bin").read_bytes()
        assert raw[:4] == b"IGWF" and len(raw) == 4 + 12 + 40 + 16 * wf.grid.n1 * wf.grid.n2

    def test_snapshot_rejects_other_files(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"nope" + bytes(60))
        with pytest.raises(ValueError):
            read_snapshot(tmp_path / "x.bin", 1.0)


class TestInfidelity:
    def test_closed_form(self):
        assert worst_case_infidelity(1.0, np.pi) == 0.0
        assert worst_case_infidelity(1.0, np.pi + 0.1) == pytest.approx(1 - math.cos(0.1) ** 2, rel=1e-14)
        assert worst_case_infidelity(1.0, np.pi - 0.1) == pytest.approx(9.97e-3, rel=1e-3)
        assert worst_case_infidelity(0.9j, -np.pi) == pytest.approx(1 - 0.81, rel=1e-14)

    def test_rejects_overlap_above_one(self):
        with pytest.raises(ValueError):
            worst_case_infidelity(1.01, np.pi)

    @given(w=st.lists(st.floats(0.01, 1), min_size=4, max_size=4),
           eps=st.lists(st.floats(0.5, 1), min_size=4, max_size=4),
           deltas=st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4))
    @settings(max_examples=300)
    def test_superposition_bound(self, w, eps, deltas):
        exact, bound = superposition_fidelity(w, eps, deltas)
        assert 0 <= exact <= 1 + 1e-12
        assert exact >= bound - 1e-6


class TestLambDicke:
    def test_zero_and_linear(self, be_pair):
        d, _ = design_equal_mass(be_pair, 0.5 * US)
        assert lamb_dicke_validity(d, 0.0) == (0.0, 0.0)
        r, e = lamb_dicke_validity(d, 8.67e6)
        r2, e2 = lamb_dicke_validity(d, 4.335e6)
        assert r2 == pytest.approx(r / 2, rel=1e-14) and e2 == pytest.approx(e / 2, rel=1e-14)
        hbar = be_pair.constants.hbar
        assert r == pytest.approx(8.67e6 / be_pair.omega1 * math.sqrt(hbar / (0.5 * US * be_pair.m1)), rel=1e-14)
        assert 0 < r < 1 and 0 < e < 1


class TestPropagation:
    def test_stationary_without_force(self, ground, be_pair):
        t_f = 2 * np.pi
        errors = []
        for K in (512, 1024):
            prop = propagate_real_time(ground.state, None, HOM, "ud", be_pair, dt_divisor=K, t_f=t_f)
            S = overlap(ground.state, prop.state)
            assert abs(S) == pytest.approx(1.0, abs=1e-8)
            assert prop.max_norm_drift < 1e-10
            errors.append(abs(np.angle(S * np.exp(1j * ground.energy * t_f))))
        assert errors[1] < 1e-4
        # second-order splitting: halving the step quarters the phase error
        assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.05)

    def test_needs_duration_without_design(self, ground, be_pair):
        with pytest.raises(ValueError):
            propagate_real_time(ground.state, None, HOM, "ud", be_pair)

    def test_leak_detection(self, ground, be_pair):
        with pytest.raises(BoundaryLeak):
            propagate_real_time(ground.state, None, HOM, "ud", be_pair, dt_divisor=8, t_f=0.1,
                                check_every=1, leak_tol=1e-300)

    def test_simresult_json(self):
        r = SimResult({"ud": 0.5 + 0.5j}, {"ud": 0.1}, {"ud": 0.1}, -3.1, 3.18, 0.01, {"grid": [2, 2]}, 9.0)
        d = r.to_dict()
        assert "runtime_s" not in d and d["overlaps"]["ud"] == [0.5, 0.5]
        assert '"runtime_s": 9.0' in r.to_json(include_runtime=True)


@pytest.mark.slow
class TestGateRuns:
    def test_one_microsecond_gate(self, be_pair):
        d, _ = design_equal_mass(be_pair, 1.0 * US)
        grid = make_grid(be_pair, d)
        gs = ground_state_on(grid, be_pair)
        res = differential_phase_experiment(d, HOM, gs.state, dt_divisor=1024)
        assert abs(res.delta_phi + np.pi) < 0.05
        for c in ("ud", "uu"):
            assert abs(res.overlaps[c]) > 0.999
            pred = predicted_overlap_phase(d, c) + (0.5 * (sum(mode_frequencies(be_pair))) / be_pair.omega1
                                                    - gs.energy) * d.tau
            diff = (res.phases[c] - pred + np.pi) % (2 * np.pi) - np.pi
            assert abs(diff) < 0.05

    def test_time_step_convergence(self, be_pair):
        d, _ = design_equal_mass(be_pair, 1.0 * US)
        grid = make_grid(be_pair, d)
        gs = ground_state_on(grid, be_pair)
        a = differential_phase_experiment(d, HOM, gs.state, dt_divisor=1024)
        b = differential_phase_experiment(d, HOM, gs.state, dt_divisor=2048)
        assert abs(a.delta_phi - b.delta_phi) < 1e-3

    def test_different_mass_gate(self, be_mg):
        d, _ = design_different_mass(be_mg, 0.6 * US)
        grid = make_grid(be_mg, d, n=128)
        gs = ground_state_on(grid, be_mg)
        res = differential_phase_experiment(d, HOM, gs.state, dt_divisor=1024)
        assert abs(res.delta_phi - d.gamma) < 0.05
        assert 0 <= res.infidelity < 1e-2

    def test_excited_states_degrade(self, be_pair):
        d, _ = design_equal_mass(be_pair, 0.5 * US)
        model = ForceModel("sinusoidal", delta_k_for_periods(be_pair, 8))
        grid = make_grid(be_pair, d, fock=2, model=model)
        infid = []
        for n in range(3):
            psi = fock_initial_state(grid, be_pair, n)
            res = differential_phase_experiment(d, model, psi, dt_divisor=1024, n_plus=n)
            infid.append(res.infidelity)
        assert infid[0] < infid[1] < infid[2]
