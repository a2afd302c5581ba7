import numpy as np
import pytest

from oracle_corotational import reduced_profile
from warpflow.boundary import boundary_data_from_presets
from warpflow.diagnostics import ThresholdConfig
from warpflow.errors import SolverFailure, StepRejected
from warpflow.flow import (Schedule, StepperConfig, default_probe_centers,
                           initial_state, run_flow, step, tension_residual)
from warpflow.geometry import WarpFunction, make_target
from warpflow.mesh import build_mesh, dirichlet_energy

SPHERE = make_target("sphere")
TORUS = make_target("torus")
UNIT_WARP = WarpFunction("constant", 1.0)

# frozen: pi * int (h'^2 + sin^2(h)/r^2) r dr for h(r) = sin(pi r), adaptive
# quadrature on the radial form of the corotational Dirichlet energy
COROTATIONAL_ENERGY_AMP1 = 10.799779675392465


def _bump_data(mesh, amp=0.1):
    spec = f"sine_bump amplitude={amp}"
    return boundary_data_from_presets(mesh, TORUS, spec, spec, "constant value=0")


class TestStepperConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            StepperConfig(scheme="leapfrog")
        with pytest.raises(ValueError):
            StepperConfig(sigma=0.0)
        with pytest.raises(ValueError):
            StepperConfig(sigma=0.6)
        with pytest.raises(ValueError):
            StepperConfig(theta=0.3)
        with pytest.raises(ValueError):
            StepperConfig(theta=1.1)

    def test_dt_policy(self):
        semi = StepperConfig(scheme="semi_implicit", sigma=0.2)
        expl = StepperConfig(scheme="explicit", sigma=0.25)
        assert semi.dt_initial(0.1) == pytest.approx(0.02)
        assert expl.dt_initial(0.1) == pytest.approx(0.25 * 0.01)
        assert semi.dt_min(0.1) == pytest.approx(1e-6 * 0.01)


class TestInitialState:
    def test_rejects_off_target_map(self, square16):
        bd = boundary_data_from_presets(square16, SPHERE, "north_pole",
                                        "north_pole", "constant value=0")
        bd.phi0 = 2.0 * bd.phi0
        with pytest.raises(ValueError, match="target"):
            initial_state(square16, SPHERE, UNIT_WARP, bd, StepperConfig())

    def test_rejects_boundary_mismatch(self, square16):
        bd = _bump_data(square16)
        bd.phi0 = bd.phi0.copy()
        bd.phi0[square16.boundary_indices[0]] += 1e-12
        with pytest.raises(ValueError, match="boundary"):
            initial_state(square16, TORUS, UNIT_WARP, bd, StepperConfig())

    def test_potential_solves_elliptic_problem(self, square16):
        warp = WarpFunction("linear_height", 2.0, 1.0)
        bd = boundary_data_from_presets(square16, SPHERE, "equator_circle kappa=1",
                                        "harmonic", "linear_x")
        st = initial_state(square16, SPHERE, warp, bd, StepperConfig())
        from warpflow.mesh import assemble_weighted_stiffness
        K = assemble_weighted_stiffness(square16, warp.beta(st.u))
        assert np.max(np.abs((K @ st.v)[square16.interior])) < 1e-8
        assert np.array_equal(st.v[square16.boundary],
                              bd.psi[square16.boundary])
        assert st.dt == pytest.approx(0.2 * square16.target_h)

    def test_step_rejects_nonpositive_dt(self, square16):
        bd = _bump_data(square16)
        cfg = StepperConfig()
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        with pytest.raises(ValueError):
            step(st, cfg, dt=0.0)


class TestFixedPoints:
    @pytest.mark.parametrize("scheme", ["semi_implicit", "explicit"])
    def test_constant_map_is_exactly_stationary(self, square16, scheme):
        cfg = StepperConfig(scheme=scheme)
        bd = boundary_data_from_presets(square16, SPHERE, "north_pole",
                                        "north_pole", "constant value=0")
        st = initial_state(square16, SPHERE, UNIT_WARP, bd, cfg)
        u0 = st.u.copy()
        for _ in range(5):
            st = step(st, cfg)
        assert np.array_equal(st.u, u0)
        assert dirichlet_energy(square16, st.u) == 0.0

    def test_geodesic_interpolant_has_zero_tension(self):
        # (cos x, sin x, 0) interpolated on the structured square: the discrete
        # Laplacian is purely radial, so the tangential tension vanishes
        for h in (1.0 / 16.0, 1.0 / 32.0):
            m = build_mesh("square", h)
            bd = boundary_data_from_presets(m, SPHERE, "equator_circle kappa=1",
                                            "constant value=1,0,0",
                                            "constant value=0")
            x = m.vertices[:, 0]
            bd.phi0 = np.column_stack([np.cos(x), np.sin(x),
                                       np.zeros(m.num_vertices)])
            st = initial_state(m, SPHERE, UNIT_WARP, bd, StepperConfig())
            assert tension_residual(st)[1] < 1e-10


class TestStepMechanics:
    def test_schemes_agree_to_second_order_in_dt(self, square16):
        bd = _bump_data(square16)
        diffs = []
        for dt in (1e-4, 5e-5):
            st_e = initial_state(square16, TORUS, UNIT_WARP, bd,
                                 StepperConfig(scheme="explicit"))
            st_s = initial_state(square16, TORUS, UNIT_WARP, bd,
                                 StepperConfig(scheme="semi_implicit"))
            ue = step(st_e, StepperConfig(scheme="explicit"), dt=dt).u
            us = step(st_s, StepperConfig(scheme="semi_implicit"), dt=dt).u
            diffs.append(np.max(np.abs(ue - us)))
        assert diffs[0] < 5e-7
        assert 3.5 <= diffs[0] / diffs[1] <= 4.5

    def test_sphere_constraint_enforced(self, square16):
        cfg = StepperConfig()
        bd = boundary_data_from_presets(square16, SPHERE,
                                        "equator_circle kappa=1", "harmonic",
                                        "constant value=0")
        st = initial_state(square16, SPHERE, UNIT_WARP, bd, cfg)
        for _ in range(10):
            st = step(st, cfg)
        assert np.max(np.abs(np.linalg.norm(st.u, axis=1) - 1.0)) < 1e-12

    def test_boundary_rows_pinned(self, square16):
        cfg = StepperConfig()
        bd = _bump_data(square16, amp=0.2)
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        for _ in range(5):
            st = step(st, cfg, dt=2e-3)
        b = square16.boundary
        assert np.array_equal(st.u[b], bd.phi[b])

    def test_move_cap_rejection(self, square16):
        bd = _bump_data(square16, amp=0.4)
        cfg = StepperConfig(max_move_fraction=1e-6)
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        with pytest.raises(StepRejected):
            step(st, cfg, dt=0.01)
        assert st.ctx.stats["rejected_steps"] == 1

    def test_constant_warp_reuses_potential(self, square16):
        cfg = StepperConfig()
        bd = _bump_data(square16)
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        solves0 = st.ctx.stats["elliptic_solves"]
        st2 = step(st, cfg, dt=2e-3)
        assert st2.v is st.v
        assert st.ctx.stats["elliptic_solves"] == solves0

    def test_varying_warp_resolves_potential(self, square16):
        warp = WarpFunction("linear_height", 2.0, 1.0)
        cfg = StepperConfig()
        bd = boundary_data_from_presets(square16, SPHERE,
                                        "equator_circle kappa=1", "harmonic",
                                        "linear_x")
        st = initial_state(square16, SPHERE, warp, bd, cfg)
        solves0 = st.ctx.stats["elliptic_solves"]
        step(st, cfg)
        assert st.ctx.stats["elliptic_solves"] == solves0 + 1


class TestRunFlow:
    def test_zero_horizon_returns_empty_series(self, square16):
        cfg = StepperConfig()
        bd = _bump_data(square16)
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        fin, rep = run_flow(st, cfg, Schedule(t_end=0.0))
        assert fin is st
        assert rep.records == []
        assert rep.local_history.shape == (0, square16.num_vertices)

    def test_heat_decay_rate(self, square16):
        # torus target, no curvature or warp force: each component obeys the
        # scalar heat equation; the bump mode decays like exp(-2 pi^2 t)
        cfg = StepperConfig(scheme="semi_implicit", sigma=0.2)
        bd = _bump_data(square16)
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        fin, rep = run_flow(st, cfg, Schedule(t_end=0.05, diag_stride=1))
        ts = np.array([r.t for r in rep.records])
        es = np.array([r.e_u for r in rep.records])
        mask = (ts > 0.01) & (es > 1e-14)
        rate = -0.5 * np.polyfit(ts[mask], np.log(es[mask]), 1)[0]
        assert rate == pytest.approx(2.0 * np.pi ** 2, rel=0.02)

    def test_record_bookkeeping(self, square16):
        cfg = StepperConfig()
        bd = _bump_data(square16)
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        fin, rep = run_flow(st, cfg, Schedule(t_end=0.02, diag_stride=2))
        recs = rep.records
        assert recs[0].t == 0.0 and recs[0].step_count == 0
        assert recs[-1].step_count == fin.step_count
        assert fin.t == pytest.approx(0.02, abs=1e-12)
        ts = [r.t for r in recs]
        assert all(b > a for a, b in zip(ts, ts[1:]))
        kin = sum(r.kinetic_increment for r in recs)
        assert recs[-1].kinetic_cum == pytest.approx(kin, rel=1e-12)
        # controller never exceeds its CFL value
        assert all(r.dt <= cfg.dt_initial(square16.target_h) + 1e-15 for r in recs)
        assert rep.local_history.shape == (len(recs), square16.num_vertices)
        assert rep.solver_stats["accepted_steps"] == fin.step_count

    def test_ball_probes_cover_doubled_radii(self, square16):
        cfg = StepperConfig()
        thresholds = ThresholdConfig(r_grid=(0.1, 0.2))
        bd = _bump_data(square16)
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        _, rep = run_flow(st, cfg, Schedule(t_end=0.005), thresholds)
        probes = rep.records[0].ball_probes
        assert len(probes) == len(default_probe_centers(square16))
        for per_center in probes.values():
            assert {0.1, 0.2, 0.4} <= set(per_center)
            assert per_center[0.1] <= per_center[0.2] + 1e-15

    def test_snapshot_callback_stride(self, square16):
        cfg = StepperConfig()
        bd = _bump_data(square16)
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        seen = []
        sched = Schedule(t_end=0.01, snapshot_stride=3,
                         snapshot_cb=lambda s: seen.append(s.step_count))
        fin, _ = run_flow(st, cfg, sched)
        assert seen
        assert all(c % 3 == 0 for c in seen[:-1])
        assert seen[-1] == fin.step_count        # final state always snapshotted

    def test_underflow_is_recorded_and_survived(self, square16):
        bd = _bump_data(square16, amp=0.4)
        cfg = StepperConfig(max_move_fraction=1e-9)
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        t_end = 3.0 * cfg.dt_min(square16.target_h)
        fin, rep = run_flow(st, cfg, Schedule(t_end=t_end))
        assert rep.underflow_times
        assert rep.underflow_times[0] == 0.0
        assert fin.t >= t_end - 1e-14

    def test_persistent_underflow_raises(self, square16):
        bd = _bump_data(square16, amp=0.4)
        cfg = StepperConfig(max_move_fraction=1e-9, max_forced_steps=2)
        st = initial_state(square16, TORUS, UNIT_WARP, bd, cfg)
        with pytest.raises(SolverFailure):
            run_flow(st, cfg, Schedule(t_end=1.0))


class TestProbeCenters:
    def test_centers_are_valid_and_distinct(self, square16, disk16, annulus8):
        for m in (square16, disk16, annulus8):
            centers = default_probe_centers(m)
            assert len(centers) == len(set(centers))
            assert all(0 <= c < m.num_vertices for c in centers)


class TestCorotationalReduction:
    def test_initial_energy_matches_radial_quadrature(self):
        m = build_mesh("disk", 1.0 / 32.0)
        from warpflow.boundary import evaluate_map_preset
        u0 = evaluate_map_preset("corotational amplitude=1.0", SPHERE,
                                 m.vertices)
        e = dirichlet_energy(m, u0)
        assert e == pytest.approx(COROTATIONAL_ENERGY_AMP1, rel=4e-3)

    def test_flow_tracks_reduced_profile(self):
        # cheap spot check of the 1D oracle; the acceptance suite runs the
        # full-tolerance comparison at h = 1/32
        h = 1.0 / 16.0
        t_end = 0.01
        m = build_mesh("disk", h)
        bd = boundary_data_from_presets(m, SPHERE, "north_pole",
                                        "corotational amplitude=1.0",
                                        "constant value=0")
        cfg = StepperConfig(scheme="semi_implicit", sigma=0.2)
        st = initial_state(m, SPHERE, UNIT_WARP, bd, cfg)
        fin, _ = run_flow(st, cfg, Schedule(t_end=t_end, diag_stride=10))
        nodes, prof = reduced_profile(1.0, t_end, m=1024, dt=5e-5)
        r = np.linalg.norm(m.vertices, axis=1)
        theta = np.arctan2(m.vertices[:, 1], m.vertices[:, 0])
        hr = np.interp(r, nodes, prof)
        expected = np.column_stack([np.sin(hr) * np.cos(theta),
                                    np.sin(hr) * np.sin(theta), np.cos(hr)])
        err = np.max(np.abs(fin.u - expected))
        assert err <= 5.0 * (h + cfg.dt_initial(h))
