import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idealmeas import dynamics as dyn
from idealmeas import operators as ops
from idealmeas.equilibrium import microcanonical_state
from idealmeas.models import (
    ApparatusSpec,
    MeasurementModel,
    ProjectorFamily,
    Schedule,
    TestedSystemSpec,
    make_dephasing_apparatus,
    make_ergodic_apparatus,
    make_random_model,
    plus_x,
    qubit_system,
    ready_state,
)
from idealmeas.rng import substream


def _start(model):
    return dyn.init_blocks(model.system.r0, model.R0, model.projectors)


class TestInitBlocks:
    def test_diagonal_r0(self):
        fam = ProjectorFamily.diagonal([1, -1])
        st_ = dyn.init_blocks(np.diag([0.3, 0.7]), np.eye(2) / 2, fam)
        assert ops.max_abs(st_.C[0][1]) == 0 and ops.max_abs(st_.C[1][0]) == 0
        assert sum(np.trace(st_.C[i][i]) for i in range(2)) == pytest.approx(1.0)

    def test_plus_x(self):
        st_ = dyn.init_blocks(plus_x(), np.eye(2) / 2, ProjectorFamily.diagonal([1, -1]))
        for i in range(2):
            for j in range(2):
                assert abs(st_.C[i][j][i, j]) == pytest.approx(0.5)
                assert st_.R[i][j] is not st_.R[0][0] or (i, j) == (0, 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            dyn.init_blocks(np.eye(3) / 3, np.eye(2) / 2, ProjectorFamily.diagonal([1, -1]))


class TestPropagate:
    def test_stationary_block(self):
        h = np.diag([0.2, -0.4, 0.9]).astype(complex)
        app = ApparatusSpec((3,), (0.0,), (0, 0), np.zeros((3, 3)), (h, h))
        R0 = np.diag([0.5, 0.3, 0.2]).astype(complex)
        model = MeasurementModel(qubit_system(plus_x()), app, R0, Schedule(1.0, 1.0, 5.0))
        out = dyn.propagate(_start(model), model, 3.3)
        for i in range(2):
            for j in range(2):
                assert ops.max_abs(out.R[i][j] - R0) <= 1e-14

    def test_scalar_generators(self):
        eps = (0.7, -0.4)
        app = ApparatusSpec((3,), (0.0,), (0, 0), np.zeros((3, 3)), tuple(e * np.eye(3) for e in eps))
        R0 = ops.random_density(3, substream(0, "R0"))
        model = MeasurementModel(qubit_system(plus_x()), app, R0, Schedule(10.0, 10.0, 11.0))
        t = 2.9
        out = dyn.propagate(_start(model), model, t)
        expected = np.exp(-1j * (eps[0] - eps[1]) * t) * R0
        assert ops.max_abs(out.R[0][1] - expected) <= 1e-12

    def test_diagonal_blocks_keep_spectrum(self):
        model = make_random_model(2, G=5)
        out = dyn.propagate(_start(model), model, 12.0)
        for i in range(model.n_out):
            np.testing.assert_allclose(np.linalg.eigvalsh(out.R[i][i]), np.linalg.eigvalsh(model.R0), atol=1e-12)

    def test_segment_composition(self):
        model = make_random_model(3)
        direct = dyn.propagate(_start(model), model, 15.0)
        mid = dyn.propagate(_start(model), model, 4.0)
        later = dyn.propagate(dyn.propagate(mid, model, 9.0), model, 15.0)
        for i in range(2):
            for j in range(2):
                assert ops.max_abs(direct.R[i][j] - later.R[i][j]) <= 1e-11

    def test_backwards(self):
        model = make_random_model(3)
        with pytest.raises(ValueError):
            dyn.propagate(dyn.propagate(_start(model), model, 2.0), model, 1.0)


class TestAssemble:
    def test_initial_product(self):
        model = make_random_model(4)
        assert ops.max_abs(dyn.assemble_full(_start(model)) - model.D0) <= 1e-15

    def test_diagonal_r0_stays_block_diagonal(self):
        base = make_random_model(5)
        system = TestedSystemSpec(base.system.H_S, np.diag([0.4, 0.6]), base.projectors)
        model = MeasurementModel(system, base.apparatus, base.R0, base.schedule)
        D = dyn.assemble_full(dyn.propagate(_start(model), model, 6.0))
        d = model.d_A
        assert ops.max_abs(D[:d, d:]) == 0

    def test_reduced_coherence(self):
        model = make_random_model(6)
        s = dyn.propagate(_start(model), model, 3.0)
        r = ops.partial_trace(dyn.assemble_full(s), model.dims, "S")
        assert abs(r[0, 1] - s.C[0][1][0, 1] * np.trace(s.R[0][1])) <= 1e-14
        assert ops.max_abs(r - dyn.reduced_system_state(s)) <= 1e-14

    def test_invalid_state_is_loud(self):
        model = make_random_model(6)
        s = _start(model)
        bad = dyn.BlockState(s.C, tuple(tuple(2 * R for R in row) for row in s.R), 0.0)
        with pytest.raises(ops.DensityError):
            dyn.assemble_full(bad)


class TestOracle:
    def test_uncoupled_product(self):
        base = make_random_model(7)
        app = base.apparatus
        free = ApparatusSpec(app.sector_sizes, app.pointer_values, app.outcome_sectors, app.H_A,
                             tuple(np.zeros_like(h) for h in app.sources))
        model = MeasurementModel(base.system, free, base.R0, base.schedule)
        D = dyn.oracle_full_evolution(model, 4.0)
        R = ops.evolve_unitary(base.R0, app.H_A, 4.0)
        assert ops.max_abs(D - ops.tensor(base.system.r0, R)) <= 1e-12

    def test_initial(self):
        model = make_random_model(7)
        assert ops.max_abs(dyn.oracle_full_evolution(model, 0.0) - model.D0) <= 1e-14

    def test_dimension_limit(self):
        app = make_dephasing_apparatus(2, 12, np.ones(12))
        model = MeasurementModel(qubit_system(plus_x()), app, np.eye(4096) / 4096, Schedule(1.0, 1.0, 2.0))
        with pytest.raises(ValueError):
            dyn.oracle_full_evolution(model, 1.0)

    def test_degenerate_projector_with_system_hamiltonian(self):
        # rank-2 block and an H_S that does not commute with r0 inside it
        r = substream(8, "degenerate")
        fam = ProjectorFamily.diagonal([1.0, 1.0, -1.0])
        H_S = np.zeros((3, 3), dtype=complex)
        H_S[:2, :2] = ops.random_hermitian(2, r)
        H_S[2, 2] = 0.4
        system = TestedSystemSpec(H_S, ops.random_density(3, r), fam)
        H_A = np.zeros((6, 6), dtype=complex)
        H_A[:3, :3], H_A[3:, 3:] = ops.random_hermitian(3, r), ops.random_hermitian(3, r)
        app = ApparatusSpec((3, 3), (0.5, -0.5), (0, 1), H_A, (ops.random_hermitian(6, r), ops.random_hermitian(6, r)))
        model = MeasurementModel(system, app, ops.random_density(6, r), Schedule(4.0, 5.0, 10.0))
        for t in (0.0, 1.3, 4.0, 8.8):
            D = dyn.assemble_full(dyn.propagate(_start(model), model, t))
            assert ops.max_abs(D - dyn.oracle_full_evolution(model, t)) <= 1e-10


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 3), st.integers(2, 8), st.floats(0.0, 20.0))
def test_oracle_equivalence_property(seed, n_out, G, t):
    model = make_random_model(seed, G=G, n_out=n_out)
    s = dyn.propagate(_start(model), model, t)
    assert ops.max_abs(dyn.assemble_full(s) - dyn.oracle_full_evolution(model, t)) <= 1e-10
    assert s.pairing_defect() <= 1e-12
    p = dyn.born_weights(model.system.r0, model.projectors)
    for i in range(n_out):
        assert abs(np.trace(s.R[i][i]) - 1) <= 1e-12
        assert abs(np.trace(s.C[i][i]).real * np.trace(s.R[i][i]).real - p[i]) <= 1e-12


def _dephasing(M=12, seed=0, t_off=45.0, t_f=50.0):
    g = substream(seed, "g").uniform(0.5, 1.5, M)
    app = make_dephasing_apparatus(2, M, g)
    d = 2**M
    model = MeasurementModel(qubit_system(plus_x()), app, np.diag(np.full(d, 1.0 / d)).astype(complex),
                             Schedule(t_off, t_off, t_f))
    return model, g


class TestCoherence:
    def test_initial(self):
        model = make_random_model(9)
        m = dyn.coherence_metrics(_start(model), model)
        assert m[(0, 1)].abs_trace == pytest.approx(1.0)

    def test_dephasing_oracle(self):
        model, g = _dephasing(M=8)
        t = dyn.time_grid(model.schedule.t_f, 200)
        trace = dyn.run_dynamics(model, t)
        ana = np.abs(dyn.dephasing_factor(g, 2.0, t, model.schedule.t_off))
        assert np.max(np.abs(trace.coherence[(0, 1)] - ana)) <= 1e-10

    def test_diagonal_r0(self):
        base = make_random_model(10)
        system = TestedSystemSpec(base.system.H_S, np.diag([0.2, 0.8]), base.projectors)
        model = MeasurementModel(system, base.apparatus, base.R0, base.schedule)
        s = dyn.propagate(_start(model), model, 5.0)
        assert dyn.coherence_metrics(s, model)[(0, 1)].s_coherence == 0
        trace = dyn.run_dynamics(model, [0.0, 1.0, 5.0])
        assert np.all(trace.s_coherence[(0, 1)] == 0)

    def test_trace_series_matches_blocks(self):
        model = make_random_model(11, G=5)
        times = [0.0, 2.0, 7.0, 13.0]
        prop = dyn.block_propagator(model)
        A = model.apparatus.A_hat
        series = prop.trace_series(0, 1, times, A)
        for t, v in zip(times, series):
            s = dyn.propagate(_start(model), model, t)
            assert abs(v - np.trace(A @ s.R[0][1])) <= 1e-12


class TestRegistration:
    def test_zero_distance(self):
        app = make_ergodic_apparatus(2, 4, 1.0)
        model = MeasurementModel(qubit_system(plus_x()), app, ready_state(app, 1.0), Schedule(1.0, 1.0, 2.0))
        targets = [microcanonical_state(app, k) for k in range(2)]
        s = dyn.BlockState(_start(model).C, ((targets[0], targets[0]), (targets[1], targets[1])), 0.0)
        for rec in dyn.registration_metrics(s, model, targets):
            assert rec.distance == pytest.approx(0.0, abs=1e-15)
            assert rec.pointer_expectation == pytest.approx(rec.pointer_value, abs=1e-15)
            assert rec.sector_weight == pytest.approx(1.0)

    def test_sector_conditional(self):
        app = make_ergodic_apparatus(2, 4, 1.0)
        model = MeasurementModel(qubit_system(plus_x()), app, ready_state(app, 1.0), Schedule(1.0, 1.0, 2.0))
        recs = dyn.registration_metrics(_start(model), model)
        for rec in recs:
            assert rec.distance == pytest.approx(0.5)
            assert rec.conditional_distance == pytest.approx(0.0, abs=1e-15)

    def test_time_average_matches_diagonal_ensemble(self):
        app = make_ergodic_apparatus(2, 16, 1.0, seed=1)
        model = MeasurementModel(qubit_system(plus_x()), app, ready_state(app), Schedule(5.0, 10.0, 50.0))
        short = dyn.time_averaged_registration(model, (10.0, 110.0), 401)
        long = dyn.time_averaged_registration(model, (10.0, 4010.0), 8001)
        assert long[0].agreement < short[0].agreement
        assert long[0].agreement < 0.05
        for rec in long:
            assert rec.distance == pytest.approx(rec.diagonal_distance, abs=0.05)

    def test_window_before_switch_off(self):
        app = make_ergodic_apparatus(2, 4, 1.0)
        model = MeasurementModel(qubit_system(plus_x()), app, ready_state(app), Schedule(5.0, 10.0, 50.0))
        with pytest.raises(ValueError):
            dyn.time_averaged_registration(model, (1.0, 20.0))


class TestFinalState:
    def test_dephasing_plateau(self):
        model, _ = _dephasing(M=12)
        report = dyn.final_state_report(model)
        plateau = dyn.coherence_plateau(model.R0)
        assert report.registration_residual == pytest.approx(0.0, abs=1e-15)
        assert report.residual == pytest.approx(0.5 * report.coherence_leftover, rel=1e-12)
        assert report.coherence_leftover < 5 * plateau
        window = np.linspace(20.0, 45.0, 400)
        rms = np.sqrt(np.mean(np.abs(dyn.block_propagator(model).trace_series(0, 1, window)) ** 2))
        assert rms == pytest.approx(plateau, rel=0.5)
        assert report.weight_deviation <= 1e-12
        assert report.full_residual is None

    def test_eigenstate_input(self):
        base = make_random_model(12)
        system = TestedSystemSpec(base.system.H_S, np.diag([1.0, 0.0]), base.projectors)
        model = MeasurementModel(system, base.apparatus, base.R0, base.schedule)
        s = dyn.propagate(_start(model), model, model.schedule.t_f)
        report = dyn.final_state_check(s, model)
        assert report.coherence_leftover == 0
        assert report.reduced_residual == pytest.approx(0.0, abs=1e-15)
        assert report.residual == pytest.approx(report.registration_residual)

    def test_report_matches_check(self):
        model = make_random_model(13, G=4)
        s = dyn.propagate(_start(model), model, model.schedule.t_f)
        a = dyn.final_state_check(s, model)
        b = dyn.final_state_report(model)
        assert a.residual == pytest.approx(b.residual, abs=1e-12)
        assert a.coherence_leftover == pytest.approx(b.coherence_leftover, abs=1e-12)
        assert a.full_residual == pytest.approx(b.full_residual, abs=1e-12)
        assert a.weight_deviation <= 1e-12
        assert a.born == pytest.approx(b.born)


class TestGrids:
    def test_time_grid(self):
        t = dyn.time_grid(50.0, 200)
        assert len(t) == 200 and t[0] == 0 and t[-1] == pytest.approx(50.0)
        assert np.all(np.diff(t) > 0)

    def test_trace_rejects_unordered(self):
        with pytest.raises(ValueError):
            dyn.DynamicsTrace(np.array([0.0, 1.0, 1.0]))

    def test_gaussian_fit(self):
        model, g = _dephasing(M=12)
        t = dyn.time_grid(2.0, 400, t_min=1e-3, t_switch=0.2)
        c = np.abs(dyn.block_propagator(model).trace_series(0, 1, t))
        tau = dyn.gaussian_decay_fit(t, c)
        tau_pred = np.sqrt(2.0 / np.sum((2 * g) ** 2))
        assert tau == pytest.approx(tau_pred, rel=0.1)
        assert dyn.decay_time(t, c) == pytest.approx(tau_pred, rel=0.15)

    def test_default_t_split(self):
        t = np.array([0.0, 1.0, 2.0, 3.0])
        assert dyn.default_t_split(t, [1.0, 0.01, 0.01, 0.01], 0.01, 1.5) == 2.0
        assert dyn.default_t_split(t, [1.0, 1.0, 1.0, 1.0], 0.01, 1.5) is None
