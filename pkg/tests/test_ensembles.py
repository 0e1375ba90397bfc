from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idealmeas import ensembles as ens
from idealmeas import operators as ops
from idealmeas.equilibrium import microcanonical_state
from idealmeas.models import (
    MeasurementModel,
    ProjectorFamily,
    Schedule,
    TestedSystemSpec,
    make_ergodic_apparatus,
    plus_x,
    qubit_system,
    ready_state,
)
from idealmeas.rng import substream

SZ = ProjectorFamily.diagonal([1.0, -1.0])


class TestBorn:
    def test_plus_x(self):
        assert ens.born_probabilities(plus_x(), SZ).probabilities == pytest.approx((0.5, 0.5))

    def test_diagonal(self):
        assert ens.born_probabilities(np.diag([0.36, 0.64]), SZ).probabilities == pytest.approx((0.36, 0.64))

    def test_eigenstate(self):
        assert ens.born_probabilities(np.diag([0.0, 1.0]), SZ).probabilities == (0.0, 1.0)

    def test_distribution_validation(self):
        with pytest.raises(ValueError):
            ens.OutcomeDistribution((0.7, 0.7))
        with pytest.raises(ValueError):
            ens.OutcomeDistribution((0.5, 0.5), source="guess")
        emp = ens.OutcomeDistribution.empirical([3, 1])
        assert emp.N == 4 and emp.probabilities == (0.75, 0.25)


class TestLuders:
    def test_diagonal(self):
        np.testing.assert_allclose(ens.luders_update(np.diag([0.36, 0.64]), SZ, 0), np.diag([1.0, 0.0]))

    def test_idempotent(self):
        r = ens.luders_update(plus_x(), SZ, 1)
        np.testing.assert_allclose(ens.luders_update(r, SZ, 1), r, atol=1e-15)

    def test_rank_two_block_keeps_coherence(self):
        fam = ProjectorFamily.diagonal([1.0, 1.0, -1.0])
        psi = ops.ket([1.0, 1.0, 1.0])
        r = ens.luders_update(ops.projector(psi), fam, 0)
        expected = np.zeros((3, 3))
        expected[:2, :2] = 0.5
        np.testing.assert_allclose(r, expected, atol=1e-15)

    def test_zero_probability(self):
        with pytest.raises(ens.ZeroProbabilityError):
            ens.luders_update(np.diag([1.0, 0.0]), SZ, 1)

    def test_repeatability(self):
        r0 = ops.random_density(2, substream(1, "r0"))
        for i in range(2):
            p = ens.born_probabilities(ens.luders_update(r0, SZ, i), SZ).probabilities
            assert np.max(np.abs(np.array(p) - np.eye(2)[i])) <= 1e-12


def _model(r0, G=4, fam=None):
    app = make_ergodic_apparatus(2, G, 1.0)
    system = qubit_system(r0) if fam is None else TestedSystemSpec(np.zeros(r0.shape), r0, fam)
    return MeasurementModel(system, app, ready_state(app), Schedule(1.0, 1.0, 2.0))


def _final_state(model):
    """sum_j p_j r_j ⊗ R_j^mu."""
    r0 = model.system.r0
    out = 0
    for j, P in enumerate(model.projectors.projectors):
        p = float(np.real(np.trace(P @ r0)))
        if p > ens.PROB_CUTOFF:
            out = out + p * ops.tensor(ens.luders_update(r0, model.projectors, j),
                                       microcanonical_state(model.apparatus, model.apparatus.outcome_sectors[j]))
    return out


class TestSelect:
    def test_block_extraction(self):
        model = _model(np.diag([0.3, 0.7]))
        D_f = _final_state(model)
        for i in range(2):
            expected = ops.tensor(np.diag(np.eye(2)[i]), microcanonical_state(model.apparatus, i))
            assert ops.max_abs(ens.select_outcome(D_f, model, i) - expected) <= 1e-15
            assert ens.sector_weight(D_f, model, i) == pytest.approx([0.3, 0.7][i])

    def test_zero_weight(self):
        model = _model(np.diag([1.0, 0.0]))
        with pytest.raises(ens.ZeroProbabilityError):
            ens.select_outcome(_final_state(model), model, 1)

    def test_degenerate_block(self):
        fam = ProjectorFamily.diagonal([1.0, 1.0, -1.0])
        r0 = ops.random_density(3, substream(2, "r0"))
        model = _model(r0, fam=fam)
        D_f = _final_state(model)
        for i in range(2):
            lhs = ops.partial_trace(ens.select_outcome(D_f, model, i), model.dims, "S")
            assert ops.max_abs(lhs - ens.luders_update(r0, fam, i)) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_two_path_reduction(seed):
    r0 = ops.random_density(2, substream(seed, "r0"))
    model = _model(r0)
    D_f = _final_state(model)
    for i in range(2):
        lhs = ops.partial_trace(ens.select_outcome(D_f, model, i), model.dims, "S")
        assert ops.max_abs(lhs - ens.luders_update(r0, SZ, i)) <= 1e-12


class TestSampling:
    def test_certain(self):
        np.testing.assert_array_equal(ens.sample_runs(ens.OutcomeDistribution((1.0, 0.0)), 500, 3), [500, 0])

    def test_deterministic(self):
        d = ens.OutcomeDistribution((0.3, 0.7))
        np.testing.assert_array_equal(ens.sample_runs(d, 1000, 9), ens.sample_runs(d, 1000, 9))
        assert ens.sample_runs(d, 1000, 9).sum() == 1000

    def test_errors(self):
        with pytest.raises(ValueError):
            ens.sample_runs(ens.OutcomeDistribution((0.5, 0.5)), 0, 1)
        with pytest.raises(ValueError):
            ens.sample_runs(ens.OutcomeDistribution.empirical([1, 1]), 10, 1)

    def test_concentration(self):
        N = 10**5
        d = ens.OutcomeDistribution((0.5, 0.5))
        ok = sum(abs(ens.sample_runs(d, N, s)[0] - N / 2) <= 3 * np.sqrt(N / 4) for s in range(100))
        assert ok >= 99

    def test_within_sigma(self):
        assert ens.within_sigma([50, 50], [0.5, 0.5])
        assert not ens.within_sigma([80, 20], [0.5, 0.5])


class TestMerge:
    def test_examples(self):
        assert ens.merge_subensembles([(2, (1, 0)), (2, (0, 1))]) == (4, (Fraction(1, 2), Fraction(1, 2)))
        q = (Fraction(2, 3), Fraction(1, 3))
        assert ens.merge_subensembles([(3, q), (1, (1, 0))]) == (4, (Fraction(3, 4), Fraction(1, 4)))

    def test_self_merge(self):
        q = (Fraction(2, 7), Fraction(5, 7))
        assert ens.merge_subensembles([(7, q), (7, q)]) == (14, q)

    def test_errors(self):
        with pytest.raises(ValueError):
            ens.merge_subensembles([])
        with pytest.raises(ValueError):
            ens.merge_subensembles([(2, (0.5, 0.6))])
        with pytest.raises(ValueError):
            ens.merge_subensembles([(0, (1, 0))])


counts3 = st.lists(st.integers(0, 50), min_size=3, max_size=3).filter(lambda c: sum(c) > 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(counts3, min_size=3, max_size=6), st.randoms(use_true_random=False))
def test_merge_associative_and_order_free(groups, rnd):
    nodes = [(sum(c), tuple(Fraction(x, sum(c)) for x in c)) for c in groups]
    flat = ens.merge_subensembles(nodes)
    left = ens.merge_subensembles([ens.merge_subensembles(nodes[:2]), *nodes[2:]])
    right = ens.merge_subensembles([nodes[0], ens.merge_subensembles(nodes[1:])])
    shuffled = list(nodes)
    rnd.shuffle(shuffled)
    assert flat == left == right == ens.merge_subensembles(shuffled)


class TestHierarchy:
    def test_outcome_partition(self):
        report = ens.hierarchy_audit(ens.outcome_partition([30, 70]), born=[0.3, 0.7])
        assert report.exact and report.passed
        assert report.root_weights == (Fraction(3, 10), Fraction(7, 10))
        assert report.max_z == 0

    def test_corruption_flagged_with_path(self):
        root = ens.random_hierarchy(ens.OutcomeDistribution((0.4, 0.6)), 1000, 4, depth=3)
        path, node = next((p, n) for p, n in root.walk() if len(p) == 2)
        c = list(node.counts)
        bad = (c[0] + 1, c[1] - 1) if c[1] > 0 else (c[0] - 1, c[1] + 1)
        report = ens.hierarchy_audit(root.replace(path, ens.SubensembleNode(bad, node.children)))
        assert not report.exact
        assert report.failures[0][0] == ens.format_path(path[:1])

    def test_run_count_mismatch(self):
        root = ens.SubensembleNode((3, 1), (ens.SubensembleNode((2, 0)), ens.SubensembleNode((1, 0))))
        report = ens.hierarchy_audit(root)
        assert not report.exact and report.failures[0][0] == "root"

    def test_random_tree(self):
        dist = ens.OutcomeDistribution((0.25, 0.75))
        root = ens.random_hierarchy(dist, 10**4, 11, depth=3)
        assert root.N == 10**4
        depth = max(len(p) for p, _ in root.walk())
        assert depth == 2
        report = ens.hierarchy_audit(root, dist.probabilities)
        assert report.exact
        assert report.born_consistent

    def test_born_fraction_over_seeds(self):
        dist = ens.OutcomeDistribution((0.5, 0.5))
        ok = sum(ens.hierarchy_audit(ens.random_hierarchy(dist, 10**4, s), dist.probabilities).born_consistent
                 for s in range(100))
        assert ok >= 99
