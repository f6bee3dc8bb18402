import numpy as np
import pytest

from uw_online_fwer import procedures
from uw_online_fwer.closure import ProcedureClosureFamily, shortcut_run
from uw_online_fwer.core import (
    GammaSequence,
    GraphWeights,
    LagStructure,
    ProcedureChoices,
    PValueHistory,
)
from uw_online_fwer.exceptions import InvariantViolation
from uw_online_fwer.procedures import (
    AddisFamily,
    AddisParams,
    AddisSpending,
    AlphaSpending,
    AlphaSpendingFamily,
    ClosedAddisSpending,
    ClosedAlphaSpending,
    OnlineGraph,
    OnlineGraphFamily,
    addis_intersection_level,
    addis_spending_next,
    alpha_spending_intersection_level,
    alpha_spending_next,
    build_procedure,
    closed_addis_spending_next,
    closed_alpha_spending_next,
    offline_graph,
    online_graph_next,
    replay,
    run_procedure,
)
from uw_online_fwer.utils import random_pvalue_vectors

from .conftest import ALPHA, GAMMA_1

PARAMS = AddisParams.constant(0.8, 0.3)
ADDIS_1 = ALPHA * 0.5 * GAMMA_1


def addis(cls, batch_size=1, gamma=None):
    return cls(ALPHA, gamma or GammaSequence.inverse_square(), LagStructure.batches(batch_size), PARAMS)


class TestAlphaSpending:
    def test_levels(self, inv_square):
        procedure = AlphaSpending(ALPHA, inv_square)
        assert alpha_spending_next(procedure.state, inv_square) == pytest.approx(0.121585, abs=1e-6)
        procedure.test(0.5)
        assert alpha_spending_next(procedure.state, inv_square) == pytest.approx(0.030396, abs=1e-6)

    def test_zero_weight(self):
        gamma = GammaSequence.from_list([1.0])
        state = AlphaSpending(ALPHA, gamma).run([0.01])
        assert alpha_spending_next(state, gamma) == 0.0

    def test_records(self, inv_square):
        state = AlphaSpending(ALPHA, inv_square).run([0.05, 0.05])
        assert state.rejections == {1}
        assert [r.tau_i for r in state.records] == [1.0, 1.0]


class TestClosedAlphaSpending:
    def test_first_level(self, inv_square):
        procedure = ClosedAlphaSpending(ALPHA, inv_square)
        assert closed_alpha_spending_next(procedure.state, inv_square) == ALPHA * GAMMA_1

    def test_rejection_keeps_counter(self, inv_square):
        state = ClosedAlphaSpending(ALPHA, inv_square).run([0.01])
        assert closed_alpha_spending_next(state, inv_square) == pytest.approx(0.121585, abs=1e-6)

    def test_acceptance_advances_counter(self, inv_square):
        state = ClosedAlphaSpending(ALPHA, inv_square).run([0.5])
        assert closed_alpha_spending_next(state, inv_square) == pytest.approx(0.030396, abs=1e-6)

    def test_requires_nonincreasing_gamma(self):
        with pytest.raises(InvariantViolation):
            ClosedAlphaSpending(ALPHA, GammaSequence.from_spec("list:0,1")).test(0.5)

    def test_uniform_improvement(self, inv_square):
        plain = AlphaSpending(ALPHA, inv_square)
        closed = ClosedAlphaSpending(ALPHA, inv_square)
        for pvalues in random_pvalue_vectors(2024, 100, 1000, signal_fraction=0.3):
            closed_state = run_procedure(closed, pvalues)
            assert run_procedure(plain, pvalues).rejections <= closed_state.rejections
            # along the closed procedure's own history
            assert all(
                r.alpha_i >= ALPHA * inv_square(r.index) for r in closed_state.records
            )

    def test_shortcut_of_family(self, inv_square):
        family = AlphaSpendingFamily(ALPHA, inv_square)
        procedure = ClosedAlphaSpending(ALPHA, inv_square)
        assert procedure.family().name == family.name
        for pvalues in random_pvalue_vectors(1, 40, 50):
            decisions = shortcut_run(family, pvalues)
            state = run_procedure(procedure, pvalues)
            assert decisions.levels == state.levels
            assert decisions.rejection_set == state.rejections


@pytest.mark.parametrize(
    "subset, i, rank",
    [((1, 3), 3, 2), ((5,), 5, 1), ((1, 2, 3), 3, 3)],
)
def test_alpha_spending_intersection_level(inv_square, subset, i, rank):
    level = alpha_spending_intersection_level(subset, i, inv_square, ALPHA)
    assert level == ALPHA * inv_square(rank)


def test_alpha_spending_intersection_level_outside_set(inv_square):
    with pytest.raises(ValueError):
        alpha_spending_intersection_level((1, 3), 2, inv_square, ALPHA)


class TestOnlineGraph:
    @pytest.fixture
    def half_gamma(self):
        return GammaSequence.from_list([0.5, 0.5])

    @pytest.mark.parametrize(
        "variant, expected",
        [("paper-literal", 0.12), ("fallback-standard", 0.2)],
    )
    def test_inherited_level(self, half_gamma, variant, expected):
        weights = GraphWeights(edges={(1, 2): 1.0})
        procedure = OnlineGraph(ALPHA, half_gamma, weights, variant)
        first = procedure.test(0.05)
        assert first.alpha_i == pytest.approx(0.1)
        assert first.rejected
        assert online_graph_next(procedure.state, half_gamma, weights, variant) == pytest.approx(expected)

    def test_accepted_predecessor_passes_nothing(self, half_gamma):
        weights = GraphWeights(edges={(1, 2): 1.0})
        state = OnlineGraph(ALPHA, half_gamma, weights).run([0.5])
        assert online_graph_next(state, half_gamma, weights) == pytest.approx(0.1)

    @pytest.mark.parametrize("variant", ["paper-literal", "fallback-standard"])
    def test_zero_weights_reduce_to_alpha_spending(self, inv_square, variant):
        pvalues = next(random_pvalue_vectors(4, 1000, 1, signal_fraction=0.2))
        graph = run_procedure(OnlineGraph(ALPHA, inv_square, GraphWeights(), variant), pvalues)
        plain = run_procedure(AlphaSpending(ALPHA, inv_square), pvalues)
        assert graph.levels == plain.levels

    @pytest.mark.parametrize("variant", ["paper-literal", "fallback-standard"])
    def test_shortcut_of_family(self, inv_square, variant):
        weights = GraphWeights.from_spec("lag1:0.5,lag2:0.5")
        procedure = OnlineGraph(ALPHA, inv_square, weights, variant)
        family = procedure.family()
        assert isinstance(family, OnlineGraphFamily)
        for pvalues in random_pvalue_vectors(5, 30, 30):
            decisions = shortcut_run(family, pvalues)
            assert decisions.levels == run_procedure(procedure, pvalues).levels

    def test_level_cache_is_bounded(self, inv_square, monkeypatch):
        weights = GraphWeights.from_spec("lag1:0.5,lag2:0.5")
        expected = OnlineGraphFamily(ALPHA, inv_square, weights)
        monkeypatch.setattr(procedures, "LEVEL_CACHE_SIZE", 2)
        small = OnlineGraphFamily(ALPHA, inv_square, weights)
        assert small._level.cache_info().maxsize == 2
        for pvalues in random_pvalue_vectors(6, 12, 10):
            assert shortcut_run(small, pvalues).levels == shortcut_run(expected, pvalues).levels

    def test_general_gamma_allowed(self):
        gamma = GammaSequence.from_spec("list:0,1")
        state = OnlineGraph(ALPHA, gamma, GraphWeights()).run([0.5, 0.1])
        assert state.rejections == {2}


class TestOfflineGraph:
    HOLM = [[0.0, 1.0], [1.0, 0.0]]

    def test_holm(self):
        assert offline_graph([0.01, 0.03], [0.5, 0.5], self.HOLM, 0.1) == {1, 2}

    def test_holm_stops(self):
        assert offline_graph([0.01, 0.12], [0.5, 0.5], self.HOLM, 0.1) == {1}

    def test_single_hypothesis(self):
        assert offline_graph([0.01], [1.0], [[0.0]], 0.05) == {1}

    def test_nothing_rejected(self):
        assert offline_graph([0.9, 0.9], [0.5, 0.5], self.HOLM, 0.1) == frozenset()

    def test_fixed_sequence_graph(self):
        graph = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]
        assert offline_graph([0.01, 0.04, 0.05], [1.0, 0.0, 0.0], graph, 0.05) == {1, 2, 3}
        assert offline_graph([0.06, 0.01, 0.01], [1.0, 0.0, 0.0], graph, 0.05) == frozenset()

    @pytest.mark.parametrize(
        "gammas, graph",
        [
            ([0.5, 0.5], [[0.5, 0.5], [1.0, 0.0]]),
            ([0.5, 0.5], [[0.0, 1.5], [1.0, 0.0]]),
            ([0.7, 0.7], HOLM),
            ([0.5], HOLM),
        ],
    )
    def test_invalid_inputs(self, gammas, graph):
        with pytest.raises(InvariantViolation):
            offline_graph([0.1, 0.1], gammas, graph, 0.1)

    def test_agrees_with_bonferroni_holm(self):
        rng = np.random.default_rng(3)
        m = 4
        graph = (np.ones((m, m)) - np.eye(m)) / (m - 1)
        for _ in range(200):
            p = rng.random(m) * 0.2
            order = np.argsort(p)
            holm = set()
            for rank, k in enumerate(order):
                if p[k] > 0.1 / (m - rank):
                    break
                holm.add(int(k) + 1)
            assert offline_graph(p, [1 / m] * m, graph, 0.1) == holm


class TestAddisSpending:
    def test_first_level(self, inv_square):
        procedure = addis(AddisSpending)
        assert addis_spending_next(
            procedure.state, inv_square, LagStructure.independent(), PARAMS
        ) == pytest.approx(ADDIS_1)

    def test_discarded_pvalue_spends_nothing(self, inv_square):
        state = addis(AddisSpending).run([0.9])
        level = addis_spending_next(state, inv_square, LagStructure.independent(), PARAMS)
        assert level == state.record(1).alpha_i

    def test_candidate_advances_counter(self, inv_square):
        state = addis(AddisSpending).run([0.5])
        level = addis_spending_next(state, inv_square, LagStructure.independent(), PARAMS)
        assert level == pytest.approx(0.015198, abs=1e-6)

    def test_records_thresholds(self):
        record = addis(AddisSpending, batch_size=3).run([0.5, 0.5]).record(2)
        assert (record.tau_i, record.lambda_i, record.lag) == (0.8, 0.3, 1)
        assert record.candidate and not record.non_discarded_candidate

    @pytest.mark.parametrize("tau, lambda_", [(0.8, 0.9), (0.8, 0.1), (0.0, 0.0), (1.5, 0.5)])
    def test_threshold_ranges(self, inv_square, tau, lambda_):
        procedure = AddisSpending(
            ALPHA, inv_square, LagStructure.independent(), AddisParams.constant(tau, lambda_)
        )
        with pytest.raises(InvariantViolation):
            procedure.test(0.5)

    def test_lambda_message(self, inv_square):
        procedure = AddisSpending(
            ALPHA, inv_square, LagStructure.independent(), AddisParams.constant(0.8, 0.9)
        )
        with pytest.raises(InvariantViolation, match=r"lambda must lie in \[alpha\*tau, tau\)"):
            procedure.test(0.5)

    def test_thresholds_see_only_independent_prefix(self, inv_square):
        seen = {}

        def tau(i, history):
            seen[i] = len(history)
            return 0.8

        lags = LagStructure.batches(3)
        params = AddisParams(tau, lambda i, history: 0.3)
        AddisSpending(ALPHA, inv_square, lags, params).run([0.5] * 9)
        assert seen == {i: i - lags(i) - 1 for i in range(1, 10)}

    def test_requires_nonincreasing_gamma(self):
        with pytest.raises(InvariantViolation):
            addis(AddisSpending, gamma=GammaSequence.from_spec("list:0,1")).test(0.5)


class TestAddisIntersectionLevel:
    def test_lagged_neighbour_outside_set(self, inv_square):
        level = addis_intersection_level(
            (2,), 2, PValueHistory([0.5]), inv_square, LagStructure.batches(2), PARAMS, ALPHA
        )
        assert level == pytest.approx(ADDIS_1)

    def test_lagged_neighbour_counts_unconditionally(self, inv_square):
        for p1 in (0.001, 0.5, 0.9):
            level = addis_intersection_level(
                (1, 2), 2, PValueHistory([p1]), inv_square, LagStructure.batches(2), PARAMS, ALPHA
            )
            assert level == pytest.approx(ALPHA * 0.5 * inv_square(2))

    @pytest.mark.parametrize("p1, rank", [(0.5, 2), (0.9, 1), (0.1, 1)])
    def test_independence(self, inv_square, p1, rank):
        level = addis_intersection_level(
            (1, 3), 3, PValueHistory([p1, 0.5]), inv_square, LagStructure.independent(), PARAMS, ALPHA
        )
        assert level == pytest.approx(ALPHA * 0.5 * inv_square(rank))

    def test_index_outside_set(self, inv_square):
        with pytest.raises(ValueError):
            addis_intersection_level(
                (1,), 2, PValueHistory([0.5]), inv_square, LagStructure.independent(), PARAMS, ALPHA
            )


class TestClosedAddisSpending:
    def test_rejection_inside_window_frees_budget(self, inv_square):
        lags = LagStructure.batches(2)
        state = addis(ClosedAddisSpending, batch_size=2).run([0.001])
        assert closed_addis_spending_next(state, inv_square, lags, PARAMS) == pytest.approx(ADDIS_1)
        # the plain procedure counts the window unconditionally
        assert addis_spending_next(state, inv_square, lags, PARAMS) == pytest.approx(
            ALPHA * 0.5 * inv_square(2)
        )

    def test_acceptance_inside_window(self, inv_square):
        state = addis(ClosedAddisSpending, batch_size=2).run([0.5])
        level = closed_addis_spending_next(state, inv_square, LagStructure.batches(2), PARAMS)
        assert level == pytest.approx(ALPHA * 0.5 * inv_square(2))

    def test_coincides_under_independence(self):
        pvalues = next(random_pvalue_vectors(8, 1000, 1, signal_fraction=0.3))
        closed = run_procedure(addis(ClosedAddisSpending), pvalues)
        plain = run_procedure(addis(AddisSpending), pvalues)
        assert closed.records == plain.records

    @pytest.mark.parametrize("batch_size", [2, 5, 10])
    def test_uniform_improvement(self, batch_size):
        closed = addis(ClosedAddisSpending, batch_size)
        plain = addis(AddisSpending, batch_size)
        for pvalues in random_pvalue_vectors(batch_size, 100, 200, signal_fraction=0.4):
            closed_state = run_procedure(closed, pvalues)
            plain_state = run_procedure(plain, pvalues)
            assert plain_state.rejections <= closed_state.rejections
            assert all(c >= p for c, p in zip(closed_state.levels, plain_state.levels))

    def test_rejected_hypotheses_are_kept_candidates(self):
        for pvalues in random_pvalue_vectors(9, 100, 50, signal_fraction=0.5, signal_scale=0.02):
            for record in run_procedure(addis(ClosedAddisSpending, 4), pvalues).records:
                if record.rejected:
                    assert record.candidate and record.non_discarded_candidate

    @pytest.mark.parametrize("batch_size", [1, 3])
    def test_shortcut_of_family(self, batch_size):
        procedure = addis(ClosedAddisSpending, batch_size)
        family = procedure.family()
        assert isinstance(family, AddisFamily)
        for pvalues in random_pvalue_vectors(batch_size, 30, 30):
            decisions = shortcut_run(family, pvalues)
            assert decisions.levels == run_procedure(procedure, pvalues).levels


class TestSequentialRunner:
    def test_replay(self, inv_square):
        procedure = ClosedAlphaSpending(ALPHA, inv_square)
        state = procedure.run(next(random_pvalue_vectors(0, 50, 1)))
        assert replay(state, procedure)

    def test_fresh_copies_are_independent(self, inv_square):
        procedure = AlphaSpending(ALPHA, inv_square)
        run_procedure(procedure, [0.1, 0.2])
        assert len(procedure.state) == 0

    def test_default_family_is_procedure_closure(self, inv_square):
        assert isinstance(AlphaSpending(ALPHA, inv_square).family(), ProcedureClosureFamily)

    @pytest.mark.parametrize("procedure_id", list(ProcedureChoices))
    def test_build_procedure(self, inv_square, procedure_id):
        procedure = build_procedure(procedure_id, ALPHA, inv_square)
        assert procedure.procedure_id == procedure_id
        assert len(run_procedure(procedure, [0.01, 0.5, 0.9])) == 3

    def test_build_unknown_procedure(self, inv_square):
        with pytest.raises(ValueError):
            build_procedure("holm", ALPHA, inv_square)
