"""Online alpha-adjustment procedures and their intersection-test families.

Each `*_next` function computes the level of the next hypothesis from a
`ProcedureState`; the `OnlineProcedure` subclasses wrap them into sequential
state machines that append one `StepRecord` per p-value.
"""

import copy
import logging
import math
from abc import ABC, abstractmethod
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from functools import lru_cache
from typing import ClassVar

import numpy as np

from .closure import (
    IndexSet,
    IntersectionTestFamily,
    closure_of_procedure,
    rank_in,
    subset_to_mask,
)
from .conf import uw_online_fwer_settings
from .core import (
    GammaSequence,
    GraphVariantChoices,
    GraphWeights,
    LagStructure,
    ProcedureChoices,
    ProcedureState,
    PValueHistory,
    StepRecord,
)
from .exceptions import InvariantViolation

logger = logging.getLogger(__name__)

Threshold = Callable[[int, PValueHistory], float]
LEVEL_CACHE_SIZE = 1 << 16


@dataclass(frozen=True)
class AddisParams:
    """Candidate threshold tau_i and discovery threshold lambda_i.

    Both are called as `f(i, history)` where `history` exposes only
    P_1, ..., P_{i - l_i - 1}.
    """

    tau: Threshold
    lambda_: Threshold
    name: str = "custom"

    @classmethod
    def constant(cls, tau: float, lambda_: float) -> "AddisParams":
        return cls(lambda i, history: tau, lambda i, history: lambda_, f"{tau}/{lambda_}")

    def thresholds(self, i: int, history: PValueHistory, alpha: float) -> tuple[float, float]:
        tau = float(self.tau(i, history))
        lambda_ = float(self.lambda_(i, history))
        if not 0.0 < tau <= 1.0:
            raise InvariantViolation(f"{uw_online_fwer_settings.TAU_RANGE_ERROR_MSG} (tau_{i} = {tau!r})")
        if not alpha * tau <= lambda_ < tau:
            raise InvariantViolation(
                f"{uw_online_fwer_settings.LAMBDA_RANGE_ERROR_MSG}"
                f" (tau_{i} = {tau!r}, lambda_{i} = {lambda_!r})"
            )
        return tau, lambda_


def _require_nonincreasing(gamma: GammaSequence, procedure: str) -> None:
    if not gamma.declared_nonincreasing:
        raise InvariantViolation(
            str(uw_online_fwer_settings.NONINCREASING_REQUIRED_ERROR_MSG)
            % {"procedure": procedure}
        )


# ---------------------------------------------------------------------------
# Alpha-Spending


def alpha_spending_next(state: ProcedureState, gamma: GammaSequence) -> float:
    """alpha_i = alpha * gamma_i."""
    return state.alpha * gamma(state.next_index)


def closed_alpha_spending_next(state: ProcedureState, gamma: GammaSequence) -> float:
    """alpha_i = alpha * gamma_t(i), t(i) = 1 + number of earlier non-rejections."""
    _require_nonincreasing(gamma, "Closed Alpha-Spending")
    i = state.next_index
    return state.alpha * gamma(1 + state.non_rejections(i - 1))


def alpha_spending_intersection_level(
    subset: IndexSet, i: int, gamma: GammaSequence, alpha: float
) -> float:
    """alpha_i^I = alpha * gamma_{t_I(i)}, t_I(i) = |{j in I : j <= i}|."""
    return alpha * gamma(rank_in(subset, i))


# ---------------------------------------------------------------------------
# Online-Graph


def _graph_level(alpha: float, gamma_i: float, inherited: float, variant: str) -> float:
    if variant == GraphVariantChoices.PAPER_LITERAL:
        return alpha * (gamma_i + inherited)
    return alpha * gamma_i + inherited


def online_graph_next(
    state: ProcedureState,
    gamma: GammaSequence,
    weights: GraphWeights,
    variant: str | None = None,
) -> float:
    """Alpha-Spending plus the levels of rejected predecessors passed on
    along g_{j,i}.

    paper-literal:     alpha_i = alpha * (gamma_i + sum g_{j,i} alpha_j r_j)
    fallback-standard: alpha_i = alpha * gamma_i + sum g_{j,i} alpha_j r_j
    """
    variant = variant or uw_online_fwer_settings.DEFAULT_ONLINE_GRAPH_VARIANT
    i = state.next_index
    inherited = 0.0
    for j, g in weights.incoming(i):
        record = state.record(j)
        if record.rejected:
            inherited += g * record.alpha_i
    return _graph_level(state.alpha, gamma(i), inherited, variant)


def offline_graph(
    pvalues: Sequence[float],
    gammas: Sequence[float],
    weights: Sequence[Sequence[float]],
    alpha: float,
) -> frozenset[int]:
    """The offline graphical procedure on m hypotheses, as a reference.

    Repeatedly rejects the hypothesis with the smallest P_j / alpha_j while
    P_j <= alpha_j, passes its level on along the graph and rewires the
    remaining edges. A rewired edge whose denominator 1 - g_{j,i} g_{i,j}
    vanishes is set to 0.
    """
    p = np.asarray(pvalues, dtype=float)
    gamma = np.asarray(gammas, dtype=float)
    g = np.array(weights, dtype=float)
    m = p.size
    tolerance = uw_online_fwer_settings.SUM_TOLERANCE
    if m < 1 or gamma.shape != (m,) or g.shape != (m, m):
        raise InvariantViolation(
            f"expected {m} weights and a {m}x{m} graph, got {gamma.shape} and {g.shape}"
        )
    if np.any((p < 0) | (p > 1)) or np.any(gamma < 0) or gamma.sum() > 1 + tolerance:
        raise InvariantViolation("p-values must lie in [0, 1] and gammas sum to at most 1")
    if np.any(g < 0) or np.any(np.diag(g) != 0) or np.any(g.sum(axis=1) > 1 + tolerance):
        raise InvariantViolation("graph weights must be non-negative, loop-free, rows <= 1")

    levels = alpha * gamma
    active = np.ones(m, dtype=bool)
    rejected: list[int] = []
    while active.any():
        candidates = np.flatnonzero(active)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(
                levels[candidates] > 0,
                p[candidates] / levels[candidates],
                np.where(p[candidates] == 0, 0.0, np.inf),
            )
        i = int(candidates[np.argmin(ratios)])
        if p[i] > levels[i]:
            break
        rejected.append(i + 1)
        active[i] = False
        levels = np.where(active, levels + levels[i] * g[i], 0.0)
        numerator = g + np.outer(g[:, i], g[i, :])
        denominator = (1.0 - g[:, i] * g[i, :])[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            rewired = np.where(denominator > 0, numerator / denominator, 0.0)
        keep = np.outer(active, active)
        np.fill_diagonal(keep, False)
        g = np.where(keep, rewired, 0.0)
    logger.debug("offline graph rejected %s", rejected)
    return frozenset(rejected)


# ---------------------------------------------------------------------------
# ADDIS-Spending


def _addis_level(alpha: float, gamma: GammaSequence, tau: float, lambda_: float, t: int) -> float:
    return alpha * (tau - lambda_) * gamma(t)


def _addis_step(
    state: ProcedureState,
    gamma: GammaSequence,
    lags: LagStructure,
    params: AddisParams,
    closed: bool,
) -> tuple[float, float, float, int]:
    """(alpha_i, tau_i, lambda_i, l_i) of the next hypothesis."""
    _require_nonincreasing(gamma, "Closed ADDIS-Spending" if closed else "ADDIS-Spending")
    i = state.next_index
    lag = lags(i)
    independent_upto = i - lag - 1
    tau, lambda_ = params.thresholds(i, state.history(independent_upto), state.alpha)
    t = 1 + state.discard_balance(independent_upto)
    if closed:
        # inside the lag window only rejections free the budget
        t += state.non_rejections(i - 1) - state.non_rejections(independent_upto)
    else:
        t += lag
    return _addis_level(state.alpha, gamma, tau, lambda_, t), tau, lambda_, lag


def addis_spending_next(
    state: ProcedureState, gamma: GammaSequence, lags: LagStructure, params: AddisParams
) -> float:
    """t(i) = 1 + l_i + sum_{j <= i - l_i - 1} (s_j - c_j)."""
    return _addis_step(state, gamma, lags, params, closed=False)[0]


def closed_addis_spending_next(
    state: ProcedureState, gamma: GammaSequence, lags: LagStructure, params: AddisParams
) -> float:
    """t(i) = 1 + sum_{j <= i - l_i - 1} (s_j - c_j) + sum_{i - l_i <= j < i} (1 - r_j)."""
    return _addis_step(state, gamma, lags, params, closed=True)[0]


def addis_intersection_level(
    subset: IndexSet,
    i: int,
    history: PValueHistory,
    gamma: GammaSequence,
    lags: LagStructure,
    params: AddisParams,
    alpha: float,
) -> float:
    """alpha_i^I = alpha (tau_i - lambda_i) gamma_{t_I(i)} with
    t_I(i) = 1 + |L_i & I| + sum_{j in I, j <= i - l_i - 1} (s_j - c_j)."""
    rank_in(subset, i)
    lag = lags(i)
    independent_upto = i - lag - 1
    tau, lambda_ = params.thresholds(i, history.prefix(independent_upto), alpha)
    t = 1
    for j in subset:
        if j >= i:
            break
        if j > independent_upto:
            t += 1
            continue
        tau_j, lambda_j = params.thresholds(j, history.prefix(j - lags(j) - 1), alpha)
        p = history[j - 1]
        t += (p <= tau_j) - (p <= lambda_j)
    return _addis_level(alpha, gamma, tau, lambda_, t)


# ---------------------------------------------------------------------------
# Intersection-test families


class AlphaSpendingFamily(IntersectionTestFamily):
    """Alpha-Spending applied to the subsequence I."""

    name = "alpha-spending"

    def __init__(self, alpha: float, gamma: GammaSequence):
        self.alpha = alpha
        self.gamma = gamma

    def level(self, subset: IndexSet, i: int, history: PValueHistory) -> float:
        return alpha_spending_intersection_level(subset, i, self.gamma, self.alpha)


class AddisFamily(IntersectionTestFamily):
    name = "addis"

    def __init__(
        self, alpha: float, gamma: GammaSequence, lags: LagStructure, params: AddisParams
    ):
        self.alpha = alpha
        self.gamma = gamma
        self.lags = lags
        self.params = params

    def level(self, subset: IndexSet, i: int, history: PValueHistory) -> float:
        return addis_intersection_level(
            subset, i, history, self.gamma, self.lags, self.params, self.alpha
        )


class OnlineGraphFamily(IntersectionTestFamily):
    """alpha_i^I = alpha (gamma_i + sum_{j < i, j not in I} g_{j,i} alpha_j^{I + j}).

    The level of i only depends on I below i, so levels are cached on
    (i, bit mask of I below i).
    """

    name = "online-graph"

    def __init__(
        self,
        alpha: float,
        gamma: GammaSequence,
        weights: GraphWeights,
        variant: str | None = None,
    ):
        self.alpha = alpha
        self.gamma = gamma
        self.weights = weights
        self.variant = variant or uw_online_fwer_settings.DEFAULT_ONLINE_GRAPH_VARIANT
        self._level = lru_cache(maxsize=LEVEL_CACHE_SIZE)(self._level_below)

    def _level_below(self, i: int, below: int) -> float:
        inherited = 0.0
        for j, g in self.weights.incoming(i):
            if not below >> (j - 1) & 1:
                inherited += g * self._level(j, below & ((1 << (j - 1)) - 1))
        return _graph_level(self.alpha, self.gamma(i), inherited, self.variant)

    def level(self, subset: IndexSet, i: int, history: PValueHistory) -> float:
        rank_in(subset, i)
        return self._level(i, subset_to_mask(j for j in subset if j < i))


class BackwardGraphFamily(IntersectionTestFamily):
    """A graph passing every level back to H_1, written as intersection tests.

    phi_I = 1 if 1 in I and P_1 <= alpha (gamma_1 + sum_{i not in I} gamma_i),
    or P_i <= alpha gamma_i for some i in I. The level of H_1 depends on
    indices after it, so this family is not predictable. The mass passed
    back defaults to `gamma.total_mass`.
    """

    name = "backward-graph"
    has_levels = False

    def __init__(self, alpha: float, gamma: GammaSequence, total_mass: float | None = None):
        self.alpha = alpha
        self.gamma = gamma
        self.total_mass = gamma.total_mass if total_mass is None else total_mass

    def evaluate(self, subset: IndexSet, pvalues: Sequence[float]) -> bool:
        if subset[0] == 1:
            outside = max(0.0, self.total_mass - math.fsum(self.gamma(i) for i in subset))
            if pvalues[0] <= self.alpha * (self.gamma(1) + outside):
                return True
        return any(pvalues[i - 1] <= self.alpha * self.gamma(i) for i in subset)


# ---------------------------------------------------------------------------
# Sequential procedures


class OnlineProcedure(ABC):
    """A sequential state machine testing one p-value per call to `test`."""

    procedure_id: ClassVar[ProcedureChoices]

    def __init__(self, alpha: float, gamma: GammaSequence):
        self.alpha = alpha
        self.gamma = gamma
        self.state = ProcedureState(self.procedure_id, alpha)

    @property
    def name(self) -> str:
        return self.procedure_id.value

    @abstractmethod
    def next_level(self) -> float:
        """Level of the next hypothesis given the current state."""

    def test(self, p_value: float) -> StepRecord:
        record = StepRecord.decide(
            self.state.next_index, float(p_value), self.next_level(), 1.0, self.alpha
        )
        self.state.append(record)
        return record

    def run(self, pvalues: Iterable[float]) -> ProcedureState:
        for p in pvalues:
            self.test(p)
        return self.state

    def fresh(self) -> "OnlineProcedure":
        """Same parameters, empty history."""
        clone = copy.copy(self)
        clone.state = ProcedureState(self.procedure_id, self.alpha)
        return clone

    def family(self) -> IntersectionTestFamily:
        """Intersection tests whose closure makes the same decisions."""
        return closure_of_procedure(self)


class AlphaSpending(OnlineProcedure):
    procedure_id = ProcedureChoices.ALPHA_SPENDING

    def next_level(self) -> float:
        return alpha_spending_next(self.state, self.gamma)


class ClosedAlphaSpending(OnlineProcedure):
    procedure_id = ProcedureChoices.CLOSED_ALPHA_SPENDING

    def next_level(self) -> float:
        return closed_alpha_spending_next(self.state, self.gamma)

    def family(self) -> IntersectionTestFamily:
        return AlphaSpendingFamily(self.alpha, self.gamma)


class OnlineGraph(OnlineProcedure):
    procedure_id = ProcedureChoices.ONLINE_GRAPH

    def __init__(
        self,
        alpha: float,
        gamma: GammaSequence,
        weights: GraphWeights,
        variant: str | None = None,
    ):
        super().__init__(alpha, gamma)
        self.weights = weights
        self.variant = variant or uw_online_fwer_settings.DEFAULT_ONLINE_GRAPH_VARIANT

    def next_level(self) -> float:
        return online_graph_next(self.state, self.gamma, self.weights, self.variant)

    def family(self) -> IntersectionTestFamily:
        return OnlineGraphFamily(self.alpha, self.gamma, self.weights, self.variant)


class AddisSpending(OnlineProcedure):
    procedure_id = ProcedureChoices.ADDIS
    closed: ClassVar[bool] = False

    def __init__(
        self, alpha: float, gamma: GammaSequence, lags: LagStructure, params: AddisParams
    ):
        super().__init__(alpha, gamma)
        self.lags = lags
        self.params = params

    def next_level(self) -> float:
        return _addis_step(self.state, self.gamma, self.lags, self.params, self.closed)[0]

    def test(self, p_value: float) -> StepRecord:
        level, tau, lambda_, lag = _addis_step(
            self.state, self.gamma, self.lags, self.params, self.closed
        )
        record = StepRecord.decide(
            self.state.next_index, float(p_value), level, tau, lambda_, lag
        )
        self.state.append(record)
        return record


class ClosedAddisSpending(AddisSpending):
    procedure_id = ProcedureChoices.CLOSED_ADDIS
    closed = True

    def family(self) -> IntersectionTestFamily:
        return AddisFamily(self.alpha, self.gamma, self.lags, self.params)


PROCEDURE_CLASSES: dict[ProcedureChoices, type[OnlineProcedure]] = {
    cls.procedure_id: cls
    for cls in (AlphaSpending, ClosedAlphaSpending, OnlineGraph, AddisSpending, ClosedAddisSpending)
}


def build_procedure(
    procedure_id: ProcedureChoices | str,
    alpha: float,
    gamma: GammaSequence,
    lags: LagStructure | None = None,
    params: AddisParams | None = None,
    weights: GraphWeights | None = None,
    variant: str | None = None,
) -> OnlineProcedure:
    """Instantiate a procedure by its tag; missing ADDIS/graph arguments fall
    back to independence, tau = 0.8 and lambda = 0.3, and an empty graph."""
    cls = PROCEDURE_CLASSES[ProcedureChoices(procedure_id)]
    if issubclass(cls, AddisSpending):
        return cls(
            alpha,
            gamma,
            lags or LagStructure.independent(),
            params or AddisParams.constant(0.8, 0.3),
        )
    if cls is OnlineGraph:
        return cls(alpha, gamma, weights or GraphWeights(), variant)
    return cls(alpha, gamma)


def run_procedure(procedure: OnlineProcedure, pvalues: Iterable[float]) -> ProcedureState:
    """Run a fresh copy of `procedure` over the stream."""
    return procedure.fresh().run(pvalues)


def replay(state: ProcedureState, procedure: OnlineProcedure) -> bool:
    """Re-run the procedure on the recorded p-values; True iff every record
    is reproduced exactly."""
    return run_procedure(procedure, state.pvalues).records == state.records
