"""The online closure principle.

Index sets are sorted tuples of 1-based indices. Exhaustive routines encode
subsets of {1..n} as bit masks (bit i - 1 set when i is in the subset) and are
guarded by `ORACLE_MAX_N` / `CHECKER_MAX_N`.
"""

import logging
from abc import ABC
from bisect import bisect_left
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol

from .conf import uw_online_fwer_settings
from .core import PValueHistory, ProcedureState
from .exceptions import FamilyEvaluationError, InvariantViolation, SizeGuardError
from .utils import nudged

logger = logging.getLogger(__name__)

IndexSet = tuple[int, ...]


def mask_to_subset(mask: int) -> IndexSet:
    subset = []
    i = 1
    while mask:
        if mask & 1:
            subset.append(i)
        mask >>= 1
        i += 1
    return tuple(subset)


def subset_to_mask(subset: Iterable[int]) -> int:
    mask = 0
    for i in subset:
        mask |= 1 << (i - 1)
    return mask


def _guard(operation: str, n: int, limit: int | None, default: int) -> None:
    limit = default if limit is None else limit
    if n > limit:
        logger.warning("refusing %s on n = %d (limit %d)", operation, n, limit)
        raise SizeGuardError(
            str(uw_online_fwer_settings.SIZE_GUARD_ERROR_MSG)
            % {"operation": operation, "limit": limit, "n": n}
        )


class IntersectionTestFamily(ABC):
    """A family I -> phi_I of online intersection tests.

    Families with per-index levels implement `level`; `evaluate` then rejects
    H_I iff P_i <= alpha_i^I for some i in I. The level of index i receives
    only the history P_1, ..., P_{i-1}.
    """

    name: str = "family"
    has_levels: bool = True

    def level(self, subset: IndexSet, i: int, history: PValueHistory) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no per-index levels")

    def evaluate(self, subset: IndexSet, pvalues: Sequence[float]) -> bool:
        history = PValueHistory(pvalues)
        for i in subset:
            if pvalues[i - 1] <= self.level(subset, i, history.prefix(i - 1)):
                return True
        return False

    def levels(self, subset: IndexSet, pvalues: Sequence[float]) -> dict[int, float]:
        """All levels alpha_i^I of the index set."""
        history = PValueHistory(pvalues)
        return {i: self.level(subset, i, history.prefix(i - 1)) for i in subset}


class BonferroniIntersectionFamily(IntersectionTestFamily):
    """phi_I = 1 iff P_i <= alpha / |I| for some i in I.

    On {1, 2} this is the textbook family that is *not* predictable: P_1 in
    (alpha/2, alpha] and P_2 > alpha/2 reject {1} but not {1, 2}.
    """

    name = "section3-counterexample"

    def __init__(self, alpha: float):
        self.alpha = alpha

    def level(self, subset: IndexSet, i: int, history: PValueHistory) -> float:
        return self.alpha / len(subset)


@dataclass(frozen=True)
class ClosureDecisions:
    rejected: tuple[bool, ...]
    active_sets: tuple[IndexSet, ...] | None = None
    levels: tuple[float, ...] | None = None

    @property
    def rejection_set(self) -> frozenset[int]:
        return frozenset(i for i, r in enumerate(self.rejected, start=1) if r)

    def __len__(self) -> int:
        return len(self.rejected)


def _evaluate(family: IntersectionTestFamily, subset: IndexSet, pvalues) -> bool:
    try:
        return bool(family.evaluate(subset, pvalues))
    except Exception as err:
        raise FamilyEvaluationError(
            f"{family.name} failed on I = {set(subset)}: {err}", subset=subset
        ) from err


def _evaluate_all(family: IntersectionTestFamily, pvalues: Sequence[float]) -> list[bool]:
    """phi for every bit mask over {1..n}; index 0 (the empty set) is unused."""
    n = len(pvalues)
    phi = [False] * (1 << n)
    for mask in range(1, 1 << n):
        phi[mask] = _evaluate(family, mask_to_subset(mask), pvalues)
    return phi


def brute_force_closed(
    family: IntersectionTestFamily,
    pvalues: Sequence[float],
    max_n: int | None = None,
) -> ClosureDecisions:
    """Reject H_i iff phi_I = 1 for every nonempty I of {1..n} containing i."""
    n = len(pvalues)
    _guard("brute_force_closed", n, max_n, uw_online_fwer_settings.ORACLE_MAX_N)
    pvalues = tuple(float(p) for p in pvalues)
    phi = _evaluate_all(family, pvalues)
    # union of every unrejected index set
    unrejected = 0
    for mask in range(1, 1 << n):
        if not phi[mask]:
            unrejected |= mask
    return ClosureDecisions(
        rejected=tuple(not unrejected >> k & 1 for k in range(n))
    )


@dataclass(frozen=True)
class ShortcutStep:
    index: int
    p_value: float
    active_set: IndexSet
    level: float
    rejected: bool


def iter_shortcut(
    family: IntersectionTestFamily, pvalues: Iterable[float]
) -> Iterator[ShortcutStep]:
    """Test one intersection per step: I_i = {j < i : H_j accepted} + {i}."""
    if not family.has_levels:
        raise InvariantViolation(f"{family.name} has no per-index levels")
    seen: list[float] = []
    accepted: list[int] = []
    for i, p in enumerate(pvalues, start=1):
        p = float(p)
        seen.append(p)
        active = (*accepted, i)
        level = family.level(active, i, PValueHistory(seen, i - 1))
        rejected = p <= level
        logger.debug("H_%d: P = %r, level = %r, rejected = %s", i, p, level, rejected)
        if not rejected:
            accepted.append(i)
        yield ShortcutStep(i, p, active, level, rejected)


def shortcut_run(
    family: IntersectionTestFamily, pvalues: Iterable[float]
) -> ClosureDecisions:
    steps = list(iter_shortcut(family, pvalues))
    return ClosureDecisions(
        rejected=tuple(s.rejected for s in steps),
        active_sets=tuple(s.active_set for s in steps),
        levels=tuple(s.level for s in steps),
    )


# ---------------------------------------------------------------------------
# Grid-based falsifiers


@dataclass(frozen=True)
class PredictabilityViolation:
    subset: IndexSet
    superset: IndexSet
    pvalues: tuple[float, ...]

    def __str__(self) -> str:
        return (
            f"phi_{set(self.subset)} = 1 but phi_{set(self.superset)} = 0"
            f" at P = {self.pvalues}"
        )


@dataclass(frozen=True)
class ConsonanceViolation:
    subset: IndexSet
    pvalues: tuple[float, ...]

    def __str__(self) -> str:
        return (
            f"phi_{set(self.subset)} = 1 but no index of it has all sub-intersections"
            f" rejected at P = {self.pvalues}"
        )


@dataclass
class ViolationReport:
    """Counter-examples found on a finite grid. Empty is not a proof."""

    violations: list = field(default_factory=list)
    vectors_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def merge(self, other: "ViolationReport") -> "ViolationReport":
        return ViolationReport(
            self.violations + other.violations,
            self.vectors_checked + other.vectors_checked,
        )


def _grid_vectors(p_grid: Iterable[Sequence[float]], n: int) -> Iterator[tuple[float, ...]]:
    for vector in p_grid:
        if len(vector) < n:
            raise ValueError(f"grid vector {tuple(vector)} is shorter than n = {n}")
        yield tuple(float(p) for p in vector[:n])


def check_predictability(
    family: IntersectionTestFamily,
    n: int,
    p_grid: Iterable[Sequence[float]],
    max_n: int | None = None,
    max_violations: int | None = None,
) -> ViolationReport:
    """Report (I, I + J, P) whenever phi_I = 1 but phi_{I + J} = 0 for future J.

    Every I with maximum m is paired with every nonempty J of {m+1..n}, which
    covers all i in m..n of the definition at once.
    """
    _guard("check_predictability", n, max_n, uw_online_fwer_settings.CHECKER_MAX_N)
    report = ViolationReport()
    full = (1 << n) - 1
    for pvalues in _grid_vectors(p_grid, n):
        report.vectors_checked += 1
        phi = _evaluate_all(family, pvalues)
        for mask in range(1, 1 << n):
            if not phi[mask]:
                continue
            future = full & ~((1 << mask.bit_length()) - 1)
            extra = future
            while extra:
                if not phi[mask | extra]:
                    report.violations.append(
                        PredictabilityViolation(
                            mask_to_subset(mask), mask_to_subset(mask | extra), pvalues
                        )
                    )
                    if max_violations and len(report.violations) >= max_violations:
                        return report
                extra = (extra - 1) & future
    return report


def check_consonance(
    family: IntersectionTestFamily,
    n: int,
    p_grid: Iterable[Sequence[float]],
    max_n: int | None = None,
    max_violations: int | None = None,
) -> ViolationReport:
    """Report (I, P) whenever phi_I = 1 but every i in I lies in some
    unrejected sub-intersection of I."""
    _guard("check_consonance", n, max_n, uw_online_fwer_settings.CHECKER_MAX_N)
    report = ViolationReport()
    for pvalues in _grid_vectors(p_grid, n):
        report.vectors_checked += 1
        phi = _evaluate_all(family, pvalues)
        # covered[I]: union of the unrejected subsets of I
        covered = [0] * (1 << n)
        for mask in range(1, 1 << n):
            union = 0 if phi[mask] else mask
            rest = mask
            while rest:
                bit = rest & -rest
                union |= covered[mask ^ bit]
                rest ^= bit
            covered[mask] = union
            if phi[mask] and union == mask:
                report.violations.append(
                    ConsonanceViolation(mask_to_subset(mask), pvalues)
                )
                if max_violations and len(report.violations) >= max_violations:
                    return report
    return report


# ---------------------------------------------------------------------------
# Every online procedure is an online closed procedure


class OnlineProcedureLike(Protocol):
    name: str

    def fresh(self) -> "OnlineProcedureLike":
        ...

    def run(self, pvalues: Iterable[float]) -> ProcedureState:
        ...


class ProcedureClosureFamily(IntersectionTestFamily):
    """phi_I = 1 iff the procedure rejects some H_i with i in I.

    This family is predictable by construction, and its closure makes the
    same decisions as the procedure.
    """

    has_levels = False

    def __init__(self, procedure: OnlineProcedureLike):
        self.procedure = procedure
        self.name = f"closure of {procedure.name}"
        self._decisions = lru_cache(maxsize=64)(self._run)

    def _run(self, pvalues: tuple[float, ...]) -> frozenset[int]:
        return self.procedure.fresh().run(pvalues).rejections

    def evaluate(self, subset: IndexSet, pvalues: Sequence[float]) -> bool:
        # decisions on indices <= max(I) never look further
        horizon = subset[-1]
        rejections = self._decisions(tuple(float(p) for p in pvalues[:horizon]))
        return any(i in rejections for i in subset)


def closure_of_procedure(procedure: OnlineProcedureLike) -> IntersectionTestFamily:
    return ProcedureClosureFamily(procedure)


def rank_in(subset: IndexSet, i: int) -> int:
    """|{j in I : j <= i}| for i in I; raises ValueError when i is not in I."""
    position = bisect_left(subset, i)
    if position == len(subset) or subset[position] != i:
        raise ValueError(f"index {i} is not in I = {set(subset)}")
    return position + 1


def boundary_grid(
    family: IntersectionTestFamily,
    base_vectors: Iterable[Sequence[float]],
    n: int,
    per_index: int = 16,
) -> list[tuple[float, ...]]:
    """The base vectors plus copies with P_i moved onto every level
    alpha_i^I observed at i, and one ulp either side of it."""
    grid: list[tuple[float, ...]] = []
    for base in _grid_vectors(base_vectors, n):
        grid.append(base)
        if not family.has_levels:
            continue
        observed: dict[int, set[float]] = {}
        for mask in range(1, 1 << n):
            for i, level in family.levels(mask_to_subset(mask), base).items():
                observed.setdefault(i, set()).add(level)
        for i in sorted(observed):
            for level in sorted(observed[i])[:per_index]:
                grid.extend(base[: i - 1] + (q,) + base[i:] for q in nudged(level))
    return grid
