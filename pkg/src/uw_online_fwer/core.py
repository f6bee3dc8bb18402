"""Domain types shared by every online procedure.

Weight sequences, lag structures and graph weights are *generators*: they are
evaluated lazily at arbitrary indices, because an online stream has no
horizon. Their invariants are checked as indices are queried; the
`validate_*` functions check a finite horizon and return the violations as
data instead of raising.
"""

import logging
import math
import threading
from collections.abc import Callable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field

from django.db import models
from django.utils.translation import gettext_lazy as _

from .conf import uw_online_fwer_settings
from .exceptions import InvariantViolation

logger = logging.getLogger(__name__)


class ProcedureChoices(models.TextChoices):
    ALPHA_SPENDING = "alpha-spending", _("Alpha-Spending")
    CLOSED_ALPHA_SPENDING = "closed-alpha-spending", _("Closed Alpha-Spending")
    ONLINE_GRAPH = "online-graph", _("Online-Graph")
    ADDIS = "addis", _("ADDIS-Spending")
    CLOSED_ADDIS = "closed-addis", _("Closed ADDIS-Spending")


class GraphVariantChoices(models.TextChoices):
    PAPER_LITERAL = "paper-literal", _("Inherited level scaled by alpha")
    FALLBACK_STANDARD = "fallback-standard", _("Inherited level added unscaled")


class ViolationKind(models.TextChoices):
    NEGATIVE = "negative", _("Negative value")
    SUMMABILITY = "summability", _("Partial sum above one")
    MONOTONICITY = "monotonicity", _("Increase in a non-increasing sequence")
    LAG_RANGE = "lag-range", _("Lag outside 0..i-1")
    LAG_GROWTH = "lag-growth", _("Lag grew by more than one")
    BACKWARD_EDGE = "backward-edge", _("Graph edge not pointing forward")
    ROW_SUM = "row-sum", _("Graph row sum above one")


@dataclass(frozen=True)
class Violation:
    index: int
    kind: ViolationKind
    detail: str

    def __str__(self) -> str:
        return f"{self.kind} violation at index {self.index}: {self.detail}"


@dataclass
class ValidationReport:
    """Violations found on a finite horizon, at most one (the first) per kind."""

    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, violation: Violation) -> None:
        if self.first(violation.kind) is None:
            self.violations.append(violation)

    def first(self, kind: ViolationKind) -> Violation | None:
        return next((v for v in self.violations if v.kind == kind), None)

    @property
    def indices(self) -> list[int]:
        return [v.index for v in self.violations]


# ---------------------------------------------------------------------------
# Spending weights (gamma_i)


def _gamma_violations(
    i: int,
    value: float,
    partial: float,
    previous: float | None,
    nonincreasing: bool,
    tail_bounded: bool,
) -> Iterator[Violation]:
    tolerance = uw_online_fwer_settings.SUM_TOLERANCE
    if not value >= 0.0:
        yield Violation(i, ViolationKind.NEGATIVE, f"gamma_{i} = {value!r}")
    if not tail_bounded and partial > 1.0 + tolerance:
        yield Violation(
            i, ViolationKind.SUMMABILITY, f"partial sum up to {i} is {partial!r}"
        )
    if nonincreasing and previous is not None and value > previous:
        yield Violation(
            i,
            ViolationKind.MONOTONICITY,
            f"gamma_{i} = {value!r} > gamma_{i - 1} = {previous!r}",
        )


@dataclass(eq=False)
class GammaSequence:
    """Non-negative spending weights with partial sums at most one.

    Values are cached up to the largest queried index, and the invariants are
    validated over that prefix. A `tail_bound_after` index N states that the
    partial sums beyond N never exceed one, which stops the summability check.
    `total_mass` is the sum of all weights. It is 1 for the built-in infinite
    sequences and the sum of the listed weights for a finite list.
    """

    generator: Callable[[int], float]
    declared_nonincreasing: bool = False
    tail_bound_after: int | None = None
    total_mass: float = 1.0
    name: str = "custom"
    _values: list[float] = field(default_factory=list, init=False, repr=False)
    _partial: float = field(default=0.0, init=False, repr=False)
    _lock: threading.Lock = field(
        default_factory=threading.Lock, init=False, repr=False
    )

    def __call__(self, i: int) -> float:
        if i < 1:
            raise ValueError(f"gamma is indexed from 1, got {i}")
        values = self._values
        if i > len(values):
            self._extend(i)
        return values[i - 1]

    def _extend(self, horizon: int) -> None:
        with self._lock:
            values = self._values
            for k in range(len(values) + 1, horizon + 1):
                value = float(self.generator(k))
                partial = self._partial + value
                for violation in _gamma_violations(
                    k,
                    value,
                    partial,
                    values[-1] if values else None,
                    self.declared_nonincreasing,
                    self._tail_bounded(k),
                ):
                    logger.warning("gamma sequence %r: %s", self.name, violation)
                    raise InvariantViolation(str(violation))
                self._partial = partial
                values.append(value)

    def _tail_bounded(self, i: int) -> bool:
        return self.tail_bound_after is not None and i > self.tail_bound_after

    def weights(self, n: int) -> list[float]:
        """The first `n` weights."""
        if n > 0:
            self(n)
        return self._values[:n]

    @classmethod
    def inverse_square(cls) -> "GammaSequence":
        """gamma_i = 6 / (pi^2 i^2), which sums to one and decreases."""
        scale = 6.0 / math.pi**2
        return cls(
            lambda i: scale / (i * i), declared_nonincreasing=True, name="inv-square"
        )

    @classmethod
    def geometric(cls, q: float) -> "GammaSequence":
        """gamma_i = (1 - q) q^(i - 1) for q in (0, 1)."""
        if not 0.0 < q < 1.0:
            raise ValueError(f"geometric ratio must lie in (0, 1), got {q!r}")
        return cls(
            lambda i: (1.0 - q) * q ** (i - 1),
            declared_nonincreasing=True,
            name=f"geometric:{q!r}",
        )

    @classmethod
    def from_list(
        cls, weights: Sequence[float], declared_nonincreasing: bool | None = None
    ) -> "GammaSequence":
        """Finitely many weights followed by zeros."""
        values = tuple(float(w) for w in weights)
        if declared_nonincreasing is None:
            declared_nonincreasing = all(
                a >= b for a, b in zip(values, values[1:] + (0.0,))
            )
        return cls(
            lambda i: values[i - 1] if i <= len(values) else 0.0,
            declared_nonincreasing=declared_nonincreasing,
            tail_bound_after=len(values),
            total_mass=math.fsum(values),
            name="list:" + ",".join(repr(v) for v in values),
        )

    @classmethod
    def from_spec(cls, spec: str) -> "GammaSequence":
        """Parse `inv-square`, `geometric:q` or `list:w1,w2,...`."""
        kind, _sep, arguments = spec.strip().partition(":")
        kind = kind.strip()
        if kind == "inv-square" and not arguments:
            return cls.inverse_square()
        try:
            if kind == "geometric":
                return cls.geometric(float(arguments))
            if kind == "list":
                return cls.from_list([float(w) for w in arguments.split(",")])
        except ValueError as err:
            raise ValueError(f"invalid gamma spec {spec!r}: {err}") from err
        raise ValueError(
            f"invalid gamma spec {spec!r}: expected inv-square, geometric:q or"
            " list:w1,w2,..."
        )


def validate_gamma(seq: GammaSequence, horizon: int) -> ValidationReport:
    """Check non-negativity, summability and declared monotonicity on 1..horizon."""
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    report = ValidationReport()
    partial = 0.0
    previous = None
    for i in range(1, horizon + 1):
        value = float(seq.generator(i))
        partial += value
        for violation in _gamma_violations(
            i,
            value,
            partial,
            previous,
            seq.declared_nonincreasing,
            seq.tail_bound_after is not None and i > seq.tail_bound_after,
        ):
            report.add(violation)
        previous = value
    return report


# ---------------------------------------------------------------------------
# Local dependence lags (l_i)


@dataclass(eq=False)
class LagStructure:
    """Lags l_i: P_i is independent of P_1, ..., P_{i - l_i - 1}."""

    lag: Callable[[int], int]
    name: str = "custom"

    def __call__(self, i: int) -> int:
        value = int(self.lag(i))
        if not 0 <= value <= i - 1:
            raise InvariantViolation(
                str(Violation(i, ViolationKind.LAG_RANGE, f"l_{i} = {value}"))
            )
        if i > 1 and value > int(self.lag(i - 1)) + 1:
            raise InvariantViolation(
                str(Violation(i, ViolationKind.LAG_GROWTH, f"l_{i} = {value}"))
            )
        return value

    @classmethod
    def independent(cls) -> "LagStructure":
        return cls(lambda i: 0, name="independent")

    @classmethod
    def batches(cls, size: int) -> "LagStructure":
        """Batch arrival: l_i = (i - 1) mod size."""
        if size < 1:
            raise ValueError(f"batch size must be positive, got {size}")
        return cls(lambda i: (i - 1) % size, name=f"batches:{size}")

    @classmethod
    def arbitrary(cls) -> "LagStructure":
        return cls(lambda i: i - 1, name="arbitrary")

    @classmethod
    def from_list(cls, lags: Sequence[int]) -> "LagStructure":
        values = tuple(int(lag) for lag in lags)
        return cls(lambda i: values[i - 1], name="list")


def validate_lags(lags: LagStructure, horizon: int) -> ValidationReport:
    """Check l_i in {0, ..., i-1} and l_{i+1} <= l_i + 1 on 1..horizon."""
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    report = ValidationReport()
    previous = None
    for i in range(1, horizon + 1):
        value = int(lags.lag(i))
        if not 0 <= value <= i - 1:
            report.add(Violation(i, ViolationKind.LAG_RANGE, f"l_{i} = {value} > {i - 1}"))
        if previous is not None and value > previous + 1:
            report.add(
                Violation(
                    i,
                    ViolationKind.LAG_GROWTH,
                    f"l_{i} = {value} > l_{i - 1} + 1 = {previous + 1}",
                )
            )
        previous = value
    return report


# ---------------------------------------------------------------------------
# Online-Graph forward weights (g_{j,i})


@dataclass(eq=False)
class GraphWeights:
    """Sparse forward weights g_{j,i}, j < i.

    `edges` holds explicit weights; `lag_weights[k]` sets g_{j,j+k} for every
    source j unless an explicit edge overrides it. Row sums are validated over
    the targets queried so far.
    """

    edges: Mapping[tuple[int, int], float] = field(default_factory=dict)
    lag_weights: Mapping[int, float] = field(default_factory=dict)
    _incoming: dict[int, list[int]] = field(default_factory=dict, init=False, repr=False)
    _row_sums: dict[int, float] = field(default_factory=dict, init=False, repr=False)
    _queried: set[tuple[int, int]] = field(default_factory=set, init=False, repr=False)
    _lock: threading.Lock = field(
        default_factory=threading.Lock, init=False, repr=False
    )

    def __post_init__(self):
        for (j, i), g in self.edges.items():
            if not 1 <= j < i:
                raise InvariantViolation(
                    str(Violation(j, ViolationKind.BACKWARD_EDGE, f"edge ({j}, {i})"))
                )
            if not g >= 0.0:
                raise InvariantViolation(
                    str(Violation(j, ViolationKind.NEGATIVE, f"g_{j},{i} = {g!r}"))
                )
            self._incoming.setdefault(i, []).append(j)
        for k, g in self.lag_weights.items():
            if k < 1:
                raise InvariantViolation(
                    str(Violation(k, ViolationKind.BACKWARD_EDGE, f"lag {k}"))
                )
            if not g >= 0.0:
                raise InvariantViolation(
                    str(Violation(k, ViolationKind.NEGATIVE, f"lag {k} weight {g!r}"))
                )

    def _raw(self, j: int, i: int) -> float:
        return float(self.edges.get((j, i), self.lag_weights.get(i - j, 0.0)))

    def weight(self, j: int, i: int) -> float:
        if not 1 <= j < i:
            raise InvariantViolation(
                str(Violation(j, ViolationKind.BACKWARD_EDGE, f"edge ({j}, {i})"))
            )
        g = self._raw(j, i)
        if (j, i) not in self._queried:
            with self._lock:
                if (j, i) not in self._queried:
                    self._queried.add((j, i))
                    row = self._row_sums.get(j, 0.0) + g
                    self._row_sums[j] = row
                    if row > 1.0 + uw_online_fwer_settings.SUM_TOLERANCE:
                        raise InvariantViolation(
                            str(
                                Violation(
                                    j, ViolationKind.ROW_SUM, f"row sum of {j} is {row!r}"
                                )
                            )
                        )
        return g

    def incoming(self, i: int) -> list[tuple[int, float]]:
        """Sources j < i with g_{j,i} > 0, in increasing order of j."""
        sources = set(self._incoming.get(i, ()))
        sources.update(i - k for k in self.lag_weights if i - k >= 1)
        edges = ((j, self.weight(j, i)) for j in sorted(sources))
        return [(j, g) for j, g in edges if g > 0.0]

    @property
    def is_zero(self) -> bool:
        return not any(self.edges.values()) and not any(self.lag_weights.values())

    @classmethod
    def from_spec(cls, spec: str) -> "GraphWeights":
        """Parse comma separated `lagK:w` and `j-i:w` items, e.g. `lag1:1.0`."""
        edges: dict[tuple[int, int], float] = {}
        lag_weights: dict[int, float] = {}
        for item in filter(None, (part.strip() for part in spec.split(","))):
            target, sep, value = item.partition(":")
            try:
                if not sep:
                    raise ValueError("missing ':'")
                weight = float(value)
                if target.startswith("lag"):
                    lag_weights[int(target[3:])] = weight
                else:
                    j, i = (int(side) for side in target.split("-"))
                    edges[(j, i)] = weight
            except ValueError as err:
                raise ValueError(f"invalid graph weight {item!r}: {err}") from err
        return cls(edges=edges, lag_weights=lag_weights)


def validate_weights(weights: GraphWeights, horizon: int) -> ValidationReport:
    """Check the row sums of every source over the targets 2..horizon."""
    report = ValidationReport()
    tolerance = uw_online_fwer_settings.SUM_TOLERANCE
    for j in range(1, horizon):
        row = math.fsum(weights._raw(j, i) for i in range(j + 1, horizon + 1))
        if row > 1.0 + tolerance:
            report.add(Violation(j, ViolationKind.ROW_SUM, f"row sum of {j} is {row!r}"))
    return report


# ---------------------------------------------------------------------------
# Step history


@dataclass(frozen=True, slots=True)
class StepRecord:
    """The decision on one hypothesis.

    `candidate` is s_i = 1{P_i <= tau_i} and `non_discarded_candidate` is
    c_i = 1{P_i <= lambda_i}. Procedures without discarding record tau_i = 1
    and lambda_i = alpha.
    """

    index: int
    p_value: float
    alpha_i: float
    rejected: bool
    candidate: bool
    non_discarded_candidate: bool
    tau_i: float
    lambda_i: float
    lag: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise InvariantViolation(f"p-value {self.p_value!r} of H_{self.index} not in [0, 1]")
        if not 0.0 <= self.alpha_i < 1.0:
            raise InvariantViolation(f"level {self.alpha_i!r} of H_{self.index} not in [0, 1)")
        if self.rejected != (self.p_value <= self.alpha_i):
            raise InvariantViolation(f"rejection of H_{self.index} disagrees with P <= alpha_i")
        if not 0.0 <= self.lambda_i < self.tau_i <= 1.0:
            raise InvariantViolation(
                f"H_{self.index}: need 0 <= lambda_i < tau_i <= 1,"
                f" got lambda_i={self.lambda_i!r}, tau_i={self.tau_i!r}"
            )
        if self.non_discarded_candidate and not self.candidate:
            raise InvariantViolation(f"c_{self.index} = 1 but s_{self.index} = 0")

    @classmethod
    def decide(
        cls,
        index: int,
        p_value: float,
        alpha_i: float,
        tau_i: float,
        lambda_i: float,
        lag: int = 0,
    ) -> "StepRecord":
        """Reject inclusively, P_i <= alpha_i."""
        return cls(
            index=index,
            p_value=p_value,
            alpha_i=alpha_i,
            rejected=p_value <= alpha_i,
            candidate=p_value <= tau_i,
            non_discarded_candidate=p_value <= lambda_i,
            tau_i=tau_i,
            lambda_i=lambda_i,
            lag=lag,
        )


class PValueHistory(Sequence):
    """Read-only view of the p-values P_1, ..., P_k; `view[j - 1]` is P_j.

    Thresholds and intersection-test levels only ever receive such a view, cut
    at the last index they are allowed to depend on.
    """

    __slots__ = ("_values", "_length")

    def __init__(self, values: Sequence[float], length: int | None = None):
        self._values = values
        self._length = len(values) if length is None else max(0, min(length, len(values)))

    def __len__(self) -> int:
        return self._length

    def __getitem__(self, item):
        if isinstance(item, slice):
            return [self._values[k] for k in range(*item.indices(self._length))]
        if item < 0:
            item += self._length
        if not 0 <= item < self._length:
            raise IndexError(f"P_{item + 1} lies beyond the visible history")
        return self._values[item]

    def prefix(self, length: int) -> "PValueHistory":
        return PValueHistory(self._values, min(length, self._length))

    def __repr__(self) -> str:
        return f"PValueHistory({list(self)!r})"


@dataclass(eq=False)
class ProcedureState:
    """Append-only history of one procedure run.

    Cumulative counts of non-rejections and of s_j - c_j are kept alongside the
    records so the counters t(i) of every procedure are O(1) per step.
    """

    procedure_id: ProcedureChoices
    alpha: float
    _records: list[StepRecord] = field(default_factory=list, init=False, repr=False)
    _pvalues: list[float] = field(default_factory=list, init=False, repr=False)
    _non_rejections: list[int] = field(default_factory=lambda: [0], init=False, repr=False)
    _discard_balance: list[int] = field(default_factory=lambda: [0], init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvariantViolation(f"overall alpha must lie in (0, 1), got {self.alpha!r}")

    @property
    def records(self) -> tuple[StepRecord, ...]:
        return tuple(self._records)

    @property
    def next_index(self) -> int:
        return len(self._records) + 1

    def __len__(self) -> int:
        return len(self._records)

    def append(self, record: StepRecord) -> None:
        if record.index != self.next_index:
            raise InvariantViolation(
                f"expected the record of H_{self.next_index}, got H_{record.index}"
            )
        self._records.append(record)
        self._pvalues.append(record.p_value)
        self._non_rejections.append(self._non_rejections[-1] + (not record.rejected))
        self._discard_balance.append(
            self._discard_balance[-1]
            + record.candidate
            - record.non_discarded_candidate
        )

    def record(self, index: int) -> StepRecord:
        if not 1 <= index <= len(self._records):
            raise IndexError(f"no record for H_{index}")
        return self._records[index - 1]

    def non_rejections(self, upto: int) -> int:
        """Sum of 1 - r_j over j <= upto."""
        return self._non_rejections[max(0, upto)]

    def discard_balance(self, upto: int) -> int:
        """Sum of s_j - c_j over j <= upto."""
        return self._discard_balance[max(0, upto)]

    def history(self, upto: int | None = None) -> PValueHistory:
        return PValueHistory(self._pvalues, upto)

    @property
    def pvalues(self) -> tuple[float, ...]:
        return tuple(self._pvalues)

    @property
    def rejections(self) -> frozenset[int]:
        return frozenset(r.index for r in self._records if r.rejected)

    @property
    def levels(self) -> tuple[float, ...]:
        return tuple(r.alpha_i for r in self._records)
