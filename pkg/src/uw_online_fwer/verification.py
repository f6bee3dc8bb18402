"""Executable checks behind the `verify` command.

Each suite returns a `VerificationReport` whose rendering ends with a single
`PASS` or `FAIL` line.
"""

import itertools
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

from .closure import (
    BonferroniIntersectionFamily,
    IntersectionTestFamily,
    boundary_grid,
    brute_force_closed,
    check_consonance,
    check_predictability,
    iter_shortcut,
)
from .core import GammaSequence, GraphWeights, LagStructure, ProcedureChoices
from .procedures import (
    AddisFamily,
    AddisParams,
    AlphaSpendingFamily,
    BackwardGraphFamily,
    OnlineGraphFamily,
    build_procedure,
)
from .utils import random_pvalue_vectors

logger = logging.getLogger(__name__)

FAMILY_NAMES = (
    "alpha-spending",
    "addis",
    "online-graph",
    "section3-counterexample",
    "backward-graph",
)

# p-values around the levels of the default alpha = 0.2 set-ups
LATTICE = (0.001, 0.01, 0.03, 0.05, 0.1, 0.15, 0.18, 0.3, 0.5, 0.9)
LATTICE_CAP = 4096

REPORTED_VIOLATIONS = 5


@dataclass
class VerificationReport:
    title: str
    lines: list[str] = field(default_factory=list)
    passed: bool = True

    def note(self, line: str) -> None:
        self.lines.append(line)

    def fail(self, line: str) -> None:
        self.passed = False
        self.lines.append(line)

    def render(self) -> str:
        return "\n".join([self.title, *self.lines, "PASS" if self.passed else "FAIL"])


@dataclass(frozen=True)
class FamilySetup:
    """Parameters shared by every family the suites can build."""

    alpha: float = 0.2
    gamma: str = "inv-square"
    batch_size: int = 1
    tau: float = 0.8
    lambda_: float = 0.3
    graph: str = "lag1:1.0"
    graph_variant: str | None = None

    def build(self, name: str) -> IntersectionTestFamily:
        gamma = GammaSequence.from_spec(self.gamma)
        if name == "alpha-spending":
            return AlphaSpendingFamily(self.alpha, gamma)
        if name == "addis":
            return AddisFamily(
                self.alpha,
                gamma,
                LagStructure.batches(self.batch_size),
                AddisParams.constant(self.tau, self.lambda_),
            )
        if name == "online-graph":
            return OnlineGraphFamily(
                self.alpha, gamma, GraphWeights.from_spec(self.graph), self.graph_variant
            )
        if name == "section3-counterexample":
            return BonferroniIntersectionFamily(self.alpha)
        if name == "backward-graph":
            return BackwardGraphFamily(self.alpha, gamma)
        raise ValueError(f"unknown family {name!r}; expected one of {', '.join(FAMILY_NAMES)}")


def adversarial_grid(
    family: IntersectionTestFamily, n: int, seed: int, size: int
) -> list[tuple[float, ...]]:
    """Seeded random vectors, the full lattice when it is small enough, and
    boundary points around the levels seen on the first random vectors."""
    randoms = list(random_pvalue_vectors(seed, n, size))
    grid = list(randoms)
    if len(LATTICE) ** n <= LATTICE_CAP:
        grid.extend(itertools.product(LATTICE, repeat=n))
    grid.extend(boundary_grid(family, randoms[:2], n))
    return grid


def shortcut_oracle(
    family: IntersectionTestFamily, n: int, vectors: int, seed: int
) -> VerificationReport:
    """Brute-force closure against the short-cut, and phi_{I_i} = 1 iff
    P_i <= alpha_i^{I_i} along every short-cut run."""
    report = VerificationReport(f"shortcut-oracle: {family.name}, n = {n}, {vectors} vectors")
    decision_mismatches = level_mismatches = 0
    for pvalues in random_pvalue_vectors(seed, n, vectors):
        closed = brute_force_closed(family, pvalues)
        steps = list(iter_shortcut(family, pvalues))
        if closed.rejected != tuple(step.rejected for step in steps):
            decision_mismatches += 1
            if decision_mismatches <= REPORTED_VIOLATIONS:
                report.note(
                    f"  mismatch at P = {pvalues}: closure {sorted(closed.rejection_set)},"
                    f" short-cut {[s.index for s in steps if s.rejected]}"
                )
        for step in steps:
            if family.evaluate(step.active_set, pvalues[: step.index]) != step.rejected:
                level_mismatches += 1
    report.note(f"decision mismatches: {decision_mismatches}")
    report.note(f"intersection/level mismatches: {level_mismatches}")
    if decision_mismatches or level_mismatches:
        report.fail("brute-force closure and short-cut disagree")
    return report


def _checker_report(title: str, violations: Sequence, vectors_checked: int) -> VerificationReport:
    report = VerificationReport(title)
    report.note(f"grid vectors checked: {vectors_checked}")
    for violation in violations[:REPORTED_VIOLATIONS]:
        report.note(f"  {violation}")
    if violations:
        report.fail(f"violations found: {len(violations)}")
    return report


def predictability(
    family: IntersectionTestFamily, n: int, seed: int, grid_size: int
) -> VerificationReport:
    result = check_predictability(family, n, adversarial_grid(family, n, seed, grid_size))
    return _checker_report(
        f"predictability: {family.name}, n = {n}", result.violations, result.vectors_checked
    )


def consonance(
    family: IntersectionTestFamily, n: int, seed: int, grid_size: int
) -> VerificationReport:
    result = check_consonance(family, n, adversarial_grid(family, n, seed, grid_size))
    return _checker_report(
        f"consonance: {family.name}, n = {n}", result.violations, result.vectors_checked
    )


IMPROVEMENT_PAIRS = (
    (ProcedureChoices.ALPHA_SPENDING, ProcedureChoices.CLOSED_ALPHA_SPENDING),
    (ProcedureChoices.ADDIS, ProcedureChoices.CLOSED_ADDIS),
)


def improvement(
    setup: FamilySetup, streams: int, length: int, seed: int
) -> VerificationReport:
    """Each closed procedure rejects everything its base procedure rejects,
    with a level at least as large at every step."""
    report = VerificationReport(
        f"improvement: {streams} streams of length {length}, batch size {setup.batch_size}"
    )
    gamma = GammaSequence.from_spec(setup.gamma)
    lags = LagStructure.batches(setup.batch_size)
    params = AddisParams.constant(setup.tau, setup.lambda_)
    pairs = [
        tuple(build_procedure(p, setup.alpha, gamma, lags=lags, params=params) for p in pair)
        for pair in IMPROVEMENT_PAIRS
    ]
    vectors = list(random_pvalue_vectors(seed, length, streams, signal_fraction=0.3))
    for base, closed in pairs:
        containment = level_drops = 0
        for pvalues in vectors:
            base_state = base.fresh().run(pvalues)
            closed_state = closed.fresh().run(pvalues)
            if not base_state.rejections <= closed_state.rejections:
                containment += 1
            level_drops += sum(
                c < b for b, c in zip(base_state.levels, closed_state.levels)
            )
        report.note(
            f"{closed.name} vs {base.name}: {containment} containment violations,"
            f" {level_drops} smaller levels"
        )
        if containment or level_drops:
            report.fail(f"{closed.name} is not an improvement of {base.name}")
    return report


def run_suite(
    suite: str,
    family_name: str,
    setup: FamilySetup,
    n: int,
    vectors: int,
    seed: int,
    grid_size: int,
    streams: int,
    stream_length: int,
) -> VerificationReport:
    logger.info("running %s on %s", suite, family_name)
    if suite == "improvement":
        return improvement(setup, streams, stream_length, seed)
    family = setup.build(family_name)
    if suite == "shortcut-oracle":
        return shortcut_oracle(family, n, vectors, seed)
    if suite == "predictability":
        return predictability(family, n, seed, grid_size)
    if suite == "consonance":
        return consonance(family, n, seed, grid_size)
    raise ValueError(f"unknown suite {suite!r}")


SUITES = ("shortcut-oracle", "predictability", "consonance", "improvement")
