"""Monte Carlo estimation of power and FWER under batch local dependence.

Each trial draws n hypotheses in batches of size b. Within a batch the test
statistics are equicorrelated standard normals, X_i = sqrt(rho) W +
sqrt(1 - rho) xi_i, shifted by mu_A for non-nulls and by mu_N for nulls, and
P_i = Phi(-Z_i). Batches are independent, so the lags are l_i = (i - 1) mod b.

Every trial owns its random streams: a Philox generator keyed by
(base_seed, trial_index, role). Results therefore do not depend on the order
or the number of threads the trials run on.
"""

import logging
import math
import os
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from functools import partial

import numpy as np
from scipy.stats import norm

from .core import GammaSequence, GraphWeights, LagStructure, ProcedureChoices
from .exceptions import InvariantViolation
from .procedures import AddisParams, OnlineProcedure, build_procedure

logger = logging.getLogger(__name__)

SEED_LIMIT = 2**64


class StreamRole(IntEnum):
    ASSIGNMENT = 0
    NOISE = 1


@dataclass(frozen=True)
class SimConfig:
    n: int
    batch_size: int
    rho: float
    pi_a: float
    mu_a: float
    mu_n: float
    alpha: float
    trials: int
    base_seed: int
    gamma: GammaSequence = field(default_factory=GammaSequence.inverse_square)
    tau: float = 0.8
    lambda_: float = 0.3
    graph_weights: GraphWeights | None = None
    graph_variant: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.n < 1 or self.batch_size < 1:
            problems.append("n and batch_size must be positive")
        elif self.n % self.batch_size:
            problems.append(f"n = {self.n} is not divisible by batch_size = {self.batch_size}")
        if not 0.0 < self.rho < 1.0:
            problems.append(f"rho must lie in (0, 1), got {self.rho!r}")
        if not 0.0 < self.pi_a < 1.0:
            problems.append(f"pi_A must lie in (0, 1), got {self.pi_a!r}")
        if not self.mu_a > 0.0:
            problems.append(f"mu_A must be positive, got {self.mu_a!r}")
        if not self.mu_n <= 0.0:
            problems.append(f"mu_N must not be positive, got {self.mu_n!r}")
        if not 0.0 < self.alpha < 1.0:
            problems.append(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.trials < 1:
            problems.append(f"trials must be positive, got {self.trials}")
        if not 0 <= self.base_seed < SEED_LIMIT:
            problems.append(f"seed must be a 64-bit unsigned integer, got {self.base_seed}")
        if not 0.0 < self.tau <= 1.0 or not self.alpha * self.tau <= self.lambda_ < self.tau:
            problems.append("lambda must lie in [alpha*tau, tau) with tau in (0, 1]")
        if problems:
            raise InvariantViolation("; ".join(problems))

    @property
    def lags(self) -> LagStructure:
        return LagStructure.batches(self.batch_size)

    @property
    def params(self) -> AddisParams:
        return AddisParams.constant(self.tau, self.lambda_)


@dataclass(frozen=True)
class Trial:
    pvalues: np.ndarray
    is_null: np.ndarray


def trial_rng(base_seed: int, trial_index: int, role: StreamRole) -> np.random.Generator:
    """Counter-based stream keyed by (base_seed, trial_index, role)."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([base_seed, trial_index, int(role)]))
    )


def generate_trial(config: SimConfig, trial_index: int) -> Trial:
    n, b = config.n, config.batch_size
    # each hypothesis is non-null with probability pi_A
    is_null = trial_rng(config.base_seed, trial_index, StreamRole.ASSIGNMENT).random(n) >= config.pi_a
    noise = trial_rng(config.base_seed, trial_index, StreamRole.NOISE)
    common = noise.standard_normal(n // b)
    own = noise.standard_normal(n)
    x = math.sqrt(config.rho) * np.repeat(common, b) + math.sqrt(1.0 - config.rho) * own
    z = x + np.where(is_null, config.mu_n, config.mu_a)
    return Trial(pvalues=norm.cdf(-z), is_null=is_null)


@dataclass(frozen=True)
class TrialResult:
    rejected: int
    false_rejection: bool
    true_positives: int
    false_nulls: int
    rejections: frozenset[int] = frozenset()

    @property
    def power(self) -> float | None:
        """True-positive proportion; undefined when every hypothesis is null."""
        if not self.false_nulls:
            return None
        return self.true_positives / self.false_nulls


def make_procedures(
    config: SimConfig, procedures: Sequence[ProcedureChoices | str]
) -> dict[ProcedureChoices, OnlineProcedure]:
    return {
        ProcedureChoices(p): build_procedure(
            p,
            config.alpha,
            config.gamma,
            lags=config.lags,
            params=config.params,
            weights=config.graph_weights,
            variant=config.graph_variant,
        )
        for p in procedures
    }


def run_trial(
    config: SimConfig,
    trial_index: int,
    procedures: Mapping[ProcedureChoices, OnlineProcedure],
) -> dict[ProcedureChoices, TrialResult]:
    """Run every procedure on the same p-values of one trial."""
    trial = generate_trial(config, trial_index)
    pvalues = trial.pvalues.tolist()
    non_null = frozenset((np.flatnonzero(~trial.is_null) + 1).tolist())
    results = {}
    for procedure_id, template in procedures.items():
        rejections = template.fresh().run(pvalues).rejections
        true_positives = len(rejections & non_null)
        results[procedure_id] = TrialResult(
            rejected=len(rejections),
            false_rejection=len(rejections) > true_positives,
            true_positives=true_positives,
            false_nulls=len(non_null),
            rejections=rejections,
        )
    return results


def resolve_threads(threads: int) -> int:
    """0 means one thread per CPU."""
    return threads if threads > 0 else os.cpu_count() or 1


def simulate(
    config: SimConfig,
    procedures: Sequence[ProcedureChoices | str],
    threads: int = 1,
) -> list[dict[ProcedureChoices, TrialResult]]:
    """Per-trial results in trial order."""
    templates = make_procedures(config, procedures)
    worker = partial(run_trial, config, procedures=templates)
    threads = resolve_threads(threads)
    if threads == 1:
        return [worker(k) for k in range(config.trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, range(config.trials)))


@dataclass(frozen=True)
class ProcedureMetrics:
    procedure: ProcedureChoices
    power: float
    power_se: float
    fwer: float
    fwer_se: float


@dataclass(frozen=True)
class MetricsTable:
    config: SimConfig
    metrics: tuple[ProcedureMetrics, ...]

    def __getitem__(self, procedure: ProcedureChoices | str) -> ProcedureMetrics:
        procedure = ProcedureChoices(procedure)
        return next(m for m in self.metrics if m.procedure == procedure)


def summarize(procedure: ProcedureChoices, results: Sequence[TrialResult]) -> ProcedureMetrics:
    """FWER with its binomial SE; power averaged over the trials with at least
    one false null, with the sample SE."""
    errors = np.array([r.false_rejection for r in results], dtype=float)
    fwer = float(errors.mean())
    powers = np.array([r.power for r in results if r.false_nulls], dtype=float)
    if powers.size == 0:
        power, power_se = math.nan, math.nan
    elif powers.size == 1:
        power, power_se = float(powers[0]), 0.0
    else:
        power = float(powers.mean())
        power_se = float(powers.std(ddof=1) / math.sqrt(powers.size))
    return ProcedureMetrics(
        procedure=procedure,
        power=power,
        power_se=power_se,
        fwer=fwer,
        fwer_se=math.sqrt(fwer * (1.0 - fwer) / errors.size),
    )


def estimate_power_fwer(
    config: SimConfig,
    procedures: Sequence[ProcedureChoices | str],
    threads: int = 1,
) -> MetricsTable:
    if not procedures:
        raise ValueError("at least one procedure is required")
    started = time.perf_counter()
    logger.info(
        "simulating %d trials: n=%d b=%d pi_A=%s mu_N=%s",
        config.trials,
        config.n,
        config.batch_size,
        config.pi_a,
        config.mu_n,
    )
    trials = simulate(config, procedures, threads)
    table = MetricsTable(
        config=config,
        metrics=tuple(
            summarize(p, [trial[p] for trial in trials])
            for p in map(ProcedureChoices, procedures)
        ),
    )
    for m in table.metrics:
        logger.info(
            "%s: power=%.4f (se %.4f) fwer=%.4f (se %.4f)",
            m.procedure,
            m.power,
            m.power_se,
            m.fwer,
            m.fwer_se,
        )
    logger.info("scenario finished in %.1fs", time.perf_counter() - started)
    return table
