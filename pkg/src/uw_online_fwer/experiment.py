"""Experiment configuration files, scenario sweeps and CSV output.

A configuration is a flat text file with one `key = value` per line and `#`
comments. `batch_size`, `pi_A` and `mu_N` accept comma separated lists; every
combination is one scenario. `seed` is mandatory, the other keys default to
the batch simulation design (alpha 0.2, inverse-square gamma, tau 0.8, lambda 0.3,
mu_A 4, mu_N 0, rho 0.8, n 1000, 2000 trials).
"""

import csv
import itertools
import logging
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field, fields
from pathlib import Path

from .conf import GRAPH_VARIANTS, uw_online_fwer_settings
from .core import (
    GammaSequence,
    GraphWeights,
    ProcedureChoices,
    validate_gamma,
    validate_weights,
)
from .exceptions import ConfigError
from .simulation import SEED_LIMIT, SimConfig, estimate_power_fwer
from .utils import format_significant

logger = logging.getLogger(__name__)

CSV_HEADER = (
    "procedure",
    "batch_size",
    "pi_A",
    "mu_A",
    "mu_N",
    "rho",
    "n",
    "trials",
    "seed",
    "power",
    "power_se",
    "fwer",
    "fwer_se",
)

NONINCREASING_PROCEDURES = {
    ProcedureChoices.CLOSED_ALPHA_SPENDING,
    ProcedureChoices.ADDIS,
    ProcedureChoices.CLOSED_ADDIS,
}


@dataclass
class ExperimentConfig:
    seed: int
    procedures: tuple[ProcedureChoices, ...] = (
        ProcedureChoices.ADDIS,
        ProcedureChoices.CLOSED_ADDIS,
    )
    alpha: float = 0.2
    gamma: str = "inv-square"
    tau: float = 0.8
    lambda_: float = 0.3
    batch_sizes: tuple[int, ...] = (1,)
    pi_as: tuple[float, ...] = (0.5,)
    mu_a: float = 4.0
    mu_ns: tuple[float, ...] = (0.0,)
    rho: float = 0.8
    n: int = 1000
    trials: int = 2000
    output: Path | None = None
    graph_variant: str = field(
        default_factory=lambda: uw_online_fwer_settings.DEFAULT_ONLINE_GRAPH_VARIANT
    )
    graph: str | None = None

    def scenarios(self) -> Iterator[SimConfig]:
        weights = GraphWeights.from_spec(self.graph) if self.graph else None
        for batch_size, pi_a, mu_n in itertools.product(
            self.batch_sizes, self.pi_as, self.mu_ns
        ):
            yield SimConfig(
                n=self.n,
                batch_size=batch_size,
                rho=self.rho,
                pi_a=pi_a,
                mu_a=self.mu_a,
                mu_n=mu_n,
                alpha=self.alpha,
                trials=self.trials,
                base_seed=self.seed,
                gamma=GammaSequence.from_spec(self.gamma),
                tau=self.tau,
                lambda_=self.lambda_,
                graph_weights=weights,
                graph_variant=self.graph_variant,
            )


def _list(parse: Callable[[str], object]) -> Callable[[str], tuple]:
    def parse_list(value: str) -> tuple:
        items = [item.strip() for item in value.split(",")]
        if not all(items):
            raise ValueError("empty list item")
        return tuple(parse(item) for item in items)

    return parse_list


def _procedure(value: str) -> ProcedureChoices:
    try:
        return ProcedureChoices(value)
    except ValueError:
        raise ValueError(
            f"unknown procedure {value!r}; expected one of {', '.join(ProcedureChoices.values)}"
        ) from None


def _gamma(value: str) -> str:
    gamma = GammaSequence.from_spec(value)
    if gamma.tail_bound_after:
        # finitely many weights: check them all now
        report = validate_gamma(gamma, gamma.tail_bound_after)
        if not report.ok:
            raise ValueError(str(report.violations[0]))
    return value


def _graph(value: str) -> str:
    GraphWeights.from_spec(value)
    return value


def _graph_variant(value: str) -> str:
    if value not in GRAPH_VARIANTS:
        raise ValueError(f"expected one of {', '.join(GRAPH_VARIANTS)}")
    return value


# config key -> (ExperimentConfig field, parser)
CONFIG_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "procedure": ("procedures", _list(_procedure)),
    "procedures": ("procedures", _list(_procedure)),
    "alpha": ("alpha", float),
    "gamma": ("gamma", _gamma),
    "tau": ("tau", float),
    "lambda": ("lambda_", float),
    "batch_size": ("batch_sizes", _list(int)),
    "pi_A": ("pi_as", _list(float)),
    "mu_A": ("mu_a", float),
    "mu_N": ("mu_ns", _list(float)),
    "rho": ("rho", float),
    "n": ("n", int),
    "trials": ("trials", int),
    "seed": ("seed", int),
    "output": ("output", Path),
    "graph_variant": ("graph_variant", _graph_variant),
    "g": ("graph", _graph),
}


def parse_config(text: str) -> ExperimentConfig:
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError("expected 'key = value'", number)
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}", number)
        name, parse = CONFIG_KEYS[key]
        if name in values:
            raise ConfigError(f"duplicate key {key!r}", number)
        try:
            values[name] = parse(value)
        except ValueError as err:
            raise ConfigError(f"{key}: {err}", number) from err
        lines[name] = number
    if "seed" not in values:
        raise ConfigError("missing mandatory key 'seed'")
    config = ExperimentConfig(**values)
    _validate(config, lines)
    return config


def _validate(config: ExperimentConfig, lines: dict[str, int]) -> None:
    def check(condition: bool, message: str, *names: str) -> None:
        if not condition:
            line = next((lines[name] for name in names if name in lines), None)
            raise ConfigError(message, line)

    check(0.0 < config.alpha < 1.0, "alpha must lie in (0, 1)", "alpha")
    check(0.0 < config.tau <= 1.0, str(uw_online_fwer_settings.TAU_RANGE_ERROR_MSG), "tau")
    check(
        config.alpha * config.tau <= config.lambda_ < config.tau,
        str(uw_online_fwer_settings.LAMBDA_RANGE_ERROR_MSG),
        "lambda_",
        "tau",
        "alpha",
    )
    check(0.0 < config.rho < 1.0, "rho must lie in (0, 1)", "rho")
    check(all(0.0 < p < 1.0 for p in config.pi_as), "pi_A must lie in (0, 1)", "pi_as")
    check(config.mu_a > 0.0, "mu_A must be positive", "mu_a")
    check(all(mu <= 0.0 for mu in config.mu_ns), "mu_N must not be positive", "mu_ns")
    check(config.n >= 1, "n must be positive", "n")
    check(config.trials >= 1, "trials must be positive", "trials")
    check(0 <= config.seed < SEED_LIMIT, "seed must be a 64-bit unsigned integer", "seed")
    check(
        all(b >= 1 and config.n % b == 0 for b in config.batch_sizes),
        f"every batch size must be positive and divide n = {config.n}",
        "batch_sizes",
        "n",
    )
    check(bool(config.procedures), "at least one procedure is required", "procedures")
    gamma = GammaSequence.from_spec(config.gamma)
    check(
        gamma.declared_nonincreasing
        or not NONINCREASING_PROCEDURES.intersection(config.procedures),
        "the selected procedures require a non-increasing gamma",
        "gamma",
    )
    if config.graph:
        report = validate_weights(GraphWeights.from_spec(config.graph), min(config.n, 1000))
        check(report.ok, f"graph weights: {'; '.join(map(str, report.violations))}", "graph")


def load_config(path: Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from err
    return parse_config(text)


@dataclass(frozen=True)
class MetricsRow:
    procedure: str
    batch_size: int
    pi_A: float
    mu_A: float
    mu_N: float
    rho: float
    n: int
    trials: int
    seed: int
    power: float
    power_se: float
    fwer: float
    fwer_se: float

    def as_csv(self) -> list[str]:
        return [
            value if isinstance(value, str) else format_significant(value)
            for value in (getattr(self, name) for name in CSV_HEADER)
        ]

    def sort_key(self) -> tuple:
        return (self.procedure, self.batch_size, self.pi_A, self.mu_N)


def run_experiment(config: ExperimentConfig, threads: int = 1) -> list[MetricsRow]:
    """One row per (procedure, scenario), sorted by procedure, batch size,
    pi_A and mu_N."""
    rows = []
    for scenario in config.scenarios():
        table = estimate_power_fwer(scenario, config.procedures, threads=threads)
        for m in table.metrics:
            rows.append(
                MetricsRow(
                    procedure=m.procedure.value,
                    batch_size=scenario.batch_size,
                    pi_A=scenario.pi_a,
                    mu_A=scenario.mu_a,
                    mu_N=scenario.mu_n,
                    rho=scenario.rho,
                    n=scenario.n,
                    trials=scenario.trials,
                    seed=scenario.base_seed,
                    power=m.power,
                    power_se=m.power_se,
                    fwer=m.fwer,
                    fwer_se=m.fwer_se,
                )
            )
    return sorted(rows, key=MetricsRow.sort_key)


def write_csv(rows: list[MetricsRow], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(row.as_csv() for row in rows)
    logger.info("wrote %d rows to %s", len(rows), path)


def read_csv(path: Path) -> list[MetricsRow]:
    types = {f.name: f.type for f in fields(MetricsRow)}
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        return [
            MetricsRow(**{name: types[name](value) for name, value in record.items()})
            for record in reader
        ]


def format_summary(rows: list[MetricsRow]) -> str:
    lines = [
        f"{'procedure':<22} {'b':>4} {'pi_A':>6} {'mu_N':>6} {'power':>10} {'fwer':>10}"
    ]
    for row in rows:
        lines.append(
            f"{row.procedure:<22} {row.batch_size:>4} {row.pi_A:>6g} {row.mu_N:>6g}"
            f" {row.power:>10.4f} {row.fwer:>10.4f}"
        )
    return "\n".join(lines)
