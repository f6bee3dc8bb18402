"""Module containing utility functions"""

import logging
import math
from collections.abc import Iterator

import numpy as np

from .conf import uw_online_fwer_settings

PACKAGE_LOGGER = "uw_online_fwer"

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def configure_verbosity(verbosity: int) -> None:
    """Map a management command `--verbosity` onto the package logger level."""
    logging.getLogger(PACKAGE_LOGGER).setLevel(
        VERBOSITY_LEVELS.get(verbosity, logging.DEBUG)
    )


def format_significant(value, digits: int | None = None) -> str:
    """Render integers as is and floats with `digits` significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    digits = digits or uw_online_fwer_settings.CSV_SIGNIFICANT_DIGITS
    return f"{float(value):.{digits}g}"


def pvalue_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def random_pvalue_vectors(
    seed: int,
    n: int,
    count: int,
    signal_fraction: float = 0.5,
    signal_scale: float = 0.1,
) -> Iterator[tuple[float, ...]]:
    """Seeded p-vectors mixing uniform entries with small "signal" entries drawn
    uniformly from [0, signal_scale), so that small levels see both outcomes."""
    rng = pvalue_rng(seed)
    for _ in range(count):
        signal = rng.random(n) < signal_fraction
        values = np.where(signal, signal_scale * rng.random(n), rng.random(n))
        yield tuple(values.tolist())


def nudged(value: float) -> tuple[float, ...]:
    """`value` and its neighbouring floats, clipped to [0, 1]."""
    points = (math.nextafter(value, -math.inf), value, math.nextafter(value, math.inf))
    return tuple(sorted({min(1.0, max(0.0, p)) for p in points}))
