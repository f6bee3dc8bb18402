import math

import pytest

from uw_online_fwer.closure import IntersectionTestFamily
from uw_online_fwer.core import GammaSequence, PValueHistory

ALPHA = 0.2
GAMMA_1 = 6.0 / math.pi**2


class FixedSequenceFamily(IntersectionTestFamily):
    """phi_I = 1 iff P_min(I) <= alpha: all the level sits on the first index."""

    name = "fixed-sequence"

    def __init__(self, alpha: float):
        self.alpha = alpha

    def level(self, subset, i, history: PValueHistory) -> float:
        return self.alpha if i == subset[0] else 0.0


class BrokenFamily(IntersectionTestFamily):
    name = "broken"

    def level(self, subset, i, history):
        if len(subset) > 1:
            raise RuntimeError("cannot evaluate")
        return 0.5


@pytest.fixture
def alpha():
    return ALPHA


@pytest.fixture
def inv_square():
    return GammaSequence.inverse_square()


@pytest.fixture
def fixed_sequence():
    return FixedSequenceFamily(ALPHA)
