import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from lobmm.book import BookConfig, OrderBookState, make_flat_book, validate_state


class FixedDraw:
    """Deterministic randomness source for single event applications."""

    def __init__(self, u: float):
        self.u = u

    def random(self) -> float:
        return self.u


@pytest.fixture
def fig1():
    """The worked example book: K=3, boundary depth 4, spread 1."""
    cfg = BookConfig(K=3, a_inf=4, b_inf=4, m_bar=2)
    z = OrderBookState(x=0.0, y=0, a=(8, 6, 5), b=(-7, -5, -6),
                       na=(-1, -1), nb=(-1, -1), pa=101, pb=100,
                       ra=(-1, -1), rb=(-1, -1))
    validate_state(z, cfg)
    return cfg, z


def random_valid_state(rng: np.random.Generator, K: int, m: int,
                       with_mm: bool = True):
    """A random valid book, optionally with resting MM orders."""
    from lobmm.book import ControlClass, admissible_controls, apply_control

    cfg = BookConfig(K=K, a_inf=int(rng.integers(1, 4)),
                     b_inf=int(rng.integers(1, 4)), m_bar=m)
    s0 = int(rng.integers(1, K + 1))
    a = [0] * K
    b = [0] * K
    for i in range(s0 - 1, K):
        a[i] = int(rng.integers(1 if i == s0 - 1 else 0, 4))
        b[i] = -int(rng.integers(1 if i == s0 - 1 else 0, 4))
    z = OrderBookState(x=float(rng.integers(-3, 4)), y=int(rng.integers(-2, 3)),
                       a=tuple(a), b=tuple(b), na=(-1,) * m, nb=(-1,) * m,
                       pa=100 + s0, pb=100, ra=(-1,) * m, rb=(-1,) * m)
    validate_state(z, cfg)
    if with_mm:
        ctrls = admissible_controls(z, cfg, ControlClass.GENERAL)
        z = apply_control(z, ctrls[int(rng.integers(0, len(ctrls)))], cfg)
    return cfg, z
