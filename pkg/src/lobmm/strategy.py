"""Market-maker policies and the control-class surface.

Policies emit admissible slot-indexed controls; a policy must self-censor
(the simulator asserts admissibility only in debug paths).  The solver's
table-backed policy lives in :mod:`lobmm.solver`.
"""
from __future__ import annotations

from dataclasses import dataclass

from lobmm.book import (
    BookConfig,
    ControlClass,
    ControlVector,
    OrderBookState,
    structural_control,
)

__all__ = ["ControlClass", "Policy", "NullPolicy", "Naive11Policy"]


class Policy:
    """Deterministic feedback policy: a control for each (t, state)."""

    #: engine fast-path id; -1 means the batch loop must call back into Python
    engine_id: int = -1

    def decide(self, t: float, z: OrderBookState, cfg: BookConfig,
               step: int = 0) -> ControlVector:
        raise NotImplementedError


@dataclass(frozen=True)
class NullPolicy(Policy):
    """Places nothing, ever."""
    engine_id = 0

    def decide(self, t, z, cfg, step=0):
        none = (-1,) * cfg.m_bar
        return ControlVector(none, none)


@dataclass(frozen=True)
class Naive11Policy(Policy):
    """Keeps one order at the best ask and one at the best bid, re-posting
    at the new best limits after fills and price moves."""
    engine_id = 1

    def decide(self, t, z, cfg, step=0):
        return structural_control(z, cfg, 0b11, ControlClass.A1LIM)


@dataclass(frozen=True)
class ExplorationPolicy(Policy):
    """Uniformly random structural action; used for training-set design.

    Randomness comes from the path's control substream inside the batch
    engine, so exploration paths are reproducible and coupled.
    """
    control_class: ControlClass = ControlClass.A1LIM

    @property
    def engine_id(self) -> int:  # type: ignore[override]
        return 2 if self.control_class is ControlClass.A1LIM else 3

    def decide(self, t, z, cfg, step=0):
        raise RuntimeError("exploration runs only inside the batch engine")
