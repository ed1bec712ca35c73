"""Order-book state, controlled transition dynamics, and rewards.

Conventions (asserted by :func:`validate_state`):

* ``a[i]`` is the displayed ask depth ``i+1`` ticks above the best bid,
  ``b[i]`` the (non-positive) bid depth ``i+1`` ticks below the best ask.
* Prices are integer tick counts; money values are ``ticks * tick * lot``.
* Market-maker orders are counted inside the displayed depths, so a rank
  always satisfies ``1 <= rank <= depth of its queue``.
* The best-ask and best-bid indices both equal the spread in ticks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from lobmm import kernels
from lobmm.errors import (
    EventImpossible,
    InadmissibleControl,
    InvalidState,
    InventoryTooLarge,
)

_eng = kernels.engine


@dataclass(frozen=True)
class BookConfig:
    K: int
    tick: float = 1.0
    lot: float = 1.0
    a_inf: int = 1
    b_inf: int = 1
    m_bar: int = 1
    eta: float = 0.0

    def __post_init__(self):
        if self.K < 1 or self.a_inf < 1 or self.b_inf < 1 or self.m_bar < 1:
            raise ValueError("K, a_inf, b_inf, m_bar must all be >= 1")
        if self.tick <= 0 or self.lot <= 0 or self.eta < 0:
            raise ValueError("tick > 0, lot > 0, eta >= 0 required")

    @property
    def n_state(self) -> int:
        return 2 * self.K + 4 * self.m_bar + 4

    @property
    def n_kinds(self) -> int:
        return 4 * self.K + 2


class EventKind(Enum):
    MARKET_BUY = "market_buy"
    MARKET_SELL = "market_sell"
    LIMIT_ASK = "limit_ask"
    LIMIT_BID = "limit_bid"
    CANCEL_ASK = "cancel_ask"
    CANCEL_BID = "cancel_bid"


@dataclass(frozen=True)
class OrderEvent:
    kind: EventKind
    level: int = 0  # 1..K for limit/cancel kinds, 0 for market orders

    def index(self, K: int) -> int:
        """Flat kind index used by the engine and the intensity vector."""
        k, i = self.kind, self.level
        if k in (EventKind.LIMIT_ASK, EventKind.LIMIT_BID,
                 EventKind.CANCEL_ASK, EventKind.CANCEL_BID):
            if not 1 <= i <= K:
                raise ValueError(f"level {i} out of range 1..{K}")
        if k is EventKind.MARKET_BUY:
            return 0
        if k is EventKind.MARKET_SELL:
            return 1
        if k is EventKind.LIMIT_ASK:
            return 1 + i
        if k is EventKind.LIMIT_BID:
            return 1 + K + i
        if k is EventKind.CANCEL_ASK:
            return 1 + 2 * K + i
        return 1 + 3 * K + i

    @staticmethod
    def from_index(idx: int, K: int) -> "OrderEvent":
        if idx == 0:
            return OrderEvent(EventKind.MARKET_BUY)
        if idx == 1:
            return OrderEvent(EventKind.MARKET_SELL)
        if idx <= 1 + K:
            return OrderEvent(EventKind.LIMIT_ASK, idx - 1)
        if idx <= 1 + 2 * K:
            return OrderEvent(EventKind.LIMIT_BID, idx - 1 - K)
        if idx <= 1 + 3 * K:
            return OrderEvent(EventKind.CANCEL_ASK, idx - 1 - 2 * K)
        if idx <= 1 + 4 * K:
            return OrderEvent(EventKind.CANCEL_BID, idx - 1 - 3 * K)
        raise ValueError(f"event index {idx} out of range for K={K}")


def all_events(K: int) -> list[OrderEvent]:
    return [OrderEvent.from_index(i, K) for i in range(4 * K + 2)]


@dataclass(frozen=True)
class OrderBookState:
    x: float
    y: int
    a: tuple[int, ...]
    b: tuple[int, ...]
    na: tuple[int, ...]
    nb: tuple[int, ...]
    pa: int
    pb: int
    ra: tuple[int, ...]
    rb: tuple[int, ...]

    @property
    def spread(self) -> int:
        return self.pa - self.pb

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.x, self.y, *self.a, *self.b, *self.na, *self.nb,
             self.pa, self.pb, *self.ra, *self.rb],
            dtype=np.float64,
        )

    @staticmethod
    def from_array(arr: Sequence[float], cfg: BookConfig) -> "OrderBookState":
        K, m = cfg.K, cfg.m_bar
        a = np.asarray(arr, dtype=np.float64)
        if a.shape != (cfg.n_state,):
            raise InvalidState(f"state vector must have length {cfg.n_state}")
        ints = lambda xs: tuple(int(v) for v in xs)
        o = 2
        return OrderBookState(
            x=float(a[0]), y=int(a[1]),
            a=ints(a[o:o + K]), b=ints(a[o + K:o + 2 * K]),
            na=ints(a[o + 2 * K:o + 2 * K + m]),
            nb=ints(a[o + 2 * K + m:o + 2 * K + 2 * m]),
            pa=int(a[o + 2 * K + 2 * m]), pb=int(a[o + 2 * K + 2 * m + 1]),
            ra=ints(a[o + 2 * K + 2 * m + 2:o + 2 * K + 3 * m + 2]),
            rb=ints(a[o + 2 * K + 3 * m + 2:o + 2 * K + 4 * m + 2]),
        )


@dataclass(frozen=True)
class ControlVector:
    """Slot-indexed placement decision: -1 keeps a slot empty, otherwise
    the limit index where the slot's order rests after the decision."""
    ra: tuple[int, ...]
    rb: tuple[int, ...]

    def placed(self) -> int:
        return sum(1 for v in self.ra if v >= 0) + sum(1 for v in self.rb if v >= 0)


class ControlClass(Enum):
    """Nested families of admissible placements."""
    A1LIM = "A1lim"      # one order per side at the best limit
    A2LIM = "A2lim"      # orders on the two best price levels per side
    GENERAL = "general"  # any m_bar placements at or behind the best limits


class RewardMode(Enum):
    CASH_ONLY = "cash_only"
    MARK_TO_MARKET = "mark_to_market"


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_state(z: OrderBookState, cfg: BookConfig) -> None:
    K, m = cfg.K, cfg.m_bar
    if len(z.a) != K or len(z.b) != K:
        raise InvalidState("queue vectors must have length K")
    for vec in (z.na, z.nb, z.ra, z.rb):
        if len(vec) != m:
            raise InvalidState("MM vectors must have length m_bar")
    if any(v < 0 for v in z.a) or any(v > 0 for v in z.b):
        raise InvalidState("ask depths must be >= 0 and bid depths <= 0")
    s = z.pa - z.pb
    if s < 1 or s > K:
        raise InvalidState(f"spread {s} outside 1..K")
    if z.a[s - 1] <= 0 or z.b[s - 1] >= 0:
        raise InvalidState("best-ask/bid index must equal the spread")
    if any(z.a[i] != 0 for i in range(s - 1)) or any(z.b[i] != 0 for i in range(s - 1)):
        raise InvalidState("queues strictly inside the spread must be empty")
    for side, (ranks, idxs, depths) in enumerate(
        ((z.na, z.ra, z.a), (z.nb, z.rb, [-v for v in z.b]))
    ):
        seen: dict[int, set[int]] = {}
        for j in range(m):
            if (idxs[j] == -1) != (ranks[j] == -1):
                raise InvalidState("ra/na absence markers disagree")
            if idxs[j] == -1:
                continue
            if not 1 <= idxs[j] <= K:
                raise InvalidState(f"order limit index {idxs[j]} outside 1..K")
            d = depths[idxs[j] - 1]
            if not 1 <= ranks[j] <= d:
                raise InvalidState(f"rank {ranks[j]} outside 1..{d}")
            q = seen.setdefault(idxs[j], set())
            if ranks[j] in q:
                raise InvalidState("two MM orders share a rank in one queue")
            q.add(ranks[j])


def best_nonempty_ask(z: OrderBookState) -> int:
    """Index of the first displayed-nonempty ask queue (the a0 of the
    admissibility constraint); equals the spread for a valid state."""
    for i, d in enumerate(z.a):
        if d > 0:
            return i + 1
    raise InvalidState("ask side empty")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _check_control(z: OrderBookState, u: ControlVector, cfg: BookConfig) -> None:
    m = cfg.m_bar
    if len(u.ra) != m or len(u.rb) != m:
        raise InadmissibleControl("control vectors must have length m_bar")
    a0 = best_nonempty_ask(z)
    for side in (u.ra, u.rb):
        for v in side:
            if v == -1:
                continue
            if not 1 <= v <= cfg.K:
                raise InadmissibleControl(f"limit index {v} outside 1..K")
            if v < a0:
                raise InadmissibleControl(
                    f"placement at index {v} would cross inside the spread (a0={a0})")


def apply_control(z: OrderBookState, u: ControlVector, cfg: BookConfig) -> OrderBookState:
    """New book after the decision: kept orders retain their ranks, new
    orders join the back of their queue, cancelled ones free their slot."""
    validate_state(z, cfg)
    _check_control(z, u, cfg)
    arr = z.to_array()
    _eng.apply_control(arr, np.array(u.ra, dtype=np.float64),
                       np.array(u.rb, dtype=np.float64), cfg.K, cfg.m_bar,
                       float(cfg.a_inf), float(cfg.b_inf))
    out = OrderBookState.from_array(arr, cfg)
    validate_state(out, cfg)
    return out


def apply_event(z: OrderBookState, e: OrderEvent, rng, cfg: BookConfig) -> OrderBookState:
    """New book after one exogenous arrival.

    ``rng`` must provide ``random()``; exactly one draw is consumed per
    cancel event (even when it resolves to a no-op), none otherwise.
    """
    validate_state(z, cfg)
    u = 0.0
    if e.kind in (EventKind.CANCEL_ASK, EventKind.CANCEL_BID):
        u = float(rng.random())
    arr = z.to_array()
    fl = _eng.apply_event(arr, e.index(cfg.K), u, cfg.K, cfg.m_bar,
                          float(cfg.a_inf), float(cfg.b_inf), cfg.tick, cfg.lot)
    if fl == _eng.ERR_EMPTY_CANCEL:
        raise EventImpossible(f"cancel on empty queue: {e}")
    if fl < 0:
        raise InvalidState(f"engine rejected event {e} (code {fl})")
    out = OrderBookState.from_array(arr, cfg)
    validate_state(out, cfg)
    return out


def liquidation_value(z: OrderBookState, cfg: BookConfig) -> float:
    """Mark for unwinding the inventory immediately against exogenous
    depth, walking from the best limit into the constant boundary."""
    lv = _eng.liquidation_value(z.to_array(), cfg.K, cfg.m_bar,
                                float(cfg.a_inf), float(cfg.b_inf),
                                cfg.tick, cfg.lot)
    if math.isnan(lv):
        raise InventoryTooLarge(f"book cannot absorb inventory y={z.y}")
    return lv


def terminal_reward(z: OrderBookState, cfg: BookConfig,
                    mode: RewardMode = RewardMode.MARK_TO_MARKET) -> float:
    if mode is RewardMode.CASH_ONLY:
        return z.x
    return z.x + liquidation_value(z, cfg) - cfg.eta * z.y ** 2


def _materialize(z_arr: np.ndarray, action_id: int, two_levels: bool,
                 cfg: BookConfig) -> ControlVector:
    ra = np.empty(cfg.m_bar, dtype=np.float64)
    rb = np.empty(cfg.m_bar, dtype=np.float64)
    _eng.materialize_flags(z_arr, action_id, 1 if two_levels else 0,
                           ra, rb, cfg.K, cfg.m_bar)
    return ControlVector(tuple(int(v) for v in ra), tuple(int(v) for v in rb))


def structural_control(z: OrderBookState, cfg: BookConfig, action_id: int,
                       control_class: ControlClass) -> ControlVector:
    """Materialize a structural action id into a slot-indexed control.

    A1lim ids 0..3 are bit pairs (ask@best, bid@best); A2lim ids 0..15 are
    bit quadruples (ask@best, ask@best+1, bid@best, bid@best+1).  Existing
    orders already at a targeted level are kept with their rank.
    """
    if control_class is ControlClass.A1LIM:
        if not 0 <= action_id < 4:
            raise InadmissibleControl("A1lim action id outside 0..3")
        return _materialize(z.to_array(), action_id, False, cfg)
    if control_class is ControlClass.A2LIM:
        if not 0 <= action_id < 16:
            raise InadmissibleControl("A2lim action id outside 0..15")
        if cfg.m_bar < 2:
            raise InadmissibleControl("A2lim needs m_bar >= 2")
        return _materialize(z.to_array(), action_id, True, cfg)
    raise InadmissibleControl("structural ids exist only for A1lim/A2lim")


def n_structural_actions(control_class: ControlClass) -> int:
    if control_class is ControlClass.A1LIM:
        return 4
    if control_class is ControlClass.A2LIM:
        return 16
    raise ValueError("general class has no fixed structural action count")


def admissible_controls(z: OrderBookState, cfg: BookConfig,
                        control_class: ControlClass) -> list[ControlVector]:
    """Enumerate the finite admissible set for the class at state z."""
    validate_state(z, cfg)
    if control_class in (ControlClass.A1LIM, ControlClass.A2LIM):
        arr = z.to_array()
        two = control_class is ControlClass.A2LIM
        n = n_structural_actions(control_class)
        out = []
        seen = set()
        for aid in range(n):
            u = _materialize(arr, aid, two, cfg)
            key = (u.ra, u.rb)
            if key not in seen:
                seen.add(key)
                out.append(u)
        return out
    # general class: every slot vector of placements at or behind a0
    from itertools import product

    a0 = best_nonempty_ask(z)
    m = cfg.m_bar
    side_choices = [tuple(v) for v in
                    product([-1] + list(range(a0, cfg.K + 1)), repeat=m)]
    return [ControlVector(ra, rb)
            for ra in side_choices for rb in side_choices]


# ---------------------------------------------------------------------------
# serialization (LOBSTATE/1): flat record in documented field order
# ---------------------------------------------------------------------------

STATE_FORMAT_VERSION = "LOBSTATE/1"


def state_to_text(z: OrderBookState) -> str:
    """One-line flat record: header then x y a b na nb pa pb ra rb."""
    vals = [repr(float(z.x)), str(z.y), *map(str, z.a), *map(str, z.b),
            *map(str, z.na), *map(str, z.nb), str(z.pa), str(z.pb),
            *map(str, z.ra), *map(str, z.rb)]
    return STATE_FORMAT_VERSION + " " + " ".join(vals)


def state_from_text(line: str, cfg: BookConfig) -> OrderBookState:
    parts = line.strip().split()
    if not parts or parts[0] != STATE_FORMAT_VERSION:
        raise InvalidState(f"expected {STATE_FORMAT_VERSION} header")
    vals = [float(v) for v in parts[1:]]
    return OrderBookState.from_array(np.array(vals), cfg)


def make_flat_book(cfg: BookConfig, depth: int | tuple = None, pa: int = 101,
                   pb: int = 100, x: float = 0.0, y: int = 0) -> OrderBookState:
    """Convenience builder: symmetric book with spread pa-pb and every
    visible queue outside the spread at the given depth (boundary depths
    by default)."""
    K = cfg.K
    s = pa - pb
    if depth is None:
        da, db = cfg.a_inf, cfg.b_inf
    elif isinstance(depth, tuple):
        da, db = depth
    else:
        da = db = depth
    a = tuple(0 if i + 1 < s else da for i in range(K))
    b = tuple(0 if i + 1 < s else -db for i in range(K))
    none = (-1,) * cfg.m_bar
    z = OrderBookState(x=x, y=y, a=a, b=b, na=none, nb=none,
                       pa=pa, pb=pb, ra=none, rb=none)
    validate_state(z, cfg)
    return z
