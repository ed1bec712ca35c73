"""Independent reference implementations used only by the test suite.

The ledger book tracks every order at its absolute price in explicit
FIFO lists, re-reading the moving frame (with boundary regeneration)
after each event.  It shares no code with the production engine.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lobmm.book import BookConfig, ControlVector, EventKind, OrderBookState, OrderEvent


class LedgerBook:
    """Absolute-price FIFO book.

    Queues map price -> ordered entries; an entry is "x" (exogenous) or
    ("A", slot) / ("B", slot) for market-maker orders.  The visible frame
    is re-read after every mutation: K ask prices above the best bid, K
    bid prices below the best ask, boundary depths regenerating prices
    that scroll into view from beyond the frame.
    """

    def __init__(self, z: OrderBookState, cfg: BookConfig):
        self.cfg = cfg
        self.asks: dict[int, list] = {}
        self.bids: dict[int, list] = {}
        for i, depth in enumerate(z.a):
            price = z.pb + i + 1
            if depth > 0:
                entries = ["x"] * depth
                for j in range(cfg.m_bar):
                    if z.ra[j] == i + 1:
                        entries[z.na[j] - 1] = ("A", j)
                self.asks[price] = entries
        for i, depth in enumerate(z.b):
            price = z.pa - i - 1
            if depth < 0:
                entries = ["x"] * (-depth)
                for j in range(cfg.m_bar):
                    if z.rb[j] == i + 1:
                        entries[z.nb[j] - 1] = ("B", j)
                self.bids[price] = entries
        self.x = z.x
        self.y = z.y

    # -- helpers ----------------------------------------------------------
    def best_ask(self) -> int:
        return min(p for p, q in self.asks.items() if q)

    def best_bid(self) -> int:
        return max(p for p, q in self.bids.items() if q)

    def _windows(self):
        pa, pb = self.best_ask(), self.best_bid()
        K = self.cfg.K
        return (set(range(pb + 1, pb + K + 1)), set(range(pa - K, pa)))

    def apply_control(self, u: ControlVector) -> None:
        """Control indices are read in the pre-decision frame; cancelling
        the last order at a best limit reframes like a depletion."""
        cfg = self.cfg
        pa0, pb0 = self.best_ask(), self.best_bid()
        old_ask_win, old_bid_win = self._windows()
        self._anchors = (pa0, pb0)
        for j in range(cfg.m_bar):
            for side, vec, tag in (("ask", u.ra, "A"), ("bid", u.rb, "B")):
                book = self.asks if side == "ask" else self.bids
                cur = self._find(tag, j)
                if cur is None:
                    continue
                price, pos = cur
                cur_idx = (price - pb0) if side == "ask" else (pa0 - price)
                if vec[j] != cur_idx:
                    book[price].pop(pos)
        for j in range(cfg.m_bar):
            for side, vec, tag in (("ask", u.ra, "A"), ("bid", u.rb, "B")):
                if vec[j] == -1 or self._find(tag, j) is not None:
                    continue
                if side == "ask":
                    self.asks.setdefault(pb0 + vec[j], []).append((tag, j))
                else:
                    self.bids.setdefault(pa0 - vec[j], []).append((tag, j))
        self._regenerate(old_ask_win, old_bid_win)

    def _find(self, tag: str, slot: int):
        book = self.asks if tag == "A" else self.bids
        for price, entries in book.items():
            for pos, e in enumerate(entries):
                if e == (tag, slot):
                    return price, pos
        return None

    # -- events -----------------------------------------------------------
    def apply_event(self, e: OrderEvent, u: float) -> None:
        cfg = self.cfg
        pa, pb = self.best_ask(), self.best_bid()
        old_ask_win, old_bid_win = self._windows()
        self._anchors = (pa, pb)
        k = e.kind
        if k is EventKind.MARKET_BUY:
            q = self.asks[pa]
            front = q.pop(0)
            if front != "x":
                self.x += pa * cfg.tick * cfg.lot
                self.y -= 1
        elif k is EventKind.MARKET_SELL:
            q = self.bids[pb]
            front = q.pop(0)
            if front != "x":
                self.x -= pb * cfg.tick * cfg.lot
                self.y += 1
        elif k is EventKind.LIMIT_ASK:
            self.asks.setdefault(pb + e.level, []).append("x")
        elif k is EventKind.LIMIT_BID:
            self.bids.setdefault(pa - e.level, []).append("x")
        elif k in (EventKind.CANCEL_ASK, EventKind.CANCEL_BID):
            book = self.asks if k is EventKind.CANCEL_ASK else self.bids
            price = pb + e.level if k is EventKind.CANCEL_ASK else pa - e.level
            entries = book.get(price, [])
            exo = [i for i, v in enumerate(entries) if v == "x"]
            if not exo:
                return  # no-op (nothing exogenous to cancel)
            pos = exo[min(int(u * len(exo)), len(exo) - 1)]
            entries.pop(pos)
        self._regenerate(old_ask_win, old_bid_win)

    def _regenerate(self, old_ask_win, old_bid_win) -> None:
        """Re-read the frame: boundary fills what scrolls into view,
        out-of-frame content (and MM orders there) is forgotten."""
        cfg = self.cfg
        if not any(q for q in self.asks.values()):
            # boundary liquidity pinned at the frame edge
            pb_ref = (self.best_bid() if any(q for q in self.bids.values())
                      else self._anchors[1])
            self.asks[pb_ref + cfg.K] = ["x"] * cfg.a_inf
        if not any(q for q in self.bids.values()):
            self.bids[self.best_ask() - cfg.K] = ["x"] * cfg.b_inf
        pa, pb = self.best_ask(), self.best_bid()
        ask_win = set(range(pb + 1, pb + cfg.K + 1))
        bid_win = set(range(pa - cfg.K, pa))
        for price in ask_win - old_ask_win:
            if price not in self.asks or not self.asks[price]:
                if price > max(old_ask_win):
                    self.asks[price] = ["x"] * cfg.a_inf
        for price in bid_win - old_bid_win:
            if price not in self.bids or not self.bids[price]:
                if price < min(old_bid_win):
                    self.bids[price] = ["x"] * cfg.b_inf
        self.asks = {p: q for p, q in self.asks.items() if p in ask_win and q}
        self.bids = {p: q for p, q in self.bids.items() if p in bid_win and q}

    def to_state(self) -> OrderBookState:
        cfg = self.cfg
        pa, pb = self.best_ask(), self.best_bid()
        a = [0] * cfg.K
        b = [0] * cfg.K
        na = [-1] * cfg.m_bar
        nb = [-1] * cfg.m_bar
        ra = [-1] * cfg.m_bar
        rb = [-1] * cfg.m_bar
        for price, entries in self.asks.items():
            i = price - pb
            if 1 <= i <= cfg.K:
                a[i - 1] = len(entries)
                for pos, v in enumerate(entries):
                    if v != "x":
                        _, j = v
                        ra[j] = i
                        na[j] = pos + 1
        for price, entries in self.bids.items():
            i = pa - price
            if 1 <= i <= cfg.K:
                b[i - 1] = -len(entries)
                for pos, v in enumerate(entries):
                    if v != "x":
                        _, j = v
                        rb[j] = i
                        nb[j] = pos + 1
        return OrderBookState(x=self.x, y=self.y, a=tuple(a), b=tuple(b),
                              na=tuple(na), nb=tuple(nb), pa=pa, pb=pb,
                              ra=tuple(ra), rb=tuple(rb))


def ledger_apply_event(z: OrderBookState, e: OrderEvent, u: float,
                       cfg: BookConfig) -> OrderBookState:
    led = LedgerBook(z, cfg)
    led.apply_event(e, u)
    return led.to_state()


def ledger_apply_control(z: OrderBookState, u: ControlVector,
                         cfg: BookConfig) -> OrderBookState:
    led = LedgerBook(z, cfg)
    led.apply_control(u)
    return led.to_state()


# ---------------------------------------------------------------------------
# dense Lloyd oracle on the exponential density (for quantizer checks)
# ---------------------------------------------------------------------------

def exp_lloyd_optimal(K: int, iters: int = 2000) -> tuple[np.ndarray, float]:
    """Fixed-point Lloyd iteration directly on the Exp(1) density.

    Cell [a,b) centroid: integral of x e^-x over the cell divided by its
    mass, in closed form.  Returns (grid, distortion)."""
    pts = np.sort(-np.log(1.0 - (np.arange(K) + 0.5) / K))

    def cell_mass(a, b):
        return np.exp(-a) - np.exp(-b)

    def cell_first_moment(a, b):
        # integral of x e^-x = -(1+x)e^-x
        fa = (1.0 + a) * np.exp(-a)
        fb = np.where(np.isinf(b), 0.0, (1.0 + b) * np.exp(-b))
        return fa - fb

    for _ in range(iters):
        edges = np.concatenate([[0.0], 0.5 * (pts[1:] + pts[:-1]), [np.inf]])
        mass = cell_mass(edges[:-1], edges[1:])
        pts = cell_first_moment(edges[:-1], edges[1:]) / mass
    edges = np.concatenate([[0.0], 0.5 * (pts[1:] + pts[:-1]), [np.inf]])
    a, b = edges[:-1], edges[1:]
    # E[(X - c)^2] over each cell: second moment - 2c m1 + c^2 m0
    fa2 = (a * a + 2 * a + 2) * np.exp(-a)
    fb2 = np.where(np.isinf(b), 0.0, (b * b + 2 * b + 2) * np.exp(-b))
    m2 = fa2 - fb2
    m1 = cell_first_moment(a, b)
    m0 = cell_mass(a, b)
    dist = float(np.sum(m2 - 2 * pts * m1 + pts * pts * m0))
    return pts, dist
