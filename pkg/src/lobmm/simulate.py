"""Event-time simulation of the controlled book under Cox or Hawkes flow.

Randomness discipline (identical in the batch engine and the recording
single-path loop): per path, four named splitmix64 substreams derived
from (seed, path index) — event clock, event kind, cancel position,
control randomization.  Per event the draws are clock, kind, then one
cancel draw iff the kind is a cancel.  With intensities blind to the
market maker's volume this makes the exogenous event sequence identical
across policies under the same seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from lobmm import kernels
from lobmm.book import (
    BookConfig,
    ControlVector,
    EventKind,
    OrderBookState,
    OrderEvent,
    RewardMode,
    terminal_reward,
)
from lobmm.errors import DegenerateState, PathTooLong
from lobmm.intensity import CoxIntensitySpec, HawkesSpec, HawkesState, total_rate
from lobmm.strategy import Policy

_eng = kernels.engine

DEFAULT_MAX_EVENTS = 1_000_000

FlowSpec = Union[CoxIntensitySpec, HawkesSpec]


def _seqsum(values) -> float:
    """Left-to-right sum, bit-compatible with the engine's accumulation."""
    total = 0.0
    for v in values:
        total += float(v)
    return total


# ---------------------------------------------------------------------------
# single-draw operations
# ---------------------------------------------------------------------------

def next_event_cox(z: OrderBookState, spec: CoxIntensitySpec, cfg: BookConfig,
                   rng: np.random.Generator) -> tuple[float, OrderEvent]:
    """One exponential holding time and a categorically drawn kind."""
    from lobmm.intensity import event_rates

    rates = event_rates(z, spec, cfg)
    lam = total_rate(rates)
    dt = -math.log(1.0 - rng.random()) / lam
    u = rng.random() * lam
    kind = int(np.searchsorted(np.cumsum(rates), u, side="right"))
    kind = min(kind, cfg.n_kinds - 1)
    while rates[kind] <= 0 and kind > 0:
        kind -= 1
    return dt, OrderEvent.from_index(kind, cfg.K)


def next_event_hawkes(s: HawkesState, spec: HawkesSpec,
                      rng: np.random.Generator) -> tuple[float, int, HawkesState]:
    """Ogata thinning step: (waiting time, kind index, post-jump state).

    Between jumps the total intensity is non-increasing for this kernel,
    so the bound is its current value, tightened after each rejection.
    """
    from lobmm.intensity import hawkes_decay, hawkes_jump

    lam0, _, _ = spec.arrays()
    state = s
    waited = 0.0
    while True:
        mu = float(np.sum(state.lam))
        dt = -math.log(1.0 - rng.random()) / mu
        cand = hawkes_decay(state, dt, spec)
        waited += dt
        mu_new = float(np.sum(cand.lam))
        if rng.random() * mu > mu_new:
            state = cand  # rejection; the decayed state re-bounds the rest
            continue
        u = rng.random() * mu_new
        kind = int(np.searchsorted(np.cumsum(cand.lam), u, side="right"))
        kind = min(kind, spec.dim - 1)
        return waited, kind, hawkes_jump(cand, kind, spec)


# ---------------------------------------------------------------------------
# full paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathStep:
    t: float
    event: Optional[OrderEvent]     # None on the initial decision row
    state: OrderBookState           # post-event, pre-control
    control: ControlVector
    u_cancel: Optional[float] = None


@dataclass
class PathRecord:
    steps: list[PathStep]
    T: float
    terminal_value: float
    fills: int
    pnl: float

    @property
    def times(self):
        return [s.t for s in self.steps]


def _spec_pack(spec: CoxIntensitySpec):
    fam, p0, p1, pool = spec.packed()
    return fam, p0, p1, pool


def simulate_path(z0: OrderBookState, policy: Policy, T: float, flow: FlowSpec,
                  cfg: BookConfig, seed: int, path_index: int = 0,
                  reward_mode: RewardMode = RewardMode.MARK_TO_MARKET,
                  max_events: int = DEFAULT_MAX_EVENTS) -> PathRecord:
    """Simulate one controlled path, recording every decision epoch.

    Bit-compatible with the batch engine: the same (seed, path_index)
    under the same policy yields the same event sequence and P&L.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    streams = np.zeros(4, dtype=np.uint64)
    _eng.stream_init(streams, seed, path_index)
    arr = z0.to_array()
    g0 = terminal_reward(z0, cfg, reward_mode)
    hawkes = isinstance(flow, HawkesSpec)
    if hawkes:
        lam0, alpha, brow = flow.arrays()
        lam = lam0.copy()
    else:
        fam, p0, p1, pool = _spec_pack(flow)
        rates = np.zeros(cfg.n_kinds)
        mmv = 1 if flow.mm_visible else 0

    def decide_apply(t, step):
        z = OrderBookState.from_array(arr, cfg)
        u = policy.decide(t, z, cfg, step)
        _eng.apply_control(arr, np.array(u.ra, dtype=np.float64),
                           np.array(u.rb, dtype=np.float64), cfg.K, cfg.m_bar,
                           float(cfg.a_inf), float(cfg.b_inf))
        return z, u

    t = 0.0
    step = 0
    fills = 0
    z_rec, u0 = decide_apply(0.0, 0)
    steps = [PathStep(0.0, None, z_rec, u0)]
    while True:
        if hawkes:
            mu = _seqsum(lam)
            if mu <= 0:
                raise DegenerateState("hawkes total intensity is zero")
            u = _eng.next_u01(streams, _eng.STREAM_CLOCK)
            dt = -math.log(1.0 - u) / mu
            if t + dt > T:
                break
            t += dt
            # per-component libm exp keeps bit parity with the batch engine
            lam = np.array([lam0[i] + (lam[i] - lam0[i]) * math.exp(-brow[i] * dt)
                            for i in range(flow.dim)])
            mu_new = _seqsum(lam)
            ua = _eng.next_u01(streams, _eng.STREAM_CLOCK)
            if ua * mu > mu_new:
                continue
            uk = _eng.next_u01(streams, _eng.STREAM_KIND) * mu_new
            kind = int(np.searchsorted(np.cumsum(lam), uk, side="right"))
            kind = min(kind, flow.dim - 1)
            while lam[kind] <= 0 and kind > 0:
                kind -= 1
        else:
            lam_tot = _eng.rates_into(rates, arr, cfg.K, cfg.m_bar, mmv,
                                      fam, p0, p1, pool)
            if lam_tot <= 0:
                raise DegenerateState("total event rate is zero")
            u = _eng.next_u01(streams, _eng.STREAM_CLOCK)
            dt = -math.log(1.0 - u) / lam_tot
            if t + dt > T:
                break
            t += dt
            uk = _eng.next_u01(streams, _eng.STREAM_KIND) * lam_tot
            kind = int(np.searchsorted(np.cumsum(rates), uk, side="right"))
            kind = min(kind, cfg.n_kinds - 1)
            while rates[kind] <= 0 and kind > 0:
                kind -= 1
        ucan = None
        if kind >= 2 * cfg.K + 2:
            ucan = _eng.next_u01(streams, _eng.STREAM_CANCEL)
        fl = _eng.apply_event(arr, kind, ucan if ucan is not None else 0.0,
                              cfg.K, cfg.m_bar, float(cfg.a_inf),
                              float(cfg.b_inf), cfg.tick, cfg.lot)
        if fl == _eng.ERR_EMPTY_CANCEL and hawkes:
            fl = _eng.F_NOOP
        if fl < 0:
            raise DegenerateState(f"engine error {fl} applying kind {kind}")
        if fl & _eng.F_ASK_FILL:
            fills += 1
        if fl & _eng.F_BID_FILL:
            fills += 1
        if hawkes:
            lam = lam + alpha[:, kind]
        step += 1
        if step > max_events:
            raise PathTooLong(f"more than {max_events} events before T")
        z_rec, u_rec = decide_apply(t, step)
        steps.append(PathStep(t, OrderEvent.from_index(kind, cfg.K), z_rec,
                              u_rec, ucan))
    z_final = OrderBookState.from_array(arr, cfg)
    gT = terminal_reward(z_final, cfg, reward_mode)
    return PathRecord(steps=steps, T=T, terminal_value=gT, fills=fills,
                      pnl=gT - g0)


@dataclass
class BatchResult:
    pnl: np.ndarray
    fills: np.ndarray
    events: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.pnl.mean())

    @property
    def std(self) -> float:
        return float(self.pnl.std(ddof=1)) if len(self.pnl) > 1 else 0.0

    @property
    def stderr(self) -> float:
        return self.std / math.sqrt(len(self.pnl)) if len(self.pnl) > 1 else 0.0


_ENGINE_ERRORS = {
    -4: DegenerateState("total event rate is zero"),
    -5: PathTooLong("event cap exceeded"),
}


def batch_simulate(z0: OrderBookState, policy: Policy, T: float, flow: FlowSpec,
                   cfg: BookConfig, n_paths: int, seed: int,
                   reward_mode: RewardMode = RewardMode.MARK_TO_MARKET,
                   max_events: int = DEFAULT_MAX_EVENTS) -> BatchResult:
    """Simulate n_paths with independent substreams, merged in path order."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    pnl = np.zeros(n_paths)
    fills = np.zeros(n_paths, dtype=np.int64)
    events = np.zeros(n_paths, dtype=np.int64)
    pid = policy.engine_id
    mode = 0 if reward_mode is RewardMode.CASH_ONLY else 1
    if pid >= 0:
        z0a = z0.to_array()
        scratch = _scratch(cfg)
        if isinstance(flow, HawkesSpec):
            lam0, alpha, brow = flow.arrays()
            rc = _eng.run_hawkes_paths(
                n_paths, seed, z0a, T, pid, max_events, cfg.K, cfg.m_bar,
                float(cfg.a_inf), float(cfg.b_inf), cfg.tick, cfg.lot, cfg.eta,
                lam0, np.ascontiguousarray(alpha), brow, mode,
                pnl, fills, events, scratch["z"], np.zeros(flow.dim),
                scratch["ra"], scratch["rb"], scratch["streams"])
        else:
            fam, p0, p1, pool = flow.packed()
            empty = np.zeros(0, dtype=np.int64)
            emptyf = np.zeros(0)
            rc = _eng.run_cox_paths(
                n_paths, seed, z0a, T, pid, max_events, cfg.K, cfg.m_bar,
                float(cfg.a_inf), float(cfg.b_inf), cfg.tick, cfg.lot, cfg.eta,
                1 if flow.mm_visible else 0, fam, p0, p1, pool, mode,
                pnl, fills, events,
                0, empty, emptyf, emptyf, emptyf, emptyf,
                0, np.zeros((1, 1)), np.zeros((1, 1, 1)),
                scratch["z"], scratch["rates"], scratch["rates"],
                scratch["ra"], scratch["rb"], scratch["streams"])
        if rc < 0:
            raise _ENGINE_ERRORS.get(rc, DegenerateState(f"engine error {rc}"))
    else:
        for p in range(n_paths):
            rec = simulate_path(z0, policy, T, flow, cfg, seed, p,
                                reward_mode, max_events)
            pnl[p] = rec.pnl
            fills[p] = rec.fills
            events[p] = len(rec.steps) - 1
    return BatchResult(pnl=pnl, fills=fills, events=events)


def _scratch(cfg: BookConfig) -> dict:
    return {
        "z": np.zeros(cfg.n_state),
        "rates": np.zeros(cfg.n_kinds),
        "ra": np.zeros(cfg.m_bar),
        "rb": np.zeros(cfg.m_bar),
        "streams": np.zeros(4, dtype=np.uint64),
    }
