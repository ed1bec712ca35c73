"""Control-randomized training grids and the backward Qknn recursion.

The solver works on the jump chain (T_n, Z_n): training grids sample it
under uniformly random admissible controls; the backward pass computes,
at every stored pair, the best structural action by summing the exact
event-kind (and cancel-branch) expectation against a quantized Exp(1)
holding-time noise, projecting successors onto the next step's grid by
nearest neighbor.  A brute-force enumeration oracle with an exact time
integral covers small instances.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from lobmm import kernels
from lobmm.book import (
    BookConfig,
    ControlClass,
    ControlVector,
    OrderBookState,
    RewardMode,
    admissible_controls,
    apply_control,
    best_nonempty_ask,
    n_structural_actions,
    structural_control,
)
from lobmm.errors import (
    ContractionViolated,
    DegenerateState,
    GridExhausted,
    StateSpaceTooLarge,
)
from lobmm.intensity import CoxIntensitySpec
from lobmm.quantize import NnIndex, QuantGrid
from lobmm.strategy import ExplorationPolicy, Policy

_eng = kernels.engine

TABLE_FORMAT_VERSION = "QKNNTAB/1"


@dataclass(frozen=True)
class MdpReward:
    """Reward data of the jump-chain decision process."""
    T: float
    flow: CoxIntensitySpec
    reward_mode: RewardMode = RewardMode.MARK_TO_MARKET
    c0: float = 0.0   # running-reward rate: c0 + cy*y + cyy*y^2 + cord*#orders
    cy: float = 0.0
    cyy: float = 0.0
    cord: float = 0.0

    @property
    def mode_int(self) -> int:
        return 0 if self.reward_mode is RewardMode.CASH_ONLY else 1

    @property
    def c_coefs(self):
        return self.c0, self.cy, self.cyy, self.cord


def mdp_reward(t: float, z: OrderBookState, u: ControlVector, model: MdpReward,
               cfg: BookConfig) -> float:
    """Per-jump reward r(t, z, u) evaluated at the post-control book."""
    from lobmm.intensity import event_rates, total_rate

    zeta = apply_control(z, u, cfg)
    lam = total_rate(event_rates(zeta, model.flow, cfg))
    return float(_eng.step_reward(
        zeta.to_array(), t, model.T, lam, model.mode_int, cfg.K, cfg.m_bar,
        float(cfg.a_inf), float(cfg.b_inf), cfg.tick, cfg.lot, cfg.eta,
        *model.c_coefs))


# ---------------------------------------------------------------------------
# training grids
# ---------------------------------------------------------------------------

@dataclass
class TrainingGrids:
    """Per-step samples of the jump chain under randomized controls."""
    control_class: ControlClass
    N: int
    times: np.ndarray    # [N+1, D]
    states: np.ndarray   # [N+1, D, n_state]
    seed: int
    _indexes: dict = field(default_factory=dict, repr=False)
    _scales: dict = field(default_factory=dict, repr=False)

    @property
    def D(self) -> int:
        return self.times.shape[1]

    def joint(self, n: int) -> np.ndarray:
        return np.column_stack([self.times[n], self.states[n]])

    def scales(self, n: int) -> np.ndarray:
        """Per-dimension metric weights: inverse std over the step's
        sample; constant dimensions drop out of the metric, and so does
        cash, whose influence on values is the exact additive correction
        applied at lookup time (values are cash-translation covariant)."""
        if n not in self._scales:
            pts = self.joint(n)
            std = pts.std(axis=0)
            sc = np.where(std > 1e-12, 1.0 / np.where(std > 1e-12, std, 1.0), 0.0)
            sc[1] = 0.0  # cash column (joint layout: [t, x, y, ...])
            self._scales[n] = sc
        return self._scales[n]

    def index(self, n: int, approx_eps: float = 0.0) -> NnIndex:
        key = (n, approx_eps)
        if key not in self._indexes:
            self._indexes[key] = NnIndex.build(self.joint(n), self.scales(n),
                                               approx_eps=approx_eps)
        return self._indexes[key]


def build_training_grids(z0: OrderBookState, N: int, D_grid: int,
                         control_class: ControlClass, model: MdpReward,
                         cfg: BookConfig, seed: int,
                         max_events: int = 1_000_000) -> TrainingGrids:
    """Simulate D_grid exploration paths and collect their first N jumps.

    Paths whose next jump falls past the horizon freeze at the crossing
    point, so later grids keep mass in the value-zero region.
    """
    if N < 1 or D_grid < 1:
        raise ValueError("N >= 1 and D_grid >= 1 required")
    flow = model.flow
    times = np.zeros((D_grid, N + 1))
    states = np.zeros((D_grid, N + 1, cfg.n_state))
    if control_class in (ControlClass.A1LIM, ControlClass.A2LIM):
        policy = ExplorationPolicy(control_class)
        fam, p0, p1, pool = flow.packed()
        pnl = np.zeros(D_grid)
        fills = np.zeros(D_grid, dtype=np.int64)
        events = np.zeros(D_grid, dtype=np.int64)
        empty = np.zeros(0, dtype=np.int64)
        emptyf = np.zeros(0)
        rc = _eng.run_cox_paths(
            D_grid, seed, z0.to_array(), model.T, policy.engine_id, max_events,
            cfg.K, cfg.m_bar, float(cfg.a_inf), float(cfg.b_inf), cfg.tick,
            cfg.lot, cfg.eta, 1 if flow.mm_visible else 0, fam, p0, p1, pool,
            model.mode_int, pnl, fills, events,
            0, empty, emptyf, emptyf, emptyf, emptyf,
            N, times, states,
            np.zeros(cfg.n_state), np.zeros(cfg.n_kinds), np.zeros(cfg.n_kinds),
            np.zeros(cfg.m_bar), np.zeros(cfg.m_bar), np.zeros(4, dtype=np.uint64))
        if rc < 0:
            raise DegenerateState(f"exploration paths failed (engine code {rc})")
    else:
        _explore_general(z0, N, D_grid, model, cfg, seed, times, states, max_events)
    return TrainingGrids(control_class=control_class, N=N,
                         times=np.ascontiguousarray(times.T),
                         states=np.ascontiguousarray(states.transpose(1, 0, 2)),
                         seed=seed)


def _explore_general(z0, N, D_grid, model, cfg, seed, times, states, max_events):
    """Python exploration loop for the general control class."""
    flow = model.flow
    fam, p0, p1, pool = flow.packed()
    mmv = 1 if flow.mm_visible else 0
    rates = np.zeros(cfg.n_kinds)
    for p in range(D_grid):
        streams = np.zeros(4, dtype=np.uint64)
        _eng.stream_init(streams, seed, p)
        arr = z0.to_array()
        times[p, 0] = 0.0
        states[p, 0] = arr
        t = 0.0
        prev = None
        for n in range(1, N + 1):
            z = OrderBookState.from_array(arr, cfg)
            controls = admissible_controls(z, cfg, ControlClass.GENERAL)
            if (prev is not None and prev in controls
                    and _eng.next_u01(streams, _eng.STREAM_CONTROL) < 0.7):
                u = prev
            else:
                u = controls[min(int(_eng.next_u01(streams, _eng.STREAM_CONTROL)
                                     * len(controls)), len(controls) - 1)]
            prev = u
            _eng.apply_control(arr, np.array(u.ra, dtype=np.float64),
                               np.array(u.rb, dtype=np.float64), cfg.K, cfg.m_bar,
                               float(cfg.a_inf), float(cfg.b_inf))
            lam = _eng.rates_into(rates, arr, cfg.K, cfg.m_bar, mmv, fam, p0, p1, pool)
            if lam <= 0:
                raise DegenerateState("zero total rate during exploration")
            dt = -math.log(1.0 - _eng.next_u01(streams, _eng.STREAM_CLOCK)) / lam
            if t + dt > model.T:
                for nn in range(n, N + 1):
                    times[p, nn] = t + dt
                    states[p, nn] = arr
                break
            t += dt
            uk = _eng.next_u01(streams, _eng.STREAM_KIND) * lam
            kind = min(int(np.searchsorted(np.cumsum(rates), uk, side="right")),
                       cfg.n_kinds - 1)
            while rates[kind] <= 0 and kind > 0:
                kind -= 1
            ucan = 0.0
            if kind >= 2 * cfg.K + 2:
                ucan = _eng.next_u01(streams, _eng.STREAM_CANCEL)
            fl = _eng.apply_event(arr, kind, ucan, cfg.K, cfg.m_bar,
                                  float(cfg.a_inf), float(cfg.b_inf),
                                  cfg.tick, cfg.lot)
            if fl < 0:
                raise DegenerateState(f"engine error {fl} during exploration")
            times[p, n] = t
            states[p, n] = arr


# ---------------------------------------------------------------------------
# backward recursion
# ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    """Value and policy tables over the training grids.

    Values decompose as V(t, z) = g(z) * A(t, z) + P(t, z), where g is
    the terminal reward of the state itself (its mark), A the expected
    terminal discount mass (a probability in [0, 1]) and P the premium
    the remaining decisions add over holding the mark.  ``values``
    stores P and ``discount`` stores A; lookups reconstruct V from the
    successor's exactly-known mark, so the nearest-neighbor regression
    only ever handles tick-scale quantities.
    """
    grids: TrainingGrids
    quant: QuantGrid
    model: Optional[MdpReward]
    cfg: BookConfig
    values: list[np.ndarray]          # per step, aligned with grid rows
    actions: list[np.ndarray]         # structural action ids per step < N
    discount: list[np.ndarray] | None = None
    approx_eps: float = 0.0
    knn_k: int = 1
    config_hash: str = ""

    @property
    def value_at_origin(self) -> float:
        p0 = float(self.values[0][0])
        if self.discount is None or self.model is None:
            return p0
        z0 = OrderBookState.from_array(self.grids.states[0][0], self.cfg)
        from lobmm.book import terminal_reward
        g0 = terminal_reward(z0, self.cfg, self.model.reward_mode)
        return p0 + g0 * float(self.discount[0][0])


def _chunk_caps(cfg: BookConfig, nA: int, chunk: int):
    per_pair = 2 + 2 * cfg.K + 2 * cfg.K * (cfg.m_bar + 1)
    cap = chunk * nA * per_pair
    return cap


def backward_solve(grids: TrainingGrids, quant: QuantGrid, model: MdpReward,
                   cfg: BookConfig, approx_eps: float = 0.0, knn_k: int = 1,
                   chunk: int = 4096) -> SolveResult:
    """Backward Qknn pass over the training grids.

    The expectation at each (grid point, action) sums exactly over event
    kinds (weights = post-control rates over their total) and over the
    cancel-position branches, and quantizes only the Exp(1) temporal
    noise; successors project jointly in (t, state) onto the next grid.
    Ties in the argmax resolve to the lowest action id.
    """
    if grids.D < 1:
        raise GridExhausted("empty training grid")
    cc = grids.control_class
    if cc not in (ControlClass.A1LIM, ControlClass.A2LIM):
        return _backward_solve_general(grids, quant, model, cfg, approx_eps, knn_k)
    nA = n_structural_actions(cc)
    two = 1 if cc is ControlClass.A2LIM else 0
    flow = model.flow
    fam, p0, p1, pool = flow.packed()
    mmv = 1 if flow.mm_visible else 0
    N, D, ns = grids.N, grids.D, cfg.n_state
    e_pts = quant.flat_points()[:, 0]
    e_w = quant.weights / quant.weights.sum()
    action_ids = np.arange(nA, dtype=np.int64)
    values: list[Optional[np.ndarray]] = [None] * (N + 1)
    actions: list[Optional[np.ndarray]] = [None] * N

    vN = np.zeros(D)
    rc = _eng.terminal_rule_into(
        vN, grids.times[N], np.ascontiguousarray(grids.states[N]), cfg.K,
        cfg.m_bar, float(cfg.a_inf), float(cfg.b_inf), cfg.tick, cfg.lot,
        cfg.eta, mmv, fam, p0, p1, pool, model.mode_int, model.T,
        *model.c_coefs, np.zeros(cfg.n_kinds), np.zeros(ns))
    if rc < 0:
        raise DegenerateState("zero total rate at a terminal grid point")
    slopes: list[Optional[np.ndarray]] = [None] * (N + 1)
    g_grid = [None] * (N + 1)
    for nn in range(N + 1):
        gg = np.zeros(D)
        _eng.terminal_g_into(gg, np.ascontiguousarray(grids.states[nn]),
                             model.mode_int, cfg.K, cfg.m_bar,
                             float(cfg.a_inf), float(cfg.b_inf), cfg.tick,
                             cfg.lot, cfg.eta, np.zeros(ns))
        g_grid[nn] = gg
    lamN = np.zeros(D)
    _eng.total_rates_into(lamN, np.ascontiguousarray(grids.states[N]), cfg.K,
                          cfg.m_bar, mmv, fam, p0, p1, pool,
                          np.zeros(cfg.n_kinds), np.zeros(ns))
    tauN = model.T - grids.times[N]
    slopes[N] = np.where(tauN >= 0, np.exp(-lamN * np.maximum(tauN, 0.0)), 0.0)
    values[N] = vN - g_grid[N] * slopes[N]

    cap = _chunk_caps(cfg, nA, chunk)
    out_r = np.zeros((chunk, nA))
    out_lam = np.zeros((chunk, nA))
    out_ns = np.zeros((chunk, nA), dtype=np.int64)
    succ_states = np.zeros((cap, ns))
    succ_w = np.zeros(cap)
    succ_owner = np.zeros(cap, dtype=np.int64)
    zeta = np.zeros(ns)
    zev = np.zeros(ns)
    ratesb = np.zeros(cfg.n_kinds)
    ra_buf = np.zeros(cfg.m_bar)
    rb_buf = np.zeros(cfg.m_bar)

    for n in range(N - 1, -1, -1):
        idx_next = grids.index(n + 1, approx_eps)
        v_next = values[n + 1]
        s_next = slopes[n + 1]
        vn = np.zeros(D)
        an = np.zeros(D, dtype=np.int64)
        sn = np.zeros(D)
        for lo in range(0, D, chunk):
            hi = min(lo + chunk, D)
            M = hi - lo
            ts = np.ascontiguousarray(grids.times[n][lo:hi])
            sts = np.ascontiguousarray(grids.states[n][lo:hi])
            total = _eng.expand_successors(
                ts, sts, action_ids, two, cfg.K, cfg.m_bar, float(cfg.a_inf),
                float(cfg.b_inf), cfg.tick, cfg.lot, cfg.eta, mmv,
                fam, p0, p1, pool, model.mode_int, model.T, *model.c_coefs,
                out_r[:M], out_lam[:M], out_ns[:M], succ_states, succ_w,
                succ_owner, zeta, zev, ratesb, ra_buf, rb_buf)
            if total < 0:
                raise DegenerateState(f"successor expansion failed ({total})")
            total = int(total)
            owner = succ_owner[:total]
            lam_flat = out_lam[:M].reshape(-1)
            t_flat = np.repeat(ts, nA)
            acc = np.zeros(M * nA)
            acc_s = np.zeros(M * nA)
            if total > 0:
                q = np.empty((total, 1 + ns))
                q[:, 1:] = succ_states[:total]
                w = succ_w[:total]
                g_succ = np.zeros(total)
                _eng.terminal_g_into(g_succ, np.ascontiguousarray(succ_states[:total]),
                                     model.mode_int, cfg.K, cfg.m_bar,
                                     float(cfg.a_inf), float(cfg.b_inf),
                                     cfg.tick, cfg.lot, cfg.eta, np.zeros(ns))
                t_owner = t_flat[owner]
                invlam = 1.0 / lam_flat[owner]
                for l in range(len(e_pts)):
                    q[:, 0] = t_owner + e_pts[l] * invlam
                    if knn_k == 1:
                        ridx = idx_next.query_batch(q, approx=approx_eps > 0)
                        svals = s_next[ridx]
                        vals = g_succ * svals + v_next[ridx]
                    else:
                        vals, svals = _knn_values(idx_next, q, v_next, s_next,
                                                  g_succ, knn_k)
                    acc += e_w[l] * np.bincount(owner, weights=w * vals,
                                                minlength=M * nA)
                    acc_s += e_w[l] * np.bincount(owner, weights=w * svals,
                                                  minlength=M * nA)
            Q = out_r[:M] + acc.reshape(M, nA)
            vfull = Q.max(axis=1)
            a_chunk = Q.argmax(axis=1)
            an[lo:hi] = a_chunk
            # discount mass along the chosen action: probability weight of
            # the own-mark term, clipped to [0, 1]
            rows = np.arange(M)
            tau = np.maximum(model.T - ts, 0.0)
            lam_sel = out_lam[:M][rows, a_chunk]
            own_disc = np.where(ts <= model.T, np.exp(-lam_sel * tau), 0.0)
            carried = acc_s.reshape(M, nA)[rows, a_chunk]
            a_coef = np.clip(np.where(ts <= model.T, own_disc + carried, 0.0),
                             0.0, 1.0)
            sn[lo:hi] = a_coef
            vn[lo:hi] = vfull - g_grid[n][lo:hi] * a_coef
        values[n] = vn
        actions[n] = an
        slopes[n] = sn
    return SolveResult(grids=grids, quant=quant, model=model, cfg=cfg,
                       values=values, actions=actions, discount=slopes,
                       approx_eps=approx_eps, knn_k=knn_k)


def _knn_values(idx: NnIndex, q: np.ndarray, v_next: np.ndarray,
                s_next: np.ndarray, g_succ: np.ndarray, k: int):
    """Distance-weighted average of the k nearest reconstructed values."""
    qs = q * idx.scales
    d, i = idx.tree.query(qs, k=k, workers=-1)
    rep = idx.rep_index[i]
    zero = d <= 0
    with np.errstate(divide="ignore"):
        invd = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, d))
    anyzero = zero.any(axis=1)
    w = np.where(anyzero[:, None], zero / np.maximum(zero.sum(axis=1)[:, None], 1),
                 invd / invd.sum(axis=1, keepdims=True))
    svals = (s_next[rep] * w).sum(axis=1)
    pvals = (v_next[rep] * w).sum(axis=1)
    return g_succ * svals + pvals, svals


def _backward_solve_general(grids, quant, model, cfg, approx_eps, knn_k):
    """Reference-path recursion for the general control class (small use)."""
    from lobmm.intensity import event_rates, total_rate

    flow = model.flow
    N, D = grids.N, grids.D
    e_pts = quant.flat_points()[:, 0]
    e_w = quant.weights / quant.weights.sum()
    values: list[Optional[np.ndarray]] = [None] * (N + 1)
    actions: list[Optional[np.ndarray]] = [None] * N
    fam, p0, p1, pool = flow.packed()
    mmv = 1 if flow.mm_visible else 0
    vN = np.zeros(D)
    rc = _eng.terminal_rule_into(
        vN, grids.times[N], np.ascontiguousarray(grids.states[N]), cfg.K,
        cfg.m_bar, float(cfg.a_inf), float(cfg.b_inf), cfg.tick, cfg.lot,
        cfg.eta, mmv, fam, p0, p1, pool, model.mode_int, model.T,
        *model.c_coefs, np.zeros(cfg.n_kinds), np.zeros(cfg.n_state))
    if rc < 0:
        raise DegenerateState("zero total rate at a terminal grid point")
    slopes: list[Optional[np.ndarray]] = [None] * (N + 1)
    g_grid = []
    for nn in range(N + 1):
        gg = np.zeros(D)
        _eng.terminal_g_into(gg, np.ascontiguousarray(grids.states[nn]),
                             model.mode_int, cfg.K, cfg.m_bar,
                             float(cfg.a_inf), float(cfg.b_inf), cfg.tick,
                             cfg.lot, cfg.eta, np.zeros(cfg.n_state))
        g_grid.append(gg)
    lamN = np.zeros(D)
    _eng.total_rates_into(lamN, np.ascontiguousarray(grids.states[N]), cfg.K,
                          cfg.m_bar, mmv, fam, p0, p1, pool,
                          np.zeros(cfg.n_kinds), np.zeros(cfg.n_state))
    tauN = model.T - grids.times[N]
    slopes[N] = np.where(tauN >= 0, np.exp(-lamN * np.maximum(tauN, 0.0)), 0.0)
    values[N] = vN - g_grid[N] * slopes[N]
    for n in range(N - 1, -1, -1):
        idx_next = grids.index(n + 1, approx_eps)
        v_next = values[n + 1]
        s_next = slopes[n + 1]
        vn = np.zeros(D)
        sn = np.zeros(D)
        an = np.empty(D, dtype=object)
        for i in range(D):
            t = grids.times[n][i]
            if t > model.T:
                vn[i] = 0.0
                an[i] = None
                continue
            z = OrderBookState.from_array(grids.states[n][i], cfg)
            best = None
            for u in admissible_controls(z, cfg, ControlClass.GENERAL):
                cand = _q_value_general(t, z, u, v_next, s_next,
                                        idx_next, e_pts, e_w, model, cfg)
                if best is None or cand[0] > best[0]:
                    best = (*cand, u)
            sn[i] = best[1]
            vn[i] = best[0] - g_grid[n][i] * best[1]
            an[i] = best[2]
        values[n] = vn
        slopes[n] = sn
        actions[n] = an
    return SolveResult(grids=grids, quant=quant, model=model, cfg=cfg,
                       values=values, actions=actions, discount=slopes,
                       approx_eps=approx_eps, knn_k=knn_k)


def _q_value_general(t, z, u, v_next, s_next, idx_next, e_pts, e_w,
                     model, cfg):
    zeta = apply_control(z, u, cfg)
    succs, lam, r = expand_state_action(t, zeta, model, cfg)
    q = r
    carried = 0.0
    for w, child in succs:
        g_child = float(_eng.terminal_g(child, model.mode_int, cfg.K,
                                        cfg.m_bar, float(cfg.a_inf),
                                        float(cfg.b_inf), cfg.tick, cfg.lot,
                                        cfg.eta))
        for l in range(len(e_pts)):
            joint = np.concatenate([[t + e_pts[l] / lam], child])
            ridx, _ = idx_next.project(joint)
            q += e_w[l] * w * float(g_child * s_next[ridx] + v_next[ridx])
            carried += e_w[l] * w * float(s_next[ridx])
    slope = min(1.0, math.exp(-lam * max(model.T - t, 0.0)) + carried)
    return q, slope


def expand_state_action(t: float, zeta: OrderBookState, model: MdpReward,
                        cfg: BookConfig):
    """Post-control expansion: [(weight, successor array)], intensity, reward.

    Single-row call into the engine expansion, shared with the brute-force
    oracle so both routes use one transition model.
    """
    fam, p0, p1, pool = model.flow.packed()
    mmv = 1 if model.flow.mm_visible else 0
    ns = cfg.n_state
    per = 2 + 2 * cfg.K + 2 * cfg.K * (cfg.m_bar + 1)
    out_r = np.zeros((1, 1))
    out_lam = np.zeros((1, 1))
    out_ns = np.zeros((1, 1), dtype=np.int64)
    succ_states = np.zeros((per, ns))
    succ_w = np.zeros(per)
    succ_owner = np.zeros(per, dtype=np.int64)
    # action id -1 expands from the state as passed (already post-control)
    total = _eng.expand_successors(
        np.array([t]), np.ascontiguousarray(zeta.to_array()[None, :]),
        np.array([-1], dtype=np.int64), 0, cfg.K, cfg.m_bar, float(cfg.a_inf),
        float(cfg.b_inf), cfg.tick, cfg.lot, cfg.eta, mmv, fam, p0, p1, pool,
        model.mode_int, model.T, *model.c_coefs, out_r, out_lam, out_ns,
        succ_states, succ_w, succ_owner, np.zeros(ns), np.zeros(ns),
        np.zeros(cfg.n_kinds), np.zeros(cfg.m_bar), np.zeros(cfg.m_bar))
    if total < 0:
        raise DegenerateState(f"expansion failed ({total})")
    succs = [(float(succ_w[i]), succ_states[i].copy()) for i in range(int(total))]
    return succs, float(out_lam[0, 0]), float(out_r[0, 0])


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def _state_key(arr: np.ndarray) -> bytes:
    return arr.tobytes()


def _actions_for(z: OrderBookState, cfg: BookConfig, cc: ControlClass):
    if cc in (ControlClass.A1LIM, ControlClass.A2LIM):
        return [structural_control(z, cfg, aid, cc)
                for aid in range(n_structural_actions(cc))]
    return admissible_controls(z, cfg, cc)


def brute_force_value(z0: OrderBookState, N: int, model: MdpReward,
                      control_class: ControlClass, cfg: BookConfig,
                      tol: float = 1e-10, max_pairs: int = 200_000,
                      g_start: int = 257, g_max: int = 16_385) -> float:
    """Exact N-step dynamic programming over the enumerated reachable
    state space.

    Event-kind and cancel-branch expectations are exact sums; the
    exponential holding-time integral is evaluated by exact integration
    of a piecewise-linear time interpolant on a uniform grid, refined by
    doubling until the value at (0, z0) moves less than ``tol``.
    """
    levels, pair_data = _bf_enumerate(z0, N, model, control_class, cfg, max_pairs)
    prev = None
    G = g_start
    while G <= g_max:
        v0 = _bf_dp(levels, pair_data, model, cfg, N, G)
        if prev is not None and abs(v0 - prev) <= tol:
            return v0
        prev = v0
        G = 2 * G - 1
    raise RuntimeError(
        f"time quadrature did not reach tol={tol} by G={g_max}; last delta "
        f"relative to the previous refinement exceeded the tolerance")


def _bf_enumerate(z0, N, model, control_class, cfg, max_pairs):
    """Forward closure: per level, states and per (state, action) the
    tuple (lam, c, g, [(w, child_key)])."""
    arr0 = z0.to_array()
    levels: list[dict[bytes, np.ndarray]] = [{_state_key(arr0): arr0}]
    pair_data: list[dict[bytes, list]] = []
    n_pairs = 0
    for n in range(N):
        nxt: dict[bytes, np.ndarray] = {}
        level_pairs: dict[bytes, list] = {}
        for key, arr in levels[n].items():
            z = OrderBookState.from_array(arr, cfg)
            pairs = []
            for u in _actions_for(z, cfg, control_class):
                zeta = apply_control(z, u, cfg)
                succs, lam, _ = expand_state_action(0.0, zeta, model, cfg)
                cval = float(_eng.running_c(zeta.to_array(), cfg.K, cfg.m_bar,
                                            *model.c_coefs))
                gval = float(_eng.terminal_g(zeta.to_array(), model.mode_int,
                                             cfg.K, cfg.m_bar, float(cfg.a_inf),
                                             float(cfg.b_inf), cfg.tick,
                                             cfg.lot, cfg.eta))
                slist = []
                for w, child in succs:
                    ck = _state_key(child)
                    nxt.setdefault(ck, child)
                    slist.append((w, ck))
                pairs.append((lam, cval, gval, slist))
                n_pairs += 1
                if n_pairs > max_pairs:
                    raise StateSpaceTooLarge(
                        f"more than {max_pairs} (state, action) pairs")
            level_pairs[key] = pairs
        pair_data.append(level_pairs)
        levels.append(nxt)
    return levels, pair_data


def _bf_terminal(arr, model, cfg, tg):
    """Terminal rule as a function of time on the grid (state as stored)."""
    from lobmm.intensity import event_rates, total_rate

    z = OrderBookState.from_array(arr, cfg)
    lam = total_rate(event_rates(z, model.flow, cfg))
    cval = float(_eng.running_c(arr, cfg.K, cfg.m_bar, *model.c_coefs))
    gval = float(_eng.terminal_g(arr, model.mode_int, cfg.K, cfg.m_bar,
                                 float(cfg.a_inf), float(cfg.b_inf),
                                 cfg.tick, cfg.lot, cfg.eta))
    dis = np.exp(-lam * (model.T - tg))
    return cval / lam * (1.0 - dis) + dis * gval


def _exp_integrals(rows: np.ndarray, lams: np.ndarray, delta: float) -> np.ndarray:
    """I[r, i] = int_0^{T-t_i} lam e^{-lam s} V_r(t_i + s) ds for the
    piecewise-linear V_r on a uniform grid (exact per segment, backward
    accumulated; numerically stable for any lam*T)."""
    S, G = rows.shape
    E = np.exp(-lams * delta)
    P = -np.expm1(-lams * delta)
    Q2 = P / (lams * delta) - E
    A = (P - Q2)[:, None]
    B = Q2[:, None]
    seg = rows[:, :-1] * A + rows[:, 1:] * B
    out = np.zeros_like(rows)
    col = np.zeros(S)
    for i in range(G - 2, -1, -1):
        col = seg[:, i] + E * col
        out[:, i] = col
    return out


def _bf_dp(levels, pair_data, model, cfg, N, G):
    tg = np.linspace(0.0, model.T, G)
    delta = model.T / (G - 1)
    V: dict[bytes, np.ndarray] = {
        key: _bf_terminal(arr, model, cfg, tg) for key, arr in levels[N].items()
    }
    for n in range(N - 1, -1, -1):
        rows, lams, ws, starts = [], [], [], []
        rvecs = []
        meta = []  # (state_key, n_actions)
        for key in levels[n]:
            pairs = pair_data[n][key]
            meta.append((key, len(pairs)))
            for lam, cval, gval, slist in pairs:
                dis = np.exp(-lam * (model.T - tg))
                rvecs.append(cval / lam * (1.0 - dis) + dis * gval)
                starts.append(len(rows))
                for w, ck in slist:
                    rows.append(V[ck])
                    lams.append(lam)
                    ws.append(w)
        rowsM = np.asarray(rows)
        lamsA = np.asarray(lams)
        wsA = np.asarray(ws)
        acc = np.zeros((len(rvecs), G))
        # chunk the recurrence along pair boundaries to bound the working set
        starts_arr = np.asarray(starts + [len(rows)])
        if len(rows):
            rows_per_pair = max(1, len(rows) // len(rvecs) + 1)
            pstep = max(1, 50_000_000 // G // rows_per_pair)
            p = 0
            while p < len(rvecs):
                pq = min(p + pstep, len(rvecs))
                rlo, rhi = starts_arr[p], starts_arr[pq]
                if rhi > rlo:
                    I = _exp_integrals(rowsM[rlo:rhi], lamsA[rlo:rhi], delta)
                    WI = wsA[rlo:rhi, None] * I
                    acc[p:pq] = np.add.reduceat(WI, starts_arr[p:pq] - rlo, axis=0)
                p = pq
        Qmat = np.asarray(rvecs) + acc
        pos = 0
        newV: dict[bytes, np.ndarray] = {}
        for key, nact in meta:
            newV[key] = Qmat[pos:pos + nact].max(axis=0)
            pos += nact
        V = newV
    return float(V[_state_key(next(iter(levels[0].values())))][0])


# ---------------------------------------------------------------------------
# truncation bound and policy extraction
# ---------------------------------------------------------------------------

def horizon_bound(N: int, alpha_b: float, b0: float) -> float:
    """Tail bound alpha_b^N / (1 - alpha_b) * b0 on the value mass beyond
    N decision steps."""
    if not 0.0 <= alpha_b < 1.0:
        raise ContractionViolated(f"alpha_b={alpha_b} is not a contraction")
    return alpha_b ** N / (1.0 - alpha_b) * b0


def steps_for_tolerance(alpha_b: float, b0: float, tol: float) -> int:
    """Smallest N with horizon_bound(N) <= tol."""
    if not 0.0 <= alpha_b < 1.0:
        raise ContractionViolated(f"alpha_b={alpha_b} is not a contraction")
    n = 0
    while horizon_bound(n, alpha_b, b0) > tol and n < 10_000:
        n += 1
    return n


def extract_policy_decide(result: SolveResult, t: float, z: OrderBookState,
                          cfg: BookConfig, step: int) -> ControlVector:
    """Stored optimal action at the nearest grid pair of step n; the null
    control once the table is exhausted (step >= N)."""
    none = ControlVector((-1,) * cfg.m_bar, (-1,) * cfg.m_bar)
    if step >= result.grids.N:
        return none
    idx = result.grids.index(step, result.approx_eps)
    joint = np.concatenate([[t], z.to_array()])
    row, _ = idx.project(joint)
    cc = result.grids.control_class
    if cc in (ControlClass.A1LIM, ControlClass.A2LIM):
        return structural_control(z, cfg, int(result.actions[step][row]), cc)
    u = result.actions[step][row]
    if u is None:
        return none
    # self-censor a stored general control at the query state
    a0 = best_nonempty_ask(z)
    ra = tuple(v if a0 <= v <= cfg.K else -1 for v in u.ra)
    rb = tuple(v if a0 <= v <= cfg.K else -1 for v in u.rb)
    return ControlVector(ra, rb)


@dataclass(frozen=True)
class TablePolicy(Policy):
    """Feedback policy backed by solved value/policy tables."""
    result: SolveResult

    def decide(self, t, z, cfg, step=0):
        return extract_policy_decide(self.result, t, z, cfg, step)


# ---------------------------------------------------------------------------
# table persistence (QKNNTAB/1)
# ---------------------------------------------------------------------------

def _write_block(fh, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    shape = ",".join(map(str, arr.shape))
    fh.write(f"BLOCK {name} {arr.dtype.str} {shape}\n".encode())
    fh.write(arr.tobytes())
    fh.write(b"\n")


def _read_block(fh):
    header = fh.readline().decode()
    if not header.startswith("BLOCK "):
        raise ValueError(f"bad table block header: {header!r}")
    _, name, dtype, shape = header.split()
    shape = tuple(int(v) for v in shape.split(",") if v)
    arr = np.frombuffer(fh.read(int(np.prod(shape, dtype=np.int64))
                                * np.dtype(dtype).itemsize), dtype=dtype)
    fh.read(1)
    return name, arr.reshape(shape).copy()


def table_save(result: SolveResult, path: str, config_hash: str = "",
               extra_meta: dict | None = None) -> None:
    """Versioned table file: text header with config hash and sizes, then
    per-step blocks of times, state snapshots, values, and actions."""
    cc = result.grids.control_class
    if cc not in (ControlClass.A1LIM, ControlClass.A2LIM):
        raise ValueError("only structural-class tables are persistable")
    meta = {
        "version": TABLE_FORMAT_VERSION,
        "config_hash": config_hash or result.config_hash,
        "control_class": cc.value,
        "N": result.grids.N,
        "D": result.grids.D,
        "n_state": result.cfg.n_state,
        "seed": result.grids.seed,
        "approx_eps": result.approx_eps,
        "knn_k": result.knn_k,
        "book": {"K": result.cfg.K, "tick": result.cfg.tick, "lot": result.cfg.lot,
                 "a_inf": result.cfg.a_inf, "b_inf": result.cfg.b_inf,
                 "m_bar": result.cfg.m_bar, "eta": result.cfg.eta},
    }
    if extra_meta:
        meta.update(extra_meta)
    with open(path, "wb") as fh:
        fh.write((TABLE_FORMAT_VERSION + "\n").encode())
        fh.write((json.dumps(meta, sort_keys=True) + "\n").encode())
        _write_block(fh, "quant_points", result.quant.flat_points())
        _write_block(fh, "quant_weights", result.quant.weights)
        _write_block(fh, "times", result.grids.times)
        _write_block(fh, "states", result.grids.states)
        _write_block(fh, "values", np.asarray(result.values))
        _write_block(fh, "discount", np.asarray(result.discount))
        _write_block(fh, "actions", np.asarray(result.actions, dtype=np.int64))


def table_load(path: str, model: MdpReward | None = None) -> SolveResult:
    """Rebuild a SolveResult (grids, values, actions) from a table file."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode().strip()
        if magic != TABLE_FORMAT_VERSION:
            raise ValueError(f"expected {TABLE_FORMAT_VERSION}, got {magic!r}")
        meta = json.loads(fh.readline().decode())
        blocks = {}
        for _ in range(7):
            name, arr = _read_block(fh)
            blocks[name] = arr
    book = meta["book"]
    cfg = BookConfig(K=book["K"], tick=book["tick"], lot=book["lot"],
                     a_inf=book["a_inf"], b_inf=book["b_inf"],
                     m_bar=book["m_bar"], eta=book["eta"])
    pts = blocks["quant_points"]
    quant = QuantGrid(points=pts[:, 0] if pts.shape[1] == 1 else pts,
                      weights=blocks["quant_weights"])
    grids = TrainingGrids(control_class=ControlClass(meta["control_class"]),
                          N=meta["N"], times=blocks["times"],
                          states=blocks["states"], seed=meta["seed"])
    return SolveResult(grids=grids, quant=quant, model=model, cfg=cfg,
                       values=list(blocks["values"]),
                       actions=list(blocks["actions"]),
                       discount=list(blocks["discount"]),
                       approx_eps=meta["approx_eps"], knn_k=meta["knn_k"],
                       config_hash=meta["config_hash"])


def table_meta(path: str) -> dict:
    with open(path, "rb") as fh:
        magic = fh.readline().decode().strip()
        if magic != TABLE_FORMAT_VERSION:
            raise ValueError(f"expected {TABLE_FORMAT_VERSION}, got {magic!r}")
        return json.loads(fh.readline().decode())
