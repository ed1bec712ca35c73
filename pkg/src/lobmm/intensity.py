"""Order-flow intensity models.

Cox rates are state functions from a closed family, constant between
events; every kind reads one queue of the book (market orders read the
best opposite queue, limit/cancel kinds their own level).  The Hawkes
model is a multivariate exponential-kernel process over the same 4K+2
event kinds; component m decays toward its base rate at the row sum of
the beta matrix and jumps by alpha[m, j] when an event of kind j fires.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from lobmm import kernels
from lobmm.book import BookConfig, EventKind, OrderBookState, OrderEvent
from lobmm.errors import DegenerateState, EnvelopeViolated

_eng = kernels.engine


# ---------------------------------------------------------------------------
# rate families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    rate: float

    def bound_parts(self):  # (constant part, per-lot slope)
        return self.rate, 0.0


@dataclass(frozen=True)
class LinearInDepth:
    base: float
    slope: float  # rate per lot resting in the queue the kind reads

    def bound_parts(self):
        return self.base, self.slope


@dataclass(frozen=True)
class QueueReactive:
    """Bucketed lookup: rate = table[min(depth, len-1)].

    Shipped preset tables are representative placeholders, not values
    calibrated to any market.
    """
    table: tuple[float, ...]

    def bound_parts(self):
        return max(self.table), 0.0


RateFamily = Union[Constant, LinearInDepth, QueueReactive]

_FAMILY_CODE = {Constant: 0, LinearInDepth: 1, QueueReactive: 2}


@dataclass(frozen=True)
class CoxIntensitySpec:
    """Per-kind rate functions plus declared linear-envelope constants.

    ``families`` has one entry per flat kind index (see OrderEvent.index).
    ``mm_visible`` decides whether rates read displayed depths (the
    market maker's orders included) or the exogenous book only.
    """
    K: int
    families: tuple[RateFamily, ...]
    lam_L: float
    lam_C: float
    lam_M: float
    mm_visible: bool = True

    def __post_init__(self):
        if len(self.families) != 4 * self.K + 2:
            raise ValueError("need one rate family per event kind (4K+2)")
        for f in self.families:
            c, s = f.bound_parts()
            if c < 0 or s < 0 or (isinstance(f, QueueReactive) and min(f.table) < 0):
                raise ValueError("rates must be non-negative")

    def packed(self):
        """(fam, p0, p1, pool) arrays in the engine's encoding."""
        nk = len(self.families)
        fam = np.zeros(nk, dtype=np.int64)
        p0 = np.zeros(nk)
        p1 = np.zeros(nk)
        pool: list[float] = []
        for k, f in enumerate(self.families):
            fam[k] = _FAMILY_CODE[type(f)]
            if isinstance(f, Constant):
                p0[k] = f.rate
            elif isinstance(f, LinearInDepth):
                p0[k], p1[k] = f.base, f.slope
            else:
                p0[k] = len(pool)
                p1[k] = len(f.table)
                pool.extend(f.table)
        return fam, p0, p1, np.array(pool if pool else [0.0])


def spec_from_groups(K: int, market_buy: RateFamily, market_sell: RateFamily,
                     limit_ask: RateFamily | Sequence[RateFamily],
                     limit_bid: RateFamily | Sequence[RateFamily],
                     cancel_ask: RateFamily | Sequence[RateFamily],
                     cancel_bid: RateFamily | Sequence[RateFamily],
                     mm_visible: bool = True,
                     envelopes: tuple[float, float, float] | None = None) -> CoxIntensitySpec:
    """Build a spec from one family per flow group (or one per level)."""
    def expand(f):
        if isinstance(f, (Constant, LinearInDepth, QueueReactive)):
            return [f] * K
        fs = list(f)
        if len(fs) != K:
            raise ValueError(f"need {K} per-level families, got {len(fs)}")
        return fs

    families = ([market_buy, market_sell] + expand(limit_ask) + expand(limit_bid)
                + expand(cancel_ask) + expand(cancel_bid))
    if envelopes is None:
        def envelope(fs):
            # sides are never empty, so |a|+|b| >= 2 bounds the constant part
            return sum(f.bound_parts()[0] for f in fs) / 2.0 + max(
                f.bound_parts()[1] for f in fs)
        lam_L = envelope(families[2:2 + 2 * K])
        lam_C = envelope(families[2 + 2 * K:])
        lam_M = envelope(families[:2])
    else:
        lam_L, lam_C, lam_M = envelopes
    return CoxIntensitySpec(K=K, families=tuple(families), lam_L=lam_L,
                            lam_C=lam_C, lam_M=lam_M, mm_visible=mm_visible)


# ---------------------------------------------------------------------------
# Cox operations
# ---------------------------------------------------------------------------

def event_rates(z: OrderBookState, spec: CoxIntensitySpec, cfg: BookConfig) -> np.ndarray:
    """Per-kind rate vector at the state; cancels on displayed-empty
    queues are zero.  Raises when the declared linear envelopes fail."""
    if spec.K != cfg.K:
        raise ValueError("intensity spec and book config disagree on K")
    arr = z.to_array()
    out = np.zeros(cfg.n_kinds)
    fam, p0, p1, pool = spec.packed()
    _eng.rates_into(out, arr, cfg.K, cfg.m_bar, 1 if spec.mm_visible else 0,
                    fam, p0, p1, pool)
    vol = float(sum(z.a) - sum(z.b))
    K = cfg.K
    checks = (
        ("L", out[2:2 + 2 * K].sum(), spec.lam_L),
        ("C", out[2 + 2 * K:].sum(), spec.lam_C),
        ("M", out[:2].sum(), spec.lam_M),
    )
    for name, total, env in checks:
        if total > env * vol * (1 + 1e-12):
            raise EnvelopeViolated(
                f"{name}-flow rate {total:.6g} exceeds envelope {env:.6g}*{vol:.6g}")
    return out


def total_rate(rates: np.ndarray) -> float:
    """Sum of the per-kind rates; a frozen book is a config error."""
    if (np.asarray(rates) < 0).any():
        raise ValueError("rates must be non-negative")
    lam = float(np.sum(rates))
    if lam <= 0.0:
        raise DegenerateState("total event rate is zero: the book is frozen")
    return lam


# ---------------------------------------------------------------------------
# Hawkes model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HawkesSpec:
    """Exponential-kernel multivariate Hawkes over the 4K+2 event kinds."""
    K: int
    lambda0: tuple[float, ...]
    alpha: tuple[tuple[float, ...], ...]   # jump of component m on a kind-j event
    beta: tuple[tuple[float, ...], ...]    # decay rates; component m decays at row sum

    def __post_init__(self):
        D = 4 * self.K + 2
        lam0 = np.asarray(self.lambda0, dtype=float)
        al = np.asarray(self.alpha, dtype=float)
        be = np.asarray(self.beta, dtype=float)
        if lam0.shape != (D,) or al.shape != (D, D) or be.shape != (D, D):
            raise ValueError(f"need lambda0[{D}], alpha[{D}x{D}], beta[{D}x{D}]")
        if (lam0 <= 0).any():
            raise ValueError("base rates must be strictly positive")
        if (al < 0).any():
            raise ValueError("alpha must be non-negative")
        if ((al > 0) & (be <= 0)).any():
            raise ValueError("beta must be positive wherever alpha is")
        rho = branching_radius(self)
        if rho >= 1.0:
            warnings.warn(
                f"Hawkes branching spectral radius {rho:.3f} >= 1: "
                "the process is non-stationary", stacklevel=2)

    @property
    def dim(self) -> int:
        return 4 * self.K + 2

    def arrays(self):
        lam0 = np.asarray(self.lambda0, dtype=float)
        al = np.asarray(self.alpha, dtype=float)
        brow = np.asarray(self.beta, dtype=float).sum(axis=1)
        return lam0, al, brow


def branching_radius(spec: HawkesSpec) -> float:
    """Spectral radius of the expected-offspring matrix alpha[m,j]/B_m."""
    lam0, al, brow = (np.asarray(spec.lambda0, float),
                      np.asarray(spec.alpha, float),
                      np.asarray(spec.beta, float).sum(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        branching = np.where(al > 0, al / brow[:, None], 0.0)
    return float(np.abs(np.linalg.eigvals(branching)).max())


@dataclass(frozen=True)
class HawkesState:
    lam: tuple[float, ...]
    t: float = 0.0

    @staticmethod
    def initial(spec: HawkesSpec) -> "HawkesState":
        return HawkesState(lam=tuple(spec.lambda0), t=0.0)


def hawkes_decay(s: HawkesState, dt: float, spec: HawkesSpec) -> HawkesState:
    """Relax every component toward its base rate over dt."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    lam0, _, brow = spec.arrays()
    lam = np.asarray(s.lam, dtype=float)
    new = lam0 + (lam - lam0) * np.exp(-brow * dt)
    return HawkesState(lam=tuple(new), t=s.t + dt)


def hawkes_jump(s: HawkesState, j: int, spec: HawkesSpec) -> HawkesState:
    """Excitation from one event of kind j (0-based flat kind index)."""
    D = spec.dim
    if not 0 <= j < D:
        raise ValueError(f"event index {j} outside 0..{D - 1}")
    _, al, _ = spec.arrays()
    lam = np.asarray(s.lam, dtype=float) + al[:, j]
    return HawkesState(lam=tuple(lam), t=s.t)


def jump_survival(s: HawkesState, horizon: float, spec: HawkesSpec) -> float:
    """P(no event in (t, t+horizon]) in closed form."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    lam0, _, brow = spec.arrays()
    lam = np.asarray(s.lam, dtype=float)
    excess = lam - lam0
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(brow > 0,
                        excess / np.where(brow > 0, brow, 1.0)
                        * (np.exp(-brow * horizon) - 1.0),
                        -excess * horizon)
    return float(np.exp(-lam0.sum() * horizon + term.sum()))
