"""Experiment configuration: YAML schema, presets, content hashing.

The config file is a single nested key/value document.  Unknown keys are
errors (guards silent typos); every output embeds the config's content
hash and the tool version.  Intensity presets are representative
placeholders: the literature this model family follows publishes no
reusable rate values, so absolute P&L levels are not comparable across
sources.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import yaml

from lobmm import __version__
from lobmm.book import BookConfig, ControlClass, OrderBookState, RewardMode, make_flat_book
from lobmm.errors import ConfigError
from lobmm.intensity import (
    Constant,
    CoxIntensitySpec,
    HawkesSpec,
    LinearInDepth,
    QueueReactive,
    spec_from_groups,
)

INTENSITY_PRESETS = ("constant-symmetric", "state-dependent-symmetric",
                     "asymmetric-market-flow", "hawkes")


def _scale_family(f, s: float):
    if isinstance(f, Constant):
        return Constant(f.rate * s)
    if isinstance(f, LinearInDepth):
        return LinearInDepth(f.base * s, f.slope * s)
    return QueueReactive(tuple(v * s for v in f.table))


def cox_preset(name: str, K: int, mm_visible: bool = True,
               scale: float = 1.0, market_skew: float = 1.0) -> CoxIntensitySpec:
    """Shipped Cox presets (representative placeholders, not calibrated).

    All presets discount arrivals one tick inside the spread so the book
    mean-reverts around a two-tick spread, which keeps naive quoting near
    break-even instead of purely adverse-selected.
    """
    def levels(inside, touch_like):
        out = [Constant(inside)]
        for j in range(1, K):
            out.append(touch_like if not isinstance(touch_like, list)
                       else touch_like[min(j - 1, len(touch_like) - 1)])
        return out

    if name == "constant-symmetric":
        lvls = [Constant(0.12)] + [Constant(v) for v in
                                   ([1.5, 1.0] + [0.9] * max(0, K - 3))][:K - 1]
        groups = dict(market_buy=Constant(1.0), market_sell=Constant(1.0),
                      limit_ask=lvls, limit_bid=lvls,
                      cancel_ask=LinearInDepth(0.0, 0.3),
                      cancel_bid=LinearInDepth(0.0, 0.3))
    elif name in ("state-dependent-symmetric", "asymmetric-market-flow"):
        m = QueueReactive((0.0, 1.8, 1.0, 0.5))
        lvls = levels(0.12, QueueReactive((2.5, 1.2, 0.6, 0.3)))
        can = LinearInDepth(0.0, 0.3)
        skew = 1.3 if name == "asymmetric-market-flow" else market_skew
        groups = dict(market_buy=_scale_family(m, skew),
                      market_sell=_scale_family(m, 1.0 / skew),
                      limit_ask=lvls, limit_bid=lvls,
                      cancel_ask=can, cancel_bid=can)
    else:
        raise ConfigError(f"unknown Cox intensity preset {name!r}")

    def scale_group(v):
        if isinstance(v, list):
            return [_scale_family(f, scale) for f in v]
        return _scale_family(v, scale)

    groups = {k: scale_group(v) for k, v in groups.items()}
    return spec_from_groups(K, mm_visible=mm_visible, **groups)


def hawkes_preset(K: int, scale: float = 1.0) -> HawkesSpec:
    """Self- and cross-exciting preset: every kind excites itself, market
    orders additionally excite same-side markets and opposite-side limits."""
    D = 4 * K + 2
    lam0 = [0.5 * scale] * D
    alpha = [[0.0] * D for _ in range(D)]
    beta = [[0.0] * D for _ in range(D)]
    for i in range(D):
        alpha[i][i] = 0.9 * scale
        beta[i][i] = 6.0
    # market buys excite more market buys and bid-side limit refills
    for j, side_limits in ((0, range(2 + K, 2 + 2 * K)), (1, range(2, 2 + K))):
        for i in side_limits:
            alpha[i][j] = 0.45 * scale
            beta[i][j] = 6.0
    return HawkesSpec(K=K, lambda0=tuple(lam0),
                      alpha=tuple(map(tuple, alpha)),
                      beta=tuple(map(tuple, beta)))


_FAMILY_SCHEMA = {
    "constant": {"rate": float},
    "linear": {"base": float, "slope": float},
    "queue_reactive": {"table": list},
}


def _family_from_dict(d: dict, path: str):
    if not isinstance(d, dict) or "family" not in d:
        raise ConfigError(f"{path}: expected a mapping with a 'family' key")
    fam = d["family"]
    if fam not in _FAMILY_SCHEMA:
        raise ConfigError(f"{path}.family: unknown family {fam!r}")
    extra = set(d) - set(_FAMILY_SCHEMA[fam]) - {"family"}
    if extra:
        raise ConfigError(f"{path}: unknown keys {sorted(extra)}")
    try:
        if fam == "constant":
            return Constant(float(d["rate"]))
        if fam == "linear":
            return LinearInDepth(float(d["base"]), float(d["slope"]))
        return QueueReactive(tuple(float(v) for v in d["table"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class ExperimentConfig:
    raw: dict
    book: BookConfig
    z0: OrderBookState
    flow: Any                 # CoxIntensitySpec or HawkesSpec
    horizon: float
    seed: int
    output_dir: str
    control_class: ControlClass
    N: int
    D_grid: int
    quantizer_K: int
    quantizer_steps: int
    knn_k: int
    approx_eps: float
    n_eval_paths: int
    reward_mode: RewardMode
    histogram_rule: str
    histogram_bins: int | None
    diagnose: dict

    @property
    def is_hawkes(self) -> bool:
        return isinstance(self.flow, HawkesSpec)

    def config_hash(self) -> str:
        doc = {k: v for k, v in self.raw.items() if k != "output_dir"}
        return content_hash(doc)

    def model_hash(self) -> str:
        sub = {k: self.raw.get(k) for k in
               ("book", "initial", "intensity", "horizon")}
        return content_hash(sub)


def content_hash(doc: dict) -> str:
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


_SCHEMA: dict[str, Any] = {
    "book": {"K": int, "tick": float, "lot": float, "a_inf": int,
             "b_inf": int, "m_bar": int, "eta": float},
    "initial": {"pa": int, "pb": int, "depth": int, "x": float, "y": int},
    "intensity": {"preset": str, "mm_visible": bool, "scale": float,
                  "market_skew": float,
                  "market_buy": dict, "market_sell": dict, "limit_ask": dict,
                  "limit_bid": dict, "cancel_ask": dict, "cancel_bid": dict,
                  "lambda0": list, "alpha": list, "beta": list},
    "horizon": float,
    "seed": int,
    "output_dir": str,
    "solver": {"N": int, "D_grid": int, "quantizer_K": int,
               "quantizer_steps": int, "knn_k": int, "approx_eps": float,
               "control_class": str},
    "evaluation": {"n_paths": int, "reward_mode": str},
    "histogram": {"rule": str, "bins": int},
    "diagnose": {"pair": str, "n_paths": int, "controlled_scale": float,
                 "tolerance": float},
}


def _check_keys(doc: dict, schema: dict, path: str = "") -> None:
    for key, val in doc.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key: {here}")
        expected = schema[key]
        if isinstance(expected, dict) and not isinstance(expected, type):
            if not isinstance(val, dict):
                raise ConfigError(f"{here}: expected a mapping")
            _check_keys(val, expected, here)


def load_config(path: str, seed_override: int | None = None,
                out_override: str | None = None) -> ExperimentConfig:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_dict(doc, seed_override, out_override)


def config_from_dict(doc: dict, seed_override: int | None = None,
                     out_override: str | None = None) -> ExperimentConfig:
    _check_keys(doc, _SCHEMA)
    if seed_override is not None:
        doc = {**doc, "seed": int(seed_override)}
    if out_override is not None:
        doc = {**doc, "output_dir": str(out_override)}
    book_d = doc.get("book", {})
    try:
        book = BookConfig(
            K=int(book_d.get("K", 2)),
            tick=float(book_d.get("tick", 1.0)),
            lot=float(book_d.get("lot", 1.0)),
            a_inf=int(book_d.get("a_inf", 3)),
            b_inf=int(book_d.get("b_inf", 3)),
            m_bar=int(book_d.get("m_bar", 1)),
            eta=float(book_d.get("eta", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"book: {exc}") from exc
    init = doc.get("initial", {})
    z0 = make_flat_book(book,
                        depth=init.get("depth"),
                        pa=int(init.get("pa", 101)), pb=int(init.get("pb", 100)),
                        x=float(init.get("x", 0.0)), y=int(init.get("y", 0)))
    flow = _flow_from_config(doc.get("intensity", {}), book)
    solver_d = doc.get("solver", {})
    cc_name = solver_d.get("control_class", "A1lim")
    try:
        control_class = ControlClass(cc_name)
    except ValueError:
        raise ConfigError(f"solver.control_class: unknown class {cc_name!r}")
    ev = doc.get("evaluation", {})
    mode_name = ev.get("reward_mode", "mark_to_market")
    try:
        reward_mode = RewardMode(mode_name)
    except ValueError:
        raise ConfigError(f"evaluation.reward_mode: unknown mode {mode_name!r}")
    hist = doc.get("histogram", {})
    rule = hist.get("rule", "freedman-diaconis")
    if rule not in ("freedman-diaconis", "fixed"):
        raise ConfigError(f"histogram.rule: unknown rule {rule!r}")
    return ExperimentConfig(
        raw=doc, book=book, z0=z0, flow=flow,
        horizon=float(doc.get("horizon", 1.0)),
        seed=int(doc.get("seed", 0)),
        output_dir=str(doc.get("output_dir", "out")),
        control_class=control_class,
        N=int(solver_d.get("N", 12)),
        D_grid=int(solver_d.get("D_grid", 10_000)),
        quantizer_K=int(solver_d.get("quantizer_K", 25)),
        quantizer_steps=int(solver_d.get("quantizer_steps", 100_000)),
        knn_k=int(solver_d.get("knn_k", 1)),
        approx_eps=float(solver_d.get("approx_eps", 0.0)),
        n_eval_paths=int(ev.get("n_paths", 10_000)),
        reward_mode=reward_mode,
        histogram_rule=rule,
        histogram_bins=int(hist["bins"]) if "bins" in hist else None,
        diagnose=doc.get("diagnose", {}),
    )


def _flow_from_config(d: dict, book: BookConfig):
    preset = d.get("preset", "constant-symmetric")
    mm_visible = bool(d.get("mm_visible", True))
    scale = float(d.get("scale", 1.0))
    if preset == "hawkes":
        return hawkes_preset(book.K, scale=scale)
    if preset == "custom":
        groups = {}
        for g in ("market_buy", "market_sell", "limit_ask", "limit_bid",
                  "cancel_ask", "cancel_bid"):
            if g not in d:
                raise ConfigError(f"intensity.{g}: required for the custom preset")
            groups[g] = _family_from_dict(d[g], f"intensity.{g}")
        return spec_from_groups(book.K, mm_visible=mm_visible, **groups)
    if preset not in INTENSITY_PRESETS:
        raise ConfigError(f"intensity.preset: unknown preset {preset!r}")
    return cox_preset(preset, book.K, mm_visible=mm_visible, scale=scale,
                      market_skew=float(d.get("market_skew", 1.0)))


def diagnose_pair(cfg: ExperimentConfig):
    """(base, controlled) Cox pair for the measure-change checks."""
    if cfg.is_hawkes:
        raise ConfigError("diagnose needs a Cox intensity preset")
    pair = cfg.diagnose.get("pair", "scaled")
    base = cfg.flow
    if pair == "scaled":
        s = float(cfg.diagnose.get("controlled_scale", 1.2))
        controlled = CoxIntensitySpec(
            K=base.K,
            families=tuple(_scale_family(f, s) for f in base.families),
            lam_L=base.lam_L * s, lam_C=base.lam_C * s, lam_M=base.lam_M * s,
            mm_visible=base.mm_visible)
    elif pair == "state-dependent":
        controlled = cox_preset("state-dependent-symmetric", base.K,
                                mm_visible=base.mm_visible)
    else:
        raise ConfigError(f"diagnose.pair: unknown pair {pair!r}")
    return base, controlled


def version_banner() -> str:
    return f"lobmm/{__version__}"
