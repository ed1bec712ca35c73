"""Command-line entry points: simulate | train | evaluate | diagnose | quantize.

All outputs are deterministic given (config, seed): files carry the
config content hash and tool version, floats are written with repr, and
no timestamps are embedded.
"""
from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from lobmm.book import ControlClass, RewardMode
from lobmm.config import (
    ExperimentConfig,
    diagnose_pair,
    load_config,
    version_banner,
)
from lobmm.errors import ConfigError, LobmmError, TableConfigMismatch
from lobmm.quantize import clvq_train, distortion, exponential_sampler, grid_to_csv
from lobmm.simulate import BatchResult, batch_simulate
from lobmm.strategy import Naive11Policy, NullPolicy


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _banner(cfg: ExperimentConfig) -> str:
    return f"# {version_banner()} config={cfg.config_hash()}"


def _write_pnl_csv(path: str, cfg: ExperimentConfig, res: BatchResult) -> None:
    with open(path, "w") as fh:
        fh.write(_banner(cfg) + "\n")
        fh.write("path_id,pnl,fills,events\n")
        for i in range(len(res.pnl)):
            fh.write(f"{i},{float(res.pnl[i])!r},{int(res.fills[i])},{int(res.events[i])}\n")


def _histogram(values: np.ndarray, rule: str, bins: int | None):
    v = np.sort(np.asarray(values, dtype=float))
    lo, hi = float(v[0]), float(v[-1])
    if bins is None and rule == "freedman-diaconis":
        q75, q25 = np.percentile(v, [75, 25])
        width = 2.0 * (q75 - q25) / len(v) ** (1.0 / 3.0)
        nb = 1 if width <= 0 or hi <= lo else min(10_000, int(math.ceil((hi - lo) / width)))
    else:
        nb = bins or 50
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(v, bins=nb, range=(lo, hi))
    return counts, edges


def _write_histogram(path: str, cfg: ExperimentConfig, values: np.ndarray) -> None:
    counts, edges = _histogram(values, cfg.histogram_rule, cfg.histogram_bins)
    with open(path, "w") as fh:
        fh.write(_banner(cfg) + "\n")
        fh.write("bin_left,bin_right,count\n")
        for i, c in enumerate(counts):
            fh.write(f"{float(edges[i])!r},{float(edges[i + 1])!r},{int(c)}\n")


def _write_report(path: str, cfg: ExperimentConfig, items: list[tuple[str, object]]) -> None:
    with open(path, "w") as fh:
        fh.write(_banner(cfg) + "\n")
        for key, val in items:
            sval = repr(float(val)) if isinstance(val, float) else str(val)
            fh.write(f"{key}={sval}\n")


def _summary_items(name: str, res: BatchResult) -> list[tuple[str, object]]:
    return [
        (f"{name}.n_paths", len(res.pnl)),
        (f"{name}.pnl_mean", float(res.pnl.mean())),
        (f"{name}.pnl_std", res.std),
        (f"{name}.pnl_stderr", res.stderr),
        (f"{name}.pnl_min", float(res.pnl.min())),
        (f"{name}.pnl_max", float(res.pnl.max())),
        (f"{name}.fills_mean", float(res.fills.mean())),
        (f"{name}.events_mean", float(res.events.mean())),
    ]


def _make_policy(name: str, table_path: str | None, cfg: ExperimentConfig):
    from lobmm.solver import TablePolicy, table_load, table_meta

    if name == "null":
        return NullPolicy()
    if name == "naive11":
        return Naive11Policy()
    if name == "table":
        if not table_path:
            raise ConfigError("--table PATH is required for the table policy")
        meta = table_meta(table_path)
        if meta["config_hash"] != cfg.model_hash():
            raise TableConfigMismatch(
                f"table was trained for config {meta['config_hash']}, "
                f"evaluation book/intensity hash is {cfg.model_hash()}")
        return TablePolicy(table_load(table_path))
    raise ConfigError(f"unknown policy {name!r} (null | naive11 | table)")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, policy_name: str,
                 table_path: str | None) -> int:
    policy = _make_policy(policy_name, table_path, cfg)
    res = batch_simulate(cfg.z0, policy, cfg.horizon, cfg.flow, cfg.book,
                         cfg.n_eval_paths, cfg.seed, cfg.reward_mode)
    os.makedirs(cfg.output_dir, exist_ok=True)
    _write_pnl_csv(os.path.join(cfg.output_dir, f"pnl_{policy_name}.csv"), cfg, res)
    _write_report(os.path.join(cfg.output_dir, f"summary_{policy_name}.txt"),
                  cfg, _summary_items(policy_name, res))
    print(f"{policy_name}: mean={res.mean:.6g} stderr={res.stderr:.3g} "
          f"fills/path={res.fills.mean():.3g}")
    return 0


def cmd_train(cfg: ExperimentConfig) -> int:
    from lobmm.diagnostics import bounding_b, estimate_bounding_params
    from lobmm.solver import (
        MdpReward,
        backward_solve,
        build_training_grids,
        horizon_bound,
        table_save,
    )

    if cfg.is_hawkes:
        raise ConfigError("train requires a Cox intensity preset")
    model = MdpReward(T=cfg.horizon, flow=cfg.flow, reward_mode=cfg.reward_mode)
    quant = clvq_train(exponential_sampler(), cfg.quantizer_K,
                       cfg.quantizer_steps, seed=cfg.seed + 1)
    grids = build_training_grids(cfg.z0, cfg.N, cfg.D_grid, cfg.control_class,
                                 model, cfg.book, cfg.seed)
    result = backward_solve(grids, quant, model, cfg.book,
                            approx_eps=cfg.approx_eps, knn_k=cfg.knn_k)
    bounding = estimate_bounding_params(cfg.z0, model, cfg.book,
                                        cfg.control_class, seed=cfg.seed + 2)
    hb = horizon_bound(cfg.N, bounding.alpha_b, bounding_b(cfg.z0))
    os.makedirs(cfg.output_dir, exist_ok=True)
    table_path = os.path.join(cfg.output_dir, "qknn_table.bin")
    table_save(result, table_path, config_hash=cfg.model_hash())
    _write_report(os.path.join(cfg.output_dir, "train_report.txt"), cfg, [
        ("control_class", cfg.control_class.value),
        ("N", cfg.N),
        ("D_grid", cfg.D_grid),
        ("quantizer_K", quant.size),
        ("value_at_origin", result.value_at_origin),
        ("alpha_b", bounding.alpha_b),
        ("alpha_b_source", bounding.source),
        ("c_Q", bounding.c_Q),
        ("c_phi", bounding.c_phi),
        ("Lambda", bounding.Lambda),
        ("horizon_bound", hb),
        ("table_file", os.path.basename(table_path)),
    ])
    print(f"trained {cfg.control_class.value} table: D={cfg.D_grid} N={cfg.N} "
          f"V0={result.value_at_origin:.6g} alpha_b={bounding.alpha_b:.4g} "
          f"({bounding.source})")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, table_path: str | None) -> int:
    policies = [("table", _make_policy("table", table_path, cfg)),
                ("naive11", Naive11Policy()), ("null", NullPolicy())]
    os.makedirs(cfg.output_dir, exist_ok=True)
    results: dict[str, BatchResult] = {}
    for name, pol in policies:
        res = batch_simulate(cfg.z0, pol, cfg.horizon, cfg.flow, cfg.book,
                             cfg.n_eval_paths, cfg.seed, cfg.reward_mode)
        results[name] = res
        _write_pnl_csv(os.path.join(cfg.output_dir, f"pnl_{name}.csv"), cfg, res)
        _write_histogram(os.path.join(cfg.output_dir, f"hist_{name}.csv"),
                         cfg, res.pnl)
    with open(os.path.join(cfg.output_dir, "comparison.csv"), "w") as fh:
        fh.write(_banner(cfg) + "\n")
        fh.write("policy,n,mean,stderr,std,variance,fills_mean,events_mean\n")
        for name, res in results.items():
            fh.write(f"{name},{len(res.pnl)},{res.mean!r},{res.stderr!r},"
                     f"{res.std!r},{res.std ** 2!r},"
                     f"{float(res.fills.mean())!r},{float(res.events.mean())!r}\n")
    diff = results["table"].pnl - results["naive11"].pnl
    se_diff = float(diff.std(ddof=1) / math.sqrt(len(diff)))
    items = []
    for name, res in results.items():
        items.extend(_summary_items(name, res))
    items += [
        ("table_minus_naive_mean", float(diff.mean())),
        ("table_minus_naive_stderr", se_diff),
        ("variance_ratio_table_over_naive",
         float(results["table"].std ** 2 / max(results["naive11"].std ** 2, 1e-300))),
    ]
    _write_report(os.path.join(cfg.output_dir, "evaluation_summary.txt"), cfg, items)
    for name, res in results.items():
        print(f"{name}: mean={res.mean:.6g} stderr={res.stderr:.3g} "
              f"var={res.std ** 2:.6g}")
    print(f"table - naive11 = {diff.mean():.6g} +- {se_diff:.3g} (paired)")
    return 0


def cmd_diagnose(cfg: ExperimentConfig) -> int:
    from lobmm.diagnostics import (
        bounding_b,
        estimate_bounding_params,
        martingale_check,
    )
    from lobmm.solver import MdpReward, horizon_bound

    base, controlled = diagnose_pair(cfg)
    n_paths = int(cfg.diagnose.get("n_paths", 100_000))
    ident = martingale_check(min(n_paths, 1000), cfg.horizon, base, base,
                             cfg.book, cfg.z0, Naive11Policy(), cfg.seed)
    mart = martingale_check(n_paths, cfg.horizon, base, controlled, cfg.book,
                            cfg.z0, Naive11Policy(), cfg.seed)
    model = MdpReward(T=cfg.horizon, flow=base, reward_mode=cfg.reward_mode)
    bounding = estimate_bounding_params(cfg.z0, model, cfg.book,
                                        ControlClass.A1LIM, seed=cfg.seed + 2)
    b0 = bounding_b(cfg.z0)
    sampler = exponential_sampler()
    zador = []
    for K in (8, 16, 32, 64):
        grid = clvq_train(sampler, K, 60_000, seed=cfg.seed + K)
        rng = np.random.default_rng(cfg.seed + 100 + K)
        rms = math.sqrt(distortion(grid, rng.exponential(1.0, 200_000)))
        zador.append((K, K * rms))
    zs = [v for _, v in zador]
    items = [
        ("martingale_identity_mean", ident.mean),
        ("martingale_identity_stderr", ident.stderr),
        ("martingale_mean", mart.mean),
        ("martingale_stderr", mart.stderr),
        ("martingale_n_paths", n_paths),
        ("martingale_abs_dev_over_se",
         abs(mart.mean - 1.0) / max(mart.stderr, 1e-300)),
        ("alpha_b", bounding.alpha_b),
        ("alpha_b_source", bounding.source),
        ("c_Q", bounding.c_Q),
        ("c_phi", bounding.c_phi),
        ("Lambda", bounding.Lambda),
        ("bounding_b_z0", b0),
    ]
    for n in (4, 8, 16, 32):
        items.append((f"horizon_bound_N{n}", horizon_bound(n, bounding.alpha_b, b0)))
    for K, v in zador:
        items.append((f"zador_K{K}_K_times_rms", v))
    items.append(("zador_spread", (max(zs) - min(zs)) / (sum(zs) / len(zs))))
    os.makedirs(cfg.output_dir, exist_ok=True)
    _write_report(os.path.join(cfg.output_dir, "diagnostics.txt"), cfg, items)
    for key, val in items:
        print(f"{key}={val}")
    return 0


def cmd_quantize(cfg: ExperimentConfig) -> int:
    grid = clvq_train(exponential_sampler(), cfg.quantizer_K,
                      cfg.quantizer_steps, seed=cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed + 99)
    dist = distortion(grid, rng.exponential(1.0, 200_000))
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = os.path.join(cfg.output_dir, f"quantizer_exp1_K{cfg.quantizer_K}.csv")
    grid_to_csv(grid, out)
    _write_report(os.path.join(cfg.output_dir, "quantize_report.txt"), cfg, [
        ("K", grid.size),
        ("steps", cfg.quantizer_steps),
        ("distortion", dist),
        ("grid_file", os.path.basename(out)),
    ])
    print(f"quantizer K={grid.size} distortion={dist:.6g} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lobmm",
                                 description="order-book market-making lab")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "train", "evaluate", "diagnose", "quantize"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=None, help="output directory override")
        if name == "simulate":
            p.add_argument("--policy", default="naive11",
                           help="null | naive11 | table")
        if name in ("simulate", "evaluate"):
            p.add_argument("--table", default=None, help="trained table file")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.policy, args.table)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.table)
        if args.command == "diagnose":
            return cmd_diagnose(cfg)
        return cmd_quantize(cfg)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except LobmmError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
