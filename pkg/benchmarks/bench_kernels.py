"""Compiled engine vs interpreted fallback on the hot kernels.

Run: python benchmarks/bench_kernels.py [--paths N]
"""
import argparse
import time

import numpy as np

from lobmm import kernels
from lobmm.book import BookConfig, make_flat_book
from lobmm.config import cox_preset


def bench_paths(mod, n_paths, cfg, z0, flow):
    fam, p0, p1, pool = flow.packed()
    pnl = np.zeros(n_paths)
    fills = np.zeros(n_paths, dtype=np.int64)
    ev = np.zeros(n_paths, dtype=np.int64)
    empty = np.zeros(0, dtype=np.int64)
    emptyf = np.zeros(0)
    t0 = time.perf_counter()
    rc = mod.run_cox_paths(
        n_paths, 7, z0.to_array(), 1.5, mod.POLICY_NAIVE11, 1_000_000,
        cfg.K, cfg.m_bar, float(cfg.a_inf), float(cfg.b_inf), cfg.tick,
        cfg.lot, cfg.eta, 1, fam, p0, p1, pool, 1,
        pnl, fills, ev, 0, empty, emptyf, emptyf, emptyf, emptyf,
        0, np.zeros((1, 1)), np.zeros((1, 1, 1)),
        np.zeros(cfg.n_state), np.zeros(cfg.n_kinds), np.zeros(cfg.n_kinds),
        np.zeros(cfg.m_bar), np.zeros(cfg.m_bar), np.zeros(4, dtype=np.uint64))
    assert rc == 0
    dt = time.perf_counter() - t0
    return dt, int(ev.sum())


def bench_expand(mod, n_rows, cfg, z0, flow):
    fam, p0, p1, pool = flow.packed()
    ns = cfg.n_state
    ts = np.full(n_rows, 0.4)
    sts = np.tile(z0.to_array(), (n_rows, 1))
    out_r = np.zeros((n_rows, 4))
    out_lam = np.zeros((n_rows, 4))
    out_ns = np.zeros((n_rows, 4), dtype=np.int64)
    cap = n_rows * 4 * 20
    succ = np.zeros((cap, ns))
    w = np.zeros(cap)
    owner = np.zeros(cap, dtype=np.int64)
    t0 = time.perf_counter()
    total = mod.expand_successors(
        ts, sts, np.arange(4, dtype=np.int64), 0, cfg.K, cfg.m_bar,
        float(cfg.a_inf), float(cfg.b_inf), cfg.tick, cfg.lot, cfg.eta, 1,
        fam, p0, p1, pool, 1, 1.5, 0.0, 0.0, 0.0, 0.0,
        out_r, out_lam, out_ns, succ, w, owner,
        np.zeros(ns), np.zeros(ns), np.zeros(cfg.n_kinds),
        np.zeros(cfg.m_bar), np.zeros(cfg.m_bar))
    dt = time.perf_counter() - t0
    assert total > 0
    return dt, int(total)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--rows", type=int, default=2000)
    args = ap.parse_args()

    cfg = BookConfig(K=2, a_inf=2, b_inf=2, m_bar=1)
    z0 = make_flat_book(cfg, depth=2, pa=102, pb=100)
    flow = cox_preset("state-dependent-symmetric", 2)

    compiled = kernels.engine
    interp = kernels.load_interpreted_engine()
    if not kernels.ENGINE_COMPILED:
        print("warning: extension not built; comparing interpreter to itself")

    print(f"{'kernel':<26}{'compiled':>12}{'interpreted':>14}{'speedup':>10}")
    dt_c, ev = bench_paths(compiled, args.paths, cfg, z0, flow)
    dt_i, _ = bench_paths(interp, max(args.paths // 20, 10), cfg, z0, flow)
    dt_i *= args.paths / max(args.paths // 20, 10)
    print(f"{'path simulation':<26}{ev / dt_c:>10.0f}/s{ev / dt_i:>12.0f}/s"
          f"{dt_i / dt_c:>9.1f}x   ({args.paths} paths, {ev} events)")

    dt_c, rows = bench_expand(compiled, args.rows, cfg, z0, flow)
    dt_i, _ = bench_expand(interp, max(args.rows // 20, 10), cfg, z0, flow)
    dt_i *= args.rows / max(args.rows // 20, 10)
    print(f"{'successor expansion':<26}{rows / dt_c:>10.0f}/s{rows / dt_i:>12.0f}/s"
          f"{dt_i / dt_c:>9.1f}x   ({rows} successor rows)")


if __name__ == "__main__":
    main()
