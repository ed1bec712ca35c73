"""Hot-path engine: book transitions, order-flow sampling, path loops.

Written in Cython pure-Python mode: compiled to a C extension by setup.py
when possible, otherwise imported as plain (slow) Python with identical
results.  All randomness comes from named splitmix64 substreams so paths
are reproducible bit-for-bit in both modes and coupled across policies.

State vector layout (float64, integer-valued fields stored exactly)::

    [0]            x     cash, price units
    [1]            y     inventory, signed lots
    [2 : 2+K]      a_i   ask depth i ticks above pb (i = 1..K), >= 0
    [2+K : 2+2K]   b_i   bid depth i ticks below pa, <= 0
    [2+2K : +m]    na_j  rank of MM ask order j, -1 if absent
    [.. : +m]      nb_j  rank of MM bid order j
    [..]           pa    best ask, integer ticks
    [..+1]         pb    best bid, integer ticks
    [..+2 : +m]    ra_j  MM ask limit index, -1 if absent
    [.. : +m]      rb_j  MM bid limit index

Event kinds: 0 MarketBuy, 1 MarketSell, 2..K+1 LimitAsk(i),
K+2..2K+1 LimitBid(i), 2K+2..3K+1 CancelAsk(i), 3K+2..4K+1 CancelBid(i).

Rate families: 0 constant(p0); 1 linear(p0 + p1*depth); 2 table lookup
(pool[p0 + min(depth, p1-1)]).  Cancel rates are forced to 0 on
displayed-empty queues.

Substreams per path: 0 event clock, 1 event kind, 2 cancel position,
3 control randomization.  Draw order per event: clock, kind, then one
cancel draw iff the kind is a cancel (consumed even when it resolves to
a no-op).  Exploration policies draw one control u at every decision
epoch including the initial one at t = 0.
"""

import cython

if cython.compiled:
    from cython.cimports.libc.math import exp, log
else:
    from math import exp, log

M64 = 0xFFFFFFFFFFFFFFFF
_INV53 = 1.0 / 9007199254740992.0

# apply_event result flags
F_ASK_FILL = 1
F_BID_FILL = 2
F_NOOP = 4
F_SHIFT = 8
F_FORCED_CANCEL = 16
F_EDGE_REGEN = 32
ERR_BAD_KIND = -1
ERR_BAD_STATE = -2
ERR_EMPTY_CANCEL = -3

# policy ids for the batch loop
POLICY_NULL = 0
POLICY_NAIVE11 = 1
POLICY_EXPLORE_A1 = 2
POLICY_EXPLORE_A2 = 3

STREAM_CLOCK = 0
STREAM_KIND = 1
STREAM_CANCEL = 2
STREAM_CONTROL = 3


# ---------------------------------------------------------------------------
# splitmix64 substreams
# ---------------------------------------------------------------------------

@cython.cfunc
@cython.exceptval(check=False)
def _mix64(z: cython.ulonglong) -> cython.ulonglong:
    z = (z + 0x9E3779B97F4A7C15) & M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return (z ^ (z >> 31)) & M64


@cython.ccall
def stream_init(streams: cython.ulonglong[::1], seed: cython.ulonglong,
                path: cython.ulonglong) -> cython.int:
    """Derive the four named substream states for one path."""
    k: cython.Py_ssize_t
    for k in range(4):
        streams[k] = _mix64(
            (seed & M64)
            ^ ((path + 1) * 0xC2B2AE3D27D4EB4F & M64)
            ^ ((k + 1) * 0x165667B19E3779F9 & M64)
        )
    return 0


@cython.cfunc
@cython.exceptval(check=False)
def _next_u01(streams: cython.ulonglong[::1], which: cython.Py_ssize_t) -> cython.double:
    # int() keeps interpreted numpy scalars in exact modular arithmetic;
    # compiled mode sees a C integer either way
    s: cython.ulonglong = (int(streams[which]) + 0x9E3779B97F4A7C15) & M64
    streams[which] = s
    z: cython.ulonglong = s
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    z = (z ^ (z >> 31)) & M64
    return (z >> 11) * _INV53


@cython.ccall
def next_u01(streams: cython.ulonglong[::1], which: cython.Py_ssize_t) -> cython.double:
    """Public single-draw access used by the Python-level path recorder."""
    return _next_u01(streams, which)


# ---------------------------------------------------------------------------
# state helpers
# ---------------------------------------------------------------------------

@cython.cfunc
@cython.exceptval(check=False)
def _spread(z: cython.double[::1], K: cython.Py_ssize_t,
            m: cython.Py_ssize_t) -> cython.Py_ssize_t:
    opa: cython.Py_ssize_t = 2 + 2 * K + 2 * m
    return cython.cast(cython.Py_ssize_t, z[opa] - z[opa + 1])


@cython.cfunc
@cython.exceptval(check=False)
def _mm_count(z: cython.double[::1], K: cython.Py_ssize_t, m: cython.Py_ssize_t,
              side: cython.Py_ssize_t, q: cython.Py_ssize_t) -> cython.Py_ssize_t:
    # side 0 = ask, 1 = bid
    orr: cython.Py_ssize_t = 2 + 2 * K + 2 * m + 2 + side * m
    n: cython.Py_ssize_t = 0
    j: cython.Py_ssize_t
    for j in range(m):
        if z[orr + j] == q:
            n += 1
    return n


@cython.ccall
def relevant_depth(z: cython.double[::1], kind: cython.Py_ssize_t,
                   K: cython.Py_ssize_t, m: cython.Py_ssize_t,
                   mm_visible: cython.Py_ssize_t) -> cython.double:
    """Displayed (or MM-stripped) depth of the queue a rate family reads."""
    s: cython.Py_ssize_t = _spread(z, K, m)
    side: cython.Py_ssize_t
    q: cython.Py_ssize_t
    if kind == 0:
        side = 0
        q = s
    elif kind == 1:
        side = 1
        q = s
    elif kind <= 1 + K:
        side = 0
        q = kind - 1
    elif kind <= 1 + 2 * K:
        side = 1
        q = kind - 1 - K
    elif kind <= 1 + 3 * K:
        side = 0
        q = kind - 1 - 2 * K
    else:
        side = 1
        q = kind - 1 - 3 * K
    d: cython.double
    if side == 0:
        d = z[2 + q - 1]
    else:
        d = -z[2 + K + q - 1]
    if mm_visible == 0:
        d -= _mm_count(z, K, m, side, q)
        if d < 0.0:
            d = 0.0
    return d


@cython.ccall
def rates_into(out: cython.double[::1], z: cython.double[::1],
               K: cython.Py_ssize_t, m: cython.Py_ssize_t,
               mm_visible: cython.Py_ssize_t,
               fam: cython.long[::1], p0: cython.double[::1],
               p1: cython.double[::1], pool: cython.double[::1]) -> cython.double:
    """Fill the 4K+2 rate vector for one state; returns the total rate."""
    nk: cython.Py_ssize_t = 4 * K + 2
    total: cython.double = 0.0
    k: cython.Py_ssize_t
    for k in range(nk):
        d: cython.double = relevant_depth(z, k, K, m, mm_visible)
        r: cython.double
        f: cython.long = fam[k]
        if f == 0:
            r = p0[k]
        elif f == 1:
            r = p0[k] + p1[k] * d
        else:
            off: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, p0[k])
            ln: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, p1[k])
            b: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, d)
            if b > ln - 1:
                b = ln - 1
            if b < 0:
                b = 0
            r = pool[off + b]
        if k >= 2 * K + 2:
            # cancels need displayed volume in the queue
            disp: cython.double
            if k <= 1 + 3 * K:
                disp = z[2 + (k - 1 - 2 * K) - 1]
            else:
                disp = -z[2 + K + (k - 1 - 3 * K) - 1]
            if disp <= 0.0:
                r = 0.0
        if r < 0.0:
            r = 0.0
        out[k] = r
        total += r
    return total


# ---------------------------------------------------------------------------
# liquidation / rewards
# ---------------------------------------------------------------------------

MAX_BOUNDARY_LEVELS = 4096


@cython.ccall
def liquidation_value(z: cython.double[::1], K: cython.Py_ssize_t,
                      m: cython.Py_ssize_t, a_inf: cython.double,
                      b_inf: cython.double, tick: cython.double,
                      lot: cython.double) -> cython.double:
    """Immediate liquidation of the inventory against exogenous depth.

    Walks down the opposite side from the best limit, continuing into the
    constant boundary beyond the visible frame.  Returns +inf sentinel is
    never used; an unabsorbable inventory raises at the Python layer by
    checking the `MAX_BOUNDARY_LEVELS` cap (returns nan here).
    """
    y: cython.double = z[1]
    if y == 0.0:
        return 0.0
    opa: cython.Py_ssize_t = 2 + 2 * K + 2 * m
    pa: cython.double = z[opa]
    pb: cython.double = z[opa + 1]
    s: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, pa - pb)
    total: cython.double = 0.0
    remaining: cython.double
    lvl: cython.Py_ssize_t = 0
    depth: cython.double
    price: cython.double
    if y > 0.0:
        remaining = y
        while remaining > 0.0:
            q: cython.Py_ssize_t = s + lvl
            if q <= K:
                depth = -z[2 + K + q - 1] - _mm_count(z, K, m, 1, q)
                if depth < 0.0:
                    depth = 0.0
            else:
                if lvl > K - s + MAX_BOUNDARY_LEVELS:
                    return float("nan")
                depth = -b_inf if b_inf < 0 else b_inf
            price = (pa - q) * tick
            take: cython.double = depth if depth < remaining else remaining
            total += take * price * lot
            remaining -= take
            lvl += 1
        return total
    remaining = -y
    while remaining > 0.0:
        q2: cython.Py_ssize_t = s + lvl
        if q2 <= K:
            depth = z[2 + q2 - 1] - _mm_count(z, K, m, 0, q2)
            if depth < 0.0:
                depth = 0.0
        else:
            if lvl > K - s + MAX_BOUNDARY_LEVELS:
                return float("nan")
            depth = a_inf
        price = (pb + q2) * tick
        take2: cython.double = depth if depth < remaining else remaining
        total -= take2 * price * lot
        remaining -= take2
        lvl += 1
    return total


@cython.ccall
def terminal_g(z: cython.double[::1], mode: cython.Py_ssize_t,
               K: cython.Py_ssize_t, m: cython.Py_ssize_t,
               a_inf: cython.double, b_inf: cython.double,
               tick: cython.double, lot: cython.double,
               eta: cython.double) -> cython.double:
    """Terminal reward: mode 0 = cash only, mode 1 = x + L - eta*y^2."""
    if mode == 0:
        return z[0]
    lv: cython.double = liquidation_value(z, K, m, a_inf, b_inf, tick, lot)
    return z[0] + lv - eta * z[1] * z[1]


@cython.ccall
def running_c(z: cython.double[::1], K: cython.Py_ssize_t, m: cython.Py_ssize_t,
              c0: cython.double, cy: cython.double, cyy: cython.double,
              cord: cython.double) -> cython.double:
    """Running-reward rate family: c0 + cy*y + cyy*y^2 + cord*#orders."""
    y: cython.double = z[1]
    norders: cython.Py_ssize_t = 0
    orr: cython.Py_ssize_t = 2 + 2 * K + 2 * m + 2
    j: cython.Py_ssize_t
    for j in range(2 * m):
        if z[orr + j] >= 0:
            norders += 1
    return c0 + cy * y + cyy * y * y + cord * norders


@cython.ccall
def step_reward(z: cython.double[::1], t: cython.double, T: cython.double,
                lam: cython.double, mode: cython.Py_ssize_t,
                K: cython.Py_ssize_t, m: cython.Py_ssize_t,
                a_inf: cython.double, b_inf: cython.double,
                tick: cython.double, lot: cython.double, eta: cython.double,
                c0: cython.double, cy: cython.double, cyy: cython.double,
                cord: cython.double) -> cython.double:
    """Per-jump MDP reward: running part over the holding time plus the
    probability-weighted terminal reward; zero past the horizon."""
    if t > T:
        return 0.0
    tau: cython.double = T - t
    dis: cython.double = exp(-lam * tau)
    g: cython.double = terminal_g(z, mode, K, m, a_inf, b_inf, tick, lot, eta)
    c: cython.double = running_c(z, K, m, c0, cy, cyy, cord)
    return c * (1.0 - dis) / lam + dis * g


# ---------------------------------------------------------------------------
# event application
# ---------------------------------------------------------------------------

@cython.cfunc
def _shift_ask_depletion(z: cython.double[::1], K: cython.Py_ssize_t,
                         m: cython.Py_ssize_t, a_inf: cython.double,
                         b_inf: cython.double) -> cython.int:
    """Best ask queue emptied: move pa to the next liquidity and re-index."""
    opa: cython.Py_ssize_t = 2 + 2 * K + 2 * m
    s: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, z[opa] - z[opa + 1])
    flags: cython.int = F_SHIFT
    A1: cython.Py_ssize_t = 0
    i: cython.Py_ssize_t
    for i in range(s + 1, K + 1):
        if z[2 + i - 1] > 0.0:
            A1 = i
            break
    if A1 == 0:
        # no visible liquidity left: the boundary refills at the edge slot
        z[2 + K - 1] = a_inf
        A1 = K
        flags |= F_EDGE_REGEN
    delta: cython.Py_ssize_t = A1 - s
    if delta <= 0:
        return flags
    z[opa] = z[opa] + delta
    # bid side re-reads i ticks below the new pa
    for i in range(K, delta, -1):
        z[2 + K + i - 1] = z[2 + K + i - 1 - delta]
    for i in range(1, delta + 1):
        z[2 + K + i - 1] = 0.0
    orb: cython.Py_ssize_t = opa + 2 + m
    onb: cython.Py_ssize_t = 2 + 2 * K + m
    j: cython.Py_ssize_t
    for j in range(m):
        if z[orb + j] >= 0:
            nq: cython.double = z[orb + j] + delta
            if nq > K:
                z[orb + j] = -1.0
                z[onb + j] = -1.0
                flags |= F_FORCED_CANCEL
            else:
                z[orb + j] = nq
    return flags


@cython.cfunc
def _shift_bid_depletion(z: cython.double[::1], K: cython.Py_ssize_t,
                         m: cython.Py_ssize_t, a_inf: cython.double,
                         b_inf: cython.double) -> cython.int:
    opa: cython.Py_ssize_t = 2 + 2 * K + 2 * m
    s: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, z[opa] - z[opa + 1])
    flags: cython.int = F_SHIFT
    B1: cython.Py_ssize_t = 0
    i: cython.Py_ssize_t
    for i in range(s + 1, K + 1):
        if z[2 + K + i - 1] < 0.0:
            B1 = i
            break
    if B1 == 0:
        z[2 + K + K - 1] = -b_inf if b_inf > 0 else b_inf
        B1 = K
        flags |= F_EDGE_REGEN
    delta: cython.Py_ssize_t = B1 - s
    if delta <= 0:
        return flags
    z[opa + 1] = z[opa + 1] - delta
    for i in range(K, delta, -1):
        z[2 + i - 1] = z[2 + i - 1 - delta]
    for i in range(1, delta + 1):
        z[2 + i - 1] = 0.0
    ora: cython.Py_ssize_t = opa + 2
    ona: cython.Py_ssize_t = 2 + 2 * K
    j: cython.Py_ssize_t
    for j in range(m):
        if z[ora + j] >= 0:
            nq: cython.double = z[ora + j] + delta
            if nq > K:
                z[ora + j] = -1.0
                z[ona + j] = -1.0
                flags |= F_FORCED_CANCEL
            else:
                z[ora + j] = nq
    return flags


@cython.cfunc
def _narrow_ask(z: cython.double[::1], K: cython.Py_ssize_t, m: cython.Py_ssize_t,
                b_inf: cython.double, i_new: cython.Py_ssize_t) -> cython.int:
    """A limit ask arrived inside the spread at index i_new < spread."""
    opa: cython.Py_ssize_t = 2 + 2 * K + 2 * m
    s: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, z[opa] - z[opa + 1])
    delta: cython.Py_ssize_t = s - i_new
    z[opa] = z[opa] - delta
    i: cython.Py_ssize_t
    for i in range(1, K - delta + 1):
        z[2 + K + i - 1] = z[2 + K + i - 1 + delta]
    for i in range(K - delta + 1, K + 1):
        z[2 + K + i - 1] = -b_inf if b_inf > 0 else b_inf
    orb: cython.Py_ssize_t = opa + 2 + m
    j: cython.Py_ssize_t
    for j in range(m):
        if z[orb + j] >= 0:
            z[orb + j] = z[orb + j] - delta
    return F_SHIFT


@cython.cfunc
def _narrow_bid(z: cython.double[::1], K: cython.Py_ssize_t, m: cython.Py_ssize_t,
                a_inf: cython.double, i_new: cython.Py_ssize_t) -> cython.int:
    opa: cython.Py_ssize_t = 2 + 2 * K + 2 * m
    s: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, z[opa] - z[opa + 1])
    delta: cython.Py_ssize_t = s - i_new
    z[opa + 1] = z[opa + 1] + delta
    i: cython.Py_ssize_t
    for i in range(1, K - delta + 1):
        z[2 + i - 1] = z[2 + i - 1 + delta]
    for i in range(K - delta + 1, K + 1):
        z[2 + i - 1] = a_inf
    ora: cython.Py_ssize_t = opa + 2
    j: cython.Py_ssize_t
    for j in range(m):
        if z[ora + j] >= 0:
            z[ora + j] = z[ora + j] - delta
    return F_SHIFT


@cython.ccall
def apply_event(z: cython.double[::1], kind: cython.Py_ssize_t,
                u_cancel: cython.double, K: cython.Py_ssize_t,
                m: cython.Py_ssize_t, a_inf: cython.double,
                b_inf: cython.double, tick: cython.double,
                lot: cython.double) -> cython.int:
    """Apply one exogenous event in place.  Returns flag bits, < 0 on error."""
    opa: cython.Py_ssize_t = 2 + 2 * K + 2 * m
    ona: cython.Py_ssize_t = 2 + 2 * K
    onb: cython.Py_ssize_t = ona + m
    ora: cython.Py_ssize_t = opa + 2
    orb: cython.Py_ssize_t = ora + m
    s: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, z[opa] - z[opa + 1])
    flags: cython.int = 0
    j: cython.Py_ssize_t
    i: cython.Py_ssize_t

    if kind == 0:  # MarketBuy consumes the front of the best ask queue
        if z[2 + s - 1] < 1.0:
            return ERR_BAD_STATE
        filled: cython.Py_ssize_t = -1
        for j in range(m):
            if z[ora + j] == s and z[ona + j] == 1:
                filled = j
                break
        if filled >= 0:
            z[0] += z[opa] * tick * lot
            z[1] -= 1.0
            z[ora + filled] = -1.0
            z[ona + filled] = -1.0
            flags |= F_ASK_FILL
        for j in range(m):
            if z[ora + j] == s and z[ona + j] > 1:
                z[ona + j] -= 1.0
        z[2 + s - 1] -= 1.0
        if z[2 + s - 1] == 0.0:
            flags |= _shift_ask_depletion(z, K, m, a_inf, b_inf)
        return flags

    if kind == 1:  # MarketSell consumes the front of the best bid queue
        if -z[2 + K + s - 1] < 1.0:
            return ERR_BAD_STATE
        filled2: cython.Py_ssize_t = -1
        for j in range(m):
            if z[orb + j] == s and z[onb + j] == 1:
                filled2 = j
                break
        if filled2 >= 0:
            z[0] -= z[opa + 1] * tick * lot
            z[1] += 1.0
            z[orb + filled2] = -1.0
            z[onb + filled2] = -1.0
            flags |= F_BID_FILL
        for j in range(m):
            if z[orb + j] == s and z[onb + j] > 1:
                z[onb + j] -= 1.0
        z[2 + K + s - 1] += 1.0
        if z[2 + K + s - 1] == 0.0:
            flags |= _shift_bid_depletion(z, K, m, a_inf, b_inf)
        return flags

    if kind <= 1 + K:  # LimitAsk(i)
        i = kind - 1
        z[2 + i - 1] += 1.0
        if i < s:
            flags |= _narrow_ask(z, K, m, b_inf, i)
        return flags

    if kind <= 1 + 2 * K:  # LimitBid(i)
        i = kind - 1 - K
        z[2 + K + i - 1] -= 1.0
        if i < s:
            flags |= _narrow_bid(z, K, m, a_inf, i)
        return flags

    if kind <= 1 + 3 * K:  # CancelAsk(i)
        i = kind - 1 - 2 * K
        depth: cython.double = z[2 + i - 1]
        if depth <= 0.0:
            return ERR_EMPTY_CANCEL
        nmm: cython.Py_ssize_t = _mm_count(z, K, m, 0, i)
        exo: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, depth) - nmm
        if exo <= 0:
            return F_NOOP
        pos: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, u_cancel * exo) + 1
        if pos > exo:
            pos = exo
        for j in range(m):
            if z[ora + j] == i:
                rank: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, z[ona + j])
                before: cython.Py_ssize_t = 0
                k2: cython.Py_ssize_t
                for k2 in range(m):
                    if z[ora + k2] == i and z[ona + k2] < rank:
                        before += 1
                if pos <= rank - 1 - before:
                    z[ona + j] -= 1.0
        z[2 + i - 1] -= 1.0
        if z[2 + i - 1] == 0.0 and i == s:
            flags |= _shift_ask_depletion(z, K, m, a_inf, b_inf)
        return flags

    if kind <= 1 + 4 * K:  # CancelBid(i)
        i = kind - 1 - 3 * K
        depth2: cython.double = -z[2 + K + i - 1]
        if depth2 <= 0.0:
            return ERR_EMPTY_CANCEL
        nmm2: cython.Py_ssize_t = _mm_count(z, K, m, 1, i)
        exo2: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, depth2) - nmm2
        if exo2 <= 0:
            return F_NOOP
        pos2: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, u_cancel * exo2) + 1
        if pos2 > exo2:
            pos2 = exo2
        for j in range(m):
            if z[orb + j] == i:
                rank2: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, z[onb + j])
                before2: cython.Py_ssize_t = 0
                k3: cython.Py_ssize_t
                for k3 in range(m):
                    if z[orb + k3] == i and z[onb + k3] < rank2:
                        before2 += 1
                if pos2 <= rank2 - 1 - before2:
                    z[onb + j] -= 1.0
        z[2 + K + i - 1] += 1.0
        if z[2 + K + i - 1] == 0.0 and i == s:
            flags |= _shift_bid_depletion(z, K, m, a_inf, b_inf)
        return flags

    return ERR_BAD_KIND


# ---------------------------------------------------------------------------
# control application
# ---------------------------------------------------------------------------

@cython.ccall
def apply_control(z: cython.double[::1], ra_new: cython.double[::1],
                  rb_new: cython.double[::1], K: cython.Py_ssize_t,
                  m: cython.Py_ssize_t, a_inf: cython.double,
                  b_inf: cython.double) -> cython.int:
    """Apply a slot-indexed control: cancels first, then back-of-queue adds.

    Assumes the control already passed admissibility validation.
    """
    ona: cython.Py_ssize_t = 2 + 2 * K
    onb: cython.Py_ssize_t = ona + m
    opa: cython.Py_ssize_t = 2 + 2 * K + 2 * m
    ora: cython.Py_ssize_t = opa + 2
    orb: cython.Py_ssize_t = ora + m
    j: cython.Py_ssize_t
    k: cython.Py_ssize_t
    q: cython.Py_ssize_t
    # cancels
    for j in range(m):
        if z[ora + j] >= 0 and ra_new[j] != z[ora + j]:
            q = cython.cast(cython.Py_ssize_t, z[ora + j])
            for k in range(m):
                if k != j and z[ora + k] == q and z[ona + k] > z[ona + j]:
                    z[ona + k] -= 1.0
            z[2 + q - 1] -= 1.0
            z[ora + j] = -1.0
            z[ona + j] = -1.0
        if z[orb + j] >= 0 and rb_new[j] != z[orb + j]:
            q = cython.cast(cython.Py_ssize_t, z[orb + j])
            for k in range(m):
                if k != j and z[orb + k] == q and z[onb + k] > z[onb + j]:
                    z[onb + k] -= 1.0
            z[2 + K + q - 1] += 1.0
            z[orb + j] = -1.0
            z[onb + j] = -1.0
    # placements
    for j in range(m):
        if z[ora + j] < 0 and ra_new[j] >= 0:
            q = cython.cast(cython.Py_ssize_t, ra_new[j])
            z[2 + q - 1] += 1.0
            z[ona + j] = z[2 + q - 1]
            z[ora + j] = q
        if z[orb + j] < 0 and rb_new[j] >= 0:
            q = cython.cast(cython.Py_ssize_t, rb_new[j])
            z[2 + K + q - 1] -= 1.0
            z[onb + j] = -z[2 + K + q - 1]
            z[orb + j] = q
    # cancelling the last displayed order at a best limit forces the same
    # frame shift an exogenous depletion would (keeps the state readable)
    s: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, z[opa] - z[opa + 1])
    rc: cython.int = 0
    if z[2 + s - 1] == 0.0:
        rc |= _shift_ask_depletion(z, K, m, a_inf, b_inf)
    s = cython.cast(cython.Py_ssize_t, z[opa] - z[opa + 1])
    if z[2 + K + s - 1] == 0.0:
        rc |= _shift_bid_depletion(z, K, m, a_inf, b_inf)
    return rc


@cython.ccall
def materialize_flags(z: cython.double[::1], action_id: cython.Py_ssize_t,
                      two_levels: cython.Py_ssize_t,
                      ra_out: cython.double[::1], rb_out: cython.double[::1],
                      K: cython.Py_ssize_t, m: cython.Py_ssize_t) -> cython.int:
    """Turn a structural placement action into a slot-indexed control.

    One-level actions (two_levels == 0): id bits (la, lb) target the best
    limit on each side.  Two-level actions: id bits (a1, a2, b1, b2) target
    the best limit and the next price level; the deeper target is dropped
    when it falls outside the K-frame.  Existing orders at a target are
    kept (best-ranked first); everything else is cancelled.
    """
    opa: cython.Py_ssize_t = 2 + 2 * K + 2 * m
    ona: cython.Py_ssize_t = 2 + 2 * K
    onb: cython.Py_ssize_t = ona + m
    ora: cython.Py_ssize_t = opa + 2
    orb: cython.Py_ssize_t = ora + m
    s: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, z[opa] - z[opa + 1])
    j: cython.Py_ssize_t
    for j in range(m):
        ra_out[j] = -1.0
        rb_out[j] = -1.0
    want_a1: cython.Py_ssize_t
    want_a2: cython.Py_ssize_t = 0
    want_b1: cython.Py_ssize_t
    want_b2: cython.Py_ssize_t = 0
    if two_levels == 0:
        want_a1 = (action_id >> 1) & 1
        want_b1 = action_id & 1
    else:
        want_a1 = (action_id >> 3) & 1
        want_a2 = (action_id >> 2) & 1
        want_b1 = (action_id >> 1) & 1
        want_b2 = action_id & 1
    if s + 1 > K:
        want_a2 = 0
        want_b2 = 0
    lvl: cython.Py_ssize_t
    tgt: cython.Py_ssize_t
    best: cython.Py_ssize_t
    a_miss1: cython.Py_ssize_t = 0
    a_miss2: cython.Py_ssize_t = 0
    b_miss1: cython.Py_ssize_t = 0
    b_miss2: cython.Py_ssize_t = 0
    # keep existing orders at targeted levels first (best rank wins)
    for lvl in range(2):
        tgt = s + lvl
        if (lvl == 0 and want_a1) or (lvl == 1 and want_a2):
            best = -1
            for j in range(m):
                if z[ora + j] == tgt and ra_out[j] < 0:
                    if best < 0 or z[ona + j] < z[ona + best]:
                        best = j
            if best >= 0:
                ra_out[best] = tgt
            elif lvl == 0:
                a_miss1 = 1
            else:
                a_miss2 = 1
        if (lvl == 0 and want_b1) or (lvl == 1 and want_b2):
            best = -1
            for j in range(m):
                if z[orb + j] == tgt and rb_out[j] < 0:
                    if best < 0 or z[onb + j] < z[onb + best]:
                        best = j
            if best >= 0:
                rb_out[best] = tgt
            elif lvl == 0:
                b_miss1 = 1
            else:
                b_miss2 = 1
    # then route unmatched targets to the lowest unassigned slot
    for lvl in range(2):
        tgt = s + lvl
        if (lvl == 0 and a_miss1) or (lvl == 1 and a_miss2):
            for j in range(m):
                if ra_out[j] < 0:
                    ra_out[j] = tgt
                    break
        if (lvl == 0 and b_miss1) or (lvl == 1 and b_miss2):
            for j in range(m):
                if rb_out[j] < 0:
                    rb_out[j] = tgt
                    break
    return 0


# ---------------------------------------------------------------------------
# batch path loops (Cox flow)
# ---------------------------------------------------------------------------

EXPLORE_STICKINESS = 0.7


@cython.cfunc
def _decide_and_apply(z: cython.double[::1], policy_id: cython.Py_ssize_t,
                      streams: cython.ulonglong[::1],
                      ra_buf: cython.double[::1], rb_buf: cython.double[::1],
                      K: cython.Py_ssize_t, m: cython.Py_ssize_t,
                      a_inf: cython.double, b_inf: cython.double,
                      prev_aid: cython.Py_ssize_t) -> cython.int:
    """Returns the action id taken (>= 0) or an error code (< -1).

    Exploration keeps the previous structural action with probability
    EXPLORE_STICKINESS and redraws uniformly otherwise, so the training
    measure also visits states where orders were held long enough to
    reach good queue ranks.  Draw order per decision: one keep/redraw u,
    then one action u only when redrawing.
    """
    aid: cython.Py_ssize_t = 0
    na: cython.Py_ssize_t
    if policy_id == POLICY_NULL:
        materialize_flags(z, 0, 0, ra_buf, rb_buf, K, m)
    elif policy_id == POLICY_NAIVE11:
        aid = 3
        materialize_flags(z, 3, 0, ra_buf, rb_buf, K, m)
    elif policy_id == POLICY_EXPLORE_A1 or policy_id == POLICY_EXPLORE_A2:
        na = 4 if policy_id == POLICY_EXPLORE_A1 else 16
        if prev_aid >= 0 and _next_u01(streams, STREAM_CONTROL) < EXPLORE_STICKINESS:
            aid = prev_aid
        else:
            aid = cython.cast(cython.Py_ssize_t, _next_u01(streams, STREAM_CONTROL) * na)
            if aid > na - 1:
                aid = na - 1
        materialize_flags(z, aid, 0 if policy_id == POLICY_EXPLORE_A1 else 1,
                          ra_buf, rb_buf, K, m)
    else:
        return -9
    apply_control(z, ra_buf, rb_buf, K, m, a_inf, b_inf)
    return cython.cast(cython.int, aid)


@cython.ccall
def run_cox_paths(n_paths: cython.Py_ssize_t, seed: cython.ulonglong,
                  z0: cython.double[::1], T: cython.double,
                  policy_id: cython.Py_ssize_t, max_events: cython.Py_ssize_t,
                  K: cython.Py_ssize_t, m: cython.Py_ssize_t,
                  a_inf: cython.double, b_inf: cython.double,
                  tick: cython.double, lot: cython.double, eta: cython.double,
                  mm_visible: cython.Py_ssize_t,
                  fam: cython.long[::1], p0: cython.double[::1],
                  p1: cython.double[::1], pool: cython.double[::1],
                  reward_mode: cython.Py_ssize_t,
                  out_pnl: cython.double[::1], out_fills: cython.long[::1],
                  out_nevents: cython.long[::1],
                  # likelihood ratio vs a second spec (0 = off)
                  lr_enable: cython.Py_ssize_t,
                  fam2: cython.long[::1], p02: cython.double[::1],
                  p12: cython.double[::1], pool2: cython.double[::1],
                  out_lr: cython.double[::1],
                  # per-jump grid collection for training sets (0 = off)
                  collect_n: cython.Py_ssize_t,
                  out_times: cython.double[:, ::1],
                  out_states: cython.double[:, :, ::1],
                  # scratch buffers
                  zbuf: cython.double[::1], rates: cython.double[::1],
                  rates2: cython.double[::1], ra_buf: cython.double[::1],
                  rb_buf: cython.double[::1],
                  streams: cython.ulonglong[::1]) -> cython.int:
    """Simulate n_paths independent controlled paths under a Cox flow.

    P&L is terminal_g(final) - terminal_g(z0) under ``reward_mode``.
    With ``lr_enable``, accumulates the Radon-Nikodym factor of the
    (fam2, ...) spec against the simulating spec along each path.
    With ``collect_n`` = N, records (t, state) right after jumps 0..N,
    freezing at the first jump time past the horizon.
    """
    ns: cython.Py_ssize_t = 2 * K + 4 * m + 4
    nk: cython.Py_ssize_t = 4 * K + 2
    p: cython.Py_ssize_t
    i: cython.Py_ssize_t
    g0: cython.double = terminal_g(z0, reward_mode, K, m, a_inf, b_inf, tick, lot, eta)
    for p in range(n_paths):
        stream_init(streams, seed, cython.cast(cython.ulonglong, p))
        for i in range(ns):
            zbuf[i] = z0[i]
        t: cython.double = 0.0
        nev: cython.Py_ssize_t = 0
        fills: cython.Py_ssize_t = 0
        log_lr: cython.double = 0.0
        frozen: cython.Py_ssize_t = 0
        rc: cython.int = _decide_and_apply(zbuf, policy_id, streams, ra_buf,
                                           rb_buf, K, m, a_inf, b_inf, -1)
        if rc < 0:
            return rc
        if collect_n > 0:
            out_times[p, 0] = 0.0
            for i in range(ns):
                out_states[p, 0, i] = z0[i]
        while True:
            total: cython.double = rates_into(rates, zbuf, K, m, mm_visible, fam, p0, p1, pool)
            if total <= 0.0:
                return -4
            total2: cython.double = 0.0
            if lr_enable != 0:
                total2 = rates_into(rates2, zbuf, K, m, mm_visible, fam2, p02, p12, pool2)
            u: cython.double = _next_u01(streams, STREAM_CLOCK)
            dt: cython.double = -log(1.0 - u) / total
            if t + dt > T:
                if lr_enable != 0:
                    log_lr += (total - total2) * (T - t)
                if collect_n > 0 and nev < collect_n:
                    # past-horizon rows freeze at the crossing time with the
                    # book as it stood when the horizon passed (value-0 zone)
                    for i in range(nev + 1, collect_n + 1):
                        out_times[p, i] = t + dt
                        for frozen in range(ns):
                            out_states[p, i, frozen] = zbuf[frozen]
                break
            t = t + dt
            uk: cython.double = _next_u01(streams, STREAM_KIND) * total
            kind: cython.Py_ssize_t = 0
            acc: cython.double = 0.0
            for i in range(nk):
                acc += rates[i]
                if uk < acc or i == nk - 1:
                    kind = i
                    break
            while rates[kind] <= 0.0 and kind > 0:
                kind -= 1
            ucan: cython.double = 0.0
            if kind >= 2 * K + 2:
                ucan = _next_u01(streams, STREAM_CANCEL)
            if lr_enable != 0:
                log_lr += (total - total2) * dt
                if rates2[kind] <= 0.0:
                    log_lr = -1e308
                else:
                    log_lr += log(rates2[kind] / rates[kind])
            fl: cython.int = apply_event(zbuf, kind, ucan, K, m, a_inf, b_inf, tick, lot)
            if fl < 0:
                return fl
            if fl & F_ASK_FILL:
                fills += 1
            if fl & F_BID_FILL:
                fills += 1
            nev += 1
            if nev > max_events:
                return -5
            if collect_n > 0 and nev <= collect_n:
                out_times[p, nev] = t
                for i in range(ns):
                    out_states[p, nev, i] = zbuf[i]
            rc = _decide_and_apply(zbuf, policy_id, streams, ra_buf, rb_buf,
                                   K, m, a_inf, b_inf, rc)
            if rc < 0:
                return rc
        out_pnl[p] = terminal_g(zbuf, reward_mode, K, m, a_inf, b_inf, tick, lot, eta) - g0
        out_fills[p] = fills
        out_nevents[p] = nev
        if lr_enable != 0:
            out_lr[p] = exp(log_lr) if log_lr > -1e307 else 0.0
    return 0


# ---------------------------------------------------------------------------
# Hawkes flow (exponential kernel, per-component decay = row sum of beta)
# ---------------------------------------------------------------------------

@cython.cfunc
def _hawkes_decay_into(lam: cython.double[::1], lam0: cython.double[::1],
                       brow: cython.double[::1], dt: cython.double,
                       D: cython.Py_ssize_t) -> cython.double:
    total: cython.double = 0.0
    i: cython.Py_ssize_t
    for i in range(D):
        lam[i] = lam0[i] + (lam[i] - lam0[i]) * exp(-brow[i] * dt)
        total += lam[i]
    return total


@cython.ccall
def run_hawkes_paths(n_paths: cython.Py_ssize_t, seed: cython.ulonglong,
                     z0: cython.double[::1], T: cython.double,
                     policy_id: cython.Py_ssize_t, max_events: cython.Py_ssize_t,
                     K: cython.Py_ssize_t, m: cython.Py_ssize_t,
                     a_inf: cython.double, b_inf: cython.double,
                     tick: cython.double, lot: cython.double, eta: cython.double,
                     lam0: cython.double[::1], alpha: cython.double[:, ::1],
                     brow: cython.double[::1],
                     reward_mode: cython.Py_ssize_t,
                     out_pnl: cython.double[::1], out_fills: cython.long[::1],
                     out_nevents: cython.long[::1],
                     zbuf: cython.double[::1], lam: cython.double[::1],
                     ra_buf: cython.double[::1], rb_buf: cython.double[::1],
                     streams: cython.ulonglong[::1]) -> cython.int:
    """Ogata thinning; between jumps the total intensity decays toward
    |lam0| so the value at the last point upper-bounds the path."""
    ns: cython.Py_ssize_t = 2 * K + 4 * m + 4
    D: cython.Py_ssize_t = 4 * K + 2
    p: cython.Py_ssize_t
    i: cython.Py_ssize_t
    g0: cython.double = terminal_g(z0, reward_mode, K, m, a_inf, b_inf, tick, lot, eta)
    for p in range(n_paths):
        stream_init(streams, seed, cython.cast(cython.ulonglong, p))
        for i in range(ns):
            zbuf[i] = z0[i]
        mu: cython.double = 0.0
        for i in range(D):
            lam[i] = lam0[i]
            mu += lam[i]
        t: cython.double = 0.0
        nev: cython.Py_ssize_t = 0
        fills: cython.Py_ssize_t = 0
        rc: cython.int = _decide_and_apply(zbuf, policy_id, streams, ra_buf,
                                           rb_buf, K, m, a_inf, b_inf, -1)
        if rc < 0:
            return rc
        while True:
            if mu <= 0.0:
                return -4
            u: cython.double = _next_u01(streams, STREAM_CLOCK)
            dt: cython.double = -log(1.0 - u) / mu
            if t + dt > T:
                break
            t = t + dt
            mu_new: cython.double = _hawkes_decay_into(lam, lam0, brow, dt, D)
            ua: cython.double = _next_u01(streams, STREAM_CLOCK)
            if ua * mu > mu_new:
                mu = mu_new  # rejected candidate; tighten the bound
                continue
            uk: cython.double = _next_u01(streams, STREAM_KIND) * mu_new
            kind: cython.Py_ssize_t = 0
            acc: cython.double = 0.0
            for i in range(D):
                acc += lam[i]
                if uk < acc or i == D - 1:
                    kind = i
                    break
            while lam[kind] <= 0.0 and kind > 0:
                kind -= 1
            ucan: cython.double = 0.0
            if kind >= 2 * K + 2:
                ucan = _next_u01(streams, STREAM_CANCEL)
            fl: cython.int = apply_event(zbuf, kind, ucan, K, m, a_inf, b_inf, tick, lot)
            if fl == ERR_EMPTY_CANCEL:
                fl = F_NOOP  # exogenous Hawkes events cannot be resampled
            if fl < 0:
                return fl
            if fl & F_ASK_FILL:
                fills += 1
            if fl & F_BID_FILL:
                fills += 1
            mu = 0.0
            for i in range(D):
                lam[i] += alpha[i, kind]
                mu += lam[i]
            nev += 1
            if nev > max_events:
                return -5
            rc = _decide_and_apply(zbuf, policy_id, streams, ra_buf, rb_buf,
                                   K, m, a_inf, b_inf, rc)
            if rc < 0:
                return rc
        out_pnl[p] = terminal_g(zbuf, reward_mode, K, m, a_inf, b_inf, tick, lot, eta) - g0
        out_fills[p] = fills
        out_nevents[p] = nev
    return 0


# ---------------------------------------------------------------------------
# successor expansion for the backward Qknn pass
# ---------------------------------------------------------------------------

@cython.ccall
def expand_successors(ts: cython.double[::1], states: cython.double[:, ::1],
                      action_ids: cython.long[::1], two_levels: cython.Py_ssize_t,
                      K: cython.Py_ssize_t, m: cython.Py_ssize_t,
                      a_inf: cython.double, b_inf: cython.double,
                      tick: cython.double, lot: cython.double, eta: cython.double,
                      mm_visible: cython.Py_ssize_t,
                      fam: cython.long[::1], p0: cython.double[::1],
                      p1: cython.double[::1], pool: cython.double[::1],
                      reward_mode: cython.Py_ssize_t, T: cython.double,
                      c0: cython.double, cy: cython.double,
                      cyy: cython.double, cord: cython.double,
                      out_r: cython.double[:, ::1], out_lam: cython.double[:, ::1],
                      out_nsucc: cython.long[:, ::1],
                      succ_states: cython.double[:, ::1],
                      succ_w: cython.double[::1], succ_owner: cython.long[::1],
                      zeta: cython.double[::1], zev: cython.double[::1],
                      rates: cython.double[::1], ra_buf: cython.double[::1],
                      rb_buf: cython.double[::1]) -> cython.long:
    """For each (grid point, structural action) emit the per-jump reward,
    the post-control intensity, and the weighted post-event successors
    (exact sum over event kinds; cancels split over the exact Bernoulli
    branches when MM orders rest in the cancelled queue).

    Returns the number of successor rows written, or < 0 on error
    (-6: buffer too small, -4: zero total intensity on an in-horizon point).
    """
    M: cython.Py_ssize_t = ts.shape[0]
    A: cython.Py_ssize_t = action_ids.shape[0]
    ns: cython.Py_ssize_t = 2 * K + 4 * m + 4
    nk: cython.Py_ssize_t = 4 * K + 2
    cap: cython.Py_ssize_t = succ_w.shape[0]
    cur: cython.Py_ssize_t = 0
    ii: cython.Py_ssize_t
    aa: cython.Py_ssize_t
    kk: cython.Py_ssize_t
    jj: cython.Py_ssize_t
    for ii in range(M):
        for aa in range(A):
            if ts[ii] > T:
                # past-horizon grid rows carry zero reward and no successors
                out_r[ii, aa] = 0.0
                out_lam[ii, aa] = 1.0
                out_nsucc[ii, aa] = 0
                continue
            for jj in range(ns):
                zeta[jj] = states[ii, jj]
            if action_ids[aa] >= 0:
                materialize_flags(zeta, action_ids[aa], two_levels, ra_buf, rb_buf, K, m)
                apply_control(zeta, ra_buf, rb_buf, K, m, a_inf, b_inf)
            total: cython.double = rates_into(rates, zeta, K, m, mm_visible, fam, p0, p1, pool)
            if total <= 0.0:
                return -4
            out_lam[ii, aa] = total
            out_r[ii, aa] = step_reward(zeta, ts[ii], T, total, reward_mode, K, m,
                                        a_inf, b_inf, tick, lot, eta, c0, cy, cyy, cord)
            nwritten: cython.Py_ssize_t = 0
            for kk in range(nk):
                if rates[kk] <= 0.0:
                    continue
                wk: cython.double = rates[kk] / total
                # does the event split over cancel positions?
                side: cython.Py_ssize_t = -1
                q: cython.Py_ssize_t = 0
                if kk >= 2 * K + 2 and kk <= 1 + 3 * K:
                    side = 0
                    q = kk - 1 - 2 * K
                elif kk > 1 + 3 * K:
                    side = 1
                    q = kk - 1 - 3 * K
                nbr: cython.Py_ssize_t = 1
                exo: cython.Py_ssize_t = 0
                if side >= 0:
                    depth: cython.double
                    if side == 0:
                        depth = zeta[2 + q - 1]
                    else:
                        depth = -zeta[2 + K + q - 1]
                    nmm: cython.Py_ssize_t = _mm_count(zeta, K, m, side, q)
                    exo = cython.cast(cython.Py_ssize_t, depth) - nmm
                    if exo > 0 and nmm > 0:
                        nbr = 0  # enumerated below via thresholds
                if nbr == 1:
                    if cur >= cap:
                        return -6
                    for jj in range(ns):
                        zev[jj] = zeta[jj]
                    fl: cython.int = apply_event(zev, kk, 0.5, K, m, a_inf, b_inf, tick, lot)
                    if fl < 0 and fl != ERR_EMPTY_CANCEL:
                        return fl
                    if fl == ERR_EMPTY_CANCEL:
                        for jj in range(ns):
                            zev[jj] = zeta[jj]
                    for jj in range(ns):
                        succ_states[cur, jj] = zev[jj]
                    succ_w[cur] = wk
                    succ_owner[cur] = ii * A + aa
                    cur += 1
                    nwritten += 1
                else:
                    # split positions 1..exo at the MM orders' exo-front counts
                    ona2: cython.Py_ssize_t = 2 + 2 * K + side * m
                    ora2: cython.Py_ssize_t = 2 + 2 * K + 2 * m + 2 + side * m
                    lo: cython.Py_ssize_t = 0
                    while lo < exo:
                        # next threshold strictly above lo
                        hi: cython.Py_ssize_t = exo
                        for jj in range(m):
                            if zeta[ora2 + jj] == q:
                                rank: cython.Py_ssize_t = cython.cast(cython.Py_ssize_t, zeta[ona2 + jj])
                                before: cython.Py_ssize_t = 0
                                k3: cython.Py_ssize_t
                                for k3 in range(m):
                                    if zeta[ora2 + k3] == q and zeta[ona2 + k3] < rank:
                                        before += 1
                                f: cython.Py_ssize_t = rank - 1 - before
                                if f > lo and f < hi:
                                    hi = f
                        if cur >= cap:
                            return -6
                        for jj in range(ns):
                            zev[jj] = zeta[jj]
                        urep: cython.double = (lo + 0.5) / exo
                        fl2: cython.int = apply_event(zev, kk, urep, K, m, a_inf, b_inf, tick, lot)
                        if fl2 < 0:
                            return fl2
                        for jj in range(ns):
                            succ_states[cur, jj] = zev[jj]
                        succ_w[cur] = wk * (hi - lo) / exo
                        succ_owner[cur] = ii * A + aa
                        cur += 1
                        nwritten += 1
                        lo = hi
            out_nsucc[ii, aa] = nwritten
    return cur


@cython.ccall
def terminal_rule_into(out: cython.double[::1], ts: cython.double[::1],
                       states: cython.double[:, ::1],
                       K: cython.Py_ssize_t, m: cython.Py_ssize_t,
                       a_inf: cython.double, b_inf: cython.double,
                       tick: cython.double, lot: cython.double,
                       eta: cython.double, mm_visible: cython.Py_ssize_t,
                       fam: cython.long[::1], p0: cython.double[::1],
                       p1: cython.double[::1], pool: cython.double[::1],
                       reward_mode: cython.Py_ssize_t, T: cython.double,
                       c0: cython.double, cy: cython.double,
                       cyy: cython.double, cord: cython.double,
                       rates: cython.double[::1],
                       zrow: cython.double[::1]) -> cython.int:
    """Backward-recursion seed: the one-jump reward at each stored grid
    point with no further decisions (zero past the horizon)."""
    M: cython.Py_ssize_t = ts.shape[0]
    ns: cython.Py_ssize_t = 2 * K + 4 * m + 4
    ii: cython.Py_ssize_t
    jj: cython.Py_ssize_t
    for ii in range(M):
        if ts[ii] > T:
            out[ii] = 0.0
            continue
        for jj in range(ns):
            zrow[jj] = states[ii, jj]
        lam: cython.double = rates_into(rates, zrow, K, m, mm_visible, fam, p0, p1, pool)
        if lam <= 0.0:
            return -4
        out[ii] = step_reward(zrow, ts[ii], T, lam, reward_mode, K, m,
                              a_inf, b_inf, tick, lot, eta, c0, cy, cyy, cord)
    return 0


@cython.ccall
def total_rates_into(out: cython.double[::1], states: cython.double[:, ::1],
                     K: cython.Py_ssize_t, m: cython.Py_ssize_t,
                     mm_visible: cython.Py_ssize_t,
                     fam: cython.long[::1], p0: cython.double[::1],
                     p1: cython.double[::1], pool: cython.double[::1],
                     rates: cython.double[::1],
                     zrow: cython.double[::1]) -> cython.int:
    """Row-wise total intensity of stored states."""
    M: cython.Py_ssize_t = states.shape[0]
    ns: cython.Py_ssize_t = 2 * K + 4 * m + 4
    ii: cython.Py_ssize_t
    jj: cython.Py_ssize_t
    for ii in range(M):
        for jj in range(ns):
            zrow[jj] = states[ii, jj]
        out[ii] = rates_into(rates, zrow, K, m, mm_visible, fam, p0, p1, pool)
    return 0


@cython.ccall
def terminal_g_into(out: cython.double[::1], states: cython.double[:, ::1],
                    mode: cython.Py_ssize_t, K: cython.Py_ssize_t,
                    m: cython.Py_ssize_t, a_inf: cython.double,
                    b_inf: cython.double, tick: cython.double,
                    lot: cython.double, eta: cython.double,
                    zrow: cython.double[::1]) -> cython.int:
    """Row-wise terminal reward of stored states."""
    M: cython.Py_ssize_t = states.shape[0]
    ns: cython.Py_ssize_t = 2 * K + 4 * m + 4
    ii: cython.Py_ssize_t
    jj: cython.Py_ssize_t
    for ii in range(M):
        for jj in range(ns):
            zrow[jj] = states[ii, jj]
        out[ii] = terminal_g(zrow, mode, K, m, a_inf, b_inf, tick, lot, eta)
    return 0
