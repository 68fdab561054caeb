"""Compiled event loop for the shared-channel MAC simulator.

Time is integer nanoseconds so that slot-aligned transmissions collide
exactly. Carrier-sensing nodes count backoff on a common slot grid that
restarts ``difs`` after every busy period; non-sensing nodes count in wall
time and never freeze.
"""
import heapq

import numpy as np
from numba import njit

EV_ARRIVAL = 0
EV_ACCESS = 1
EV_CONTEND = 2
EV_TX_START = 3
EV_TX_END = 4
EV_TIMEOUT = 5

F_DATA = 0
F_RTS = 1
F_CTS = 2
F_ACK = 3

S_IDLE = 0
S_CONTEND = 1
S_TX = 2
S_WAIT_CTS = 3
S_WAIT_ACK = 4
S_GAP = 5

C_COLLISION = 1
C_NOISE = 2

BO_NONE = 0
BO_BEB = 1
BO_EIED = 2

# cfg_i layout
I_CS, I_BACKOFF, I_CW_MIN, I_CW_MAX, I_ACK, I_RTS, I_FRAG, I_AGG, I_MSDU, I_HEADER, I_RATE, I_RETRY, I_ACK_B, I_RTS_B, I_CTS_B = range(15)
# cfg_t layout (ns)
T_SLOT, T_SIFS, T_DIFS, T_ACK, T_RTS, T_CTS, T_ACK_TO, T_CTS_TO, T_END = range(9)

# output counters
K_DELIVERED_BYTES = 0
K_ATTEMPTS = 1
K_COLLISIONS = 2
K_NOISE_DROPS = 3
K_RETRY_EXHAUSTIONS = 4
K_MSDU_GENERATED = 5
K_MSDU_DELIVERED = 6
K_MSDU_COLLIDED = 7
K_MSDU_NOISE = 8
K_MSDU_EXHAUSTED = 9
K_MSDU_QUEUED = 10
K_CONTROL_LOSSES = 11
K_SUCCESSES = 12
K_EVENTS = 13
N_COUNTERS = 14

NEVER = np.int64(2) ** 62


@njit(cache=True)
def airtime_ns(nbytes, rate_bps):
    return (np.int64(8_000_000_000) * nbytes + rate_bps - 1) // rate_bps


@njit(cache=True)
def _mix64(x):
    # splitmix64 finalizer; gives every transmission its own noise draw
    x = (x + np.uint64(0x9E3779B97F4A7C15))
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@njit(cache=True)
def _corrupted(nbytes, ber, noise_key, k):
    """Noise verdict for the ``k``-th transmission of a run.

    The uniform draw depends only on (noise_key, k), so raising the bit error
    rate corrupts a superset of the same frames.
    """
    if ber <= 0.0:
        return False
    per = -np.expm1(8.0 * nbytes * np.log1p(-ber))
    u = (_mix64(np.uint64(noise_key) ^ (np.uint64(k) * np.uint64(0xD1B54A32D192ED03))) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return u < per


# scalar simulator state shared by the helpers
G_FREE, G_ACTIVE, G_EPOCH, G_SEQ, G_IDLE, G_NAV, G_TXCOUNT, G_NOISE_KEY = range(8)


@njit(cache=True)
def _push(heap, g, t, kind, a, b):
    heapq.heappush(heap, (t, g[G_SEQ], np.int64(kind), np.int64(a), np.int64(b)))
    g[G_SEQ] += 1


@njit(cache=True)
def _start_tx(heap, g, now, fkind, owner, nbytes, dur, ber, cs, slot,
              tx_kind, tx_owner, tx_coll, tx_bad, free, active,
              state, counter, cs_start, cs_expiry):
    g[G_FREE] -= 1
    tid = free[g[G_FREE]]
    tx_kind[tid] = fkind
    tx_owner[tid] = owner
    tx_coll[tid] = False
    tx_bad[tid] = _corrupted(nbytes, ber, g[G_NOISE_KEY], g[G_TXCOUNT])
    g[G_TXCOUNT] += 1
    n_active = g[G_ACTIVE]
    if n_active > 0:
        # any overlap destroys every frame involved
        for k in range(n_active):
            tx_coll[active[k]] = True
        tx_coll[tid] = True
    else:
        g[G_EPOCH] += 1
        if cs:
            for j in range(state.shape[0]):
                if state[j] == S_CONTEND and cs_expiry[j] != NEVER and cs_expiry[j] > now:
                    if now > cs_start[j]:
                        counter[j] -= (now - cs_start[j]) // slot
                    cs_expiry[j] = NEVER
    active[n_active] = tid
    g[G_ACTIVE] = n_active + 1
    _push(heap, g, now + dur, EV_TX_END, tid, 0)


@njit(cache=True)
def simulate(n, saturated, arr_times, arr_off, cfg_i, cfg_t, ber, seed, noise_key):
    """Run one simulation; returns the counter vector (``K_*`` indices)."""
    np.random.seed(seed)
    out = np.zeros(N_COUNTERS, dtype=np.int64)

    cs = cfg_i[I_CS] != 0
    alg = cfg_i[I_BACKOFF]
    cw_min = cfg_i[I_CW_MIN]
    cw_max = cfg_i[I_CW_MAX]
    ack = cfg_i[I_ACK] != 0
    rts = cfg_i[I_RTS] != 0
    frag = cfg_i[I_FRAG]
    agg = cfg_i[I_AGG]
    msdu = cfg_i[I_MSDU]
    header = cfg_i[I_HEADER]
    rate = cfg_i[I_RATE]
    retry_limit = cfg_i[I_RETRY]
    ack_b = cfg_i[I_ACK_B]
    rts_b = cfg_i[I_RTS_B]
    cts_b = cfg_i[I_CTS_B]

    slot = cfg_t[T_SLOT]
    sifs = cfg_t[T_SIFS]
    difs = cfg_t[T_DIFS]
    t_ack = cfg_t[T_ACK]
    t_rts = cfg_t[T_RTS]
    t_cts = cfg_t[T_CTS]
    ack_to = cfg_t[T_ACK_TO]
    cts_to = cfg_t[T_CTS_TO]
    end = cfg_t[T_END]

    state = np.zeros(n, dtype=np.int64)
    cw = np.full(n, cw_min, dtype=np.int64)
    counter = np.zeros(n, dtype=np.int64)
    has_counter = np.zeros(n, dtype=np.bool_)
    retry = np.zeros(n, dtype=np.int64)
    aver = np.zeros(n, dtype=np.int64)      # access-event version
    tver = np.zeros(n, dtype=np.int64)      # timeout version
    head = np.zeros(n, dtype=np.int64)      # MSDUs finalized so far
    head_off = np.zeros(n, dtype=np.int64)  # bytes of the head MSDU already sent
    head_dmg = np.zeros(n, dtype=np.int64)
    arrived = np.zeros(n, dtype=np.int64)
    fr_bytes = np.zeros(n, dtype=np.int64)  # payload of the frame in flight, 0 = none
    cs_start = np.zeros(n, dtype=np.int64)
    cs_expiry = np.full(n, NEVER, dtype=np.int64)
    launch = np.zeros(n, dtype=np.int64)

    cap = 2 * n + 8
    tx_kind = np.zeros(cap, dtype=np.int64)
    tx_owner = np.zeros(cap, dtype=np.int64)
    tx_coll = np.zeros(cap, dtype=np.bool_)
    tx_bad = np.zeros(cap, dtype=np.bool_)
    free = np.arange(cap - 1, -1, -1).astype(np.int64)
    active = np.zeros(cap, dtype=np.int64)
    g = np.zeros(8, dtype=np.int64)
    g[G_FREE] = cap
    g[G_NOISE_KEY] = noise_key

    sat_depth = 1
    if agg > 0:
        sat_depth = agg // msdu + 2
    big = np.int64(2) ** 40

    heap = [(np.int64(0), np.int64(0), np.int64(0), np.int64(0), np.int64(0))]
    heapq.heappop(heap)

    for i in range(n):
        if saturated:
            _push(heap, g, 0, EV_ARRIVAL, i, 0)
        elif arr_off[i + 1] > arr_off[i]:
            _push(heap, g, arr_times[arr_off[i]], EV_ARRIVAL, i, 0)

    while len(heap) > 0:
        ev = heapq.heappop(heap)
        now = ev[0]
        if now >= end:
            break
        kind = ev[2]
        a = ev[3]
        b = ev[4]
        out[K_EVENTS] += 1
        n_launch = 0
        access_node = -1

        if kind == EV_ARRIVAL:
            i = a
            if not saturated:
                arrived[i] += 1
                out[K_MSDU_GENERATED] += 1
                nxt = arr_off[i] + arrived[i]
                if nxt < arr_off[i + 1]:
                    _push(heap, g, arr_times[nxt], EV_ARRIVAL, i, 0)
            if state[i] == S_IDLE:
                access_node = i

        elif kind == EV_ACCESS:
            if b == aver[a] and state[a] == S_CONTEND:
                launch[0] = a
                n_launch = 1

        elif kind == EV_CONTEND:
            if b == g[G_EPOCH] and g[G_ACTIVE] == 0:
                for i in range(n):
                    if state[i] == S_CONTEND and cs_expiry[i] == now:
                        launch[n_launch] = i
                        n_launch += 1

        elif kind == EV_TX_START:
            i = b
            if a == F_DATA:
                out[K_ATTEMPTS] += 1
                state[i] = S_TX
                nbytes = fr_bytes[i] + header
                _start_tx(heap, g, now, F_DATA, i, nbytes, airtime_ns(nbytes, rate), ber, cs, slot,
                          tx_kind, tx_owner, tx_coll, tx_bad, free, active, state, counter, cs_start, cs_expiry)
            elif a == F_CTS:
                _start_tx(heap, g, now, F_CTS, i, cts_b, t_cts, ber, cs, slot,
                          tx_kind, tx_owner, tx_coll, tx_bad, free, active, state, counter, cs_start, cs_expiry)
            else:
                _start_tx(heap, g, now, F_ACK, i, ack_b, t_ack, ber, cs, slot,
                          tx_kind, tx_owner, tx_coll, tx_bad, free, active, state, counter, cs_start, cs_expiry)

        elif kind == EV_TX_END:
            tid = a
            n_active = g[G_ACTIVE]
            for k in range(n_active):
                if active[k] == tid:
                    active[k] = active[n_active - 1]
                    break
            g[G_ACTIVE] = n_active - 1
            free[g[G_FREE]] = tid
            g[G_FREE] += 1
            if g[G_ACTIVE] == 0:
                g[G_EPOCH] += 1
                g[G_IDLE] = now if now > g[G_NAV] else g[G_NAV]
                if cs:
                    first = NEVER
                    for j in range(n):
                        if state[j] == S_CONTEND:
                            cs_start[j] = g[G_IDLE] + difs
                            cs_expiry[j] = cs_start[j] + counter[j] * slot
                            if cs_expiry[j] < first:
                                first = cs_expiry[j]
                    if first != NEVER:
                        _push(heap, g, first, EV_CONTEND, 0, g[G_EPOCH])

            i = tx_owner[tid]
            ok = not tx_coll[tid] and not tx_bad[tid]
            fk = tx_kind[tid]
            frame_done = False
            done_ok = False
            if fk == F_DATA or fk == F_RTS:
                if tx_coll[tid]:
                    out[K_COLLISIONS] += 1
                elif tx_bad[tid]:
                    out[K_NOISE_DROPS] += 1
                if fk == F_RTS:
                    state[i] = S_WAIT_CTS
                    tver[i] += 1
                    _push(heap, g, now + cts_to, EV_TIMEOUT, i, tver[i])
                    if ok:
                        _push(heap, g, now + sifs, EV_TX_START, F_CTS, i)
                elif ack:
                    state[i] = S_WAIT_ACK
                    tver[i] += 1
                    _push(heap, g, now + ack_to, EV_TIMEOUT, i, tver[i])
                    if ok:
                        _push(heap, g, now + sifs, EV_TX_START, F_ACK, i)
                else:
                    frame_done = True
                    done_ok = ok
            elif fk == F_CTS:
                if ok and state[i] == S_WAIT_CTS:
                    tver[i] += 1
                    state[i] = S_GAP
                    nav = now + sifs + airtime_ns(fr_bytes[i] + header, rate) + sifs + t_ack
                    if nav > g[G_NAV]:
                        g[G_NAV] = nav
                    _push(heap, g, now + sifs, EV_TX_START, F_DATA, i)
                elif not ok:
                    out[K_CONTROL_LOSSES] += 1
            else:
                if ok and state[i] == S_WAIT_ACK:
                    tver[i] += 1
                    frame_done = True
                    done_ok = True
                elif not ok:
                    out[K_CONTROL_LOSSES] += 1

            if frame_done:
                # the sender considers the frame finished; advance its MSDU stream
                if done_ok:
                    out[K_SUCCESSES] += 1
                cause = 0
                if not done_ok:
                    cause = C_COLLISION if tx_coll[tid] else C_NOISE
                total = head_off[i] + fr_bytes[i]
                ncomp = total // msdu
                for k in range(ncomp):
                    dmg = head_dmg[i] if k == 0 else 0
                    if dmg == 0:
                        dmg = cause
                    if dmg == 0:
                        out[K_MSDU_DELIVERED] += 1
                        out[K_DELIVERED_BYTES] += msdu
                    elif dmg == C_COLLISION:
                        out[K_MSDU_COLLIDED] += 1
                    else:
                        out[K_MSDU_NOISE] += 1
                new_off = total % msdu
                if ncomp > 0:
                    head_dmg[i] = cause if new_off > 0 else 0
                elif head_dmg[i] == 0:
                    head_dmg[i] = cause
                head[i] += ncomp
                head_off[i] = new_off
                fr_bytes[i] = 0
                if ack:
                    retry[i] = 0
                    if alg == BO_BEB:
                        cw[i] = cw_min
                    elif alg == BO_EIED:
                        c = (cw[i] + 1) // 2 - 1
                        cw[i] = c if c > cw_min else cw_min
                if frag > 0 and head_off[i] > 0:
                    rem = msdu - head_off[i]
                    fr_bytes[i] = frag if frag < rem else rem
                    state[i] = S_GAP
                    _push(heap, g, now + sifs, EV_TX_START, F_DATA, i)
                else:
                    state[i] = S_IDLE
                    access_node = i

        elif kind == EV_TIMEOUT:
            i = a
            if b == tver[i] and (state[i] == S_WAIT_ACK or state[i] == S_WAIT_CTS):
                retry[i] += 1
                if alg != BO_NONE:
                    c = 2 * (cw[i] + 1) - 1
                    cw[i] = c if c < cw_max else cw_max
                if retry[i] > retry_limit:
                    out[K_RETRY_EXHAUSTIONS] += 1
                    total = head_off[i] + fr_bytes[i]
                    touched = total // msdu
                    if total % msdu > 0:
                        touched += 1
                    out[K_MSDU_EXHAUSTED] += touched
                    head[i] += touched
                    head_off[i] = 0
                    head_dmg[i] = 0
                    fr_bytes[i] = 0
                    retry[i] = 0
                    cw[i] = cw_min
                has_counter[i] = False
                state[i] = S_IDLE
                access_node = i

        # a node with something to send (re)enters contention
        if access_node >= 0:
            i = access_node
            if saturated or arrived[i] > head[i]:
                if alg != BO_NONE:
                    if not has_counter[i]:
                        counter[i] = np.random.randint(0, cw[i] + 1)
                        has_counter[i] = True
                else:
                    counter[i] = 0
                state[i] = S_CONTEND
                if cs:
                    if g[G_ACTIVE] > 0:
                        cs_expiry[i] = NEVER
                    else:
                        base = g[G_IDLE] + difs
                        if now > g[G_IDLE]:
                            base += ((now - g[G_IDLE] + slot - 1) // slot) * slot
                        cs_start[i] = base
                        cs_expiry[i] = base + counter[i] * slot
                        _push(heap, g, cs_expiry[i], EV_CONTEND, 0, g[G_EPOCH])
                else:
                    aver[i] += 1
                    _push(heap, g, now + counter[i] * slot, EV_ACCESS, i, aver[i])

        # nodes whose access timer expired transmit together
        for li in range(n_launch):
            i = launch[li]
            state[i] = S_TX
            has_counter[i] = False
            cs_expiry[i] = NEVER
        for li in range(n_launch):
            i = launch[li]
            if fr_bytes[i] == 0:
                if agg > 0:
                    avail = big if saturated else (arrived[i] - head[i]) * msdu - head_off[i]
                    fr_bytes[i] = agg if agg < avail else avail
                elif frag > 0:
                    rem = msdu - head_off[i]
                    fr_bytes[i] = frag if frag < rem else rem
                else:
                    fr_bytes[i] = msdu - head_off[i]
            out[K_ATTEMPTS] += 1
            if rts:
                _start_tx(heap, g, now, F_RTS, i, rts_b, t_rts, ber, cs, slot,
                          tx_kind, tx_owner, tx_coll, tx_bad, free, active, state, counter, cs_start, cs_expiry)
            else:
                nbytes = fr_bytes[i] + header
                _start_tx(heap, g, now, F_DATA, i, nbytes, airtime_ns(nbytes, rate), ber, cs, slot,
                          tx_kind, tx_owner, tx_coll, tx_bad, free, active, state, counter, cs_start, cs_expiry)

    if saturated:
        for i in range(n):
            out[K_MSDU_GENERATED] += head[i] + sat_depth
            out[K_MSDU_QUEUED] += sat_depth
    else:
        for i in range(n):
            out[K_MSDU_QUEUED] += arrived[i] - head[i]
    return out
