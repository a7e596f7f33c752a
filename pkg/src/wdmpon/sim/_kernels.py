"""Compiled event loops.

Queues are FIFO pointers into pre-generated arrival arrays: packet ``k`` of
the flat arrays belongs to queue ``q`` when ``arr_off[q] <= k < arr_off[q+1]``
and ``head[q]`` is the first packet not yet taken into service.  ``csum`` is
the global running sum of packet times (length ``P + 1``) so that the work
of packets ``a..b-1`` is ``csum[b] - csum[a]``.
"""

import numpy as np
from numba import njit

SERVE = 0
OVERHEAD = 1
START = 2

RANDOM = 0
PERIODIC = 1

# audit counters
A_TX_CAP = 0
A_GATED = 1
A_GRANT = 2
A_IDLE = 3
A_ORDER = 4
N_AUDIT = 5

GRANT_SLACK = 1e-12


@njit(cache=True, nogil=True)
def _less(ht, hp, hs, a, b):
    if ht[a] != ht[b]:
        return ht[a] < ht[b]
    if hp[a] != hp[b]:
        return hp[a] < hp[b]
    return hs[a] < hs[b]


@njit(cache=True, nogil=True)
def _swap(ht, hp, hs, hw, a, b):
    ht[a], ht[b] = ht[b], ht[a]
    hp[a], hp[b] = hp[b], hp[a]
    hs[a], hs[b] = hs[b], hs[a]
    hw[a], hw[b] = hw[b], hw[a]


@njit(cache=True, nogil=True)
def _push(ht, hp, hs, hw, n, t, p, s, w):
    ht[n] = t
    hp[n] = p
    hs[n] = s
    hw[n] = w
    c = n
    while c > 0:
        parent = (c - 1) // 2
        if _less(ht, hp, hs, c, parent):
            _swap(ht, hp, hs, hw, c, parent)
            c = parent
        else:
            break
    return n + 1


@njit(cache=True, nogil=True)
def _pop(ht, hp, hs, hw, n):
    # moves the minimum to slot n-1 and restores the heap on 0..n-2
    n -= 1
    _swap(ht, hp, hs, hw, 0, n)
    c = 0
    while True:
        left = 2 * c + 1
        if left >= n:
            break
        m = left
        right = left + 1
        if right < n and _less(ht, hp, hs, right, left):
            m = right
        if _less(ht, hp, hs, m, c):
            _swap(ht, hp, hs, hw, m, c)
            c = m
        else:
            break
    return n


@njit(cache=True, nogil=True)
def _add_interval(bins, a, b, window):
    nb = bins.shape[0]
    k = int(a / window)
    while a < b and k < nb:
        edge = (k + 1) * window
        stop = b if b < edge else edge
        if stop > a:
            bins[k] += stop - a
        a = stop
        k += 1


@njit(cache=True, nogil=True)
def _pool_add(pool, pos, n, item):
    pool[n] = item
    pos[item] = n
    return n + 1


@njit(cache=True, nogil=True)
def _pool_remove(pool, pos, n, item):
    k = pos[item]
    last = pool[n - 1]
    pool[k] = last
    pos[last] = k
    pos[item] = -1
    return n - 1


@njit(cache=True, nogil=True)
def _choose(mode, w, pool, pool_n, orders, w_ptr, item_busy, item_cap):
    n_items = item_busy.shape[0]
    if mode == RANDOM:
        if pool_n == 0:
            return -1
        return pool[int(np.random.random() * pool_n)]
    for k in range(1, n_items + 1):
        slot = (w_ptr[w] + k) % n_items
        cand = orders[w, slot]
        if item_busy[cand] < item_cap[cand]:
            w_ptr[w] = slot
            return cand
    return -1


@njit(cache=True, nogil=True)
def _sample(tau, s_idx, arr_ptr, arr_off, arr_t, head, csum, backlog_pkts, backlog_work):
    for q in range(head.shape[0]):
        p = arr_ptr[q]
        end = arr_off[q + 1]
        while p < end and arr_t[p] < tau:
            p += 1
        arr_ptr[q] = p
        backlog_pkts[q, s_idx] = p - head[q]
        backlog_work[q, s_idx] = csum[p] - csum[head[q]]


@njit(cache=True, nogil=True)
def polling_kernel(
    L, onu_delta, onu_cap, onu_qstart, onu_qcount, q_grant,
    arr_off, arr_t, sizes, csum,
    item_onu, item_cap, mode, orders, seed,
    horizon, warmup, window, sample_times, vac_bin, n_vac_bins, audit,
):
    np.random.seed(seed)
    N = onu_delta.shape[0]
    Q = q_grant.shape[0]
    n_items = item_onu.shape[0]
    S = sample_times.shape[0]

    head = arr_off[:Q].copy()
    arr_ptr = arr_off[:Q].copy()
    onu_next = np.zeros(N, np.int64)
    onu_busy = np.zeros(N, np.int64)
    vac_start = np.full(N, -1.0)
    last_visit = np.full(N, -1.0)

    item_busy = np.zeros(n_items, np.int64)
    pool = np.empty(n_items, np.int64)
    pos = np.full(n_items, -1, np.int64)
    pool_n = 0
    for it in range(n_items):
        pool_n = _pool_add(pool, pos, pool_n, it)

    w_item = np.full(L, -1, np.int64)
    w_onu = np.full(L, -1, np.int64)
    w_gate = np.zeros(L)
    w_pos = np.zeros(L, np.int64)
    w_first = np.zeros(L, np.int64)
    w_used = np.zeros(L)
    w_last = np.full(L, -1, np.int64)
    w_ptr = np.full(L, -1, np.int64)
    n_idle = 0

    ht = np.empty(L)
    hp = np.empty(L, np.int64)
    hs = np.empty(L, np.int64)
    hw = np.empty(L, np.int64)
    hn = 0
    seq = 0

    nb = int(np.ceil(horizon / window))
    overhead_bins = np.zeros(nb)
    backlog_work = np.zeros((Q, S))
    backlog_pkts = np.zeros((Q, S), np.int64)
    iv_count = np.zeros(N, np.int64)
    iv_sum = np.zeros(N)
    iv_sq = np.zeros(N)
    vac_count = np.zeros(N, np.int64)
    vac_sum = np.zeros(N)
    vac_sq = np.zeros(N)
    vac_hist = np.zeros((N, n_vac_bins + 1), np.int64)
    visits = np.zeros(N, np.int64)
    wait_sum = np.zeros(Q)
    wait_count = np.zeros(Q, np.int64)
    served_work = np.zeros(Q)
    violations = np.zeros(N_AUDIT, np.int64)
    s_idx = 0
    last_time = 0.0
    n_events = 0

    # every wavelength starts a visit at time 0
    for w in range(L):
        it = _choose(mode, w, pool, pool_n, orders, w_ptr, item_busy, item_cap)
        if it < 0:
            n_idle += 1
            continue
        item_busy[it] += 1
        if item_busy[it] == item_cap[it]:
            pool_n = _pool_remove(pool, pos, pool_n, it)
        w_item[w] = it
        hn = _push(ht, hp, hs, hw, hn, 0.0, START, seq, w)
        seq += 1

    while hn > 0:
        hn = _pop(ht, hp, hs, hw, hn)
        now = ht[hn]
        kind = hp[hn]
        w = hw[hn]
        if now > horizon:
            break
        n_events += 1
        if audit and now < last_time:
            violations[A_ORDER] += 1
        last_time = now
        while s_idx < S and sample_times[s_idx] <= now:
            _sample(sample_times[s_idx], s_idx, arr_ptr, arr_off, arr_t, head, csum, backlog_pkts, backlog_work)
            s_idx += 1

        if kind == OVERHEAD:
            i = w_onu[w]
            it = w_item[w]
            if item_busy[it] == item_cap[it]:
                pool_n = _pool_add(pool, pos, pool_n, it)
            item_busy[it] -= 1
            onu_busy[i] -= 1
            if onu_busy[i] == 0:
                vac_start[i] = now
            it = _choose(mode, w, pool, pool_n, orders, w_ptr, item_busy, item_cap)
            if it < 0:
                w_item[w] = -1
                w_onu[w] = -1
                n_idle += 1
                continue
            item_busy[it] += 1
            if item_busy[it] == item_cap[it]:
                pool_n = _pool_remove(pool, pos, pool_n, it)
            w_item[w] = it

        if kind != SERVE:
            # a new visit begins
            i = item_onu[w_item[w]]
            w_onu[w] = i
            onu_busy[i] += 1
            if audit and onu_busy[i] > onu_cap[i]:
                violations[A_TX_CAP] += 1
            if onu_busy[i] == 1 and vac_start[i] >= warmup:
                v = now - vac_start[i]
                vac_count[i] += 1
                vac_sum[i] += v
                vac_sq[i] += v * v
                b = n_vac_bins
                if vac_bin > 0.0 and v < vac_bin * n_vac_bins:
                    b = int(v / vac_bin)
                vac_hist[i, b] += 1
            if last_visit[i] >= warmup:
                v = now - last_visit[i]
                iv_count[i] += 1
                iv_sum[i] += v
                iv_sq[i] += v * v
            last_visit[i] = now
            if now >= warmup:
                visits[i] += 1
            w_gate[w] = now
            w_pos[w] = 0
            w_first[w] = onu_next[i]
            w_used[w] = 0.0
            w_last[w] = -1

        # next packet of this visit, else the switch overhead
        i = w_onu[w]
        n_i = onu_qcount[i]
        qs = onu_qstart[i]
        started = False
        while w_pos[w] < n_i:
            local = (w_first[w] + w_pos[w]) % n_i
            q = qs + local
            h = head[q]
            if h < arr_off[q + 1] and arr_t[h] < w_gate[w]:
                size = sizes[h]
                # a packet longer than the whole grant may still go first
                if w_used[w] == 0.0 or w_used[w] + size <= q_grant[q] * (1.0 + GRANT_SLACK):
                    if audit:
                        if arr_t[h] >= w_gate[w]:
                            violations[A_GATED] += 1
                        if w_used[w] > 0.0 and w_used[w] + size > q_grant[q] * (1.0 + GRANT_SLACK):
                            violations[A_GRANT] += 1
                    head[q] = h + 1
                    w_used[w] += size
                    w_last[w] = local
                    if now >= warmup:
                        wait_sum[q] += now - arr_t[h]
                        wait_count[q] += 1
                        served_work[q] += size
                    hn = _push(ht, hp, hs, hw, hn, now + size, SERVE, seq, w)
                    seq += 1
                    started = True
                    break
            w_pos[w] += 1
            w_used[w] = 0.0
        if not started:
            if w_last[w] >= 0:
                onu_next[i] = (w_last[w] + 1) % n_i
            end = now + onu_delta[i]
            _add_interval(overhead_bins, now, end if end < horizon else horizon, window)
            hn = _push(ht, hp, hs, hw, hn, end, OVERHEAD, seq, w)
            seq += 1

        if audit and n_idle > 0 and pool_n > 0:
            violations[A_IDLE] += 1

    while s_idx < S:
        _sample(sample_times[s_idx], s_idx, arr_ptr, arr_off, arr_t, head, csum, backlog_pkts, backlog_work)
        s_idx += 1

    return (
        overhead_bins, backlog_work, backlog_pkts,
        iv_count, iv_sum, iv_sq,
        vac_count, vac_sum, vac_sq, vac_hist, visits,
        wait_sum, wait_count, served_work, violations, n_idle, n_events,
    )


@njit(cache=True, nogil=True)
def max_min_allocate(demand, weight, q_onu, onu_cap, capacity):
    """Weighted max-min fair shares of ``capacity`` with per-ONU caps.

    Progressive filling: every unsatisfied queue grows at a rate equal to its
    weight until its demand, its ONU's cap or the capacity runs out.
    """
    Q = demand.shape[0]
    N = onu_cap.shape[0]
    alloc = np.zeros(Q)
    onu_used = np.zeros(N)
    active = np.zeros(Q, np.bool_)
    for q in range(Q):
        active[q] = demand[q] > 0.0 and weight[q] > 0.0 and onu_cap[q_onu[q]] > 0.0
    remaining = capacity
    onu_w = np.zeros(N)
    for _ in range(Q + N + 1):
        total_w = 0.0
        onu_w[:] = 0.0
        for q in range(Q):
            if active[q]:
                total_w += weight[q]
                onu_w[q_onu[q]] += weight[q]
        if total_w == 0.0 or remaining <= 0.0:
            break
        step = remaining / total_w
        for q in range(Q):
            if active[q]:
                s = (demand[q] - alloc[q]) / weight[q]
                if s < step:
                    step = s
        for i in range(N):
            if onu_w[i] > 0.0:
                s = (onu_cap[i] - onu_used[i]) / onu_w[i]
                if s < step:
                    step = s
        if step < 0.0:
            step = 0.0
        for q in range(Q):
            if active[q]:
                alloc[q] += weight[q] * step
        for i in range(N):
            onu_used[i] += onu_w[i] * step
        remaining -= total_w * step
        if remaining <= 1e-12 * capacity:
            break
        for q in range(Q):
            if active[q]:
                i = q_onu[q]
                # absolute floor: a residual too small to move the fill level would stall the loop
                tol = 1e-12 * capacity
                if demand[q] - alloc[q] <= max(1e-12 * demand[q], tol) or onu_cap[i] - onu_used[i] <= max(1e-12 * onu_cap[i], tol):
                    active[q] = False
    return alloc


@njit(cache=True, nogil=True)
def frame_kernel(
    q_onu, weight, onu_cap, capacity, frame,
    arr_off, arr_t, sizes, csum,
    n_frames, warmup, sample_every,
):
    Q = q_onu.shape[0]
    head = arr_off[:Q].copy()
    arr_ptr = arr_off[:Q].copy()
    credit = np.zeros(Q)
    demand = np.zeros(Q)
    n_samples = n_frames // sample_every + 1
    sample_times = np.zeros(n_samples)
    backlog_work = np.zeros((Q, n_samples))
    backlog_pkts = np.zeros((Q, n_samples), np.int64)
    served_work = np.zeros(Q)
    wait_sum = np.zeros(Q)
    wait_count = np.zeros(Q, np.int64)
    used = np.zeros(n_frames)
    s_idx = 0
    for k in range(n_frames):
        t0 = k * frame
        for q in range(Q):
            p = arr_ptr[q]
            end = arr_off[q + 1]
            while p < end and arr_t[p] < t0:
                p += 1
            arr_ptr[q] = p
            demand[q] = csum[p] - csum[head[q]]
        if k % sample_every == 0 and s_idx < n_samples:
            sample_times[s_idx] = t0
            for q in range(Q):
                backlog_pkts[q, s_idx] = arr_ptr[q] - head[q]
                backlog_work[q, s_idx] = demand[q]
            s_idx += 1
        alloc = max_min_allocate(demand, weight, q_onu, onu_cap, capacity)
        for q in range(Q):
            budget = alloc[q] + credit[q]
            h = head[q]
            p = arr_ptr[q]
            while h < p and sizes[h] <= budget * (1.0 + GRANT_SLACK):
                budget -= sizes[h]
                used[k] += sizes[h]
                if t0 >= warmup:
                    served_work[q] += sizes[h]
                    wait_sum[q] += t0 - arr_t[h]
                    wait_count[q] += 1
                h += 1
            head[q] = h
            # unused share carries over only while gated packets remain
            credit[q] = budget if h < p else 0.0
    return sample_times[:s_idx], backlog_work[:, :s_idx], backlog_pkts[:, :s_idx], served_work, wait_sum, wait_count, used
