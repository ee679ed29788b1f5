# Compiled inner loops for graph construction. Distances here are float32
# squared L2: construction geometry only, never used to rank query results.

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _l2(a, b):
    s = np.float32(0.0)
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        s += d * d
    return s


@njit(cache=True)
def greedy_l2(data, nbrs, degs, entry, q, L, seen, stamp, visited_out):
    """Beam-free best-first search; returns (#visited, list ids, list dists, list size)."""
    ids = np.empty(L + 1, dtype=np.int64)
    dists = np.empty(L + 1, dtype=np.float32)
    done = np.zeros(L + 1, dtype=np.bool_)
    size = 1
    ids[0] = entry
    dists[0] = _l2(data[entry], q)
    seen[entry] = stamp
    nvis = 0
    cur = 0
    while True:
        while cur < size and done[cur]:
            cur += 1
        if cur >= size:
            break
        u = ids[cur]
        done[cur] = True
        visited_out[nvis] = u
        nvis += 1
        for j in range(degs[u]):
            v = nbrs[u, j]
            if seen[v] == stamp:
                continue
            seen[v] = stamp
            d = _l2(data[v], q)
            if size == L and (d > dists[size - 1] or (d == dists[size - 1] and v > ids[size - 1])):
                continue
            # insertion position by (dist, id)
            pos = size
            while pos > 0 and (dists[pos - 1] > d or (dists[pos - 1] == d and ids[pos - 1] > v)):
                pos -= 1
            top = size if size < L else L - 1
            for t in range(top, pos, -1):
                ids[t] = ids[t - 1]
                dists[t] = dists[t - 1]
                done[t] = done[t - 1]
            ids[pos] = v
            dists[pos] = d
            done[pos] = False
            if size < L:
                size += 1
            if pos < cur:
                cur = pos
    return nvis, ids, dists, size


@njit(cache=True)
def prune_l2(data, p, cand, alpha, R, saturate):
    """Alpha-pruning of candidate ids around node p. cand must exclude p."""
    n = cand.shape[0]
    d = np.empty(n, dtype=np.float32)
    for i in range(n):
        d[i] = _l2(data[p], data[cand[i]])
    by_id = np.argsort(cand, kind="mergesort")
    order = by_id[np.argsort(d[by_id], kind="mergesort")]
    removed = np.zeros(n, dtype=np.bool_)
    out = np.empty(R, dtype=np.int64)
    cnt = 0
    for a in range(n):
        ia = order[a]
        if removed[ia]:
            continue
        if cnt >= R:
            break
        out[cnt] = cand[ia]
        cnt += 1
        removed[ia] = True
        for b in range(a + 1, n):
            ib = order[b]
            if removed[ib]:
                continue
            if alpha * _l2(data[cand[ia]], data[cand[ib]]) <= d[ib]:
                removed[ib] = True
    if saturate and cnt < R:
        kept = out[:cnt].copy()
        for a in range(n):
            if cnt >= R:
                break
            c = cand[order[a]]
            dup = False
            for t in range(kept.shape[0]):
                if kept[t] == c:
                    dup = True
                    break
            if not dup:
                out[cnt] = c
                cnt += 1
    return out[:cnt]


@njit(cache=True)
def _contains(row, deg, v):
    for j in range(deg):
        if row[j] == v:
            return True
    return False


@njit(cache=True)
def build_pass(data, nbrs, degs, entry, order, L, alpha, R, saturate, seen, stamp0):
    # nbrs has room for a slack of extra reverse edges before re-pruning
    n = data.shape[0]
    cap = nbrs.shape[1]
    visited = np.empty(n, dtype=np.int64)
    stamp = stamp0
    for idx in range(order.shape[0]):
        u = order[idx]
        stamp += 1
        nvis, _, _, _ = greedy_l2(data, nbrs, degs, entry, data[u], L, seen, stamp, visited)
        # candidate pool: visited nodes plus current neighbors, minus u, deduplicated
        stamp += 1
        pool = np.empty(nvis + degs[u], dtype=np.int64)
        m = 0
        for t in range(nvis):
            v = visited[t]
            if v != u and seen[v] != stamp:
                seen[v] = stamp
                pool[m] = v
                m += 1
        for t in range(degs[u]):
            v = nbrs[u, t]
            if v != u and seen[v] != stamp:
                seen[v] = stamp
                pool[m] = v
                m += 1
        new = prune_l2(data, u, pool[:m], alpha, R, saturate)
        degs[u] = new.shape[0]
        for t in range(new.shape[0]):
            nbrs[u, t] = new[t]
        for t in range(new.shape[0]):
            v = new[t]
            if _contains(nbrs[v], degs[v], u):
                continue
            if degs[v] < cap:
                nbrs[v, degs[v]] = u
                degs[v] += 1
            else:
                pool2 = np.empty(degs[v] + 1, dtype=np.int64)
                pool2[:degs[v]] = nbrs[v, :degs[v]]
                pool2[degs[v]] = u
                rv = prune_l2(data, v, pool2, alpha, R, saturate)
                degs[v] = rv.shape[0]
                for s in range(rv.shape[0]):
                    nbrs[v, s] = rv[s]
    return stamp


@njit(cache=True)
def shrink(data, nbrs, degs, alpha, R, saturate):
    for v in range(nbrs.shape[0]):
        if degs[v] > R:
            rv = prune_l2(data, v, nbrs[v, :degs[v]].copy(), alpha, R, saturate)
            degs[v] = rv.shape[0]
            for s in range(rv.shape[0]):
                nbrs[v, s] = rv[s]
            for s in range(rv.shape[0], nbrs.shape[1]):
                nbrs[v, s] = -1
