"""Numba kernels for the HNSW layer search and connection update.

Node ids are dense insertion indices. Every ordering compares (distance, id)
lexicographically so that equal distances resolve to the earlier node.
"""
import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _less(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@njit(cache=True)
def _dist(data, a, q):
    s = 0.0
    for k in range(q.shape[0]):
        t = data[a, k] - q[k]
        s += t * t
    return np.sqrt(s)


# Binary heaps over parallel (dist, id) arrays. `sign` = +1 gives a min-heap,
# -1 a max-heap.
@njit(cache=True)
def _heap_push(hd, hi, size, d, i, sign):
    pos = size
    hd[pos] = d
    hi[pos] = i
    while pos > 0:
        parent = (pos - 1) >> 1
        if sign > 0:
            better = _less(hd[pos], hi[pos], hd[parent], hi[parent])
        else:
            better = _less(hd[parent], hi[parent], hd[pos], hi[pos])
        if not better:
            break
        hd[pos], hd[parent] = hd[parent], hd[pos]
        hi[pos], hi[parent] = hi[parent], hi[pos]
        pos = parent
    return size + 1


@njit(cache=True)
def _heap_pop(hd, hi, size, sign):
    size -= 1
    hd[0] = hd[size]
    hi[0] = hi[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        if left >= size:
            break
        best = left
        right = left + 1
        if right < size:
            if sign > 0:
                if _less(hd[right], hi[right], hd[left], hi[left]):
                    best = right
            else:
                if _less(hd[left], hi[left], hd[right], hi[right]):
                    best = right
        if sign > 0:
            swap = _less(hd[best], hi[best], hd[pos], hi[pos])
        else:
            swap = _less(hd[pos], hi[pos], hd[best], hi[best])
        if not swap:
            break
        hd[pos], hd[best] = hd[best], hd[pos]
        hi[pos], hi[best] = hi[best], hi[pos]
        pos = best
    return size


@njit(cache=True)
def search_layer_kernel(data, links, counts, q, ep, ef, visit, tag):
    """Greedy best-first expansion of one layer; returns W sorted ascending."""
    n_total = visit.shape[0]
    cap = n_total + ep.shape[0] + 1
    cd = np.empty(cap, np.float64)
    ci = np.empty(cap, np.int64)
    wd = np.empty(cap, np.float64)
    wi = np.empty(cap, np.int64)
    nc = 0
    nw = 0
    for k in range(ep.shape[0]):
        e = ep[k]
        if visit[e] == tag:
            continue
        visit[e] = tag
        d = _dist(data, e, q)
        nc = _heap_push(cd, ci, nc, d, e, 1)
        nw = _heap_push(wd, wi, nw, d, e, -1)
    while nw > ef:
        nw = _heap_pop(wd, wi, nw, -1)

    while nc > 0:
        c_d = cd[0]
        c_i = ci[0]
        nc = _heap_pop(cd, ci, nc, 1)
        if _less(wd[0], wi[0], c_d, c_i):
            break
        for k in range(counts[c_i]):
            cn = links[c_i, k]
            if visit[cn] == tag:
                continue
            visit[cn] = tag
            d = _dist(data, cn, q)
            if nw < ef or _less(d, cn, wd[0], wi[0]):
                nc = _heap_push(cd, ci, nc, d, cn, 1)
                nw = _heap_push(wd, wi, nw, d, cn, -1)
                if nw > ef:
                    nw = _heap_pop(wd, wi, nw, -1)

    out_d = np.empty(nw, np.float64)
    out_i = np.empty(nw, np.int64)
    for k in range(nw - 1, -1, -1):
        out_d[k] = wd[0]
        out_i[k] = wi[0]
        nw = _heap_pop(wd, wi, nw, -1)
    return out_i, out_d


@njit(cache=True)
def _remove_link(links, counts, a, b):
    n = counts[a]
    for k in range(n):
        if links[a, k] == b:
            for j in range(k, n - 1):
                links[a, j] = links[a, j + 1]
            counts[a] = n - 1
            return


@njit(cache=True)
def connect_kernel(data, links, counts, node, chosen):
    """Link `node` to `chosen` both ways, then prune overfull neighbors.

    The row width of `links` is the per-layer connection cap. Pruning keeps
    the closest connections of an overfull node and removes the reverse edge
    of every dropped connection, so adjacency stays symmetric.
    """
    width = links.shape[1]
    for k in range(chosen.shape[0]):
        links[node, k] = chosen[k]
    counts[node] = chosen.shape[0]
    for k in range(chosen.shape[0]):
        n = chosen[k]
        m = counts[n]
        if m < width:
            links[n, m] = node
            counts[n] = m + 1
            continue
        cand = np.empty(m + 1, np.int64)
        for j in range(m):
            cand[j] = links[n, j]
        cand[m] = node
        dists = np.empty(m + 1, np.float64)
        for j in range(m + 1):
            dists[j] = _dist(data, cand[j], data[n])
        for a in range(1, m + 1):
            dv = dists[a]
            iv = cand[a]
            b = a - 1
            while b >= 0 and _less(dv, iv, dists[b], cand[b]):
                dists[b + 1] = dists[b]
                cand[b + 1] = cand[b]
                b -= 1
            dists[b + 1] = dv
            cand[b + 1] = iv
        dropped = cand[width]
        _remove_link(links, counts, dropped, n)
        for j in range(width):
            links[n, j] = cand[j]
        counts[n] = width
