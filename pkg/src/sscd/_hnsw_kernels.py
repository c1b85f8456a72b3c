"""JIT-compiled inner loops for the graph index.

All distance math is 1 - cosine with explicit float64 accumulation over
float32 rows. Heaps are manual array heaps keyed by distance only; callers
normalize result order with a (distance, node) sort, so heap tie order
never reaches the public surface.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath={'reassoc', 'contract'})
def _dot_row(vectors, row, q):
    d = q.shape[0]
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    s3 = 0.0
    j = 0
    while j + 4 <= d:
        s0 += vectors[row, j] * q[j]
        s1 += vectors[row, j + 1] * q[j + 1]
        s2 += vectors[row, j + 2] * q[j + 2]
        s3 += vectors[row, j + 3] * q[j + 3]
        j += 4
    s = s0 + s1 + s2 + s3
    while j < d:
        s += vectors[row, j] * q[j]
        j += 1
    return s


@njit(cache=True, fastmath={'reassoc', 'contract'})
def _dot_pair(vectors, a, b):
    d = vectors.shape[1]
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    s3 = 0.0
    j = 0
    while j + 4 <= d:
        s0 += float(vectors[a, j]) * float(vectors[b, j])
        s1 += float(vectors[a, j + 1]) * float(vectors[b, j + 1])
        s2 += float(vectors[a, j + 2]) * float(vectors[b, j + 2])
        s3 += float(vectors[a, j + 3]) * float(vectors[b, j + 3])
        j += 4
    s = s0 + s1 + s2 + s3
    while j < d:
        s += float(vectors[a, j]) * float(vectors[b, j])
        j += 1
    return s


@njit(cache=True)
def _heap_push(heap_d, heap_n, size, d, n):
    i = size
    heap_d[i] = d
    heap_n[i] = n
    while i > 0:
        parent = (i - 1) >> 1
        if heap_d[parent] <= heap_d[i]:
            break
        heap_d[parent], heap_d[i] = heap_d[i], heap_d[parent]
        heap_n[parent], heap_n[i] = heap_n[i], heap_n[parent]
        i = parent
    return size + 1


@njit(cache=True)
def _heap_pop(heap_d, heap_n, size):
    top_d = heap_d[0]
    top_n = heap_n[0]
    size -= 1
    heap_d[0] = heap_d[size]
    heap_n[0] = heap_n[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        child = left
        right = left + 1
        if right < size and heap_d[right] < heap_d[left]:
            child = right
        if heap_d[i] <= heap_d[child]:
            break
        heap_d[i], heap_d[child] = heap_d[child], heap_d[i]
        heap_n[i], heap_n[child] = heap_n[child], heap_n[i]
        i = child
    return top_d, top_n, size


@njit(cache=True)
def greedy_descend(vectors, nbrs, cnt, cur, cur_dist, q):
    """Strict-improvement hill climb on one layer."""
    while True:
        n = cnt[cur]
        if n == 0:
            return cur, cur_dist
        best = cur
        best_d = cur_dist
        for idx in range(n):
            p = nbrs[cur, idx]
            dp = 1.0 - _dot_row(vectors, p, q)
            if dp < best_d:
                best_d = dp
                best = p
        if best == cur:
            return cur, cur_dist
        cur = best
        cur_dist = best_d


@njit(cache=True)
def beam_search(vectors, nbrs, cnt, q, entry_nodes, entry_dists, ef, visited, epoch):
    """Beam search on one layer; returns (dists, nodes, size), unsorted.

    ``visited`` is an epoch-tagged scratch array: a node counts as seen when
    visited[node] == epoch, which lets callers reuse the buffer without
    clearing it.
    """
    cand_cap = 4096
    cand_d = np.empty(cand_cap, dtype=np.float64)
    cand_n = np.empty(cand_cap, dtype=np.int64)
    cand_size = 0
    res_d = np.empty(ef + 1, dtype=np.float64)  # max-heap via negated dists
    res_n = np.empty(ef + 1, dtype=np.int64)
    res_size = 0

    for i in range(entry_nodes.shape[0]):
        node = entry_nodes[i]
        if visited[node] == epoch:
            continue
        visited[node] = epoch
        d = entry_dists[i]
        cand_size = _heap_push(cand_d, cand_n, cand_size, d, node)
        if res_size < ef:
            res_size = _heap_push(res_d, res_n, res_size, -d, node)
        elif -d > res_d[0]:
            _heap_pop(res_d, res_n, res_size)
            _heap_push(res_d, res_n, res_size - 1, -d, node)

    while cand_size > 0:
        d, node, cand_size = _heap_pop(cand_d, cand_n, cand_size)
        if res_size == ef and d > -res_d[0]:
            break
        n = cnt[node]
        for idx in range(n):
            p = nbrs[node, idx]
            if visited[p] == epoch:
                continue
            visited[p] = epoch
            dp = 1.0 - _dot_row(vectors, p, q)
            if res_size < ef:
                if cand_size == cand_cap:
                    cand_cap *= 2
                    new_d = np.empty(cand_cap, dtype=np.float64)
                    new_n = np.empty(cand_cap, dtype=np.int64)
                    new_d[:cand_size] = cand_d[:cand_size]
                    new_n[:cand_size] = cand_n[:cand_size]
                    cand_d = new_d
                    cand_n = new_n
                cand_size = _heap_push(cand_d, cand_n, cand_size, dp, p)
                res_size = _heap_push(res_d, res_n, res_size, -dp, p)
            elif dp < -res_d[0]:
                if cand_size == cand_cap:
                    cand_cap *= 2
                    new_d = np.empty(cand_cap, dtype=np.float64)
                    new_n = np.empty(cand_cap, dtype=np.int64)
                    new_d[:cand_size] = cand_d[:cand_size]
                    new_n[:cand_size] = cand_n[:cand_size]
                    cand_d = new_d
                    cand_n = new_n
                cand_size = _heap_push(cand_d, cand_n, cand_size, dp, p)
                _heap_pop(res_d, res_n, res_size)
                _heap_push(res_d, res_n, res_size - 1, -dp, p)

    out_d = np.empty(res_size, dtype=np.float64)
    out_n = np.empty(res_size, dtype=np.int64)
    for i in range(res_size):
        out_d[i] = -res_d[i]
        out_n[i] = res_n[i]
    return out_d, out_n


@njit(cache=True)
def select_neighbors(vectors, cand_dists, cand_nodes, m, out_nodes):
    """Distance-diversity pruning over candidates sorted by (dist, node).

    A candidate is kept only if it is closer to the query than to every
    already-kept neighbour; remaining slots are then backfilled with the
    nearest pruned candidates so useful degree is preserved on data where
    the diversity rule rejects almost everything. Returns the number
    selected.
    """
    n_cand = cand_nodes.shape[0]
    taken = np.zeros(n_cand, dtype=np.uint8)
    n_sel = 0
    for i in range(n_cand):
        if n_sel == m:
            break
        d = cand_dists[i]
        c = cand_nodes[i]
        ok = True
        for s in range(n_sel):
            if 1.0 - _dot_pair(vectors, out_nodes[s], c) < d:
                ok = False
                break
        if ok:
            out_nodes[n_sel] = c
            taken[i] = 1
            n_sel += 1
    if n_sel < m:
        for i in range(n_cand):
            if n_sel == m:
                break
            if taken[i] == 0:
                out_nodes[n_sel] = cand_nodes[i]
                n_sel += 1
    return n_sel


@njit(cache=True)
def dists_from_node(vectors, node, targets):
    out = np.empty(targets.shape[0], dtype=np.float64)
    for i in range(targets.shape[0]):
        out[i] = 1.0 - _dot_pair(vectors, node, targets[i])
    return out
