"""FIFO push-relabel maximum flow with integer capacities.

The graph has n inner nodes plus implicit terminals: ``src_cap[a]`` is
pushed from the source into node a at start, ``sink_cap[a]`` is the
capacity of the arc a -> sink.  Inner arcs come in symmetric pairs given as
CSR arrays (head, cap, rev).  Only the first phase (maximum preflow) is run;
the minimal sink side of a minimum cut is read off the residual graph.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _global_relabel(n, start, head, rcap, rev, sink_res, d, queue):
    for a in range(n):
        d[a] = n
    qh = 0
    qt = 0
    for a in range(n):
        if sink_res[a] > 0:
            d[a] = 1
            queue[qt] = a
            qt += 1
    while qh < qt:
        v = queue[qh]
        qh += 1
        for e in range(start[v], start[v + 1]):
            u = head[e]
            # arc u -> v is rev[e]
            if d[u] == n and rcap[rev[e]] > 0:
                d[u] = d[v] + 1
                queue[qt] = u
                qt += 1


@njit(cache=True)
def _preflow(n, start, head, cap, rev, src_cap, sink_cap):
    rcap = cap.copy()
    sink_res = sink_cap.copy()
    excess = src_cap.copy()
    d = np.empty(n, np.int64)
    cur = np.empty(n, np.int64)
    queue = np.empty(n + 1, np.int64)
    bfs = np.empty(n, np.int64)
    inq = np.zeros(n, np.bool_)
    m = start[n]
    _global_relabel(n, start, head, rcap, rev, sink_res, d, bfs)
    for a in range(n):
        cur[a] = start[a]
    qh = 0
    qt = 0
    cnt = 0
    for a in range(n):
        if excess[a] > 0 and d[a] < n:
            queue[qt] = a
            qt += 1
            cnt += 1
            inq[a] = True
    work = 0
    limit = 6 * n + m
    while cnt > 0:
        a = queue[qh]
        qh += 1
        if qh == n + 1:
            qh = 0
        cnt -= 1
        inq[a] = False
        if d[a] >= n:
            continue
        while excess[a] > 0:
            if d[a] == 1 and sink_res[a] > 0:
                delta = excess[a] if excess[a] < sink_res[a] else sink_res[a]
                sink_res[a] -= delta
                excess[a] -= delta
                continue
            e = cur[a]
            pushed = False
            while e < start[a + 1]:
                if rcap[e] > 0:
                    v = head[e]
                    if d[v] == d[a] - 1:
                        delta = excess[a] if excess[a] < rcap[e] else rcap[e]
                        rcap[e] -= delta
                        rcap[rev[e]] += delta
                        excess[a] -= delta
                        excess[v] += delta
                        if not inq[v] and d[v] < n:
                            queue[qt] = v
                            qt += 1
                            if qt == n + 1:
                                qt = 0
                            cnt += 1
                            inq[v] = True
                        pushed = True
                        if excess[a] == 0:
                            break
                e += 1
            cur[a] = e
            if excess[a] == 0:
                break
            if e >= start[a + 1]:
                # relabel
                work += 12 + (start[a + 1] - start[a])
                best = n
                if sink_res[a] > 0:
                    best = 1
                for f in range(start[a], start[a + 1]):
                    if rcap[f] > 0 and d[head[f]] + 1 < best:
                        best = d[head[f]] + 1
                d[a] = best
                cur[a] = start[a]
                if best >= n:
                    break
                if work > limit:
                    work = 0
                    _global_relabel(n, start, head, rcap, rev, sink_res, d, bfs)
                    for b in range(n):
                        cur[b] = start[b]
                    if d[a] >= n:
                        break
            elif not pushed:
                break
    return rcap, sink_res


@njit(cache=True)
def _reach_sink(n, start, head, rcap, rev, sink_res):
    """Nodes that can reach the sink in the residual graph."""
    seen = np.zeros(n, np.bool_)
    queue = np.empty(n, np.int64)
    qt = 0
    for a in range(n):
        if sink_res[a] > 0:
            seen[a] = True
            queue[qt] = a
            qt += 1
    qh = 0
    while qh < qt:
        v = queue[qh]
        qh += 1
        for e in range(start[v], start[v + 1]):
            u = head[e]
            if not seen[u] and rcap[rev[e]] > 0:
                seen[u] = True
                queue[qt] = u
                qt += 1
    return seen


def build_csr(n, pu, pv, pcap):
    """Symmetric arc pairs u<->v with equal capacity as CSR arrays."""
    m = len(pu)
    tail = np.concatenate([pu, pv]).astype(np.int64)
    head = np.concatenate([pv, pu]).astype(np.int64)
    cap = np.concatenate([pcap, pcap]).astype(np.int64)
    order = np.argsort(tail, kind="stable")
    pos = np.empty(2 * m, np.int64)
    pos[order] = np.arange(2 * m)
    mate = np.concatenate([np.arange(m, 2 * m), np.arange(m)])
    rev = pos[mate[order]]
    start = np.zeros(n + 1, np.int64)
    np.cumsum(np.bincount(tail, minlength=n), out=start[1:])
    return start, head[order], cap[order], rev


def min_sink_side(n, csr, src_cap, sink_cap):
    """Minimal sink side T of a minimum s-t cut (boolean per node)."""
    start, head, cap, rev = csr
    src = np.asarray(src_cap, np.int64)
    snk = np.asarray(sink_cap, np.int64)
    if n == 0:
        return np.zeros(0, bool)
    # route flow that goes straight from source to sink through a node
    direct = np.minimum(src, snk)
    rcap, sink_res = _preflow(n, start, head, cap, rev, src - direct, snk - direct)
    return _reach_sink(n, start, head, rcap, rev, sink_res)
