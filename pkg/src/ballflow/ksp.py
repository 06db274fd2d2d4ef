"""Node-disjoint min-cost path extraction on time-layered graphs.

Successive shortest paths with residual interlacing on a node-split flow
network. For each path count k this yields the optimal set of k node-disjoint
paths, and augmentation stops once the next path no longer lowers the total
cost, so the result matches exhaustive min-cost disjoint path enumeration.

Rewards are log-odds of detector probabilities; arc costs are their negation.
Every item can start or end a path at a fixed entry/exit cost.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

EPS_IMPROVE = 1e-9  # a path must beat zero cost by this much to be added


@dataclass
class FlowItem:
    """One selectable node: a grid cell or a detection at a given frame."""

    frame: int
    reward: float  # log-odds, larger is better
    payload: object = None


class _Arcs:
    """Forward-star arc storage with paired residual arcs."""

    def __init__(self, n_vertices: int):
        self.head = [[] for _ in range(n_vertices)]
        self.to: list[int] = []
        self.cap: list[int] = []
        self.cost: list[float] = []

    def add(self, u: int, v: int, cap: int, cost: float) -> int:
        idx = len(self.to)
        self.to.append(v)
        self.cap.append(cap)
        self.cost.append(cost)
        self.head[u].append(idx)
        self.to.append(u)
        self.cap.append(0)
        self.cost.append(-cost)
        self.head[v].append(idx + 1)
        return idx


def min_cost_disjoint_paths(
    items: list[FlowItem],
    moves: list[tuple[int, int]],
    entry_cost,
    exit_cost,
    max_paths: int,
) -> list[list[int]]:
    """Extract up to max_paths node-disjoint min-total-cost paths.

    items[i] may be entered from the source (entry_cost) and left to the sink
    (exit_cost); traversing it costs -items[i].reward. moves are (i, j) pairs
    with items[j].frame == items[i].frame + 1. entry_cost/exit_cost are floats
    or per-item arrays; np.inf forbids entering or leaving at that item.
    Returns item-index paths sorted by (start frame, first item index).
    """
    n = len(items)
    if n == 0:
        return []
    entry = np.broadcast_to(np.asarray(entry_cost, dtype=float), (n,))
    exit_ = np.broadcast_to(np.asarray(exit_cost, dtype=float), (n,))
    for i, j in moves:
        if items[j].frame != items[i].frame + 1:
            raise ValueError(f"move ({i}, {j}) does not advance one frame")
    # vertices: source, sink, then in/out pair per item
    source, sink = 0, 1
    v_in = lambda i: 2 + 2 * i
    v_out = lambda i: 3 + 2 * i
    arcs = _Arcs(2 + 2 * n)
    for i, item in enumerate(items):
        arcs.add(v_in(i), v_out(i), 1, -item.reward)
        if np.isfinite(entry[i]):
            arcs.add(source, v_in(i), 1, float(entry[i]))
        if np.isfinite(exit_[i]):
            arcs.add(v_out(i), sink, 1, float(exit_[i]))
    for i, j in moves:
        arcs.add(v_out(i), v_in(j), 1, 0.0)

    n_vertices = 2 + 2 * n
    total_paths = 0
    while total_paths < max_paths:
        cost, parent = _spfa(arcs, n_vertices, source, sink)
        if cost is None or cost >= -EPS_IMPROVE:
            break
        v = sink
        while v != source:
            a = parent[v]
            arcs.cap[a] -= 1
            arcs.cap[a ^ 1] += 1
            v = arcs.to[a ^ 1]
        total_paths += 1

    # decompose: follow unit flows from each used entry arc
    used_entry = []
    for a in arcs.head[source]:
        if a % 2 == 0 and arcs.cap[a] == 0:  # forward arc fully used
            used_entry.append(arcs.to[a])
    paths: list[list[int]] = []
    for start_vin in used_entry:
        path = []
        v = start_vin
        while v != sink:
            item = (v - 2) // 2
            path.append(item)
            v = v_out(item)
            nxt = None
            for a in arcs.head[v]:
                if a % 2 == 0 and arcs.cap[a] == 0 and arcs.to[a] != v_in(item):
                    nxt = arcs.to[a]
                    break
            if nxt is None or nxt == sink:
                break
            v = nxt
        paths.append(path)
    paths.sort(key=lambda p: (items[p[0]].frame, p[0]))
    return paths


def _spfa(arcs: _Arcs, n_vertices: int, source: int, sink: int):
    """Deterministic SPFA; handles the negative residual costs of interlacing."""
    dist = np.full(n_vertices, np.inf)
    parent = [-1] * n_vertices
    in_queue = [False] * n_vertices
    dist[source] = 0.0
    queue: deque[int] = deque([source])
    in_queue[source] = True
    rounds = 0
    limit = n_vertices * len(arcs.to)  # safety: no negative cycles exist in residuals
    while queue:
        rounds += 1
        if rounds > limit:
            raise RuntimeError("flow relaxation failed to settle")
        u = queue.popleft()
        in_queue[u] = False
        du = dist[u]
        for a in arcs.head[u]:
            if arcs.cap[a] <= 0:
                continue
            v = arcs.to[a]
            nd = du + arcs.cost[a]
            if nd < dist[v] - 1e-15:
                dist[v] = nd
                parent[v] = a
                if not in_queue[v]:
                    queue.append(v)
                    in_queue[v] = True
    if parent[sink] == -1:
        return None, parent
    return float(dist[sink]), parent
