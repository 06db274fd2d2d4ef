"""Brute-force and ILP reference implementations.

Everything in here trades speed for obviousness. The fast code paths in the
package are checked against these on instances small enough to enumerate.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp


def ilp_disjoint_paths(items, moves, entry_cost, exit_cost, max_paths):
    """Min-total-cost node-disjoint path cover via a binary arc ILP.

    Mirrors the contract of ksp.min_cost_disjoint_paths: items carry rewards
    (cost -reward when traversed), entry/exit costs may be scalars or per-item
    arrays with np.inf meaning forbidden. Returns (total_cost, n_paths).
    """
    n = len(items)
    entry = np.broadcast_to(np.asarray(entry_cost, dtype=float), (n,))
    exit_ = np.broadcast_to(np.asarray(exit_cost, dtype=float), (n,))
    # arc list: ("entry", i), ("exit", i), ("move", i, j)
    arcs = []
    costs = []
    for i in range(n):
        if np.isfinite(entry[i]):
            arcs.append(("entry", i))
            costs.append(entry[i] - items[i].reward)
        if np.isfinite(exit_[i]):
            arcs.append(("exit", i))
            costs.append(exit_[i])
    for i, j in moves:
        arcs.append(("move", i, j))
        costs.append(-items[j].reward)
    if not arcs:
        return 0.0, 0
    m = len(arcs)

    rows = []
    lo = []
    hi = []

    def row(coef, lb, ub):
        rows.append(coef)
        lo.append(lb)
        hi.append(ub)

    # conservation: inflow(i) == outflow(i); inflow(i) <= 1
    for i in range(n):
        inflow = np.zeros(m)
        outflow = np.zeros(m)
        for a, arc in enumerate(arcs):
            if arc[0] == "entry" and arc[1] == i:
                inflow[a] = 1
            elif arc[0] == "move" and arc[2] == i:
                inflow[a] = 1
            if arc[0] == "exit" and arc[1] == i:
                outflow[a] = 1
            elif arc[0] == "move" and arc[1] == i:
                outflow[a] = 1
        row(inflow - outflow, 0, 0)
        row(inflow, 0, 1)
    n_entries = np.array([1.0 if a[0] == "entry" else 0.0 for a in arcs])
    row(n_entries, 0, max_paths)

    res = milp(
        c=np.array(costs),
        constraints=LinearConstraint(np.array(rows), np.array(lo), np.array(hi)),
        integrality=np.ones(m),
        bounds=Bounds(0, 1),
    )
    assert res.success, res.message
    chosen = res.x > 0.5
    return float(np.dot(costs, chosen)), int(np.sum(chosen & (n_entries > 0)))


def enumerate_grid_paths(grids, start_cell, end_cell, neighborhood):
    """All cell paths from start_cell at the first grid to end_cell at the last.

    grids: list of 2D probability arrays, one per frame in the gap (inclusive
    of both endpoints). Yields lists of (row, col) of length len(grids).
    """
    rows, cols = grids[0].shape

    def step(path):
        t = len(path)
        if t == len(grids):
            if path[-1] == end_cell:
                yield list(path)
            return
        r0, c0 = path[-1]
        for dr, dc in neighborhood:
            r, c = r0 + dr, c0 + dc
            if 0 <= r < rows and 0 <= c < cols:
                path.append((r, c))
                yield from step(path)
                path.pop()

    yield from step([start_cell])


def best_grid_path(grids, start_cell, end_cell, neighborhood, clamp=1e-6):
    """Exhaustive max log-odds path between fixed endpoint cells."""
    best = None
    best_score = -np.inf
    for path in enumerate_grid_paths(grids, start_cell, end_cell, neighborhood):
        score = 0.0
        for t, (r, c) in enumerate(path):
            p = min(max(float(grids[t][r, c]), clamp), 1.0 - clamp)
            score += math.log(p / (1.0 - p))
        if score > best_score + 1e-12:
            best_score = score
            best = path
    return best, best_score


def lsq_parabola(frames, values, curvature):
    """Least-squares fit of p + v*k + curvature*k*(k-1)/2 over integer offsets.

    Returns a callable giving the fitted value at any frame.
    """
    f0 = frames[0]
    ks = np.asarray(frames, dtype=float) - f0
    ys = np.asarray(values, dtype=float) - curvature * ks * (ks - 1.0) / 2.0
    design = np.stack([np.ones_like(ks), ks], axis=1)
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    return lambda f: float(
        coef[0] + coef[1] * (f - f0) + curvature * (f - f0) * (f - f0 - 1) / 2.0
    )


def enumerate_ball_paths(graph):
    """All source-rooted node-id paths covering every frame of a ball graph."""
    from ballflow.types import SOURCE_ID

    by_src = {}
    for e in graph.edges:
        by_src.setdefault(e.src, []).append(e.dst)
    last = graph.n_frames

    def walk(node_id, frame, acc):
        if frame == last:
            yield list(acc)
            return
        for dst in by_src.get(node_id, []):
            acc.append(dst)
            yield from walk(dst, frame + 1, acc)
            acc.pop()

    for first in by_src.get(SOURCE_ID, []):
        yield from walk(first, 1, [first])


def path_cost(graph, node_path):
    """Sum of edge costs along a source-rooted node-id path."""
    from ballflow.types import SOURCE_ID

    cost = {}
    for e in graph.edges:
        cost[(e.src, e.dst)] = e.cost
    total = cost[(SOURCE_ID, node_path[0])]
    for a, b in zip(node_path, node_path[1:]):
        total += cost[(a, b)]
    return total


def continuous_feasible(states, positions, config, eps=None):
    """LP feasibility of the P variables for a fixed ball path.

    states/positions are per-frame (1-based semantics, index 0 = frame 1);
    positions entries may be None for absent frames. Returns True when some
    continuous trajectory satisfies the band and all active physics rows.
    """
    if eps is None:
        eps = config.eps_phys
    T = len(states)
    axes = "xyz"
    nv = 3 * T

    def var(t, c):  # t is 0-based here
        return 3 * t + c

    a_ub = []
    b_ub = []
    for t in range(T):
        st = config.state(states[t])
        if st.kind == "absent":
            continue
        x = positions[t]
        for c in range(3):
            r = np.zeros(nv)
            r[var(t, c)] = 1.0
            a_ub.append(r.copy())
            b_ub.append(x[c] + config.band_radius)
            r[var(t, c)] = -1.0
            a_ub.append(r)
            b_ub.append(-(x[c] - config.band_radius))
    for t in range(2, T):
        sid = states[t]
        if states[t - 1] != sid or states[t - 2] != sid:
            continue
        st = config.state(sid)
        if st.kind != "physics_bound":
            continue
        for prow in config.physics_for(sid):
            if prow.is_vacuous:
                continue
            # active only when all three nodes sit outside the exclusion set
            if any(prow.excluded(positions[u]) for u in (t - 2, t - 1, t)):
                continue
            c = axes.index(prow.axis)
            r = np.zeros(nv)
            r[var(t, c)] += prow.a + prow.b + prow.c
            r[var(t - 1, c)] += -2.0 * prow.a - prow.b
            r[var(t - 2, c)] += prow.a
            a_ub.append(r.copy())
            b_ub.append(prow.f + eps)
            a_ub.append(-r)
            b_ub.append(-(prow.f - eps))
    if not a_ub:
        return True
    res = linprog(
        c=np.zeros(nv),
        A_ub=np.array(a_ub),
        b_ub=np.array(b_ub),
        bounds=[(None, None)] * nv,
        method="highs",
    )
    return res.status == 0


def log_product_of_potentials(psi_values):
    """log of a product of clamped potentials, the additive form used on edges."""
    total = 0.0
    for p in psi_values:
        p = min(max(p, 1e-300), 1.0)
        total += math.log(p)
    return total
