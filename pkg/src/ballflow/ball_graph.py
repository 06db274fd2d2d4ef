"""Build the ball flow graph: grown candidate paths, possession layer, absent chain.

Ball tracklets are extracted from raw detections with the same disjoint-path
machinery used for people. Each tracklet is broken into maximal windows that a
single motion model instance explains, the model is least-squares fitted, and
the fit is extended frame by frame in both directions, absorbing any detection
that falls inside the per-axis band around the prediction. Grown paths become
node chains; a possession layer mirrors the people graph at carry height; one
absent node per frame closes the graph so an all-absent route always exists.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SceneConfig
from .errors import ConfigError, GraphError
from .ksp import FlowItem, min_cost_disjoint_paths
from .player_graph import log_odds
from .types import (
    ABSENT,
    PHYSICS_BOUND,
    POSSESSION,
    SOURCE_ID,
    BallGraph,
    BallNode,
    BallTracklet,
    CandidatePath,
    Detection,
    DetectionSet,
    Edge,
    PlayerGraph,
    prune_ball_nodes,
)


def ball_ksp_tracklets(
    dets: DetectionSet,
    config: SceneConfig,
    max_paths: int | None = None,
    threshold: float | None = None,
) -> list[BallTracklet]:
    """Chain detections at consecutive frames into disjoint high-confidence runs."""
    if max_paths is None:
        max_paths = config.max_paths
    if threshold is None:
        threshold = config.min_mean_prob
    step_cap = max(s.max_speed for s in config.states if s.kind != ABSENT)
    items: list[FlowItem] = []
    for frame in sorted(dets.by_frame):
        for idx, d in enumerate(dets.by_frame[frame]):
            items.append(FlowItem(frame, log_odds(d.conf, config.prob_clamp), (frame, idx)))
    moves = []
    for i, it in enumerate(items):
        for j in range(i + 1, len(items)):
            jt = items[j]
            if jt.frame == it.frame:
                continue
            if jt.frame > it.frame + 1:
                break
            a = dets.by_frame[it.frame][it.payload[1]]
            b = dets.by_frame[jt.frame][jt.payload[1]]
            if np.linalg.norm(a.pos - b.pos) <= step_cap:
                moves.append((i, j))
    entry = -math.log(config.ksp_entry_prior)
    paths = min_cost_disjoint_paths(items, moves, entry, entry, max_paths)
    tracklets = []
    for path in paths:
        ds = [dets.by_frame[items[i].payload[0]][items[i].payload[1]] for i in path]
        if len(ds) < config.min_tracklet_len:
            continue
        if float(np.mean([d.conf for d in ds])) < threshold:
            continue
        tracklets.append(BallTracklet(ds))
    return tracklets


# -- motion models -----------------------------------------------------------
#
# Supported per-axis recurrence families:
#   quad:  A=1, B=0, C=0  ->  P_k = p + v*k + F*k*(k-1)/2   (second difference F)
#   const: A=0, B=0, C=1  ->  P_k = F
# A vacuous row leaves the axis unconstrained; a straight line is grown there.


@dataclass
class _AxisModel:
    kind: str   # "quad" or "const"
    f: float
    p: float = 0.0
    v: float = 0.0

    def eval(self, k):
        k = np.asarray(k, dtype=float)
        if self.kind == "const":
            return np.full_like(k, self.f)
        return self.p + self.v * k + self.f * k * (k - 1.0) / 2.0


def _axis_families(config: SceneConfig, state_id: int) -> list[tuple[str, float]]:
    families: dict[int, tuple[str, float]] = {}
    for row in config.physics_for(state_id):
        if row.is_vacuous():
            fam = ("quad", 0.0)
        elif row.a == 1.0 and row.b == 0.0 and row.c == 0.0:
            fam = ("quad", row.f)
        elif row.a == 0.0 and row.b == 0.0 and row.c == 1.0:
            fam = ("const", row.f)
        else:
            raise ConfigError(
                f"state {config.state(state_id).name!r} axis {row.axis}: "
                "row family unsupported for trajectory growing"
            )
        families[row.axis] = fam
    return [families[axis] for axis in range(3)]


def _fit(families, ks: np.ndarray, ys: np.ndarray) -> list[_AxisModel]:
    models = []
    for axis, (kind, f) in enumerate(families):
        if kind == "const":
            models.append(_AxisModel("const", f))
            continue
        resid = ys[:, axis] - f * ks * (ks - 1.0) / 2.0
        design = np.stack([np.ones_like(ks), ks], axis=1)
        (p, v), *_ = np.linalg.lstsq(design, resid, rcond=None)
        models.append(_AxisModel("quad", f, p, v))
    return models


def _eval(models: list[_AxisModel], ks) -> np.ndarray:
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    return np.stack([m.eval(ks) for m in models], axis=1)


def _residual(models, ks, ys) -> float:
    if len(ks) == 0:
        return 0.0
    return float(np.max(np.abs(_eval(models, ks) - ys)))


def _det_key(dets: DetectionSet, d: Detection) -> tuple[int, int]:
    frame_dets = dets.by_frame[d.frame]
    for idx, other in enumerate(frame_dets):
        if other is d or other == d:
            return (d.frame, idx)
    raise GraphError(f"detection at frame {d.frame} not found in its frame")


def grow_trajectories(
    tracklet: BallTracklet, state_id: int, dets: DetectionSet, config: SceneConfig
) -> list[CandidatePath]:
    """Grow candidate paths for one state from one tracklet.

    The tracklet is broken into maximal windows a single model instance
    explains within the band radius, then each window's least-squares fit is
    extended forward and backward, absorbing detections within the band of
    the prediction (with a refit after every absorbing frame). Extension
    stops at the position-bound box, below ground level, when the model's
    per-frame step exceeds the state's speed cap, or after a horizon of
    absorption-free frames. Only paths with maximal absorption sets survive;
    ties keep the lower residual, then the earlier start. A rank-deficient
    fit (all points at one frame) degrades to the least-norm solution, i.e.
    zero velocity.
    """
    families = _axis_families(config, state_id)
    frames = np.array([d.frame for d in tracklet.detections], dtype=float)
    ys = tracklet.positions()
    t0 = frames[0]
    cap = config.state(state_id).max_speed
    n = len(frames)

    def window_ok(i: int, j: int) -> bool:
        ks = frames[i : j + 1] - t0
        models = _fit(families, ks, ys[i : j + 1])
        if _residual(models, ks, ys[i : j + 1]) > config.band_radius:
            return False
        return _max_step(models, ks[0], ks[-1]) <= cap

    # maximal windows a single model instance explains within the band,
    # found by incremental two-pointer extension
    windows: list[tuple[int, int]] = []
    i, j = 0, 1
    while i < n - 1:
        if j <= i:
            j = i + 1
        if j < n and window_ok(i, j):
            j += 1
            continue
        if j - 1 > i and (not windows or j - 1 > windows[-1][1]) and window_ok(i, j - 1):
            windows.append((i, j - 1))
        i += 1

    grown: list[CandidatePath] = []
    for i, j in windows:
        path = _extend_window(tracklet, i, j, families, state_id, dets, config)
        if path is not None:
            grown.append(path)
    return _keep_maximal(grown)


def _max_step(models, k_lo, k_hi) -> float:
    ks = np.arange(k_lo, k_hi + 1, dtype=float)
    if len(ks) < 2:
        return 0.0
    pos = _eval(models, ks)
    return float(np.max(np.linalg.norm(np.diff(pos, axis=0), axis=1)))


def _extend_window(tracklet, i, j, families, state_id, dets, config):
    t0 = tracklet.detections[0].frame
    absorbed: dict[int, list[tuple[tuple[int, int], np.ndarray]]] = {}
    for d in tracklet.detections[i : j + 1]:
        absorbed.setdefault(d.frame, []).append((_det_key(dets, d), d.pos))

    def refit() -> list[_AxisModel]:
        ks, ys = [], []
        for frame, entries in absorbed.items():
            for _, pos in entries:
                ks.append(frame - t0)
                ys.append(pos)
        return _fit(families, np.array(ks, dtype=float), np.array(ys))

    models = refit()
    cap = config.state(state_id).max_speed
    lo, hi = config.p_bounds()
    first = tracklet.detections[i].frame
    last = tracklet.detections[j].frame
    for direction in (1, -1):
        misses = 0
        t = (last if direction == 1 else first) + direction
        while 1 <= t <= dets.n_frames and misses < config.horizon_frames:
            pred = _eval(models, [t - t0])[0]
            prev = _eval(models, [t - t0 - direction])[0]
            if np.linalg.norm(pred - prev) > cap:
                break
            if np.any(pred < lo) or np.any(pred > hi) or pred[2] < config.ground_z:
                break
            hits = [
                (_det_key(dets, d), d.pos)
                for d in dets.at(t)
                if np.all(np.abs(d.pos - pred) <= config.band_radius)
            ]
            if hits:
                absorbed[t] = hits
                models = refit()
                misses = 0
            else:
                misses += 1
            if direction == 1:
                last = t
            else:
                first = t
            t += direction

    # evaluate the final model, then trim ends that violate the invariants
    ks = np.arange(first - t0, last - t0 + 1, dtype=float)
    pos = _eval(models, ks)
    frames = np.arange(first, last + 1)
    keep_lo, keep_hi = 0, len(frames) - 1
    ok = (np.all(pos >= lo, axis=1) & np.all(pos <= hi, axis=1)
          & (pos[:, 2] >= config.ground_z))
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    while keep_lo < keep_hi and (not ok[keep_lo] or steps[keep_lo] > cap):
        keep_lo += 1
    while keep_hi > keep_lo and (not ok[keep_hi] or steps[keep_hi - 1] > cap):
        keep_hi -= 1
    if keep_hi - keep_lo < 1:
        return None
    frames = frames[keep_lo : keep_hi + 1]
    pos = pos[keep_lo : keep_hi + 1]

    keys: set[tuple[int, int]] = set()
    kept_ks, kept_ys = [], []
    for frame, entries in absorbed.items():
        if frames[0] <= frame <= frames[-1]:
            for key, p in entries:
                keys.add(key)
                kept_ks.append(frame - t0)
                kept_ys.append(p)
    if len(keys) < 2:
        return None
    residual = _residual(models, np.array(kept_ks, dtype=float), np.array(kept_ys))
    return CandidatePath(
        state=state_id,
        start=int(frames[0]),
        positions=pos,
        absorbed=frozenset(keys),
        residual=residual,
    )


def _keep_maximal(paths: list[CandidatePath]) -> list[CandidatePath]:
    """Drop paths whose absorbed set is a strict subset of another path's.

    Equal sets keep the lower residual, then the earlier start, then the
    earlier construction order.
    """
    keep = []
    for idx, p in enumerate(paths):
        dominated = False
        for jdx, q in enumerate(paths):
            if idx == jdx:
                continue
            if p.absorbed < q.absorbed:
                dominated = True
                break
            if p.absorbed == q.absorbed:
                pk = (p.residual, p.start, idx)
                qk = (q.residual, q.start, jdx)
                if qk < pk:
                    dominated = True
                    break
        if not dominated:
            keep.append(p)
    return keep


def grow_all(tracklets, dets: DetectionSet, config: SceneConfig) -> list[CandidatePath]:
    """Grow every tracklet under every physics-bound state; keep per-state
    maximal absorption sets globally so joined duplicates collapse."""
    by_state: dict[int, list[CandidatePath]] = {}
    for state in config.states:
        if state.kind != PHYSICS_BOUND:
            continue
        for t in tracklets:
            by_state.setdefault(state.id, []).extend(
                grow_trajectories(t, state.id, dets, config)
            )
    out: list[CandidatePath] = []
    for state in sorted(by_state):
        out.extend(_keep_maximal(by_state[state]))
    return out


# -- graph assembly ----------------------------------------------------------


def assemble_ball_graph(
    paths: list[CandidatePath],
    player_graph: PlayerGraph,
    config: SceneConfig,
    dets: DetectionSet | None = None,
) -> BallGraph:
    """Assemble candidate paths, possession layer, and absent chain.

    Edges: chains inside each path, copies of player-graph edges at carry
    height, one absent-to-absent chain, transitions between different states
    within the source state's speed cap, absent transitions near the court
    border within the located state's speed cap, and source edges to every
    first-frame node. Nodes the source cannot reach, and nodes from which no
    final-frame node can be reached, carry no flow in any feasible solution
    and are pruned. Costs are assigned later from a learned model; when
    detections are given, each located node is annotated with the highest
    detection confidence inside its band box.
    """
    n_frames = player_graph.n_frames
    nodes: list[BallNode] = []
    by_key: dict[tuple, int] = {}
    by_frame: dict[int, list[int]] = {t: [] for t in range(1, n_frames + 1)}

    def add_node(frame, state, pos) -> int:
        key = (frame, state) if pos is None else (
            frame, state, round(pos[0], 9), round(pos[1], 9), round(pos[2], 9)
        )
        nid = by_key.get(key)
        if nid is not None:
            return nid
        nid = len(nodes)
        conf = 0.0
        if pos is not None and dets is not None:
            for d in dets.at(frame):
                if np.all(np.abs(d.pos - pos) <= config.band_radius):
                    conf = max(conf, d.conf)
        nodes.append(BallNode(nid, frame, state, None if pos is None else np.asarray(pos, dtype=float), conf))
        by_key[key] = nid
        by_frame[frame].append(nid)
        return nid

    edges: list[Edge] = []
    seen: set[tuple[int, int]] = set()

    def add_edge(src, dst) -> None:
        if (src, dst) not in seen:
            seen.add((src, dst))
            edges.append(Edge(src, dst))

    for path in paths:
        if path.end > n_frames or path.start < 1:
            raise GraphError(
                f"candidate path spans {path.start}..{path.end}, "
                f"graph has frames 1..{n_frames}"
            )
        ids = [add_node(f, path.state, path.positions[k])
               for k, f in enumerate(path.frames)]
        for u, v in zip(ids, ids[1:]):
            add_edge(u, v)

    # possession layer: player nodes lifted to carry height, player edges copied
    offset = np.array([0.0, 0.0, config.possession_height])
    for state in config.states:
        if state.kind != POSSESSION:
            continue
        mirror = {
            pn.id: add_node(pn.frame, state.id, pn.pos + offset)
            for pn in player_graph.nodes
        }
        for e in player_graph.edges:
            if e.src >= 0 and e.dst >= 0:
                add_edge(mirror[e.src], mirror[e.dst])

    absent = config.absent
    absent_ids = [add_node(t, absent.id, None) for t in range(1, n_frames + 1)]
    for u, v in zip(absent_ids, absent_ids[1:]):
        add_edge(u, v)

    # transitions between different located states, gated by the source cap
    for t in range(1, n_frames):
        for i in by_frame[t]:
            ni = nodes[i]
            if ni.state == absent.id:
                continue
            cap = config.state(ni.state).max_speed
            for j in by_frame[t + 1]:
                nj = nodes[j]
                if nj.state == ni.state or nj.state == absent.id:
                    continue
                if float(np.linalg.norm(ni.pos - nj.pos)) <= cap:
                    add_edge(i, j)

    # appear/disappear near the border, radius from the located endpoint
    for t in range(1, n_frames):
        for j in by_frame[t + 1]:
            nj = nodes[j]
            if nj.state != absent.id and config.near_border(
                nj.pos, config.state(nj.state).max_speed
            ):
                add_edge(absent_ids[t - 1], j)
        for i in by_frame[t]:
            ni = nodes[i]
            if ni.state != absent.id and config.near_border(
                ni.pos, config.state(ni.state).max_speed
            ):
                add_edge(i, absent_ids[t])

    for nid in by_frame[1]:
        add_edge(SOURCE_ID, nid)

    nodes, edges = prune_ball_nodes(nodes, edges, n_frames)
    graph = BallGraph(n_frames, nodes, edges, absent.id)
    graph.validate()
    return graph


def build_ball_graph(
    dets: DetectionSet, player_graph: PlayerGraph, config: SceneConfig
) -> BallGraph:
    """Full pipeline: tracklets, growing, assembly."""
    tracklets = ball_ksp_tracklets(dets, config)
    paths = grow_all(tracklets, dets, config)
    return assemble_ball_graph(paths, player_graph, config, dets)
