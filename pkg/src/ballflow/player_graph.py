"""Build the people flow graph from occupancy probability maps.

Pipeline: KSP tracklet extraction on the grid, Viterbi linking of tracklet
endpoints across detection gaps, then assembly into a time-layered graph with
virtual source/sink. Edge costs are log-odds of occupancy probabilities so
that flow maximization rewards well-supported tracks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SceneConfig
from .errors import GraphError
from .ksp import FlowItem, min_cost_disjoint_paths
from .types import (
    SINK_ID,
    SOURCE_ID,
    Edge,
    OccupancyMap,
    PlayerGraph,
    PlayerNode,
    Tracklet,
)

# moves allowed between consecutive frames: 8-connected neighbours plus stay
NEIGHBOR_OFFSETS = [
    (dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)
]


def log_odds(p: float, clamp: float) -> float:
    p = min(max(p, clamp), 1.0 - clamp)
    return math.log(p / (1.0 - p))


def _check_maps(maps: list[OccupancyMap]) -> None:
    if not maps:
        raise GraphError("no occupancy maps given")
    shape = maps[0].grid.shape
    for m in maps:
        if m.grid.shape != shape:
            raise GraphError(
                f"occupancy grid shape changed at frame {m.frame}: "
                f"{m.grid.shape} != {shape}"
            )
    frames = [m.frame for m in maps]
    if frames != list(range(frames[0], frames[0] + len(maps))):
        raise GraphError("occupancy maps must cover consecutive frames")


def ksp_tracklets(
    maps: list[OccupancyMap],
    config: SceneConfig,
    max_paths: int | None = None,
    threshold: float | None = None,
) -> list[Tracklet]:
    """Extract node-disjoint high-probability grid tracklets.

    Cells whose single-node cost exceeds the combined entry and exit penalty
    are dropped up front; such a cell can never pay for itself, even as a
    bridge, because splitting the path there is always cheaper. The extraction
    is therefore exact over the full grid. Paths shorter than the minimum
    length or with mean probability below the threshold are discarded.
    """
    _check_maps(maps)
    if max_paths is None:
        max_paths = config.max_paths
    if threshold is None:
        threshold = config.min_mean_prob
    entry = -math.log(config.ksp_entry_prior)
    floor = 1.0 / (1.0 + math.exp(2.0 * entry))  # log_odds(floor) == -2*entry
    items: list[FlowItem] = []
    index: dict[tuple[int, int, int], int] = {}
    for m in maps:
        rows, cols = m.grid.shape
        for r in range(rows):
            for c in range(cols):
                p = float(m.grid[r, c])
                if p < floor:
                    continue
                index[(m.frame, r, c)] = len(items)
                items.append(
                    FlowItem(m.frame, log_odds(p, config.prob_clamp), (r, c))
                )
    moves = []
    for (frame, r, c), i in index.items():
        for dr, dc in NEIGHBOR_OFFSETS:
            j = index.get((frame + 1, r + dr, c + dc))
            if j is not None:
                moves.append((i, j))
    paths = min_cost_disjoint_paths(items, moves, entry, entry, max_paths)
    tracklets = []
    for path in paths:
        first = items[path[0]]
        cells = [items[i].payload for i in path]
        probs = [float(maps[items[i].frame - maps[0].frame].grid[items[i].payload]) for i in path]
        if len(cells) < config.min_tracklet_len:
            continue
        if float(np.mean(probs)) < threshold:
            continue
        tracklets.append(Tracklet(first.frame, cells, probs))
    return tracklets


@dataclass
class LinkPath:
    """Cells filling the gap between tracklet a's tail and tracklet b's head."""

    a: int
    b: int
    cells: list[tuple[int, int]]  # frames a.end+1 .. b.start-1, may be empty
    probs: list[float]


def find_links(
    tracklets: list[Tracklet],
    maps: list[OccupancyMap],
    config: SceneConfig,
) -> list[LinkPath]:
    """Find the best grid path between endpoint pairs within the gap window.

    Moves are 8-connected plus stay; paths may pass through occupied cells.
    The path maximizes summed log-odds of the traversed probabilities. A pair
    with no admissible path (gap 0 and cells not adjacent) yields no link.
    """
    _check_maps(maps)
    frame0 = maps[0].frame
    links: list[LinkPath] = []
    for ia, a in enumerate(tracklets):
        for ib, b in enumerate(tracklets):
            if ia == ib:
                continue
            gap = b.start - a.end - 1  # intermediate frame count
            if gap < 0 or b.start - a.end > config.gap_window:
                continue
            ra, ca = a.cells[-1]
            rb, cb = b.cells[0]
            if gap == 0:
                if max(abs(ra - rb), abs(ca - cb)) <= 1:
                    links.append(LinkPath(ia, ib, [], []))
                continue
            cells, probs = _grid_viterbi(
                maps, frame0, (ra, ca), a.end, (rb, cb), b.start, config
            )
            if cells is not None:
                links.append(LinkPath(ia, ib, cells, probs))
    return links


def _grid_viterbi(maps, frame0, start_cell, start_frame, end_cell, end_frame, config):
    grid_shape = maps[0].grid.shape
    neg_inf = -np.inf
    score = np.full(grid_shape, neg_inf)
    score[start_cell] = 0.0
    back: list[np.ndarray] = []
    for t in range(start_frame + 1, end_frame):
        m = maps[t - frame0].grid
        best = np.full(grid_shape, neg_inf)
        choice = np.zeros(grid_shape, dtype=np.int8)
        for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
            shifted = _shift(score, dr, dc)
            better = shifted > best
            best[better] = shifted[better]
            choice[better] = k
        score = best + _log_odds_grid(m, config.prob_clamp)
        back.append(choice)
    # final hop into the fixed end cell
    final = neg_inf
    final_k = -1
    for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        r, c = end_cell[0] - dr, end_cell[1] - dc
        if 0 <= r < grid_shape[0] and 0 <= c < grid_shape[1] and score[r, c] > final:
            final = score[r, c]
            final_k = k
    if not np.isfinite(final):
        return None, None
    cells = []
    r, c = end_cell[0] - NEIGHBOR_OFFSETS[final_k][0], end_cell[1] - NEIGHBOR_OFFSETS[final_k][1]
    for t in range(end_frame - 1, start_frame, -1):
        cells.append((r, c))
        k = back[t - start_frame - 1][r, c]
        dr, dc = NEIGHBOR_OFFSETS[k]
        r, c = r - dr, c - dc
    cells.reverse()
    probs = [float(maps[t - frame0].grid[cell])
             for t, cell in zip(range(start_frame + 1, end_frame), cells)]
    return cells, probs


def _log_odds_grid(grid: np.ndarray, clamp: float) -> np.ndarray:
    p = np.clip(grid, clamp, 1.0 - clamp)
    return np.log(p / (1.0 - p))


def _shift(a: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Shift with -inf fill: out[r, c] = a[r - dr, c - dc]."""
    out = np.full_like(a, -np.inf)
    rows, cols = a.shape
    src_r = slice(max(0, -dr), rows - max(0, dr))
    dst_r = slice(max(0, dr), rows - max(0, -dr))
    src_c = slice(max(0, -dc), cols - max(0, dc))
    dst_c = slice(max(0, dc), cols - max(0, -dc))
    out[dst_r, dst_c] = a[src_r, src_c]
    return out


def assemble_player_graph(
    tracklets: list[Tracklet],
    links: list[LinkPath],
    maps: list[OccupancyMap],
    config: SceneConfig,
) -> PlayerGraph:
    """Assemble tracklets and links into the people flow graph.

    Nodes are deduplicated by (frame, cell) so capacity constraints see one
    node per location. Every edge into a node costs the log-odds of that
    node's occupancy probability; source and sink edges exist only at
    tracklet heads and tails and add a fixed entry penalty.
    """
    _check_maps(maps)
    cell_size = maps[0].cell_size
    nodes: list[PlayerNode] = []
    by_key: dict[tuple[int, tuple[int, int]], int] = {}

    def node_at(frame: int, cell: tuple[int, int], prob: float) -> int:
        # cell is (row, col) grid indexing; stored nodes use (cell_x, cell_y)
        key = (frame, cell)
        nid = by_key.get(key)
        if nid is not None:
            return nid
        nid = len(nodes)
        r, c = cell
        nodes.append(PlayerNode(nid, frame, (c, r), maps[0].cell_center(c, r), prob))
        by_key[key] = nid
        return nid

    chains: list[list[int]] = []
    for t in tracklets:
        ids = [node_at(t.start + k, cell, prob)
               for k, (cell, prob) in enumerate(zip(t.cells, t.probs))]
        chains.append(ids)

    edges: list[Edge] = []
    seen: set[tuple[int, int]] = set()

    def add_edge(src: int, dst: int) -> None:
        if (src, dst) in seen:
            return
        seen.add((src, dst))
        edges.append(Edge(src, dst))

    for ids in chains:
        for u, v in zip(ids, ids[1:]):
            add_edge(u, v)
        add_edge(SOURCE_ID, ids[0])
        add_edge(ids[-1], SINK_ID)
    for link in links:
        a = tracklets[link.a]
        ids = [chains[link.a][-1]]
        for k, (cell, prob) in enumerate(zip(link.cells, link.probs)):
            ids.append(node_at(a.end + 1 + k, cell, prob))
        ids.append(chains[link.b][0])
        for u, v in zip(ids, ids[1:]):
            add_edge(u, v)

    graph = PlayerGraph(len(maps), nodes, edges)
    graph.validate()
    return player_edge_costs(graph, config)


def player_edge_costs(
    graph: PlayerGraph,
    config: SceneConfig,
    maps: list[OccupancyMap] | None = None,
) -> PlayerGraph:
    """Assign flow rewards: every edge into node j pays j's detection log-odds.

    Probabilities are clamped before the log-odds. Source edges add the entry
    penalty on top of the first node's log-odds; sink edges carry the exit
    penalty alone. When maps are given, node probabilities are refreshed from
    the grids first.
    """
    if maps is not None:
        _check_maps(maps)
        frame0 = maps[0].frame
        for i, nd in enumerate(graph.nodes):
            cx, cy = nd.cell
            prob = float(maps[nd.frame - frame0].grid[cy, cx])
            graph.nodes[i] = PlayerNode(nd.id, nd.frame, nd.cell, nd.pos, prob)
    penalty = math.log(config.entry_prior)
    for e in graph.edges:
        if e.dst == SINK_ID:
            e.cost = penalty
        elif e.src == SOURCE_ID:
            e.cost = penalty + log_odds(graph.nodes[e.dst].prob, config.prob_clamp)
        else:
            e.cost = log_odds(graph.nodes[e.dst].prob, config.prob_clamp)
    return graph


def viterbi_link(
    tracklets: list[Tracklet],
    maps: list[OccupancyMap],
    config: SceneConfig,
) -> PlayerGraph:
    """Link tracklets over detection gaps and assemble the costed graph."""
    links = find_links(tracklets, maps, config)
    return assemble_player_graph(tracklets, links, maps, config)


def build_player_graph(maps: list[OccupancyMap], config: SceneConfig) -> PlayerGraph:
    """Full pipeline: tracklets, links, assembly with costs."""
    return viterbi_link(ksp_tracklets(maps, config), maps, config)


@dataclass
class PlayerTrack:
    """One solved person track: consecutive frames with ground positions."""

    start: int
    node_ids: list[int]
    positions: np.ndarray  # (len, 2)

    @property
    def end(self) -> int:
        return self.start + len(self.node_ids) - 1

    def position_at(self, frame: int):
        if self.start <= frame <= self.end:
            return self.positions[frame - self.start]
        return None


def solve_people(graph: PlayerGraph, config: SceneConfig) -> list[PlayerTrack]:
    """Solve the people flow alone: optimal node-disjoint track set.

    Equivalent to the people part of the joint program without the coupling:
    unit capacities, flow conservation, total edge cost maximized. Used in
    sequential mode and to derive fixed player positions.
    """
    n = len(graph.nodes)
    items = [FlowItem(nd.frame, log_odds(nd.prob, config.prob_clamp), nd.id)
             for nd in graph.nodes]
    entry = np.full(n, np.inf)
    exit_ = np.full(n, np.inf)
    moves = []
    n_entries = 0
    for e in graph.edges:
        if e.src == SOURCE_ID:
            entry[e.dst] = -math.log(config.entry_prior)
            n_entries += 1
        elif e.dst == SINK_ID:
            exit_[e.src] = -math.log(config.entry_prior)
        else:
            moves.append((e.src, e.dst))
    paths = min_cost_disjoint_paths(items, moves, entry, exit_, max(n_entries, 1))
    tracks = []
    for path in paths:
        node_ids = [items[i].payload for i in path]
        positions = np.array([graph.nodes[nid].pos[:2] for nid in node_ids])
        tracks.append(PlayerTrack(items[path[0]].frame, node_ids, positions))
    return tracks
