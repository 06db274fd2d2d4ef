"""People graph construction: tracklets, linking, costs, flow feasibility."""
import math

import networkx as nx
import numpy as np
import pytest

from ballflow.config import standard_config
from ballflow.io import read_player_graph, write_player_graph
from ballflow.ksp import FlowItem
from ballflow.player_graph import (
    NEIGHBOR_OFFSETS,
    assemble_player_graph,
    build_player_graph,
    find_links,
    ksp_tracklets,
    log_odds,
    player_edge_costs,
    solve_people,
    viterbi_link,
)
from ballflow.types import SINK_ID, SOURCE_ID, OccupancyMap, Tracklet

from helpers.oracles import best_grid_path, ilp_disjoint_paths


@pytest.fixture
def cfg():
    return standard_config("volleyball")


def _maps(grids, cell_size=0.5, first_frame=1):
    return [
        OccupancyMap(first_frame + k, np.asarray(g, dtype=float), cell_size)
        for k, g in enumerate(grids)
    ]


# -- tracklet extraction ---------------------------------------------------------


def test_stationary_blob_single_tracklet(cfg):
    grids = []
    for _ in range(10):
        g = np.zeros((4, 4))
        g[2, 1] = 0.95
        grids.append(g)
    tracklets = ksp_tracklets(_maps(grids), cfg)
    assert len(tracklets) == 1
    t = tracklets[0]
    assert t.start == 1
    assert t.cells == [(2, 1)] * 10
    assert t.probs == [0.95] * 10


def test_all_zero_maps_no_tracklets(cfg):
    tracklets = ksp_tracklets(_maps([np.zeros((4, 4))] * 6), cfg)
    assert tracklets == []


def test_parallel_blobs_two_disjoint_tracklets(cfg):
    # two non-crossing walkers on a 4x4 grid over 5 frames
    a_cells = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 3)]
    b_cells = [(3, 0), (3, 1), (3, 2), (2, 2), (2, 3)]
    grids = []
    for k in range(5):
        g = np.zeros((4, 4))
        g[a_cells[k]] = 0.9
        g[b_cells[k]] = 0.85
        grids.append(g)
    tracklets = ksp_tracklets(_maps(grids), cfg)
    assert len(tracklets) == 2
    got = sorted([t.cells for t in tracklets])
    assert got == sorted([a_cells, b_cells])

    # cross-check total reward against the exhaustive ILP on the same instance
    entry = -math.log(cfg.ksp_entry_prior)
    items = []
    index = {}
    for t, g in enumerate(grids):
        for r in range(4):
            for c in range(4):
                if g[r, c] > 0:
                    index[(t, r, c)] = len(items)
                    items.append(FlowItem(t + 1, log_odds(g[r, c], cfg.prob_clamp), (r, c)))
    moves = []
    for (t, r, c), i in index.items():
        for dr, dc in NEIGHBOR_OFFSETS:
            j = index.get((t + 1, r + dr, c + dc))
            if j is not None:
                moves.append((i, j))
    want_cost, want_n = ilp_disjoint_paths(items, moves, entry, entry, cfg.max_paths)
    got_reward = sum(log_odds(p, cfg.prob_clamp) for t in tracklets for p in t.probs)
    assert 2 * entry * len(tracklets) - got_reward == pytest.approx(want_cost, abs=1e-9)
    assert want_n == 2


def test_low_mean_probability_tracklets_dropped(cfg):
    # a weak middle cell is worth bridging for the flow, but the mean filter
    # still gets a say afterwards
    probs = [0.95, 0.3, 0.95]
    grids = []
    for p in probs:
        g = np.zeros((3, 3))
        g[1, 1] = p
        grids.append(g)
    kept = ksp_tracklets(_maps(grids), cfg)
    assert len(kept) == 1
    assert kept[0].probs == probs
    assert ksp_tracklets(_maps(grids), cfg, threshold=0.8) == []


def test_sub_half_blob_never_pays_for_itself(cfg):
    # log-odds below one half are negative, so no path can beat its own
    # entry and exit penalties no matter how long it runs
    grids = []
    for _ in range(6):
        g = np.zeros((3, 3))
        g[1, 1] = 0.45
        grids.append(g)
    assert ksp_tracklets(_maps(grids), cfg, threshold=0.0) == []


def test_single_frame_tracklets_dropped(cfg):
    g = np.zeros((3, 3))
    g[0, 0] = 0.99
    grids = [g, np.zeros((3, 3)), np.zeros((3, 3))]
    assert ksp_tracklets(_maps(grids), cfg) == []


# -- linking ---------------------------------------------------------------------


def test_link_follows_probability_ridge(cfg):
    # gap frames carry a bright ridge along row 1; the best path must follow it
    blank = np.zeros((4, 4))
    head = blank.copy()
    head[1, 0] = 0.95
    tail = blank.copy()
    tail[1, 3] = 0.95
    ridge = []
    for k in (1, 2):
        g = np.full((4, 4), 0.05)
        g[1, k] = 0.8
        ridge.append(g)
    maps = _maps([head, head, ridge[0], ridge[1], tail, tail])
    tracklets = [
        Tracklet(1, [(1, 0), (1, 0)], [0.95, 0.95]),
        Tracklet(5, [(1, 3), (1, 3)], [0.95, 0.95]),
    ]
    links = find_links(tracklets, maps, cfg)
    assert len(links) == 1
    assert links[0].cells == [(1, 1), (1, 2)]

    # exhaustive check over every 4-frame path between the fixed endpoints
    grids = [head, ridge[0], ridge[1], tail]
    best, _ = best_grid_path(grids, (1, 0), (1, 3), NEIGHBOR_OFFSETS)
    assert links[0].cells == best[1:-1]


def test_zero_tracklets_empty_graph(cfg):
    maps = _maps([np.zeros((3, 3))] * 4)
    graph = viterbi_link([], maps, cfg)
    assert graph.nodes == []
    assert graph.edges == []


def test_single_tracklet_chain_with_entry_and_exit(cfg):
    g = np.zeros((3, 3))
    g[1, 1] = 0.9
    maps = _maps([g] * 3)
    t = Tracklet(1, [(1, 1)] * 3, [0.9] * 3)
    graph = viterbi_link([t], maps, cfg)
    assert len(graph.nodes) == 3
    kinds = {(e.src, e.dst) for e in graph.edges}
    assert (SOURCE_ID, 0) in kinds
    assert (2, SINK_ID) in kinds
    assert (0, 1) in kinds and (1, 2) in kinds
    assert len(graph.edges) == 4


def test_gap_zero_links_only_adjacent_cells(cfg):
    g = np.zeros((4, 4))
    maps = _maps([g] * 4)
    a = Tracklet(1, [(0, 0), (0, 1)], [0.9, 0.9])
    b_adjacent = Tracklet(3, [(1, 2), (1, 3)], [0.9, 0.9])
    b_far = Tracklet(3, [(3, 3), (3, 3)], [0.9, 0.9])
    links = find_links([a, b_adjacent], maps, cfg)
    assert [(l.a, l.b) for l in links] == [(0, 1)]
    assert links[0].cells == []
    assert find_links([a, b_far], maps, cfg) == []


# -- costs -----------------------------------------------------------------------


def test_edge_cost_is_log_odds_of_destination(cfg):
    assert log_odds(0.5, cfg.prob_clamp) == 0.0
    assert log_odds(0.9, cfg.prob_clamp) == pytest.approx(math.log(9.0), abs=1e-12)
    eps = cfg.prob_clamp
    assert log_odds(1.0, eps) == pytest.approx(math.log((1 - eps) / eps), rel=1e-9)


def test_costed_graph_edges(cfg):
    g = np.zeros((3, 3))
    g[1, 1] = 0.9
    g2 = np.zeros((3, 3))
    g2[1, 2] = 0.5
    maps = _maps([g, g2])
    t = Tracklet(1, [(1, 1), (1, 2)], [0.9, 0.5])
    graph = viterbi_link([t], maps, cfg)
    costs = {(e.src, e.dst): e.cost for e in graph.edges}
    penalty = math.log(cfg.entry_prior)
    assert costs[(SOURCE_ID, 0)] == pytest.approx(penalty + math.log(9.0))
    assert costs[(0, 1)] == pytest.approx(0.0)  # log-odds of one half
    assert costs[(1, SINK_ID)] == pytest.approx(penalty)


def test_player_edge_costs_refreshes_probs_from_maps(cfg):
    g = np.zeros((3, 3))
    g[1, 1] = 0.9
    maps = _maps([g, g])
    t = Tracklet(1, [(1, 1), (1, 1)], [0.5, 0.5])  # stale probabilities
    graph = viterbi_link([t], maps, cfg)
    graph = player_edge_costs(graph, cfg, maps=maps)
    assert graph.nodes[0].prob == pytest.approx(0.9)
    costs = {(e.src, e.dst): e.cost for e in graph.edges}
    assert costs[(0, 1)] == pytest.approx(math.log(9.0))


# -- flow feasibility and end-to-end ----------------------------------------------


def _unit_flow_feasible(graph, demand):
    """Max-flow on the node-split network must move `demand` units S_p -> T_p."""
    G = nx.DiGraph()
    for nd in graph.nodes:
        G.add_edge(("in", nd.id), ("out", nd.id), capacity=1)
    for e in graph.edges:
        if e.src == SOURCE_ID:
            G.add_edge("S", ("in", e.dst), capacity=1)
        elif e.dst == SINK_ID:
            G.add_edge(("out", e.src), "T", capacity=1)
        else:
            G.add_edge(("out", e.src), ("in", e.dst), capacity=1)
    if "S" not in G or "T" not in G:
        return demand == 0
    return nx.maximum_flow_value(G, "S", "T") >= demand


def test_unit_flow_exists_for_every_tracklet(cfg):
    rng = np.random.default_rng(11)
    for _ in range(10):
        grids = np.clip(rng.uniform(-0.4, 0.6, size=(6, 4, 4)), 0.0, 1.0)
        # plant two strong walks
        r1, r2 = 0, 3
        for t in range(6):
            grids[t, r1, min(t, 3)] = 0.95
            grids[t, r2, max(0, 3 - t)] = 0.9
        maps = _maps(list(grids))
        tracklets = ksp_tracklets(maps, cfg)
        graph = viterbi_link(tracklets, maps, cfg)
        assert _unit_flow_feasible(graph, len(tracklets))


def test_ksp_matches_ilp_on_random_grids(cfg):
    rng = np.random.default_rng(5)
    entry = -math.log(cfg.ksp_entry_prior)
    for trial in range(12):
        n_frames = int(rng.integers(2, 6))
        shape = (int(rng.integers(2, 5)), int(rng.integers(2, 5)))  # at most 16 cells
        grids = np.where(
            rng.random((n_frames,) + shape) < 0.3,
            rng.uniform(0.5, 1.0, (n_frames,) + shape),
            0.0,
        )
        maps = _maps(list(grids))
        got = ksp_tracklets(maps, cfg, threshold=0.0)
        items = []
        index = {}
        for t in range(n_frames):
            for r in range(shape[0]):
                for c in range(shape[1]):
                    p = grids[t, r, c]
                    if p > 0:
                        index[(t, r, c)] = len(items)
                        items.append(FlowItem(t + 1, log_odds(p, cfg.prob_clamp), (r, c)))
        moves = []
        for (t, r, c), i in index.items():
            for dr, dc in NEIGHBOR_OFFSETS:
                j = index.get((t + 1, r + dr, c + dc))
                if j is not None:
                    moves.append((i, j))
        want_cost, _ = ilp_disjoint_paths(items, moves, entry, entry, cfg.max_paths)
        # compare total objective: tracklets below min length were filtered, so
        # rebuild the raw reward from the kept ones plus any length-1 paths
        raw = ksp_tracklets(maps, cfg, threshold=0.0)
        # recompute via the flow module on identical items for a clean comparison
        from ballflow.ksp import min_cost_disjoint_paths

        paths = min_cost_disjoint_paths(items, moves, entry, entry, cfg.max_paths)
        got_cost = sum(
            2 * entry - sum(items[i].reward for i in p) for p in paths
        )
        assert got_cost == pytest.approx(want_cost, abs=1e-8), f"trial {trial}"


def test_solve_people_recovers_two_tracks(cfg):
    grids = []
    for t in range(5):
        g = np.zeros((4, 4))
        g[0, min(t, 3)] = 0.95
        g[3, min(t, 3)] = 0.9
        grids.append(g)
    maps = _maps(grids)
    graph = build_player_graph(maps, cfg)
    tracks = solve_people(graph, cfg)
    assert len(tracks) == 2
    for tr in tracks:
        assert tr.start == 1
        assert tr.end == 5
        assert tr.positions.shape == (5, 2)
    rows = sorted(graph.nodes[tr.node_ids[0]].cell[1] for tr in tracks)
    assert rows == [0, 3]


def test_player_graph_file_round_trip(tmp_path, cfg):
    g = np.zeros((3, 3))
    g[1, 1] = 0.9
    g2 = np.zeros((3, 3))
    g2[1, 2] = 0.8
    maps = _maps([g, g2])
    t = Tracklet(1, [(1, 1), (1, 2)], [0.9, 0.8])
    graph = viterbi_link([t], maps, cfg)
    p = tmp_path / "pg.txt"
    write_player_graph(graph, maps[0].cell_size, str(p))
    back, cell_size = read_player_graph(str(p))
    assert cell_size == maps[0].cell_size
    assert back.n_frames == graph.n_frames
    assert [(n.id, n.frame, n.cell) for n in back.nodes] == [
        (n.id, n.frame, n.cell) for n in graph.nodes
    ]
    assert [(e.src, e.dst) for e in back.edges] == [(e.src, e.dst) for e in graph.edges]
    for a, b in zip(back.edges, graph.edges):
        assert a.cost == pytest.approx(b.cost, rel=1e-8)
    for a, b in zip(back.nodes, graph.nodes):
        assert a.prob == pytest.approx(b.prob, rel=1e-6)
        assert a.pos == pytest.approx(b.pos)
