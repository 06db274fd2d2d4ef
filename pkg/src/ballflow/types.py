"""Core domain types: states, detections, occupancy maps, graphs, trajectories.

Coordinates are right-handed with z up, SI meters, origin at a court corner.
Frames are 1-based. Velocities and speed caps are meters per frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError

# Virtual endpoint ids shared by graph builders, solvers, and file writers.
SOURCE_ID = -1  # S_b (ball) or S_p (players)
SINK_ID = -2    # T_p (players only; the ball flow has no explicit sink)

# State kinds.
PHYSICS_BOUND = "physics_bound"
POSSESSION = "possession"
ABSENT = "absent"
STATE_KINDS = (PHYSICS_BOUND, POSSESSION, ABSENT)


@dataclass(frozen=True)
class BallState:
    """One discrete ball state."""

    id: int
    name: str
    kind: str
    max_speed: float  # D^s, meters per frame; also the border-vicinity radius


@dataclass(frozen=True)
class Detection:
    """A single ball detection: position plus detector confidence."""

    frame: int
    x: float
    y: float
    z: float
    conf: float

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass
class DetectionSet:
    """Detections grouped by frame; within-frame order is file order."""

    n_frames: int
    by_frame: dict[int, list[Detection]] = field(default_factory=dict)

    def at(self, frame: int) -> list[Detection]:
        return self.by_frame.get(frame, [])

    def all(self) -> list[Detection]:
        out: list[Detection] = []
        for frame in sorted(self.by_frame):
            out.extend(self.by_frame[frame])
        return out

    def __len__(self) -> int:
        return sum(len(v) for v in self.by_frame.values())


@dataclass
class OccupancyMap:
    """Ground-plane people-detector output for one frame.

    grid[row, col] is the probability that cell (cell_x=col, cell_y=row)
    is occupied. Cell centers sit at ((col + .5) * cell_size, (row + .5) * cell_size).
    """

    frame: int
    grid: np.ndarray  # (rows, cols) float64 in [0, 1]
    cell_size: float  # meters

    def cell_center(self, cx: int, cy: int) -> np.ndarray:
        return np.array([(cx + 0.5) * self.cell_size, (cy + 0.5) * self.cell_size, 0.0])


@dataclass(frozen=True)
class BallNode:
    """Ball-graph node: a located state hypothesis at one frame.

    Absent-state nodes carry no location (pos is None).
    """

    id: int
    frame: int
    state: int
    pos: np.ndarray | None
    conf: float = 0.0  # detector confidence attached to the location, 0 if hypothesized


@dataclass(frozen=True)
class PlayerNode:
    """Player-graph node: one grid location at one frame."""

    id: int
    frame: int
    cell: tuple[int, int]  # (cell_x, cell_y)
    pos: np.ndarray        # ground plane, z = 0
    prob: float            # detector probability at this cell


@dataclass
class Edge:
    """Directed edge; cost is the log-domain reward for routing flow through it."""

    src: int
    dst: int
    cost: float = 0.0


@dataclass
class PlayerGraph:
    """Time-layered people-flow graph with virtual S_p (-1) and T_p (-2)."""

    n_frames: int
    nodes: list[PlayerNode]
    edges: list[Edge]

    def validate(self) -> None:
        _check_layering(self.nodes, self.edges, allow_sink=True)


@dataclass
class BallGraph:
    """Time-layered ball-flow graph with virtual source S_b (-1).

    Every frame has exactly one absent-state node, so an all-absent path
    from S_b through frame n_frames always exists.
    """

    n_frames: int
    nodes: list[BallNode]
    edges: list[Edge]
    absent_state: int

    def validate(self) -> None:
        _check_layering(self.nodes, self.edges, allow_sink=False)
        per_frame_absent = {t: 0 for t in range(1, self.n_frames + 1)}
        for node in self.nodes:
            if not 1 <= node.frame <= self.n_frames:
                raise GraphError(f"node {node.id} frame {node.frame} outside 1..{self.n_frames}")
            if node.state == self.absent_state:
                per_frame_absent[node.frame] += 1
        bad = [t for t, k in per_frame_absent.items() if k != 1]
        if bad:
            raise GraphError(f"frames {bad[:5]} do not have exactly one absent node")
        fwd: dict[int, list[int]] = {}
        for e in self.edges:
            fwd.setdefault(e.src, []).append(e.dst)
        reach: set[int] = set()
        stack = list(fwd.get(SOURCE_ID, []))
        while stack:
            v = stack.pop()
            if v not in reach:
                reach.add(v)
                stack.extend(fwd.get(v, []))
        orphans = [n.id for n in self.nodes if n.id not in reach]
        if orphans:
            raise GraphError(f"nodes {orphans[:5]} unreachable from the source")


def _check_layering(nodes, edges, allow_sink: bool) -> None:
    """Edges must advance time by exactly one frame; ids must index the node list."""
    for i, node in enumerate(nodes):
        if node.id != i:
            raise GraphError(f"node id {node.id} does not match its index {i}")
    frame_of = {n.id: n.frame for n in nodes}
    for e in edges:
        if e.src == SOURCE_ID:
            continue  # source edges may enter any frame
        if allow_sink and e.dst == SINK_ID:
            continue
        if e.src not in frame_of or e.dst not in frame_of:
            raise GraphError(f"edge ({e.src}, {e.dst}) references unknown node")
        if frame_of[e.dst] != frame_of[e.src] + 1:
            raise GraphError(
                f"edge ({e.src}, {e.dst}) spans frames "
                f"{frame_of[e.src]} -> {frame_of[e.dst]}, expected +1"
            )


def prune_ball_nodes(nodes: list[BallNode], edges: list[Edge], n_frames: int):
    """Drop nodes unreachable from the source or unable to reach the last frame.

    Such nodes carry zero flow in every feasible solution, so removing them
    preserves the optimum. Ids are re-densified; edges touching dropped nodes
    vanish.
    """
    fwd: dict[int, list[int]] = {}
    bwd: dict[int, list[int]] = {}
    for e in edges:
        fwd.setdefault(e.src, []).append(e.dst)
        bwd.setdefault(e.dst, []).append(e.src)

    reach: set[int] = set()
    stack = list(fwd.get(SOURCE_ID, []))
    while stack:
        v = stack.pop()
        if v not in reach:
            reach.add(v)
            stack.extend(fwd.get(v, []))
    alive: set[int] = set()
    stack = [n.id for n in nodes if n.frame == n_frames and n.id in reach]
    while stack:
        v = stack.pop()
        if v in alive or v == SOURCE_ID:
            continue
        alive.add(v)
        stack.extend(u for u in bwd.get(v, []) if u in reach)

    if len(alive) == len(nodes):
        return nodes, edges
    remap: dict[int, int] = {}
    kept_nodes: list[BallNode] = []
    for n in nodes:
        if n.id in alive:
            remap[n.id] = len(kept_nodes)
            kept_nodes.append(BallNode(len(kept_nodes), n.frame, n.state, n.pos, n.conf))
    kept_edges = []
    for e in edges:
        if e.src == SOURCE_ID and e.dst in remap:
            kept_edges.append(Edge(SOURCE_ID, remap[e.dst], e.cost))
        elif e.src in remap and e.dst in remap:
            kept_edges.append(Edge(remap[e.src], remap[e.dst], e.cost))
    return kept_nodes, kept_edges


@dataclass
class Tracklet:
    """High-confidence player path fragment over consecutive frames."""

    start: int
    cells: list[tuple[int, int]]
    probs: list[float]

    @property
    def end(self) -> int:
        return self.start + len(self.cells) - 1

    @property
    def frames(self) -> range:
        return range(self.start, self.end + 1)


@dataclass
class BallTracklet:
    """High-confidence chain of ball detections over consecutive frames."""

    detections: list[Detection]

    @property
    def start(self) -> int:
        return self.detections[0].frame

    @property
    def end(self) -> int:
        return self.detections[-1].frame

    def positions(self) -> np.ndarray:
        return np.array([[d.x, d.y, d.z] for d in self.detections])


@dataclass
class CandidatePath:
    """A physics-grown ball path hypothesis for one state.

    positions[i] is the (possibly hypothesized) location at frames[0] + i.
    absorbed holds (frame, index-within-frame) keys of the detections the
    path explains; residual is the largest per-axis deviation of any
    absorbed detection from the fitted model.
    """

    state: int
    start: int
    positions: np.ndarray  # (n, 3)
    absorbed: frozenset[tuple[int, int]]
    residual: float

    @property
    def end(self) -> int:
        return self.start + len(self.positions) - 1

    @property
    def frames(self) -> range:
        return range(self.start, self.end + 1)


@dataclass
class GroundTruth:
    """Per-frame true ball state/position, possession attribution, player tracks."""

    n_frames: int
    states: list[int]                      # state id per frame, index 0 = frame 1
    positions: list[np.ndarray | None]     # ball position, None when absent
    possessor: list[str | None]            # player id when in a possession state
    players: dict[str, np.ndarray]         # id -> (n_frames, 2) ground-plane track

    def player_pos(self, player: str, frame: int) -> np.ndarray:
        xy = self.players[player][frame - 1]
        return np.array([xy[0], xy[1], 0.0])


@dataclass
class FrameEstimate:
    """One frame of a reconstructed trajectory."""

    frame: int
    state: int
    x: np.ndarray | None   # X^t, the selected node location (None when absent)
    p: np.ndarray | None   # P^t, continuous refined position (None when absent)
    player: str | None = None  # possessing player attribution, when known


@dataclass
class BallTrajectory:
    """Reconstructed ball track: one FrameEstimate per frame, 1..n_frames."""

    frames: list[FrameEstimate]

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def states(self) -> list[int]:
        return [f.state for f in self.frames]


@dataclass
class LabeledSequence:
    """A rendered scenario bundled with its ground truth, used for training."""

    detections: DetectionSet
    occupancy: list[OccupancyMap]
    truth: GroundTruth
