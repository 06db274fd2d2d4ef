"""Readers and writers for the on-disk formats.

All numeric fields are serialized with 9 significant digits; parsers accept
any finite decimal. Readers raise FormatError with path and 1-based line
number on schema violations.

Formats:
  detections.csv   header ``frame,x,y,z,conf``, one row per detection
  occupancy.txt    per-frame blocks: ``frame,rows,cols,cell_size`` header line
                   followed by ``rows`` lines of ``cols`` comma-separated cells
                   (row-major)
  trajectory.csv   header ``frame,state,x,y,z,px,py,pz``; x..z is the selected
                   node location X^t, px..pz the continuous refinement P^t;
                   absent frames leave every position field empty
  truth.csv        header ``frame,state,x,y,z,player``
  players.csv      header ``frame,player,x,y``
  player graph     sections ``nodes`` (id,frame,cell_x,cell_y) and ``edges``
                   (from,to,cost); virtual S_p/T_p are -1/-2 and never listed
  ball graph       sections ``nodes`` (id,frame,state,x,y,z) and ``edges``
                   (from,to); virtual S_b is -1 and never listed
"""
from __future__ import annotations

import math
import os

import numpy as np

from .config import SceneConfig
from .errors import FormatError
from .types import (
    BallGraph,
    BallNode,
    BallTrajectory,
    Detection,
    DetectionSet,
    Edge,
    FrameEstimate,
    GroundTruth,
    LabeledSequence,
    OccupancyMap,
    PlayerGraph,
    PlayerNode,
)


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def _parse_float(s: str, path: str, line: int, what: str) -> float:
    try:
        v = float(s)
    except ValueError as exc:
        raise FormatError(f"{what}: not a number: {s!r}", path, line) from exc
    if not math.isfinite(v):
        raise FormatError(f"{what}: not finite: {s!r}", path, line)
    return v


def _parse_int(s: str, path: str, line: int, what: str) -> int:
    try:
        return int(s)
    except ValueError as exc:
        raise FormatError(f"{what}: not an integer: {s!r}", path, line) from exc


def _read_lines(path: str) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc}", path) from exc


def _expect_header(lines: list[str], expected: str, path: str) -> None:
    if not lines or lines[0].strip() != expected:
        got = lines[0].strip() if lines else "<empty file>"
        raise FormatError(f"expected header {expected!r}, got {got!r}", path, 1)


# -- detections ---------------------------------------------------------------

DETECTIONS_HEADER = "frame,x,y,z,conf"


def write_detections(dets: DetectionSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DETECTIONS_HEADER + "\n")
        for frame in sorted(dets.by_frame):
            for d in dets.by_frame[frame]:
                fh.write(f"{d.frame},{_fmt(d.x)},{_fmt(d.y)},{_fmt(d.z)},{_fmt(d.conf)}\n")


def read_detections(path: str, n_frames: int | None = None) -> DetectionSet:
    lines = _read_lines(path)
    _expect_header(lines, DETECTIONS_HEADER, path)
    by_frame: dict[int, list[Detection]] = {}
    for i, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 5:
            raise FormatError(f"expected 5 fields, got {len(parts)}", path, i)
        frame = _parse_int(parts[0], path, i, "frame")
        if frame < 1:
            raise FormatError(f"frame must be >= 1, got {frame}", path, i)
        x = _parse_float(parts[1], path, i, "x")
        y = _parse_float(parts[2], path, i, "y")
        z = _parse_float(parts[3], path, i, "z")
        conf = _parse_float(parts[4], path, i, "conf")
        if not 0.0 <= conf <= 1.0:
            raise FormatError(f"conf must lie in [0, 1], got {conf}", path, i)
        by_frame.setdefault(frame, []).append(Detection(frame, x, y, z, conf))
    if n_frames is None:
        n_frames = max(by_frame) if by_frame else 0
    return DetectionSet(n_frames=n_frames, by_frame=by_frame)


# -- occupancy ----------------------------------------------------------------


def write_occupancy(maps: list[OccupancyMap], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in sorted(maps, key=lambda m: m.frame):
            rows, cols = m.grid.shape
            fh.write(f"{m.frame},{rows},{cols},{_fmt(m.cell_size)}\n")
            for r in range(rows):
                fh.write(",".join(_fmt(v) for v in m.grid[r]) + "\n")


def read_occupancy(path: str) -> list[OccupancyMap]:
    lines = _read_lines(path)
    maps: list[OccupancyMap] = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        header = lines[i].split(",")
        if len(header) != 4:
            raise FormatError(
                f"block header must be frame,rows,cols,cell_size, got {lines[i]!r}", path, i + 1
            )
        frame = _parse_int(header[0], path, i + 1, "frame")
        rows = _parse_int(header[1], path, i + 1, "rows")
        cols = _parse_int(header[2], path, i + 1, "cols")
        cell = _parse_float(header[3], path, i + 1, "cell_size")
        if rows < 1 or cols < 1 or cell <= 0:
            raise FormatError("rows/cols must be >= 1 and cell_size > 0", path, i + 1)
        grid = np.empty((rows, cols), dtype=float)
        for r in range(rows):
            ln = i + 1 + r
            if ln >= len(lines):
                raise FormatError(f"block for frame {frame} is truncated", path, ln)
            vals = lines[ln].split(",")
            if len(vals) != cols:
                raise FormatError(f"expected {cols} cells, got {len(vals)}", path, ln + 1)
            for c, s in enumerate(vals):
                v = _parse_float(s, path, ln + 1, "cell")
                if not 0.0 <= v <= 1.0:
                    raise FormatError(f"cell value must lie in [0, 1], got {v}", path, ln + 1)
                grid[r, c] = v
        if maps and maps[0].grid.shape != grid.shape:
            raise FormatError(
                f"grid dimension mismatch: frame {frame} is {rows}x{cols}, "
                f"frame {maps[0].frame} was {maps[0].grid.shape[0]}x{maps[0].grid.shape[1]}",
                path, i + 1,
            )
        maps.append(OccupancyMap(frame=frame, grid=grid, cell_size=cell))
        i += 1 + rows
    maps.sort(key=lambda m: m.frame)
    return maps


# -- trajectory ---------------------------------------------------------------

TRAJECTORY_HEADER = "frame,state,x,y,z,px,py,pz"


def write_trajectory(traj: BallTrajectory, cfg: SceneConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        for fe in traj.frames:
            name = cfg.state(fe.state).name
            if fe.x is None:
                fh.write(f"{fe.frame},{name},,,,,,\n")
            else:
                p = fe.p if fe.p is not None else fe.x
                fh.write(
                    f"{fe.frame},{name},"
                    + ",".join(_fmt(v) for v in fe.x)
                    + ","
                    + ",".join(_fmt(v) for v in p)
                    + "\n"
                )


def read_trajectory(path: str, cfg: SceneConfig) -> BallTrajectory:
    lines = _read_lines(path)
    _expect_header(lines, TRAJECTORY_HEADER, path)
    frames: list[FrameEstimate] = []
    for i, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 8:
            raise FormatError(f"expected 8 fields, got {len(parts)}", path, i)
        frame = _parse_int(parts[0], path, i, "frame")
        name = parts[1]
        try:
            state = cfg.state_named(name)
        except Exception as exc:
            raise FormatError(f"unknown state {name!r}", path, i) from exc
        empties = [p.strip() == "" for p in parts[2:]]
        if all(empties):
            frames.append(FrameEstimate(frame=frame, state=state.id, x=None, p=None))
            continue
        if any(empties):
            raise FormatError("position fields must be all present or all empty", path, i)
        vals = [_parse_float(p, path, i, "position") for p in parts[2:]]
        frames.append(FrameEstimate(
            frame=frame, state=state.id,
            x=np.array(vals[0:3]), p=np.array(vals[3:6]),
        ))
    frames.sort(key=lambda f: f.frame)
    return BallTrajectory(frames=frames)


# -- ground truth ---------------------------------------------------------------

TRUTH_HEADER = "frame,state,x,y,z,player"
PLAYERS_HEADER = "frame,player,x,y"


def write_truth(gt: GroundTruth, cfg: SceneConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRUTH_HEADER + "\n")
        for t in range(1, gt.n_frames + 1):
            name = cfg.state(gt.states[t - 1]).name
            pos = gt.positions[t - 1]
            player = gt.possessor[t - 1] or ""
            if pos is None:
                fh.write(f"{t},{name},,,,{player}\n")
            else:
                fh.write(f"{t},{name}," + ",".join(_fmt(v) for v in pos) + f",{player}\n")


def read_truth(path: str, cfg: SceneConfig) -> tuple[int, list[int], list, list]:
    lines = _read_lines(path)
    _expect_header(lines, TRUTH_HEADER, path)
    rows = []
    for i, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 6:
            raise FormatError(f"expected 6 fields, got {len(parts)}", path, i)
        frame = _parse_int(parts[0], path, i, "frame")
        try:
            state = cfg.state_named(parts[1])
        except Exception as exc:
            raise FormatError(f"unknown state {parts[1]!r}", path, i) from exc
        if all(p.strip() == "" for p in parts[2:5]):
            pos = None
        else:
            pos = np.array([_parse_float(p, path, i, "position") for p in parts[2:5]])
        player = parts[5].strip() or None
        rows.append((frame, state.id, pos, player))
    rows.sort(key=lambda r: r[0])
    n = rows[-1][0] if rows else 0
    states = [cfg.absent.id] * n
    positions: list = [None] * n
    possessor: list = [None] * n
    for frame, sid, pos, player in rows:
        states[frame - 1] = sid
        positions[frame - 1] = pos
        possessor[frame - 1] = player
    return n, states, positions, possessor


def write_players(gt: GroundTruth, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(PLAYERS_HEADER + "\n")
        for t in range(1, gt.n_frames + 1):
            for pid in sorted(gt.players):
                xy = gt.players[pid][t - 1]
                if np.isnan(xy[0]):
                    continue
                fh.write(f"{t},{pid},{_fmt(xy[0])},{_fmt(xy[1])}\n")


def read_players(path: str, n_frames: int) -> dict[str, np.ndarray]:
    lines = _read_lines(path)
    _expect_header(lines, PLAYERS_HEADER, path)
    players: dict[str, np.ndarray] = {}
    for i, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 4:
            raise FormatError(f"expected 4 fields, got {len(parts)}", path, i)
        frame = _parse_int(parts[0], path, i, "frame")
        pid = parts[1]
        x = _parse_float(parts[2], path, i, "x")
        y = _parse_float(parts[3], path, i, "y")
        if pid not in players:
            players[pid] = np.full((n_frames, 2), np.nan)
        if frame > n_frames:
            raise FormatError(f"frame {frame} exceeds sequence length {n_frames}", path, i)
        players[pid][frame - 1] = (x, y)
    return players


def write_labeled_dir(seq: LabeledSequence, cfg: SceneConfig, dirpath: str) -> None:
    os.makedirs(dirpath, exist_ok=True)
    write_detections(seq.detections, os.path.join(dirpath, "detections.csv"))
    write_occupancy(seq.occupancy, os.path.join(dirpath, "occupancy.txt"))
    write_truth(seq.truth, cfg, os.path.join(dirpath, "truth.csv"))
    write_players(seq.truth, os.path.join(dirpath, "players.csv"))


def read_labeled_dir(dirpath: str, cfg: SceneConfig) -> LabeledSequence:
    n, states, positions, possessor = read_truth(os.path.join(dirpath, "truth.csv"), cfg)
    players = read_players(os.path.join(dirpath, "players.csv"), n)
    truth = GroundTruth(
        n_frames=n, states=states, positions=positions, possessor=possessor, players=players
    )
    dets = read_detections(os.path.join(dirpath, "detections.csv"), n_frames=n)
    occ_path = os.path.join(dirpath, "occupancy.txt")
    occupancy = read_occupancy(occ_path) if os.path.exists(occ_path) else []
    return LabeledSequence(detections=dets, occupancy=occupancy, truth=truth)


# -- graphs ---------------------------------------------------------------------


def write_player_graph(graph: PlayerGraph, cell_size: float, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n_frames,cell_size\n")
        fh.write(f"{graph.n_frames},{_fmt(cell_size)}\n")
        fh.write("nodes\n")
        fh.write("id,frame,cell_x,cell_y\n")
        for n in graph.nodes:
            fh.write(f"{n.id},{n.frame},{n.cell[0]},{n.cell[1]}\n")
        fh.write("edges\n")
        fh.write("from,to,cost\n")
        for e in graph.edges:
            fh.write(f"{e.src},{e.dst},{_fmt(e.cost)}\n")


def read_player_graph(path: str) -> tuple[PlayerGraph, float]:
    lines = _read_lines(path)
    _expect_header(lines, "n_frames,cell_size", path)
    meta = lines[1].split(",")
    if len(meta) != 2:
        raise FormatError("expected n_frames,cell_size values", path, 2)
    n_frames = _parse_int(meta[0], path, 2, "n_frames")
    cell_size = _parse_float(meta[1], path, 2, "cell_size")
    if len(lines) < 4 or lines[2].strip() != "nodes" or lines[3].strip() != "id,frame,cell_x,cell_y":
        raise FormatError("expected nodes section", path, 3)
    nodes: list[PlayerNode] = []
    i = 4
    while i < len(lines) and lines[i].strip() != "edges":
        if not lines[i].strip():
            i += 1
            continue
        parts = lines[i].split(",")
        if len(parts) != 4:
            raise FormatError(f"expected 4 node fields, got {len(parts)}", path, i + 1)
        nid = _parse_int(parts[0], path, i + 1, "id")
        frame = _parse_int(parts[1], path, i + 1, "frame")
        cx = _parse_int(parts[2], path, i + 1, "cell_x")
        cy = _parse_int(parts[3], path, i + 1, "cell_y")
        pos = np.array([(cx + 0.5) * cell_size, (cy + 0.5) * cell_size, 0.0])
        nodes.append(PlayerNode(id=nid, frame=frame, cell=(cx, cy), pos=pos, prob=0.5))
        i += 1
    if i >= len(lines) or lines[i].strip() != "edges":
        raise FormatError("expected edges section", path, i + 1)
    if i + 1 >= len(lines) or lines[i + 1].strip() != "from,to,cost":
        raise FormatError("expected from,to,cost header", path, i + 2)
    edges: list[Edge] = []
    for j in range(i + 2, len(lines)):
        if not lines[j].strip():
            continue
        parts = lines[j].split(",")
        if len(parts) != 3:
            raise FormatError(f"expected 3 edge fields, got {len(parts)}", path, j + 1)
        edges.append(Edge(
            src=_parse_int(parts[0], path, j + 1, "from"),
            dst=_parse_int(parts[1], path, j + 1, "to"),
            cost=_parse_float(parts[2], path, j + 1, "cost"),
        ))
    graph = PlayerGraph(n_frames=n_frames, nodes=nodes, edges=edges)
    # recover node probabilities from in-edge costs (cost = log-odds of dst
    # prob). Head nodes only have a source in-edge, which adds the entry
    # penalty on top; sink edges carry the penalty alone, so subtract it.
    penalty = next((e.cost for e in edges if e.dst == -2), 0.0)
    probs: dict[int, float] = {}
    for e in edges:
        if e.src != -1 and e.dst >= 0 and e.dst not in probs:
            probs[e.dst] = 1.0 / (1.0 + math.exp(-e.cost))
    for e in edges:
        if e.src == -1 and e.dst not in probs:
            probs[e.dst] = 1.0 / (1.0 + math.exp(-(e.cost - penalty)))
    graph.nodes = [
        PlayerNode(n.id, n.frame, n.cell, n.pos, probs.get(n.id, 0.5)) for n in nodes
    ]
    graph.validate()
    return graph, cell_size


def write_ball_graph(graph: BallGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n_frames,absent_state\n")
        fh.write(f"{graph.n_frames},{graph.absent_state}\n")
        fh.write("nodes\n")
        fh.write("id,frame,state,x,y,z\n")
        for n in graph.nodes:
            if n.pos is None:
                fh.write(f"{n.id},{n.frame},{n.state},,,\n")
            else:
                fh.write(
                    f"{n.id},{n.frame},{n.state}," + ",".join(_fmt(v) for v in n.pos) + "\n"
                )
        fh.write("edges\n")
        fh.write("from,to\n")
        for e in graph.edges:
            fh.write(f"{e.src},{e.dst}\n")


def read_ball_graph(path: str) -> BallGraph:
    lines = _read_lines(path)
    _expect_header(lines, "n_frames,absent_state", path)
    meta = lines[1].split(",")
    if len(meta) != 2:
        raise FormatError("expected n_frames,absent_state values", path, 2)
    n_frames = _parse_int(meta[0], path, 2, "n_frames")
    absent_state = _parse_int(meta[1], path, 2, "absent_state")
    if len(lines) < 4 or lines[2].strip() != "nodes" or lines[3].strip() != "id,frame,state,x,y,z":
        raise FormatError("expected nodes section", path, 3)
    nodes: list[BallNode] = []
    i = 4
    while i < len(lines) and lines[i].strip() != "edges":
        if not lines[i].strip():
            i += 1
            continue
        parts = lines[i].split(",")
        if len(parts) != 6:
            raise FormatError(f"expected 6 node fields, got {len(parts)}", path, i + 1)
        nid = _parse_int(parts[0], path, i + 1, "id")
        frame = _parse_int(parts[1], path, i + 1, "frame")
        state = _parse_int(parts[2], path, i + 1, "state")
        if all(p.strip() == "" for p in parts[3:]):
            pos = None
        else:
            pos = np.array([_parse_float(p, path, i + 1, "position") for p in parts[3:]])
        nodes.append(BallNode(id=nid, frame=frame, state=state, pos=pos))
        i += 1
    if i >= len(lines) or lines[i].strip() != "edges":
        raise FormatError("expected edges section", path, i + 1)
    if i + 1 >= len(lines) or lines[i + 1].strip() != "from,to":
        raise FormatError("expected from,to header", path, i + 2)
    edges: list[Edge] = []
    for j in range(i + 2, len(lines)):
        if not lines[j].strip():
            continue
        parts = lines[j].split(",")
        if len(parts) != 2:
            raise FormatError(f"expected 2 edge fields, got {len(parts)}", path, j + 1)
        edges.append(Edge(
            src=_parse_int(parts[0], path, j + 1, "from"),
            dst=_parse_int(parts[1], path, j + 1, "to"),
        ))
    graph = BallGraph(n_frames=n_frames, nodes=nodes, edges=edges, absent_state=absent_state)
    graph.validate()
    return graph
