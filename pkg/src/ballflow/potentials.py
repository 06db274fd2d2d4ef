"""Learned potentials and edge costs for the ball graph.

A trained model bundles the state transition matrix, the first-frame state
prior, per-state sigmoid calibrations over the combined detector/classifier
score, and the state classifier itself. Edge costs compose the transition
log-probability with the local image potential of the destination node; the
product over competing nodes at a frame is a per-frame constant and is
dropped from costs (the selected flow is invariant to it).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _toml
from .classify import StumpEnsembleClassifier
from .config import SceneConfig
from .errors import ConfigError, FormatError
from .player_graph import PlayerTrack, log_odds
from .types import (
    ABSENT,
    SOURCE_ID,
    BallGraph,
    DetectionSet,
    Edge,
    LabeledSequence,
    PlayerGraph,
    prune_ball_nodes,
)

FEATURE_NAMES = ("x", "y", "z", "near_r1", "near_r2")


@dataclass
class Evidence:
    """Per-frame observations the potentials read: detections and people.

    people[frame] holds (x, y, weight) triples. Sequential mode uses solved
    player tracks with unit weights; joint mode uses raw people-detector
    support, weighting each candidate location by its probability.
    """

    dets: DetectionSet
    people: dict[int, list[tuple[float, float, float]]] = field(default_factory=dict)

    @classmethod
    def from_tracks(cls, dets: DetectionSet, tracks: list[PlayerTrack]) -> "Evidence":
        people: dict[int, list[tuple[float, float, float]]] = {}
        for tr in tracks:
            for k, frame in enumerate(range(tr.start, tr.end + 1)):
                x, y = tr.positions[k]
                people.setdefault(frame, []).append((float(x), float(y), 1.0))
        return cls(dets, people)

    @classmethod
    def from_player_graph(cls, dets: DetectionSet, graph: PlayerGraph) -> "Evidence":
        people: dict[int, list[tuple[float, float, float]]] = {}
        for n in graph.nodes:
            people.setdefault(n.frame, []).append(
                (float(n.pos[0]), float(n.pos[1]), float(n.prob))
            )
        return cls(dets, people)

    @classmethod
    def from_truth(cls, seq: LabeledSequence) -> "Evidence":
        people: dict[int, list[tuple[float, float, float]]] = {}
        for pid, track in seq.truth.players.items():
            for k, (x, y) in enumerate(track):
                people.setdefault(k + 1, []).append((float(x), float(y), 1.0))
        return cls(seq.detections, people)


def ball_features(pos, people, r1: float, r2: float) -> np.ndarray:
    """Feature vector: location plus people support within two ground radii."""
    x, y, z = float(pos[0]), float(pos[1]), float(pos[2])
    c1 = c2 = 0.0
    for px, py, w in people:
        d = math.hypot(px - x, py - y)
        if d <= r1:
            c1 += w
        if d <= r2:
            c2 += w
    return np.array([x, y, z, c1, c2])


def detector_prob(dets: DetectionSet, frame: int, pos, band: float) -> float:
    """Ball-detector output at a location: best confidence inside the band box."""
    best = 0.0
    for d in dets.at(frame):
        if (abs(d.x - pos[0]) <= band and abs(d.y - pos[1]) <= band
                and abs(d.z - pos[2]) <= band):
            best = max(best, d.conf)
    return best


@dataclass
class PotentialModel:
    """Everything learned from labeled sequences."""

    state_ids: list[int]                 # dense 1..K order
    prior: np.ndarray                    # P(S^1 = s), indexed by state_ids order
    transitions: np.ndarray              # [next, prev], columns sum to 1
    sigmoids: dict[int, tuple[float, float]]  # located state -> (theta0, theta1)
    classifier: StumpEnsembleClassifier
    speed_caps: dict[int, float]         # state -> D^s at training time

    def index(self, state_id: int) -> int:
        return self.state_ids.index(state_id)

    def transition(self, prev_state: int, next_state: int) -> float:
        return float(self.transitions[self.index(next_state), self.index(prev_state)])

    def prior_of(self, state_id: int) -> float:
        return float(self.prior[self.index(state_id)])


def learn_transitions(train: list[LabeledSequence]) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Empirical transition matrix and first-frame prior, no smoothing.

    Every sequence is padded with a final self-transition, so each frame
    contributes exactly one bigram and column sums of the count table equal
    state occupancy counts. Zero counts stay exactly zero. Returns
    (transitions[next, prev], prior, state_ids) with state ids sorted.
    """
    if not train:
        raise ConfigError("no training sequences given")
    ids = sorted({s for seq in train for s in seq.truth.states})
    idx = {s: i for i, s in enumerate(ids)}
    k = len(ids)
    counts = np.zeros((k, k))
    occupancy = np.zeros(k)
    for seq in train:
        states = seq.truth.states
        for s in states:
            occupancy[idx[s]] += 1.0
        padded = list(states) + [states[-1]]
        for prev, nxt in zip(padded, padded[1:]):
            counts[idx[nxt], idx[prev]] += 1.0
    col = counts.sum(axis=0)
    transitions = np.zeros_like(counts)
    nonzero = col > 0
    transitions[:, nonzero] = counts[:, nonzero] / col[nonzero]
    prior = occupancy / occupancy.sum()
    return transitions, prior, ids


def train_state_classifier(
    train: list[LabeledSequence], config: SceneConfig
) -> StumpEnsembleClassifier:
    """Fit the located-state classifier on ground-truth frames.

    Fails if any located state of the scene never occurs in the data.
    """
    X, y = [], []
    for seq in train:
        ev = Evidence.from_truth(seq)
        for t in range(1, seq.truth.n_frames + 1):
            state = seq.truth.states[t - 1]
            pos = seq.truth.positions[t - 1]
            if pos is None:
                continue
            X.append(ball_features(pos, ev.people.get(t, []),
                                   config.feature_r1, config.feature_r2))
            y.append(state)
    if not X:
        raise ConfigError("no located-state frames in the training data")
    seen = set(y)
    missing = [s.name for s in config.states if s.kind != ABSENT and s.id not in seen]
    if missing:
        raise ConfigError(f"states never observed in training data: {missing}")
    clf = StumpEnsembleClassifier()
    clf.fit(np.array(X), np.array(y))
    return clf


def fit_sigmoids(
    train: list[LabeledSequence],
    config: SceneConfig,
    classifier: StumpEnsembleClassifier,
) -> dict[int, tuple[float, float]]:
    """Per-state logistic calibration of the combined score P_b * P_c.

    Positives for state s: detections inside the band box of the true ball
    while the true state is s. Every other detection is a negative. The
    one-dimensional MLE is found by damped Newton; perfectly separable data
    caps the slope at +/-50, identical scores give a flat sigmoid at the
    base rate.
    """
    located = [s.id for s in config.states if s.kind != ABSENT]
    ys: dict[int, list[float]] = {s: [] for s in located}
    labels: dict[int, list[int]] = {s: [] for s in located}
    for seq in train:
        ev = Evidence.from_truth(seq)
        for t in sorted(seq.detections.by_frame):
            feats = [
                ball_features(d.pos, ev.people.get(t, []),
                              config.feature_r1, config.feature_r2)
                for d in seq.detections.by_frame[t]
            ]
            proba = classifier.predict_proba(np.array(feats))
            classes = list(classifier.classes_)
            true_state = seq.truth.states[t - 1]
            true_pos = seq.truth.positions[t - 1]
            for d, p in zip(seq.detections.by_frame[t], proba):
                for s in located:
                    pc = p[classes.index(s)] if s in classes else 0.0
                    score = d.conf * float(pc)
                    hit = (
                        true_state == s
                        and true_pos is not None
                        and np.all(np.abs(d.pos - true_pos) <= config.band_radius)
                    )
                    ys[s].append(score)
                    labels[s].append(1 if hit else 0)
    out = {}
    for s in located:
        if not ys[s] or len(set(labels[s])) < 2:
            raise ConfigError(
                f"state {config.state(s).name!r} lacks positive and negative "
                "detection examples for calibration"
            )
        out[s] = fit_logistic_1d(np.array(ys[s]), np.array(labels[s]))
    return out


THETA_CAP = 50.0


def fit_logistic_1d(y: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """MLE of sigma(t0 + t1*y) against binary labels, |theta| <= 50."""
    pos = y[labels == 1]
    neg = y[labels == 0]
    if np.ptp(y) == 0.0:
        rate = float(np.mean(labels))
        rate = min(max(rate, 1e-9), 1 - 1e-9)
        return (float(np.clip(math.log(rate / (1 - rate)), -THETA_CAP, THETA_CAP)), 0.0)
    if pos.min() > neg.max():
        t1 = THETA_CAP
        return (_newton_theta0(y, labels, t1), t1)
    if pos.max() < neg.min():
        t1 = -THETA_CAP
        return (_newton_theta0(y, labels, t1), t1)
    def nll(th0, th1):
        z = th0 + th1 * y
        return float(np.sum(np.logaddexp(0.0, z) - labels * z))

    theta = np.zeros(2)
    current = nll(*theta)
    for _ in range(100):
        z = theta[0] + theta[1] * y
        p = expit(z)
        grad = np.array([np.sum(labels - p), np.sum((labels - p) * y)])
        w = p * (1.0 - p)
        h00 = np.sum(w)
        h01 = np.sum(w * y)
        h11 = np.sum(w * y * y)
        hess = np.array([[h00, h01], [h01, h11]]) + 1e-9 * np.eye(2)
        step = np.linalg.solve(hess, grad)
        # backtrack until the step actually improves the likelihood
        scale = 1.0
        for _ in range(40):
            new = np.clip(theta + scale * step, -THETA_CAP, THETA_CAP)
            trial = nll(*new)
            if trial <= current:
                break
            scale *= 0.5
        if np.max(np.abs(new - theta)) < 1e-10:
            theta = new
            break
        theta, current = new, trial
    return (float(theta[0]), float(theta[1]))


def _newton_theta0(y: np.ndarray, labels: np.ndarray, t1: float) -> float:
    """Root of the monotone theta0 gradient by bisection, clipped to the cap."""
    def grad(t0: float) -> float:
        return float(np.sum(labels - expit(t0 + t1 * y)))

    lo, hi = -1000.0, 1000.0
    if grad(lo) <= 0.0:
        return -THETA_CAP
    if grad(hi) >= 0.0:
        return THETA_CAP
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if grad(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return float(np.clip(0.5 * (lo + hi), -THETA_CAP, THETA_CAP))


def train_model(train: list[LabeledSequence], config: SceneConfig) -> PotentialModel:
    transitions, prior, ids = learn_transitions(train)
    scene_ids = sorted(s.id for s in config.states)
    if ids != scene_ids:
        # states absent from training data keep zero rows/columns
        full_k = len(scene_ids)
        t_full = np.zeros((full_k, full_k))
        p_full = np.zeros(full_k)
        for i, si in enumerate(ids):
            p_full[scene_ids.index(si)] = prior[i]
            for j, sj in enumerate(ids):
                t_full[scene_ids.index(si), scene_ids.index(sj)] = transitions[i, j]
        transitions, prior, ids = t_full, p_full, scene_ids
    classifier = train_state_classifier(train, config)
    sigmoids = fit_sigmoids(train, config, classifier)
    caps = {s.id: s.max_speed for s in config.states}
    return PotentialModel(ids, prior, transitions, sigmoids, classifier, caps)


# -- scoring -----------------------------------------------------------------


def psi_local(
    model: PotentialModel,
    config: SceneConfig,
    pos,
    state_id: int,
    evidence: Evidence,
    frame: int,
) -> float:
    """Local potential psi(x, s, I) = sigma_s(P_b * P_c); fixed for absent."""
    if config.state(state_id).kind == ABSENT:
        return config.absent_psi
    pb = detector_prob(evidence.dets, frame, pos, config.band_radius)
    feats = ball_features(pos, evidence.people.get(frame, []),
                          config.feature_r1, config.feature_r2)
    proba = model.classifier.predict_proba(feats[None, :])[0]
    classes = list(model.classifier.classes_)
    pc = float(proba[classes.index(state_id)]) if state_id in classes else 0.0
    t0, t1 = model.sigmoids[state_id]
    return float(expit(t0 + t1 * pb * pc))


def psi_image(
    model: PotentialModel,
    config: SceneConfig,
    node_id: int,
    frame_nodes,
    evidence: Evidence,
) -> float:
    """Full image log-potential: log psi(chosen) + sum log(1 - psi(others)).

    The second sum is shared by every node at the frame; edge costs drop it.
    """
    total = 0.0
    clamp = config.prob_clamp
    for n in frame_nodes:
        p = psi_local(model, config, n.pos, n.state, evidence, n.frame)
        p = min(max(p, clamp), 1.0 - clamp)
        total += math.log(p) if n.id == node_id else math.log(1.0 - p)
    return total


def psi_motion(pos_i, state_i: int, pos_j, state_j: int, config: SceneConfig) -> int:
    """Speed-cap indicator; absent transitions only absent<->absent or near border."""
    kind_i = config.state(state_i).kind
    kind_j = config.state(state_j).kind
    if kind_i == ABSENT and kind_j == ABSENT:
        return 1
    if kind_i == ABSENT:
        return int(config.near_border(pos_j, config.state(state_j).max_speed))
    if kind_j == ABSENT:
        return int(config.near_border(pos_i, config.state(state_i).max_speed))
    dist = float(np.linalg.norm(np.asarray(pos_i, float) - np.asarray(pos_j, float)))
    return int(dist <= config.state(state_i).max_speed)


def node_psis(
    graph: BallGraph, model: PotentialModel, evidence: Evidence, config: SceneConfig
) -> np.ndarray:
    """psi for every node, clamped away from 0 and 1."""
    out = np.empty(len(graph.nodes))
    for n in graph.nodes:
        p = psi_local(model, config, n.pos, n.state, evidence, n.frame)
        out[n.id] = min(max(p, config.prob_clamp), 1.0 - config.prob_clamp)
    return out


def edge_cost(
    graph: BallGraph,
    edge: Edge,
    model: PotentialModel,
    evidence: Evidence,
    config: SceneConfig,
    psis: np.ndarray | None = None,
) -> float | None:
    """Cost of one edge: log transition + log psi(destination).

    Source edges use the first-frame state prior as the transition term.
    Returns None when the transition probability is exactly zero, meaning
    the edge must be removed rather than carried at cost -inf.
    """
    dst = graph.nodes[edge.dst]
    if psis is not None:
        local = float(psis[dst.id])
    else:
        local = psi_local(model, config, dst.pos, dst.state, evidence, dst.frame)
        local = min(max(local, config.prob_clamp), 1.0 - config.prob_clamp)
    if edge.src == SOURCE_ID:
        trans = model.prior_of(dst.state)
    else:
        trans = model.transition(graph.nodes[edge.src].state, dst.state)
    if trans == 0.0:
        return None
    return math.log(trans) + math.log(local)


def apply_ball_costs(
    graph: BallGraph,
    model: PotentialModel,
    evidence: Evidence,
    config: SceneConfig,
) -> BallGraph:
    """Cost every edge from the model; drop forbidden transitions and re-prune."""
    psis = node_psis(graph, model, evidence, config)
    kept: list[Edge] = []
    for e in graph.edges:
        c = edge_cost(graph, e, model, evidence, config, psis)
        if c is not None:
            kept.append(Edge(e.src, e.dst, c))
    nodes, edges = prune_ball_nodes(graph.nodes, kept, graph.n_frames)
    out = BallGraph(graph.n_frames, nodes, edges, graph.absent_state)
    out.validate()
    return out


# -- model file --------------------------------------------------------------


def model_to_dict(model: PotentialModel) -> dict:
    clf = model.classifier
    stumps = [
        {
            "feature": int(s["feature"]),
            "threshold": float(s["threshold"]),
            "left": [float(v) for v in s["left"]],
            "right": [float(v) for v in s["right"]],
            "weight": float(s["weight"]),
        }
        for s in getattr(clf, "stumps_", [])
    ]
    return {
        "states": [int(s) for s in model.state_ids],
        "prior": [float(v) for v in model.prior],
        "transitions": [[float(v) for v in row] for row in model.transitions],
        "speed_caps": {str(k): float(v) for k, v in model.speed_caps.items()},
        "sigmoid": [
            {"state": int(s), "theta0": float(t0), "theta1": float(t1)}
            for s, (t0, t1) in sorted(model.sigmoids.items())
        ],
        "classifier": {
            "classes": [int(c) for c in clf.classes_],
            "n_features": int(clf.n_features_in_),
            "stumps": stumps,
        },
    }


def model_from_dict(d: dict, source: str = "<model>") -> PotentialModel:
    try:
        state_ids = [int(s) for s in d["states"]]
        prior = np.array(d["prior"], dtype=float)
        transitions = np.array(d["transitions"], dtype=float)
        caps = {int(k): float(v) for k, v in d["speed_caps"].items()}
        sigmoids = {
            int(row["state"]): (float(row["theta0"]), float(row["theta1"]))
            for row in d["sigmoid"]
        }
        cd = d["classifier"]
        clf = StumpEnsembleClassifier()
        clf.classes_ = np.array([int(c) for c in cd["classes"]])
        clf.n_features_in_ = int(cd["n_features"])
        clf.stumps_ = [
            {
                "feature": int(s["feature"]),
                "threshold": float(s["threshold"]),
                "left": np.array(s["left"], dtype=float),
                "right": np.array(s["right"], dtype=float),
                "weight": float(s["weight"]),
            }
            for s in cd["stumps"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad model file: {exc}", source) from exc
    if transitions.shape != (len(state_ids), len(state_ids)):
        raise FormatError("transition matrix shape does not match states", source)
    return PotentialModel(state_ids, prior, transitions, sigmoids, clf, caps)


def write_model(model: PotentialModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_toml.dumps(model_to_dict(model)))


def read_model(path: str) -> PotentialModel:
    from .config import _toml_reader

    with open(path, "rb") as fh:
        try:
            data = _toml_reader.load(fh)
        except _toml_reader.TOMLDecodeError as exc:
            raise FormatError(f"bad model file: {exc}", path) from exc
    return model_from_dict(data, path)
