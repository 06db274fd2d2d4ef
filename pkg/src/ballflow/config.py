"""Scene configuration: states, court geometry, physics tables, tuning knobs.

Configs live in TOML files with nested tables; ``standard_config`` builds the
sport presets programmatically so simulators and tests share one source.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace

import numpy as np

from ._toml import dumps as _toml_dumps
from .errors import ConfigError, FormatError
from .types import ABSENT, PHYSICS_BOUND, POSSESSION, STATE_KINDS, BallState

if sys.version_info >= (3, 11):
    import tomllib as _toml_reader
else:
    import tomli as _toml_reader

GRAVITY = 9.81  # m/s^2

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, inclusive bounds."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, p) -> bool:
        return all(self.lo[i] <= p[i] <= self.hi[i] for i in range(3))


@dataclass(frozen=True)
class PhysicsRow:
    """Second-order recurrence row for one (state, axis).

    Encodes A*(P_t - 2 P_{t-1} + P_{t-2}) + B*(P_t - P_{t-1}) + C*P_t - F,
    bounded by eps when the state is active over three consecutive frames.
    sense "both" emits the +/- pair; "upper" emits only the upper bound.
    A row with A = B = C = F = 0 is vacuous and emits nothing.
    """

    state: int
    axis: int
    a: float
    b: float
    c: float
    f: float
    sense: str = "both"
    exclude: tuple[Box, ...] = ()

    def is_vacuous(self) -> bool:
        return self.a == 0.0 and self.b == 0.0 and self.c == 0.0 and self.f == 0.0

    def excluded(self, pos) -> bool:
        return any(box.contains(pos) for box in self.exclude)


@dataclass
class SceneConfig:
    """Everything a scene needs: geometry, states, physics, tuning constants."""

    fps: float
    court_min: tuple[float, float, float]
    court_max: tuple[float, float, float]
    ground_z: float
    band_radius: float          # D_l, meters, per-axis band between P^t and X^t
    possession_radius: float    # D_p, meters
    possession_height: float    # ball height above a possessing player, meters
    states: list[BallState]
    physics: list[PhysicsRow]
    eps_phys: float = 1e-3      # meters of slack on active physics rows
    absent_psi: float = 0.5     # fixed local potential for the absent state
    prob_clamp: float = 1e-6    # probability clamp for log and log-odds
    # tracklet extraction (KSP) and linking
    max_paths: int = 10
    min_mean_prob: float = 0.5
    ksp_entry_prior: float = 0.2
    gap_window: int = 50        # frames bridgeable by grid linking
    min_tracklet_len: int = 2
    # assembled player graph entry/exit
    entry_prior: float = 0.01
    # trajectory growing
    horizon_seconds: float = 2.0
    # classifier vicinity radii, meters (ground plane)
    feature_r1: float = 0.5
    feature_r2: float = 2.0

    _by_id: dict[int, BallState] = field(init=False, default_factory=dict, repr=False)
    _by_name: dict[str, BallState] = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_id = {s.id: s for s in self.states}
        self._by_name = {s.name: s for s in self.states}

    # -- lookups ------------------------------------------------------------

    def state(self, id_: int) -> BallState:
        return self._by_id[id_]

    def state_named(self, name: str) -> BallState:
        if name not in self._by_name:
            raise ConfigError(f"unknown state {name!r}")
        return self._by_name[name]

    @property
    def absent(self) -> BallState:
        return next(s for s in self.states if s.kind == ABSENT)

    @property
    def horizon_frames(self) -> int:
        return max(1, int(round(self.horizon_seconds * self.fps)))

    @property
    def gravity_per_frame(self) -> float:
        return GRAVITY / self.fps**2

    def physics_for(self, state: int) -> list[PhysicsRow]:
        return [r for r in self.physics if r.state == state]

    def p_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounds for the continuous P variables: court box plus margin."""
        margin = max(self.band_radius, 1.0)
        lo = np.asarray(self.court_min, dtype=float) - margin
        hi = np.asarray(self.court_max, dtype=float) + margin
        return lo, hi

    def big_for(self, row: PhysicsRow) -> float:
        """Deactivation constant. 2(|A|+|B|+|C|) * diag + |F| + 1 dominates the
        row LHS anywhere inside the P box since |second difference| <= 2 * range."""
        lo, hi = self.p_bounds()
        diag = float(np.linalg.norm(hi - lo))
        return 2.0 * (abs(row.a) + abs(row.b) + abs(row.c)) * diag + abs(row.f) + 1.0

    def band_big(self) -> float:
        lo, hi = self.p_bounds()
        return float(np.max(hi - lo)) + self.band_radius + 1.0

    def near_border(self, pos, radius: float) -> bool:
        """True when pos is within radius of the court's xy boundary."""
        dx = min(pos[0] - self.court_min[0], self.court_max[0] - pos[0])
        dy = min(pos[1] - self.court_min[1], self.court_max[1] - pos[1])
        return min(dx, dy) <= radius

    def in_court(self, pos) -> bool:
        return (
            self.court_min[0] <= pos[0] <= self.court_max[0]
            and self.court_min[1] <= pos[1] <= self.court_max[1]
        )


def validate_scene(cfg: SceneConfig) -> SceneConfig:
    """Check structural invariants; raises ConfigError naming the offender."""
    if cfg.fps <= 0:
        raise ConfigError("fps must be > 0")
    if cfg.band_radius <= 0:
        raise ConfigError("band_radius (D_l) must be positive")
    if cfg.possession_radius <= 0:
        raise ConfigError("possession_radius (D_p) must be positive")
    if cfg.eps_phys <= 0:
        raise ConfigError("eps_phys must be > 0")
    if not 0 < cfg.prob_clamp < 0.5:
        raise ConfigError("prob_clamp must lie in (0, 0.5)")
    lo, hi = np.asarray(cfg.court_min), np.asarray(cfg.court_max)
    if not np.all(hi > lo):
        raise ConfigError("court_max must exceed court_min on every axis")
    if not cfg.states:
        raise ConfigError("at least one state is required")
    ids = [s.id for s in cfg.states]
    if len(set(ids)) != len(ids):
        raise ConfigError("state ids must be unique")
    names = [s.name for s in cfg.states]
    if len(set(names)) != len(names):
        raise ConfigError("state names must be unique")
    for s in cfg.states:
        if s.kind not in STATE_KINDS:
            raise ConfigError(f"state {s.name!r} has unknown kind {s.kind!r}")
        if s.max_speed <= 0:
            raise ConfigError(f"state {s.name!r} max_speed must be > 0")
    absents = [s for s in cfg.states if s.kind == ABSENT]
    if len(absents) != 1:
        raise ConfigError("exactly one absent-kind state is required")
    by_id = {s.id: s for s in cfg.states}
    for row in cfg.physics:
        if row.state not in by_id:
            raise ConfigError(f"physics row references unknown state id {row.state}")
        if by_id[row.state].kind != PHYSICS_BOUND:
            raise ConfigError(
                f"physics row attached to non-physics state {by_id[row.state].name!r}"
            )
        if row.axis not in (0, 1, 2):
            raise ConfigError(f"physics row axis must be 0, 1, or 2, got {row.axis}")
        if row.sense not in ("both", "upper"):
            raise ConfigError(f"physics row sense must be 'both' or 'upper', got {row.sense!r}")
    for s in cfg.states:
        if s.kind != PHYSICS_BOUND:
            continue
        have = {r.axis for r in cfg.physics if r.state == s.id}
        missing = [AXES[a] for a in (0, 1, 2) if a not in have]
        if missing:
            raise ConfigError(f"state {s.name!r} is missing physics rows for axes {missing}")
    return cfg


# -- TOML round trip ---------------------------------------------------------


def config_to_dict(cfg: SceneConfig) -> dict:
    d = {
        "fps": cfg.fps,
        "band_radius": cfg.band_radius,
        "possession_radius": cfg.possession_radius,
        "possession_height": cfg.possession_height,
        "eps_phys": cfg.eps_phys,
        "absent_psi": cfg.absent_psi,
        "prob_clamp": cfg.prob_clamp,
        "court": {
            "min": list(cfg.court_min),
            "max": list(cfg.court_max),
            "ground_z": cfg.ground_z,
        },
        "tracklets": {
            "max_paths": cfg.max_paths,
            "min_mean_prob": cfg.min_mean_prob,
            "entry_prior": cfg.ksp_entry_prior,
            "gap_window": cfg.gap_window,
            "min_len": cfg.min_tracklet_len,
        },
        "player_graph": {"entry_prior": cfg.entry_prior},
        "growing": {"horizon_seconds": cfg.horizon_seconds},
        "features": {"r1": cfg.feature_r1, "r2": cfg.feature_r2},
        "states": [
            {"id": s.id, "name": s.name, "kind": s.kind, "max_speed": s.max_speed}
            for s in cfg.states
        ],
        "physics": [
            {
                "state": cfg.state(r.state).name,
                "axis": AXES[r.axis],
                "coeffs": [r.a, r.b, r.c, r.f],
                "sense": r.sense,
                "exclude": [{"min": list(b.lo), "max": list(b.hi)} for b in r.exclude],
            }
            for r in cfg.physics
        ],
    }
    return d


def config_from_dict(d: dict, source: str = "<config>") -> SceneConfig:
    try:
        states = [
            BallState(
                id=int(s["id"]), name=str(s["name"]), kind=str(s["kind"]),
                max_speed=float(s["max_speed"]),
            )
            for s in d["states"]
        ]
        by_name = {s.name: s for s in states}
        physics = []
        for r in d.get("physics", []):
            name = str(r["state"])
            if name not in by_name:
                raise ConfigError(f"physics row references unknown state {name!r}")
            axis = str(r["axis"])
            if axis not in AXES:
                raise ConfigError(f"physics row axis must be one of {AXES}, got {axis!r}")
            a, b, c, f = (float(v) for v in r["coeffs"])
            boxes = tuple(
                Box(lo=tuple(float(v) for v in e["min"]), hi=tuple(float(v) for v in e["max"]))
                for e in r.get("exclude", [])
            )
            physics.append(PhysicsRow(
                state=by_name[name].id, axis=AXES.index(axis),
                a=a, b=b, c=c, f=f, sense=str(r.get("sense", "both")), exclude=boxes,
            ))
        court = d["court"]
        tr = d.get("tracklets", {})
        pg = d.get("player_graph", {})
        gw = d.get("growing", {})
        ft = d.get("features", {})
        cfg = SceneConfig(
            fps=float(d["fps"]),
            court_min=tuple(float(v) for v in court["min"]),
            court_max=tuple(float(v) for v in court["max"]),
            ground_z=float(court.get("ground_z", 0.0)),
            band_radius=float(d["band_radius"]),
            possession_radius=float(d["possession_radius"]),
            possession_height=float(d.get("possession_height", 1.0)),
            states=states,
            physics=physics,
            eps_phys=float(d.get("eps_phys", 1e-3)),
            absent_psi=float(d.get("absent_psi", 0.5)),
            prob_clamp=float(d.get("prob_clamp", 1e-6)),
            max_paths=int(tr.get("max_paths", 10)),
            min_mean_prob=float(tr.get("min_mean_prob", 0.5)),
            ksp_entry_prior=float(tr.get("entry_prior", 0.2)),
            gap_window=int(tr.get("gap_window", 50)),
            min_tracklet_len=int(tr.get("min_len", 2)),
            entry_prior=float(pg.get("entry_prior", 0.01)),
            horizon_seconds=float(gw.get("horizon_seconds", 2.0)),
            feature_r1=float(ft.get("r1", 0.5)),
            feature_r2=float(ft.get("r2", 2.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed scene config: {exc}", path=source) from exc
    return validate_scene(cfg)


def read_config(path: str) -> SceneConfig:
    try:
        with open(path, "rb") as fh:
            data = _toml_reader.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read config: {exc}", path=path) from exc
    except _toml_reader.TOMLDecodeError as exc:
        raise FormatError(f"invalid TOML: {exc}", path=path) from exc
    return config_from_dict(data, source=path)


def write_config(cfg: SceneConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_toml_dumps(config_to_dict(cfg)))


# -- sport presets ------------------------------------------------------------

FLYING, IN_POSSESSION, NOT_PRESENT, STRIKE, PASS, ROLLING = (
    "flying", "in_possession", "not_present", "strike", "pass", "rolling",
)


def _ground_slab(cmin, cmax, top: float) -> Box:
    return Box(
        lo=(cmin[0] - 2.0, cmin[1] - 2.0, cmin[2] - 2.0),
        hi=(cmax[0] + 2.0, cmax[1] + 2.0, top),
    )


def _ballistic_rows(state_id: int, fps: float, slab: Box) -> list[PhysicsRow]:
    g = GRAVITY / fps**2
    return [
        PhysicsRow(state=state_id, axis=0, a=1.0, b=0.0, c=0.0, f=0.0, exclude=(slab,)),
        PhysicsRow(state=state_id, axis=1, a=1.0, b=0.0, c=0.0, f=0.0, exclude=(slab,)),
        PhysicsRow(state=state_id, axis=2, a=1.0, b=0.0, c=0.0, f=-g, exclude=(slab,)),
    ]


def standard_config(sport: str, fps: float = 60.0, **overrides) -> SceneConfig:
    """Build a preset scene. Speed caps are stated in m/s and scaled to m/frame."""
    if sport == "volleyball":
        cmin, cmax = (0.0, 0.0, 0.0), (18.0, 9.0, 12.0)
        mps = {FLYING: 14.0, IN_POSSESSION: 33.0, NOT_PRESENT: 20.0, STRIKE: 33.0}
        kinds = {FLYING: PHYSICS_BOUND, IN_POSSESSION: POSSESSION,
                 NOT_PRESENT: ABSENT, STRIKE: PHYSICS_BOUND}
        order = [FLYING, IN_POSSESSION, NOT_PRESENT, STRIKE]
        band = 0.25
    elif sport == "basketball":
        cmin, cmax = (0.0, 0.0, 0.0), (28.0, 15.0, 10.0)
        mps = {FLYING: 14.0, IN_POSSESSION: 25.0, NOT_PRESENT: 15.0, PASS: 25.0}
        kinds = {FLYING: PHYSICS_BOUND, IN_POSSESSION: POSSESSION,
                 NOT_PRESENT: ABSENT, PASS: PHYSICS_BOUND}
        order = [FLYING, IN_POSSESSION, NOT_PRESENT, PASS]
        band = 0.25
    elif sport == "soccer":
        cmin, cmax = (0.0, 0.0, 0.0), (30.0, 20.0, 15.0)
        mps = {FLYING: 25.0, IN_POSSESSION: 28.0, NOT_PRESENT: 15.0, ROLLING: 15.0}
        kinds = {FLYING: PHYSICS_BOUND, IN_POSSESSION: POSSESSION,
                 NOT_PRESENT: ABSENT, ROLLING: PHYSICS_BOUND}
        order = [FLYING, IN_POSSESSION, NOT_PRESENT, ROLLING]
        band = 0.25
    else:
        raise ConfigError(f"unknown sport preset {sport!r}")

    states = [
        BallState(id=i + 1, name=name, kind=kinds[name], max_speed=mps[name] / fps)
        for i, name in enumerate(order)
    ]
    by_name = {s.name: s for s in states}
    slab = _ground_slab(cmin, cmax, top=0.3)
    physics: list[PhysicsRow] = []
    for name in order:
        if kinds[name] != PHYSICS_BOUND:
            continue
        if name == ROLLING:
            sid = by_name[name].id
            physics += [
                PhysicsRow(state=sid, axis=0, a=1.0, b=0.0, c=0.0, f=0.0),
                PhysicsRow(state=sid, axis=1, a=1.0, b=0.0, c=0.0, f=0.0),
                # z pinned to ground height
                PhysicsRow(state=sid, axis=2, a=0.0, b=0.0, c=1.0, f=0.0),
            ]
        else:
            physics += _ballistic_rows(by_name[name].id, fps, slab)

    cfg = SceneConfig(
        fps=fps,
        court_min=cmin,
        court_max=cmax,
        ground_z=0.0,
        band_radius=band,
        possession_radius=1.5,
        possession_height=1.0,
        states=states,
        physics=physics,
    )
    if overrides:
        cfg = replace(cfg, **overrides)
    return validate_scene(cfg)
