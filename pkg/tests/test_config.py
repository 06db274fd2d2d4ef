"""Scene config validation, presets, physics constants, file round trip."""
import dataclasses
import math

import numpy as np
import pytest

from ballflow.config import (
    Box,
    PhysicsRow,
    SceneConfig,
    read_config,
    standard_config,
    validate_scene,
    write_config,
)
from ballflow.errors import ConfigError
from ballflow.types import BallState


def test_valid_config_echoed():
    cfg = standard_config("volleyball")
    assert validate_scene(cfg) is cfg


def test_zero_band_radius_rejected():
    cfg = standard_config("volleyball")
    bad = dataclasses.replace(cfg, band_radius=0.0)
    with pytest.raises(ConfigError, match="D_l"):
        validate_scene(bad)
    with pytest.raises(ConfigError, match="positive"):
        validate_scene(bad)


def test_missing_physics_axis_names_state_and_axis():
    cfg = standard_config("volleyball")
    flying = cfg.state_named("flying").id
    rows = [r for r in cfg.physics if not (r.state == flying and r.axis == 2)]
    bad = dataclasses.replace(cfg, physics=rows)
    with pytest.raises(ConfigError) as exc:
        validate_scene(bad)
    assert "flying" in str(exc.value)
    assert "z" in str(exc.value)


def test_two_absent_states_rejected():
    cfg = standard_config("volleyball")
    extra = BallState(id=9, name="gone", kind="absent", max_speed=1.0)
    bad = dataclasses.replace(cfg, states=cfg.states + [extra])
    with pytest.raises(ConfigError, match="absent"):
        validate_scene(bad)


def test_gravity_curvature_60fps():
    cfg = standard_config("volleyball", fps=60.0)
    flying = cfg.state_named("flying").id
    z_row = next(r for r in cfg.physics if r.state == flying and r.axis == 2)
    assert z_row.f == pytest.approx(-2.725e-3, rel=1e-12)
    assert (z_row.a, z_row.b, z_row.c) == (1.0, 0.0, 0.0)


def test_gravity_curvature_25fps():
    cfg = standard_config("volleyball", fps=25.0)
    flying = cfg.state_named("flying").id
    z_row = next(r for r in cfg.physics if r.state == flying and r.axis == 2)
    assert z_row.f == pytest.approx(-1.5696e-2, rel=1e-12)


def test_ballistic_x_row_pins_acceleration_to_zero():
    cfg = standard_config("volleyball")
    flying = cfg.state_named("flying").id
    x_row = next(r for r in cfg.physics if r.state == flying and r.axis == 0)
    assert (x_row.a, x_row.b, x_row.c, x_row.f) == (1.0, 0.0, 0.0, 0.0)


def test_rolling_rows_soccer():
    cfg = standard_config("soccer")
    rolling = cfg.state_named("rolling").id
    rows = {r.axis: r for r in cfg.physics_for(rolling)}
    assert (rows[0].a, rows[0].b, rows[0].c, rows[0].f) == (1.0, 0.0, 0.0, 0.0)
    assert (rows[1].a, rows[1].b, rows[1].c, rows[1].f) == (1.0, 0.0, 0.0, 0.0)
    # z is pinned to the ground height by a zeroth-order row
    assert (rows[2].a, rows[2].b, rows[2].c) == (0.0, 0.0, 1.0)
    assert rows[2].f == cfg.ground_z


def test_ballistic_exclusion_covers_ground_bounce():
    cfg = standard_config("volleyball")
    flying = cfg.state_named("flying").id
    z_row = next(r for r in cfg.physics if r.state == flying and r.axis == 2)
    assert z_row.excluded((9.0, 4.5, 0.1))     # bouncing height
    assert not z_row.excluded((9.0, 4.5, 2.0))  # clear of the slab


def test_big_dominates_lhs_on_random_triples():
    cfg = standard_config("volleyball")
    rng = np.random.default_rng(7)
    lo, hi = cfg.p_bounds()
    axes = {0: "x", 1: "y", 2: "z"}
    for row in cfg.physics:
        if row.is_vacuous():
            continue
        big = cfg.big_for(row)
        c = row.axis
        pts = rng.uniform(lo[c], hi[c], size=(10_000, 3))
        p2, p1, p0 = pts[:, 0], pts[:, 1], pts[:, 2]
        lhs = row.a * (p0 - 2 * p1 + p2) + row.b * (p0 - p1) + row.c * p0 - row.f
        assert np.max(np.abs(lhs)) < big, axes[c]


def test_speed_caps_scale_with_fps():
    cfg = standard_config("volleyball", fps=25.0)
    assert cfg.state_named("flying").max_speed == pytest.approx(14.0 / 25.0)
    assert cfg.state_named("strike").max_speed == pytest.approx(33.0 / 25.0)


def test_config_file_round_trip(tmp_path):
    cfg = standard_config("basketball", fps=25.0)
    p = tmp_path / "scene.toml"
    write_config(cfg, str(p))
    back = read_config(str(p))
    assert back.fps == cfg.fps
    assert back.court_min == cfg.court_min
    assert back.court_max == cfg.court_max
    assert back.band_radius == cfg.band_radius
    assert [s.name for s in back.states] == [s.name for s in cfg.states]
    assert [s.max_speed for s in back.states] == [s.max_speed for s in cfg.states]
    assert len(back.physics) == len(cfg.physics)
    for a, b in zip(back.physics, cfg.physics):
        assert (a.state, a.axis, a.a, a.b, a.c, a.f) == (b.state, b.axis, b.a, b.b, b.c, b.f)
        assert a.exclude == b.exclude


def test_unknown_sport_preset():
    with pytest.raises(ConfigError, match="cricket"):
        standard_config("cricket")


def test_near_border():
    cfg = standard_config("volleyball")  # court x in [0, 18], y in [0, 9]
    assert cfg.near_border((0.2, 4.5, 1.0), 0.5)
    assert not cfg.near_border((9.0, 4.5, 1.0), 0.5)
    # outside the court counts as near: distance to boundary is negative
    assert cfg.near_border((-1.0, 4.5, 1.0), 0.5)


def test_horizon_frames():
    cfg = standard_config("volleyball", fps=60.0)
    assert cfg.horizon_frames == 120
    cfg = standard_config("volleyball", fps=25.0, horizon_seconds=2.0)
    assert cfg.horizon_frames == 50
