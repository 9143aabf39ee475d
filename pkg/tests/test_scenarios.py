import json
import math
from pathlib import Path

import numpy as np
import pytest

from gsnbv.geometry import PickingRing, Viewpoint, ring_point
from gsnbv.perception import pick_report
from gsnbv.scenarios import (
    BUILTINS,
    Scenario,
    builtin_group1,
    builtin_group2,
    fruit_pixels,
    fruit_visibility,
    load_scenario,
    random_scenario,
    resolve_scenario,
)
from gsnbv.scene import render

SCENES = Path(__file__).resolve().parent.parent / "scenes"


def _ring_view(sc, deg):
    gt = sc.ground_truth
    ring = PickingRing(gt.position, gt.axis, 0.21)
    return Viewpoint.looking_at(ring_point(ring, math.radians(deg)), gt.position)


def test_group1_calibration():
    sc = builtin_group1()
    sc.validate()
    vis = fruit_visibility(sc.scene, sc.camera, sc.initial_pose)
    assert 0.23 <= vis <= 0.33
    rep, _ = pick_report(render(sc.scene, sc.camera, sc.initial_pose))
    assert rep.s_pick < 0.9


def test_group1_has_pickable_views():
    sc = builtin_group1()
    scores = [pick_report(render(sc.scene, sc.camera, _ring_view(sc, d)))[0].s_pick for d in range(-45, 226, 10)]
    assert max(scores) > 0.9


def test_group2_board_blocks_right_quarter():
    sc = builtin_group2()
    for deg in range(135, 226, 5):
        assert fruit_pixels(sc.scene, sc.camera, _ring_view(sc, deg)) == 0
    # same first view as group1
    g1 = builtin_group1()
    assert np.array_equal(sc.initial_position, g1.initial_position)


@pytest.mark.parametrize("name", ["group1", "group2"])
def test_shipped_files_match_builtins(name):
    from_file = load_scenario(SCENES / f"{name}.json")
    assert from_file.to_dict() == BUILTINS[name]().to_dict()


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_json_roundtrip_exact(name, tmp_path):
    sc = BUILTINS[name]()
    path = tmp_path / "s.json"
    sc.save(path)
    again = load_scenario(path)
    assert again.to_dict() == sc.to_dict()
    a = render(sc.scene, sc.camera, sc.initial_pose)
    b = render(again.scene, again.camera, again.initial_pose)
    assert np.array_equal(a.semantic, b.semantic)
    assert np.array_equal(a.depth, b.depth, equal_nan=True)


def test_schema_keys():
    d = builtin_group2().to_dict()
    assert set(d) >= {"name", "camera", "initial_pose", "fruit", "peduncle", "occluders", "ground_truth", "config_overrides"}
    assert {o["type"] for o in d["occluders"]} == {"disc", "box"}


def test_config_overrides_roundtrip():
    d = builtin_group1().to_dict()
    d["config_overrides"] = {"n_max": 5}
    assert Scenario.from_dict(d).config_overrides == {"n_max": 5}


def test_load_errors(tmp_path):
    with pytest.raises(ValueError):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValueError):
        load_scenario(bad)
    d = builtin_group1().to_dict()
    d["fruit"]["axis"] = [1.0, 0.0, 0.0]
    bad.write_text(json.dumps(d))
    with pytest.raises(ValueError):
        load_scenario(bad)


def test_resolve():
    assert resolve_scenario("group1").name == "group1"
    assert resolve_scenario(str(SCENES / "group2.json")).name == "group2"


def test_builtins_seed_independent():
    assert builtin_group1().to_dict() == builtin_group1().to_dict()


def test_random_scenario():
    a, b = random_scenario(4), random_scenario(4)
    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != random_scenario(5).to_dict()
    for seed in range(5):
        sc = random_scenario(seed, n_leaves=6)
        sc.validate()
    with pytest.raises(ValueError):
        random_scenario(0, n_leaves=-1)
