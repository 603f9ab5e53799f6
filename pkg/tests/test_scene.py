import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vsfscan.errors import GenerationInfeasibleError, SceneParseError, SceneValidationError
from vsfscan.scene import (Box, Pose, SceneSpec, free_space_components, gen_scene, load_scene, rasterize,
                           save_scene, validate)

from conftest import room_spec


def minimal_doc():
    return {
        "resolution": 0.1,
        "extents": [40, 40, 20],
        "labels": ["wall", "sofa"],
        "boxes": [
            {"min": [0, 0, 0], "max": [4, 0.1, 2], "label": 0, "structure": True},
            {"min": [0, 3.9, 0], "max": [4, 4, 2], "label": 0, "structure": True},
            {"min": [0, 0, 0], "max": [0.1, 4, 2], "label": 0, "structure": True},
            {"min": [3.9, 0, 0], "max": [4, 4, 2], "label": 0, "structure": True},
            {"min": [0.5, 0.5, 0], "max": [1.5, 1.0, 0.8], "label": 1},
        ],
        "start": {"x": 2.0, "y": 2.0, "theta": 0.0},
    }


def test_load_minimal_room(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(minimal_doc()))
    spec = load_scene(p)
    assert len(spec.boxes) == 5
    assert len(spec.labels) >= 1
    assert spec.boxes[4].structure is False
    save_scene(spec, tmp_path / "t.json")
    assert load_scene(tmp_path / "t.json") == spec


def test_start_inside_wall_names_start_pose(tmp_path):
    doc = minimal_doc()
    doc["start"] = {"x": 0.05, "y": 2.0, "theta": 0.0}
    p = tmp_path / "s.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(SceneValidationError) as e:
        load_scene(p)
    assert e.value.field == "start_pose"


def test_box_outside_extents_names_index(tmp_path):
    doc = minimal_doc()
    doc["resolution"] = 0.05
    doc["extents"] = [80, 80, 40]
    doc["boxes"][4]["max"] = [5.0, 1.0, 0.8]
    p = tmp_path / "s.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(SceneValidationError) as e:
        load_scene(p)
    assert e.value.field == "boxes[4]"


@pytest.mark.parametrize("text", ["{not json", "[]", '{"resolution": 0.1}'])
def test_parse_errors(tmp_path, text):
    p = tmp_path / "s.json"
    p.write_text(text)
    with pytest.raises(SceneParseError):
        load_scene(p)


def test_missing_file(tmp_path):
    with pytest.raises(SceneParseError):
        load_scene(tmp_path / "nope.json")


def test_no_objects_rejected():
    spec = room_spec()
    with pytest.raises(SceneValidationError):
        validate(spec)


def test_rasterize_empty():
    spec = SceneSpec(0.1, (10, 10, 10), ("a",), (), Pose(0.5, 0.5))
    gt = rasterize(spec)
    assert not gt.occupancy.any() and not gt.label.any()


def test_rasterize_unit_cube():
    spec = SceneSpec(0.05, (40, 40, 40), ("a",), (Box((0.5, 0.5, 0.5), (1.5, 1.5, 1.5), 0),), Pose(0.1, 0.1))
    gt = rasterize(spec)
    assert gt.occupancy.sum() == 8000
    assert (gt.label == 1).sum() == 8000


def test_rasterize_last_box_wins():
    boxes = (Box((0, 0, 0), (1, 1, 1), 1), Box((0.5, 0, 0), (1.5, 1, 1), 2))
    spec = SceneSpec(0.1, (20, 10, 10), ("wall", "sofa", "table"), boxes, Pose(1.8, 0.5))
    gt = rasterize(spec)
    assert gt.label[7, 5, 5] == 3  # overlap -> table
    assert gt.label[2, 5, 5] == 2


def test_furniture_beats_structure_regardless_of_order():
    boxes = (Box((0, 0, 0), (1, 1, 1), 1), Box((0, 0, 0), (1, 1, 1), 0, True))
    spec = SceneSpec(0.1, (10, 10, 10), ("wall", "sofa"), boxes, Pose(0.5, 0.5))
    gt = rasterize(spec)
    assert (gt.label[gt.occupancy] == 2).all()
    assert gt.object_mask.sum() == 1000


def test_rasterize_deterministic(room):
    assert rasterize(room) == rasterize(room)


def test_pose_normalizes_theta():
    assert Pose(0, 0, -0.5).theta == pytest.approx(2 * math.pi - 0.5)
    assert Pose(0, 0, 4 * math.pi).theta == 0.0
    assert 0 <= Pose(0, 0, -1e-18).theta < 2 * math.pi


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_pose_theta_range(th):
    assert 0.0 <= Pose(0, 0, th).theta < 2 * math.pi


def test_gen_empty_room():
    spec = gen_scene(1, 0.0, (6, 6), 7)
    assert sum(1 for b in spec.boxes if not b.structure) == 0
    walls = [b for b in spec.boxes if b.structure and spec.labels[b.label] == "wall"]
    floors = [b for b in spec.boxes if spec.labels[b.label] == "floor"]
    assert len(walls) == 4 and len(floors) == 1


def test_gen_deterministic():
    a = gen_scene(2, 0.3, (8, 6), 3, resolution=0.1)
    b = gen_scene(2, 0.3, (8, 6), 3, resolution=0.1)
    assert a.dumps() == b.dumps()


def test_gen_three_rooms_connected():
    spec = gen_scene(3, 0.1, (12, 10), 1, resolution=0.1)
    gt = validate(spec)
    assert free_space_components(gt) == 1
    assert any(not b.structure for b in spec.boxes)


@given(st.integers(1, 3), st.floats(0.0, 0.5), st.integers(0, 10_000))
def test_gen_invariants(rooms, density, seed):
    try:
        spec = gen_scene(rooms, density, (9, 7), seed, resolution=0.1)
    except GenerationInfeasibleError:
        return
    gt = rasterize(spec)
    assert free_space_components(gt) == 1
    assert np.all(gt.occupancy[gt.label > 0])
    assert gt.shape == spec.extents


def test_gen_rejects_small_extents():
    with pytest.raises(GenerationInfeasibleError) as e:
        gen_scene(1, 0.1, (3, 6), 0)
    assert "seed=0" in str(e.value)
