import json
import math

import numpy as np
import pytest

from conftest import box, disc
from tapush.scenes import (BOX_HALF_EXTENT, BOX_HEIGHT, DISC_HEIGHT, DISC_RADIUS, FRICTION,
                           GOAL_RADIUS, MASS, PRESETS, SceneSpec, clearance,
                           generate_clutter_scene, generate_push_scene, preset_scene,
                           push_table)
from tapush.world import InvalidStateError, ObjectState, RobotGeometry


def within(value, interval):
    lo, hi = interval
    return lo <= value <= hi


def range_violations(scene):
    """Footnote intervals an object of ``scene`` falls outside of."""
    bad = []
    for o in scene.objects:
        if o.shape == "box":
            if not all(within(d, BOX_HALF_EXTENT) for d in o.dims):
                bad.append(("box extents", o.dims))
            if not within(o.height, BOX_HEIGHT):
                bad.append(("box height", o.height))
        elif o.shape == "disc":
            if not within(o.dims[0], DISC_RADIUS):
                bad.append(("radius", o.dims))
            if not within(o.height, DISC_HEIGHT):
                bad.append(("disc height", o.height))
        else:
            bad.append(("shape", o.shape))
        if not within(o.mass, MASS):
            bad.append(("mass", o.mass))
        if not within(o.friction, FRICTION):
            bad.append(("friction", o.friction))
        if not scene.table.contains(o.position):
            bad.append(("off table", o.pose))
    return bad


def test_footnote_intervals_hold_over_many_seeds():
    shapes = set()
    bad = []
    for seed in range(10_000):
        scene = generate_push_scene("high" if seed % 2 else "low", seed)
        shapes.add(scene.objects[0].shape)
        bad += range_violations(scene)
    assert bad == []
    assert shapes == {"box", "disc"}


def test_push_scene_layout():
    for seed in range(200):
        for acc in ("high", "low"):
            s = generate_push_scene(acc, seed)
            o = s.objects[0]
            gx, gy = s.table.goal.center
            assert s.table.in_safe_zone(o.position)
            assert math.hypot(o.pose[0] - gx, o.pose[1] - gy) > s.table.goal.radius
            assert o.pose[1] < gy
            # the robot starts behind the object without touching it
            fwd = s.robot.forward()
            rel = o.position - np.array([s.robot.x, s.robot.y])
            assert rel @ fwd > RobotGeometry().palm_half_depth


def test_generators_are_deterministic():
    assert generate_push_scene("high", 42) == generate_push_scene("high", 42)
    assert generate_push_scene("high", 42).dumps() == generate_push_scene("high", 42).dumps()
    assert generate_push_scene("high", 42).dumps() != generate_push_scene("high", 43).dumps()
    assert generate_clutter_scene(5, 9).dumps() == generate_clutter_scene(5, 9).dumps()


def test_preset_ordering():
    lo, hi = push_table("low"), push_table("high")
    assert GOAL_RADIUS["low"] > GOAL_RADIUS["high"]
    assert lo.goal.radius > hi.goal.radius
    width = lambda t: t.bounds()[2] - t.bounds()[0]  # noqa: E731
    assert width(hi) < width(lo)
    with pytest.raises(ValueError):
        push_table("medium")


def test_position_spread_option():
    wide = [generate_push_scene("low", s).objects[0].pose[0] for s in range(300)]
    narrow = [generate_push_scene("low", s, position_spread="std").objects[0].pose[0]
              for s in range(300)]
    assert np.std(narrow) < 0.02 < np.std(wide)


# -- presets -------------------------------------------------------------------


@pytest.mark.parametrize("name", PRESETS)
def test_presets_are_valid_and_round_trip(name):
    s = preset_scene(name, 0.05)
    assert s.b == 0.05 and s.name == name
    again = SceneSpec.from_dict(json.loads(s.dumps()))
    assert again == s
    assert again.dumps() == s.dumps()


def test_l_shape_is_union_of_two_rectangles():
    s = preset_scene("l-shape")
    assert len(s.table.regions) == 2
    assert len(s.table.boundary) == 6
    gx, gy = s.table.goal.center
    assert s.table.contains((gx, gy))


def test_changing_preset_has_wide_region_feeding_strip():
    s = preset_scene("changing")
    wide, strip = s.table.regions
    assert strip.half_extents[0] < wide.half_extents[0]
    # the goal sits in the strip, the object starts in the wide part
    gx, gy = s.table.goal.center
    assert abs(gy - strip.center[1]) <= strip.half_extents[1]
    assert s.objects[0].pose[1] < wide.center[1] + wide.half_extents[1]


def test_clutter_grasp_preset():
    s = preset_scene("clutter-grasp")
    assert s.task == "grasp" and len(s.objects) >= 5
    target = s.objects[s.target]
    _, _, _, y1 = s.table.bounds()
    assert y1 - target.pose[1] <= 0.15  # near the far edge
    assert target.width < RobotGeometry().max_opening


def test_unknown_preset():
    with pytest.raises(ValueError):
        preset_scene("maze")


# -- validation ----------------------------------------------------------------


def test_scene_invariants_checked():
    table = push_table("low")
    rob = preset_scene("wide").robot
    with pytest.raises(InvalidStateError):
        SceneSpec(table, rob, (disc(0.0, 0.2), disc(0.05, 0.2)))
    with pytest.raises(InvalidStateError):
        SceneSpec(table, rob, (disc(0.5, 0.2),))
    with pytest.raises(InvalidStateError):
        SceneSpec(table, rob, (disc(0.0, 0.2),), b=-0.1)
    with pytest.raises(InvalidStateError):
        SceneSpec(table, rob, (disc(0.0, 0.2),), target=1)
    with pytest.raises(InvalidStateError):
        SceneSpec.from_dict({"format": "something-else"})


def test_clearance_oracles():
    assert clearance(disc(0, 0, 0.05), disc(0.2, 0, 0.05)) == pytest.approx(0.1)
    assert clearance(disc(0, 0, 0.05), disc(0.08, 0, 0.05)) == pytest.approx(-0.02)
    assert clearance(box(0, 0, 0.05, 0.05), disc(0.2, 0, 0.05)) == pytest.approx(0.1)
    assert clearance(box(0, 0, 0.05, 0.05), box(0.2, 0, 0.05, 0.05)) == pytest.approx(0.1)
    assert clearance(box(0, 0, 0.05, 0.05), box(0.09, 0, 0.05, 0.05)) == pytest.approx(-0.01)
    rotated = box(0.0, 0.0, 0.05, 0.05, heading=math.pi / 4)
    assert clearance(rotated, box(0.2, 0, 0.05, 0.05)) == pytest.approx(0.15 - 0.05 * math.sqrt(2))


# -- clutter -------------------------------------------------------------------


def test_clutter_single_object_is_plain_grasp_scene():
    s = generate_clutter_scene(1, 3)
    assert len(s.objects) == 1 and s.task == "grasp" and s.target == 0


def test_clutter_clearances_over_many_seeds():
    for seed in range(1000):
        s = generate_clutter_scene(6, seed)
        objs = s.objects
        for i in range(len(objs)):
            for j in range(i):
                assert clearance(objs[i], objs[j]) >= 0, seed
        assert range_violations(s) == []
        assert objs[s.target].width < RobotGeometry().max_opening


def test_clutter_rejects_bad_count():
    with pytest.raises(ValueError):
        generate_clutter_scene(0, 0)


def test_with_b_and_task():
    s = generate_push_scene("low", 1).with_b(0.075)
    assert s.b == 0.075
    task = s.make_task()
    assert task.kind == "push" and task.params.safe_margin == s.table.safe_margin
    assert isinstance(s.initial_state().objects[0], ObjectState)
