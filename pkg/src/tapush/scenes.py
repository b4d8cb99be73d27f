"""Seeded experiment scenes, hand-authored presets and the JSON scene format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import _kernel
from .costs import CostParams, Task
from .world import (Goal, InvalidStateError, ObjectState, Rect, RobotGeometry, RobotState,
                    TableSpec, WorldState)

SCENE_FORMAT = "tapush-scene"
SCENE_VERSION = 1
BENCH_B = (0.0, 0.05, 0.075, 0.1)

# uniform sampling ranges for generated objects
BOX_HALF_EXTENT = (0.05, 0.075)
BOX_HEIGHT = (0.036, 0.05)
DISC_RADIUS = (0.04, 0.07)
DISC_HEIGHT = (0.04, 0.05)
MASS = (0.2, 0.8)
FRICTION = (0.2, 0.6)

TABLE_LENGTH = 0.6
WIDE_WIDTH = 0.6
STRIP_WIDTH = 0.15
GOAL_CENTER = (0.0, 0.45)
GOAL_RADIUS = {"high": 0.04, "low": 0.12}
START_OFFSET = 0.1  # mean distance of the pushed object from the lower edge
# The start position spread is given as "variance 0.01 m". We read it as a
# variance in m^2 (std 0.1 m); the literal reading is a std of 0.01 m.
POSITION_STD = {"variance": 0.1, "std": 0.01}
ROBOT_CLEARANCE = 0.02  # gap between the palm face and the pushed object at start


@dataclass(frozen=True)
class SceneSpec:
    table: TableSpec
    robot: RobotState
    objects: tuple[ObjectState, ...]
    task: str = "push"
    target: int = 0
    b: float = 0.0
    name: str = ""
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.task not in ("push", "grasp"):
            raise InvalidStateError(f"unknown task {self.task!r}")
        if not 0 <= self.target < len(self.objects):
            raise InvalidStateError("target index out of range")
        if not self.b >= 0:
            raise InvalidStateError("b must be >= 0")
        if self.task == "push" and self.table.goal is None:
            raise InvalidStateError("a pushing scene needs a goal")
        for i, o in enumerate(self.objects):
            if not self.table.contains(o.position):
                raise InvalidStateError(f"object {i} starts off the table")
        for i in range(len(self.objects)):
            for j in range(i):
                if clearance(self.objects[i], self.objects[j]) < 0:
                    raise InvalidStateError(f"objects {j} and {i} overlap")

    def initial_state(self) -> WorldState:
        return WorldState(self.robot, self.objects, 0.0)

    def make_task(self, params: CostParams | None = None,
                  geometry: RobotGeometry | None = None) -> Task:
        params = params or CostParams(safe_margin=self.table.safe_margin)
        return Task(self.task, self.table, self.target, params, geometry or RobotGeometry())

    def with_b(self, b: float) -> "SceneSpec":
        return replace(self, b=float(b))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        t = self.table
        return {
            "format": SCENE_FORMAT, "version": SCENE_VERSION, "name": self.name,
            "seed": self.seed, "task": self.task, "target": self.target, "b": self.b,
            "table": {
                "boundary": t.boundary.tolist(), "safe_margin": t.safe_margin,
                "obstacles": [o.as_row() for o in t.obstacles],
                "regions": [r.as_row() for r in t.regions],
                "goal": None if t.goal is None else {"center": list(t.goal.center),
                                                     "radius": t.goal.radius},
            },
            "robot": {"q": self.robot.q.tolist()},
            "objects": [{"shape": o.shape, "dims": list(o.dims), "mass": o.mass,
                         "friction": o.friction, "pose": o.pose.tolist(), "height": o.height}
                        for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        if d.get("format") != SCENE_FORMAT:
            raise InvalidStateError("not a scene file")
        if d.get("version") != SCENE_VERSION:
            raise InvalidStateError(f"unsupported scene version {d.get('version')!r}")
        t = d["table"]
        goal = None if t.get("goal") is None else Goal(tuple(t["goal"]["center"]),
                                                       t["goal"]["radius"])

        def rect(row):
            return Rect((row[0], row[1]), (row[2], row[3]), row[4])

        table = TableSpec(t["boundary"], t.get("safe_margin", 0.05),
                          [rect(r) for r in t.get("obstacles", [])], goal,
                          [rect(r) for r in t.get("regions", [])])
        objects = [ObjectState(o["shape"], tuple(o["dims"]), o["mass"], o["friction"],
                               np.array(o["pose"], float), height=o.get("height", 0.05))
                   for o in d["objects"]]
        return cls(table, RobotState(d["robot"]["q"]), tuple(objects), d.get("task", "push"),
                   d.get("target", 0), d.get("b", 0.0), d.get("name", ""), d.get("seed"))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def clearance(a: ObjectState, b: ObjectState) -> float:
    """Separation between two object footprints; negative when they overlap."""
    if a.shape == "disc" and b.shape == "disc":
        return float(np.hypot(*(a.position - b.position))) - a.dims[0] - b.dims[0]
    if a.shape == "box" and b.shape == "disc":
        a, b = b, a
    if b.shape == "box" and a.shape == "disc":
        d = _kernel.box_distance(a.pose[0], a.pose[1], b.pose[0], b.pose[1], b.dims[0],
                                 b.dims[1], b.pose[2])
        return d - a.dims[0]
    from shapely.geometry import Polygon

    ca = Rect(tuple(a.position), a.dims, a.pose[2]).corners()
    cb = Rect(tuple(b.position), b.dims, b.pose[2]).corners()
    # separating-axis test: a negative result is the minimum translation depth
    sep = -math.inf
    for ang in (a.pose[2], b.pose[2]):
        for axis in ((math.cos(ang), math.sin(ang)), (-math.sin(ang), math.cos(ang))):
            pa, pb = ca @ axis, cb @ axis
            sep = max(sep, pb.min() - pa.max(), pa.min() - pb.max())
    if sep < 0:
        return float(sep)
    return float(Polygon(ca).distance(Polygon(cb)))


# ---------------------------------------------------------------------------
# sampling


def sample_object(rng: np.random.Generator, shape: str | None = None) -> dict:
    """Shape, dimensions, height, mass and friction from the benchmark ranges."""
    if shape is None:
        shape = "box" if rng.random() < 0.5 else "disc"
    if shape == "box":
        dims = (float(rng.uniform(*BOX_HALF_EXTENT)), float(rng.uniform(*BOX_HALF_EXTENT)))
        height = float(rng.uniform(*BOX_HEIGHT))
    else:
        dims = (float(rng.uniform(*DISC_RADIUS)),)
        height = float(rng.uniform(*DISC_HEIGHT))
    return {"shape": shape, "dims": dims, "height": height,
            "mass": float(rng.uniform(*MASS)), "friction": float(rng.uniform(*FRICTION))}


def robot_behind(obj: ObjectState, toward, geometry: RobotGeometry | None = None,
                 clearance_: float = ROBOT_CLEARANCE, opening: float | None = None) -> RobotState:
    """Robot facing ``toward`` with its palm face ``clearance_`` behind the object."""
    geometry = geometry or RobotGeometry()
    d = np.asarray(toward, float) - obj.position
    n = float(np.hypot(*d))
    u = d / n if n > 0 else np.array([0.0, 1.0])
    theta = math.atan2(u[1], u[0])
    if obj.shape == "disc":
        extent = obj.dims[0]
    else:
        c, s = math.cos(obj.pose[2]), math.sin(obj.pose[2])
        extent = abs(u[0] * c + u[1] * s) * obj.dims[0] + abs(-u[0] * s + u[1] * c) * obj.dims[1]
    back = extent + clearance_ + geometry.palm_half_depth
    pos = obj.position - u * back
    op = geometry.max_opening if opening is None else opening
    return RobotState([pos[0], pos[1], theta, op])


def push_table(accuracy: str) -> TableSpec:
    if accuracy not in GOAL_RADIUS:
        raise ValueError(f"accuracy must be 'high' or 'low', got {accuracy!r}")
    width = STRIP_WIDTH if accuracy == "high" else WIDE_WIDTH
    return TableSpec.rectangle(width, TABLE_LENGTH, goal=Goal(GOAL_CENTER, GOAL_RADIUS[accuracy]))


def generate_push_scene(accuracy: str, seed: int, b: float = 0.0,
                        position_spread: str = "variance", max_tries: int = 10000) -> SceneSpec:
    """Random pushing scene: one object below the goal, robot behind it.

    The start position is redrawn until the object is in the safe zone,
    outside the goal and below it.
    """
    table = push_table(accuracy)
    rng = np.random.default_rng(seed)
    spec = sample_object(rng)
    std = POSITION_STD[position_spread]
    gx, gy = GOAL_CENTER
    _, y0, _, _ = table.bounds()
    for _ in range(max_tries):
        x, y = rng.normal((gx, y0 + START_OFFSET), std)
        pos = (float(x), float(y))
        if (table.in_safe_zone(pos) and math.hypot(x - gx, y - gy) > table.goal.radius
                and y < gy):
            break
    else:
        raise RuntimeError("could not place the pushed object")
    obj = ObjectState(spec["shape"], spec["dims"], spec["mass"], spec["friction"],
                      np.array([pos[0], pos[1], 0.0]), height=spec["height"])
    robot = robot_behind(obj, GOAL_CENTER)
    return SceneSpec(table, robot, (obj,), "push", 0, b, f"push-{accuracy}", seed)


def generate_clutter_scene(num_objects: int, seed: int, b: float = 0.0,
                           max_tries: int = 2000) -> SceneSpec:
    """Grasping scene on the wide table: a target plus ``num_objects - 1`` others.

    Object 0 is the target; boxes get a uniformly random heading.
    """
    if num_objects < 1:
        raise ValueError("num_objects must be >= 1")
    table = TableSpec.rectangle(WIDE_WIDTH, TABLE_LENGTH)
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = table.bounds()
    objects: list[ObjectState] = []
    opening = RobotGeometry().max_opening
    for i in range(num_objects):
        spec = sample_object(rng)
        while i == 0 and 2 * min(spec["dims"]) >= opening:  # the target must fit the gripper
            spec = sample_object(rng)
        for _ in range(max_tries):
            heading = float(rng.uniform(0, 2 * math.pi)) if spec["shape"] == "box" else 0.0
            # keep the lowest strip free for the robot
            pos = (float(rng.uniform(x0, x1)), float(rng.uniform(y0 + 0.2, y1)))
            obj = ObjectState(spec["shape"], spec["dims"], spec["mass"], spec["friction"],
                              np.array([pos[0], pos[1], heading]), height=spec["height"])
            if table.in_safe_zone(pos) and all(clearance(obj, o) >= 0 for o in objects):
                objects.append(obj)
                break
        else:
            raise RuntimeError(f"could not place object {i} after {max_tries} attempts")
    target = objects[0]
    robot = RobotState([target.pose[0], y0 - RobotGeometry().reach, math.pi / 2, opening])
    return SceneSpec(table, robot, tuple(objects), "grasp", 0, b, "clutter", seed)


# ---------------------------------------------------------------------------
# presets


def _disc(x, y, r=0.05, mass=0.5, friction=0.4) -> ObjectState:
    return ObjectState("disc", (r,), mass, friction, np.array([x, y, 0.0]), height=0.045)


def _box(x, y, hx=0.06, hy=0.06, heading=0.0, mass=0.5, friction=0.4) -> ObjectState:
    return ObjectState("box", (hx, hy), mass, friction, np.array([x, y, heading]), height=0.045)


def preset_scene(name: str, b: float = 0.0) -> SceneSpec:
    """Fixed layouts: strip, wide, l-shape, changing, clutter-grasp."""
    if name == "strip":
        obj = _disc(0.0, 0.1)
        return SceneSpec(push_table("high"), robot_behind(obj, GOAL_CENTER), (obj,), "push", 0,
                         b, name)
    if name == "wide":
        obj = _disc(0.05, 0.1)
        return SceneSpec(push_table("low"), robot_behind(obj, GOAL_CENTER), (obj,), "push", 0,
                         b, name)
    if name == "l-shape":
        # vertical leg up the left side, horizontal leg along the top
        rects = [Rect((-0.2, 0.3), (0.1, 0.3)), Rect((0.05, 0.525), (0.35, 0.075))]
        goal = Goal((0.3, 0.525), 0.05)
        table = TableSpec.from_rects(rects, goal=goal, safe_margin=0.03)
        obj = _disc(-0.2, 0.1, r=0.04)
        return SceneSpec(table, robot_behind(obj, (-0.2, 0.6)), (obj,), "push", 0, b, name)
    if name == "changing":
        # a long wide area feeding a narrow strip with a small goal near its end
        rects = [Rect((0.0, 0.5), (0.3, 0.5)), Rect((0.0, 1.3), (STRIP_WIDTH / 2, 0.3))]
        goal = Goal((0.0, 1.5), 0.04)
        table = TableSpec.from_rects(rects, goal=goal)
        obj = _disc(0.0, 0.1)
        return SceneSpec(table, robot_behind(obj, goal.center), (obj,), "push", 0, b, name)
    if name == "clutter-grasp":
        table = TableSpec.rectangle(WIDE_WIDTH, TABLE_LENGTH)
        target = _disc(0.0, 0.5, r=0.03, mass=0.3)
        others = (_box(-0.12, 0.48, 0.04, 0.04, 0.3), _disc(0.12, 0.49, 0.04),
                  _disc(-0.07, 0.35, 0.035), _box(0.08, 0.36, 0.035, 0.05, -0.4),
                  _disc(0.0, 0.22, 0.04))
        robot = RobotState([0.0, -0.02, math.pi / 2, RobotGeometry().max_opening])
        return SceneSpec(table, robot, (target,) + others, "grasp", 0, b, name)
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("strip", "wide", "l-shape", "changing", "clutter-grasp")
