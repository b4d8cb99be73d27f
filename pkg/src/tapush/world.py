"""Planar tabletop world: state types, deterministic/stochastic stepping, predicates.

The robot is a kinematic planar gripper (palm plus two fingers) driven by
joint velocities ``(vx, vy, omega, opening_rate)``. Objects are discs or
boxes sliding on the table under Coulomb friction. The heavy lifting is in
``_kernel.simulate``; this module owns the value types and the contracts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import _kernel

GRAVITY = 9.81
JOINTS = ("x", "y", "rotation", "gripper")


class InvalidStateError(ValueError):
    """Raised for non-finite states or controls and malformed inputs."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RobotGeometry:
    """Gripper dimensions in metres (all half-extents except the opening).

    Sized after a 140 mm-stroke two-finger industrial gripper.
    """

    palm_half_depth: float = 0.01
    palm_half_width: float = 0.1
    finger_half_length: float = 0.03
    finger_half_width: float = 0.01
    max_opening: float = 0.14

    def as_array(self) -> np.ndarray:
        return np.array([self.palm_half_depth, self.palm_half_width, self.finger_half_length,
                         self.finger_half_width, self.max_opening])

    @property
    def reach(self) -> float:
        """Distance from the robot origin to the fingertip line."""
        return self.palm_half_depth + 2.0 * self.finger_half_length


@dataclass(frozen=True)
class PhysicsConfig:
    substep: float = 0.002
    gravity: float = GRAVITY
    robot_friction: float = 0.5
    static_friction: float = 0.5
    slop: float = 0.001
    contact_margin: float = 0.004
    iterations: int = 10
    projection_iterations: int = 20
    rest_linear: float = 1e-3
    rest_angular: float = 1e-2
    # scales the uniform-pressure torsional friction model; 0 disables it
    torsional_friction: float = 1.0
    speed_limits: tuple[float, float, float, float] = (1.0, 1.0, math.pi, 0.14)
    quasi_static_speed: float = 0.1
    geometry: RobotGeometry = field(default_factory=RobotGeometry)

    def as_array(self) -> np.ndarray:
        return np.array([self.gravity, self.robot_friction, self.static_friction, self.slop,
                         self.contact_margin, self.iterations, self.projection_iterations,
                         self.rest_linear, self.rest_angular])

    def substeps(self, duration: float) -> int:
        n = duration / self.substep
        k = int(round(n))
        if k < 0 or abs(n - k) > 1e-9 * max(1.0, n):
            raise InvalidStateError(
                f"duration {duration} s is not a multiple of the {self.substep} s sub-step")
        return k


# ---------------------------------------------------------------------------
# state


@dataclass(frozen=True, eq=False)
class RobotState:
    """Joint positions ``(x, y, rotation, opening)`` and their velocities."""

    q: np.ndarray
    qd: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.shape != (4,):
            raise InvalidStateError("robot q must have 4 components")
        q[2] = _kernel.wrap_angle(q[2])
        q[3] = max(q[3], 0.0)
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "qd", _frozen(self.qd))

    @property
    def x(self) -> float:
        return float(self.q[0])

    @property
    def y(self) -> float:
        return float(self.q[1])

    @property
    def theta(self) -> float:
        return float(self.q[2])

    @property
    def opening(self) -> float:
        return float(self.q[3])

    def forward(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    def __eq__(self, other):
        return (isinstance(other, RobotState) and np.array_equal(self.q, other.q)
                and np.array_equal(self.qd, other.qd))


@dataclass(frozen=True, eq=False)
class ObjectState:
    """A dynamic disc or box.

    ``dims`` is ``(radius,)`` for discs and ``(half_x, half_y)`` for boxes.
    ``fall_push`` keeps the distance the object travelled during the
    transition in which it fell; the edge cost reuses it afterwards.
    """

    shape: str
    dims: tuple[float, ...]
    mass: float
    friction: float
    pose: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    fallen: bool = False
    fall_push: float = 0.0
    height: float = 0.05

    def __post_init__(self):
        if self.shape not in ("disc", "box"):
            raise InvalidStateError(f"unknown shape {self.shape!r}")
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != (1 if self.shape == "disc" else 2) or min(dims) <= 0:
            raise InvalidStateError(f"bad dimensions {self.dims} for {self.shape}")
        if not self.mass > 0 or not self.friction >= 0:
            raise InvalidStateError("mass must be > 0 and friction >= 0")
        pose = np.array(self.pose, dtype=float)
        if pose.shape == (2,):
            pose = np.append(pose, 0.0)
        pose[2] = _kernel.wrap_angle(pose[2])
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "pose", _frozen(pose))
        object.__setattr__(self, "velocity", _frozen(self.velocity))
        object.__setattr__(self, "fallen", bool(self.fallen))

    @property
    def position(self) -> np.ndarray:
        return self.pose[:2]

    @property
    def inertia(self) -> float:
        if self.shape == "disc":
            return 0.5 * self.mass * self.dims[0] ** 2
        hx, hy = self.dims
        return self.mass * (hx * hx + hy * hy) / 3.0

    @property
    def width(self) -> float:
        """Narrowest graspable width."""
        return 2.0 * min(self.dims)

    @property
    def radius(self) -> float:
        """Bounding radius."""
        return self.dims[0] if self.shape == "disc" else math.hypot(*self.dims)

    def mean_contact_radius(self) -> float:
        """Mean distance from the centre over the footprint."""
        if self.shape == "disc":
            return 2.0 * self.dims[0] / 3.0
        a, b = self.dims
        d = math.hypot(a, b)
        return (d + a * a / (2 * b) * math.log((b + d) / a)
                + b * b / (2 * a) * math.log((a + d) / b)) / 3.0

    def kernel_dims(self) -> tuple[float, float]:
        return (self.dims[0], 0.0) if self.shape == "disc" else self.dims

    def speed(self) -> tuple[float, float]:
        return float(math.hypot(self.velocity[0], self.velocity[1])), float(abs(self.velocity[2]))

    def __eq__(self, other):
        return (isinstance(other, ObjectState) and self.shape == other.shape
                and self.dims == other.dims and self.mass == other.mass
                and self.friction == other.friction and self.fallen == other.fallen
                and self.fall_push == other.fall_push and self.height == other.height
                and np.array_equal(self.pose, other.pose)
                and np.array_equal(self.velocity, other.velocity))


@dataclass(frozen=True, eq=False)
class WorldState:
    robot: RobotState
    objects: tuple[ObjectState, ...]
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def __eq__(self, other):
        return (isinstance(other, WorldState) and self.time == other.time
                and self.robot == other.robot and self.objects == other.objects)

    def kinetic_energy(self) -> float:
        e = 0.0
        for o in self.objects:
            if not o.fallen:
                v = o.velocity
                e += 0.5 * o.mass * (v[0] ** 2 + v[1] ** 2) + 0.5 * o.inertia * v[2] ** 2
        return e

    def check_finite(self):
        arrays = [self.robot.q, self.robot.qd] + [o.pose for o in self.objects] + \
                 [o.velocity for o in self.objects]
        if not math.isfinite(self.time) or not all(np.isfinite(a).all() for a in arrays):
            raise InvalidStateError("state contains non-finite values")


# ---------------------------------------------------------------------------
# controls


@dataclass(frozen=True, eq=False)
class Control:
    """Joint velocity command held for ``duration`` seconds."""

    velocity: np.ndarray
    duration: float = 1.0

    def __post_init__(self):
        v = np.array(self.velocity, dtype=float)
        if v.shape != (4,):
            raise InvalidStateError("a control has one velocity per joint (4)")
        object.__setattr__(self, "velocity", _frozen(v))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.velocity))

    def __eq__(self, other):
        return (isinstance(other, Control) and self.duration == other.duration
                and np.array_equal(self.velocity, other.velocity))


class ControlSequence:
    """Ordered controls of a common duration, stored as an ``(n, 4)`` array."""

    def __init__(self, velocities, duration: float = 1.0):
        v = np.array(velocities, dtype=float).reshape(-1, 4)
        v.setflags(write=False)
        self.velocities = v
        self.duration = float(duration)

    def __len__(self) -> int:
        return self.velocities.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return ControlSequence(self.velocities[idx], self.duration)
        return Control(self.velocities[idx], self.duration)

    def __iter__(self) -> Iterator[Control]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        return (isinstance(other, ControlSequence) and self.duration == other.duration
                and np.array_equal(self.velocities, other.velocities))

    def __repr__(self):
        return f"ControlSequence(n={len(self)}, duration={self.duration})"

    def with_velocities(self, velocities) -> "ControlSequence":
        return ControlSequence(velocities, self.duration)

    def padded(self, n: int) -> "ControlSequence":
        """Extend with zero actions up to ``n`` controls."""
        extra = max(0, n - len(self))
        return ControlSequence(np.vstack([self.velocities, np.zeros((extra, 4))]), self.duration)


@dataclass(frozen=True)
class NoiseModel:
    """Velocity noise with standard deviation ``b * ||u||`` per channel.

    ``robot_scale`` multiplies the four robot channels, ``object_scale`` the
    (vx, vy, omega) channels of every object.
    """

    b: float = 0.0
    robot_scale: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    object_scale: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not self.b >= 0:
            raise InvalidStateError("noise slope b must be >= 0")

    def std(self, control: Control) -> float:
        return self.b * control.norm

    def channel_scale(self, n_objects: int, control: Control) -> np.ndarray:
        s = self.std(control)
        return s * np.concatenate([np.asarray(self.robot_scale, float),
                                   np.tile(np.asarray(self.object_scale, float), n_objects)])


# ---------------------------------------------------------------------------
# table


@dataclass(frozen=True)
class Goal:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidStateError("goal radius must be > 0")


@dataclass(frozen=True)
class Rect:
    """Oriented rectangle given by centre, half-extents and angle."""

    center: tuple[float, float]
    half_extents: tuple[float, float]
    angle: float = 0.0

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        hx, hy = self.half_extents
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)

    def as_row(self) -> list[float]:
        return [self.center[0], self.center[1], self.half_extents[0], self.half_extents[1],
                self.angle]


class TableSpec:
    """Table outline (a simple polygon), safe-zone margin, obstacles and goal.

    ``regions`` records the rectangles the outline was built from, when it
    was built from rectangles.
    """

    def __init__(self, boundary, safe_margin: float = 0.05, obstacles: Sequence[Rect] = (),
                 goal: Goal | None = None, regions: Sequence[Rect] = ()):
        poly = np.array(boundary, dtype=float)
        if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
            raise InvalidStateError("table boundary must be a polygon with >= 3 vertices")
        poly.setflags(write=False)
        self.boundary = poly
        self.safe_margin = float(safe_margin)
        self.obstacles = tuple(obstacles)
        self.goal = goal
        self.regions = tuple(regions)
        obs = np.array([o.as_row() for o in self.obstacles], dtype=float).reshape(-1, 5)
        obs.setflags(write=False)
        self.obstacle_array = obs
        if self.safe_margin < 0:
            raise InvalidStateError("safe margin must be >= 0")
        if self.safe_margin > 0 and not self._any_safe_point():
            raise InvalidStateError("safe zone is empty for this margin")

    def _any_safe_point(self) -> bool:
        lo, hi = self.boundary.min(axis=0), self.boundary.max(axis=0)
        xs = np.linspace(lo[0], hi[0], 41)
        ys = np.linspace(lo[1], hi[1], 41)
        return any(self.in_safe_zone((x, y)) for x in xs for y in ys)

    @classmethod
    def rectangle(cls, width: float, length: float, origin=(0.0, 0.0), **kw) -> "TableSpec":
        """Axis-aligned table spanning x in [-w/2, w/2] and y in [0, length]."""
        ox, oy = origin
        r = Rect((ox, oy + length / 2), (width / 2, length / 2))
        return cls(r.corners(), regions=(r,), **kw)

    @classmethod
    def from_rects(cls, rects: Sequence[Rect], **kw) -> "TableSpec":
        """Outline of the union of overlapping axis-aligned rectangles."""
        from shapely.geometry import Polygon
        from shapely.ops import unary_union

        union = unary_union([Polygon(r.corners()) for r in rects])
        if union.geom_type != "Polygon" or len(union.interiors) > 0:
            raise InvalidStateError("table rectangles must form one simply connected region")
        union = union.simplify(0.0)
        coords = np.array(union.exterior.coords)[:-1]
        return cls(coords, regions=tuple(rects), **kw)

    def contains(self, point) -> bool:
        return bool(_kernel.point_in_polygon(float(point[0]), float(point[1]), self.boundary))

    def in_safe_zone(self, point) -> bool:
        return bool(_kernel.in_safe_zone(float(point[0]), float(point[1]), self.boundary,
                                         self.safe_margin, self.obstacle_array))

    def bounds(self) -> tuple[float, float, float, float]:
        lo, hi = self.boundary.min(axis=0), self.boundary.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def __eq__(self, other):
        return (isinstance(other, TableSpec) and np.array_equal(self.boundary, other.boundary)
                and self.safe_margin == other.safe_margin and self.obstacles == other.obstacles
                and self.goal == other.goal)


# ---------------------------------------------------------------------------
# stepping


@dataclass(frozen=True)
class StepInfo:
    substeps: int
    max_penetration: float
    energy_gain: float
    frames: np.ndarray | None = None


class World:
    """A table plus physics configuration; steps states without mutating them."""

    def __init__(self, table: TableSpec, config: PhysicsConfig | None = None):
        self.table = table
        self.config = config or PhysicsConfig()
        self._geom = self.config.geometry.as_array()
        self._phys = self.config.as_array()
        self._limits = np.asarray(self.config.speed_limits, dtype=float)

    # -- packing ------------------------------------------------------------

    def clamp(self, velocity) -> np.ndarray:
        return np.clip(np.asarray(velocity, dtype=float), -self._limits, self._limits)

    def _pack(self, state: WorldState):
        objs = state.objects
        n = len(objs)
        pose = np.empty((n, 3))
        vel = np.empty((n, 3))
        fallen = np.empty(n, dtype=np.bool_)
        shape = np.empty(n, dtype=np.int64)
        dims = np.empty((n, 2))
        mass = np.empty(n)
        inertia = np.empty(n)
        mu = np.empty(n)
        torsion = np.empty(n)
        g = self.config.gravity
        for i, o in enumerate(objs):
            pose[i] = o.pose
            vel[i] = o.velocity
            fallen[i] = o.fallen
            shape[i] = _kernel.DISC if o.shape == "disc" else _kernel.BOX
            dims[i] = o.kernel_dims()
            mass[i] = o.mass
            inertia[i] = o.inertia
            mu[i] = o.friction
            torsion[i] = (self.config.torsional_friction * o.friction * g * o.mass
                          * o.mean_contact_radius() / o.inertia)
        return (np.array(state.robot.q), np.array(state.robot.qd), pose, vel, fallen, shape,
                dims, mass, inertia, mu, torsion)

    def _unpack(self, state, rq, rqd, pose, vel, fallen, elapsed) -> WorldState:
        objs = []
        for i, o in enumerate(state.objects):
            if (o.fallen == fallen[i] and np.array_equal(o.pose, pose[i])
                    and np.array_equal(o.velocity, vel[i])):
                objs.append(o)
            else:
                objs.append(replace(o, pose=pose[i], velocity=vel[i], fallen=bool(fallen[i])))
        robot = RobotState(rq, rqd)
        if robot == state.robot:
            robot = state.robot
        return WorldState(robot, tuple(objs), state.time + elapsed)

    # -- core ---------------------------------------------------------------

    def advance(self, state: WorldState, control: Control | None, duration: float,
                noise: NoiseModel | None = None, rng: np.random.Generator | None = None,
                settle: bool = False, record_every: int = 0) -> tuple[WorldState, StepInfo]:
        """Run the kernel and return the new state with diagnostics.

        ``record_every`` > 0 keeps a frame every that many sub-steps
        (rows of time offset, robot q, robot qd, then pose/vel/fallen per
        object).
        """
        state.check_finite()
        if duration < 0 or not math.isfinite(duration):
            raise InvalidStateError("duration must be finite and >= 0")
        n_sub = self.config.substeps(duration)
        if control is None:
            command = np.zeros(4)
        else:
            if not np.isfinite(control.velocity).all() or not math.isfinite(control.duration):
                raise InvalidStateError("control contains non-finite values")
            command = self.clamp(control.velocity)
        packed = self._pack(state)
        rq, rqd, pose, vel, fallen, shape, dims, mass, inertia, mu, torsion = packed
        n_obj = len(state.objects)
        if noise is not None and noise.b > 0 and not settle and n_sub > 0:
            if rng is None:
                raise InvalidStateError("stochastic stepping needs an explicit rng")
            scale = noise.channel_scale(n_obj, Control(command, duration))
            normals = rng.standard_normal((n_sub, 4 + 3 * n_obj))
        else:
            scale = np.zeros(4 + 3 * n_obj)
            normals = np.empty((0, 4 + 3 * n_obj))
        width = 9 + 7 * n_obj
        if record_every > 0:
            frames = np.empty((n_sub // record_every, width))
        else:
            frames = np.empty((0, width))
        energy = np.zeros(1)
        done, pen, n_frames = _kernel.simulate(
            rq, rqd, pose, vel, fallen, shape, dims, mass, inertia, mu, torsion,
            self.table.boundary, self.table.obstacle_array, self._geom, command, n_sub,
            self.config.substep, normals, scale, settle, self._phys, frames, record_every,
            energy)
        if done == 0:
            return state, StepInfo(0, 0.0, 0.0, frames[:0] if record_every > 0 else None)
        new = self._unpack(state, rq, rqd, pose, vel, fallen, done * self.config.substep)
        if record_every > 0:
            frames = frames[:n_frames]
            frames[:, 0] += state.time
        return new, StepInfo(done, float(pen), float(energy[0]),
                             frames if record_every > 0 else None)

    def step_deterministic(self, state: WorldState, control: Control) -> WorldState:
        if not control.duration > 0:
            raise InvalidStateError("control duration must be > 0")
        return self.advance(state, control, control.duration)[0]

    def step_stochastic(self, state: WorldState, control: Control, noise: NoiseModel,
                        rng: np.random.Generator) -> WorldState:
        if not control.duration > 0:
            raise InvalidStateError("control duration must be > 0")
        return self.advance(state, control, control.duration, noise=noise, rng=rng)[0]

    def settle(self, state: WorldState, t_rest: float) -> WorldState:
        if t_rest < 0:
            raise InvalidStateError("t_rest must be >= 0")
        return self.advance(state, None, t_rest, settle=True)[0]

    def transition(self, state: WorldState, control: Control, t_rest: float,
                   noise: NoiseModel | None = None, rng: np.random.Generator | None = None,
                   record_every: int = 0) -> tuple[WorldState, int, list[np.ndarray]]:
        """Apply one action, then let objects come to rest.

        Returns the next state, the number of sub-steps simulated and any
        recorded frames. Objects that fell during the transition get their
        ``fall_push`` set to the distance they travelled in it.
        """
        mid, info = self.advance(state, control, control.duration, noise=noise, rng=rng,
                                 record_every=record_every)
        end, info2 = self.advance(mid, None, t_rest, settle=True, record_every=record_every)
        frames = [f for f in (info.frames, info2.frames) if f is not None and len(f)]
        objs = list(end.objects)
        changed = False
        for i, (before, after) in enumerate(zip(state.objects, end.objects)):
            if after.fallen and not before.fallen:
                d = float(np.hypot(*(after.position - before.position)))
                objs[i] = replace(after, fall_push=d)
                changed = True
        if changed:
            end = WorldState(end.robot, tuple(objs), end.time)
        return end, info.substeps + info2.substeps, frames

    # -- predicates ---------------------------------------------------------

    def off_table(self, obj: ObjectState) -> bool:
        return off_table(obj, self.table)

    def in_goal(self, obj: ObjectState) -> bool:
        return in_goal(obj, self.table)

    def grasped(self, state: WorldState, target: int) -> bool:
        return grasped(state, target, self.config.geometry)


def off_table(obj: ObjectState, table: TableSpec) -> bool:
    return obj.fallen or not table.contains(obj.position)


def in_goal(obj: ObjectState, table: TableSpec) -> bool:
    if table.goal is None:
        raise InvalidStateError("scene has no goal region")
    gx, gy = table.goal.center
    d = math.hypot(obj.pose[0] - gx, obj.pose[1] - gy)
    return d <= table.goal.radius and not off_table(obj, table)


def gripper_frame(robot: RobotState, geometry: RobotGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Reference point (midpoint between fingertips) and forward axis."""
    fwd = robot.forward()
    ref = np.array([robot.x, robot.y]) + fwd * geometry.reach
    return ref, fwd


def grasped(state: WorldState, target: int, geometry: RobotGeometry,
            tip_tolerance: float = 0.01) -> bool:
    """Target centre between the fingers with the gripper open wider than it.

    The capture region runs from the palm face to ``tip_tolerance`` beyond
    the fingertips, laterally between the inner finger faces.
    """
    if not 0 <= target < len(state.objects):
        raise IndexError(f"target index {target} out of range")
    obj = state.objects[target]
    if obj.fallen:
        return False
    robot = state.robot
    fwd = robot.forward()
    lat = np.array([-fwd[1], fwd[0]])
    rel = obj.position - np.array([robot.x, robot.y])
    along = float(rel @ fwd)
    across = float(rel @ lat)
    inner = robot.opening / 2.0
    return (geometry.palm_half_depth <= along <= geometry.reach + tip_tolerance
            and abs(across) <= inner and robot.opening > obj.width)
