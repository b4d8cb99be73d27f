"""Running and terminal costs for pushing and grasping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernel
from .world import (Control, RobotGeometry, TableSpec, WorldState, gripper_frame, grasped,
                    in_goal)


@dataclass(frozen=True)
class CostParams:
    w_edge: float = 1.0
    w_disturb: float = 100.0
    k_edge: float = 10.0  # 1/m
    k_act: float = 1.0
    w_final: float = 1000.0
    w_angle: float = 0.01  # m^2/rad^2
    safe_margin: float = 0.05

    def __post_init__(self):
        weights = (self.w_edge, self.w_disturb, self.k_act, self.w_final, self.w_angle,
                   self.safe_margin)
        if min(weights) < 0 or not self.k_edge > 0:
            raise ValueError("cost weights must be >= 0 and k_edge > 0")


def _push_distance(prev_obj, next_obj) -> float:
    if prev_obj.fallen and next_obj.fallen:
        return next_obj.fall_push
    return float(math.hypot(next_obj.pose[0] - prev_obj.pose[0],
                            next_obj.pose[1] - prev_obj.pose[1]))


def edge_cost(prev: WorldState, nxt: WorldState, params: CostParams, table: TableSpec) -> float:
    """Exponential penalty for objects that end a transition outside the safe zone.

    The safe zone is the table inset by ``params.safe_margin`` (and kept that
    far from obstacles).
    """
    total = 0.0
    for a, b in zip(prev.objects, nxt.objects):
        if not b.fallen and _kernel.in_safe_zone(float(b.pose[0]), float(b.pose[1]),
                                                 table.boundary, params.safe_margin,
                                                 table.obstacle_array):
            continue
        total += params.w_edge * math.exp(params.k_edge * _push_distance(a, b))
    return total


def disturbance_cost(prev: WorldState, nxt: WorldState, params: CostParams,
                     exclude: int | None = None) -> float:
    """Squared planar displacement of every object except ``exclude``."""
    total = 0.0
    for i, (a, b) in enumerate(zip(prev.objects, nxt.objects)):
        if i == exclude:
            continue
        dx = b.pose[0] - a.pose[0]
        dy = b.pose[1] - a.pose[1]
        total += params.w_disturb * (dx * dx + dy * dy)
    return total


def running_cost(prev: WorldState, nxt: WorldState, control: Control | None, params: CostParams,
                 table: TableSpec, exclude: int | None = None) -> float:
    return (edge_cost(prev, nxt, params, table) + disturbance_cost(prev, nxt, params, exclude)
            + params.k_act)


def terminal_cost_push(state: WorldState, table: TableSpec, target: int = 0) -> float:
    """Squared distance by which the target centre misses the goal disc (unweighted)."""
    if table.goal is None:
        raise ValueError("pushing terminal cost needs a goal")
    obj = state.objects[target]
    gx, gy = table.goal.center
    miss = math.hypot(obj.pose[0] - gx, obj.pose[1] - gy) - table.goal.radius
    return miss * miss if miss > 0 else 0.0


def grasp_offsets(state: WorldState, target: int, geometry: RobotGeometry) -> tuple[float, float]:
    """Distance and unsigned angle from the gripper reference point to the target."""
    ref, fwd = gripper_frame(state.robot, geometry)
    v = state.objects[target].position - ref
    d = float(math.hypot(v[0], v[1]))
    if d < 1e-12:  # the angle is meaningless at the reference point itself
        return 0.0, 0.0
    cos_phi = float(np.clip((v @ fwd) / d, -1.0, 1.0))
    return d, math.acos(cos_phi)


def terminal_cost_grasp(state: WorldState, target: int, params: CostParams,
                        geometry: RobotGeometry | None = None) -> float:
    d, phi = grasp_offsets(state, target, geometry or RobotGeometry())
    return d * d + params.w_angle * phi * phi


def sample_average_cost(samples: Sequence[tuple[WorldState, WorldState, Control]],
                        params: CostParams, table: TableSpec,
                        exclude: int | None = None) -> float:
    if not samples:
        raise ValueError("need at least one sample")
    return sum(running_cost(a, b, u, params, table, exclude) for a, b, u in samples) / len(samples)


@dataclass(frozen=True)
class Task:
    """What the planner is trying to do, and how it is scored."""

    kind: str
    table: TableSpec
    target: int = 0
    params: CostParams = field(default_factory=CostParams)
    geometry: RobotGeometry = field(default_factory=RobotGeometry)

    def __post_init__(self):
        if self.kind not in ("push", "grasp"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "push" and self.table.goal is None:
            raise ValueError("a pushing task needs a goal region")

    @property
    def excluded(self) -> int | None:
        return self.target if self.kind == "push" else None

    def running(self, prev: WorldState, nxt: WorldState, control: Control | None = None) -> float:
        return running_cost(prev, nxt, control, self.params, self.table, self.excluded)

    def terminal(self, state: WorldState) -> float:
        """Weighted terminal cost."""
        if self.kind == "push":
            raw = terminal_cost_push(state, self.table, self.target)
        else:
            raw = terminal_cost_grasp(state, self.target, self.params, self.geometry)
        return self.params.w_final * raw

    def complete(self, state: WorldState) -> bool:
        if self.kind == "push":
            return in_goal(state.objects[self.target], self.table)
        return grasped(state, self.target, self.geometry)

    def failed(self, state: WorldState) -> bool:
        return any(o.fallen for o in state.objects)
