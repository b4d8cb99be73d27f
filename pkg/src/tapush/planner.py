"""Task-adaptive online planning (TAMPC) and the MPC / UAMPC baselines.

Every episode runs two worlds built from the same scene: a planning world
(deterministic rollouts plus stochastic action evaluation) and an execution
world that applies the chosen action with its own noise stream.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import IO, Sequence

import numpy as np

from .costs import Task
from .trajopt import OptimizeResult, OptParams, RolloutResult, optimize, quantize
from .world import Control, ControlSequence, NoiseModel, World, WorldState, gripper_frame

METHODS = ("tampc", "mpc", "uampc")
VALUE_MODES = ("suffix-from-1", "paper-literal")

# rng stream tags; streams are keyed by (seed, tag, cycle, index)
_OPT, _EVAL, _EXEC = 1, 2, 3


@dataclass(frozen=True)
class PlannerParams:
    Q: int = 8
    N: int = 4
    n_min: int = 1
    n_max: int = 20
    dt: float = 1.0  # s per action
    t_rest: float = 2.0  # s of settling after each action
    timeout: float = 180.0  # s, planning plus execution
    method: str = "tampc"
    value_mode: str = "suffix-from-1"
    clock: str = "model"  # "model": simulated sub-steps times substep_cost; "wall": perf_counter
    substep_cost: float = 4e-6  # s of planning time charged per simulated sub-step
    mpc_model_rest: float = 0.0  # s of settling in MPC's planning rollouts
    record_every: int = 10  # execution sub-steps per trace frame; 0 disables frames

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.value_mode not in VALUE_MODES:
            raise ValueError(f"unknown value mode {self.value_mode!r}")
        if self.clock not in ("model", "wall"):
            raise ValueError(f"unknown clock {self.clock!r}")
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError("need 1 <= n_min <= n_max")
        if self.Q < 1:
            raise ValueError("Q must be >= 1")
        if self.method == "tampc" and self.N < 2:
            raise ValueError("TAMPC needs N >= 2: candidate lengths divide by N - 1")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not (self.dt > 0 and self.t_rest >= 0 and self.timeout > 0):
            raise ValueError("need dt > 0, t_rest >= 0 and timeout > 0")
        if self.substep_cost < 0 or self.mpc_model_rest < 0 or self.record_every < 0:
            raise ValueError("substep_cost, mpc_model_rest and record_every must be >= 0")


@dataclass
class EpisodeResult:
    success: bool
    reason: str  # "none" | "timeout" | "object-fell"
    actions: int
    planning_time: float
    execution_time: float
    timeout: float = 180.0
    final_state: WorldState | None = field(default=None, repr=False)
    first_speeds: list[float] = field(default_factory=list)
    trace_path: str | None = None

    @property
    def total_time(self) -> float:
        return min(self.planning_time + self.execution_time, self.timeout)

    def to_dict(self) -> dict:
        return {"success": self.success, "reason": self.reason, "actions": self.actions,
                "planning_time_s": self.planning_time, "execution_time_s": self.execution_time,
                "total_time_s": self.total_time, "action_speeds": list(self.first_speeds),
                "trace": self.trace_path}


# ---------------------------------------------------------------------------
# trace sink


class Trace:
    """JSON-lines sink; a ``Trace(None)`` swallows everything."""

    def __init__(self, stream: IO[str] | None = None):
        self.stream = stream

    @property
    def enabled(self) -> bool:
        return self.stream is not None

    def write(self, record: dict):
        if self.stream is not None:
            self.stream.write(json.dumps(record, allow_nan=False) + "\n")

    def frames(self, frames: Sequence[np.ndarray], n_objects: int):
        if self.stream is None:
            return
        for block in frames:
            for row in block:
                self.write(frame_record(row, n_objects))


def frame_record(row: np.ndarray, n_objects: int) -> dict:
    objs = []
    for i in range(n_objects):
        o = row[9 + 7 * i: 16 + 7 * i]
        objs.append({"pose": [float(v) for v in o[:3]], "vel": [float(v) for v in o[3:6]],
                     "fallen": bool(o[6])})
    return {"type": "frame", "t": float(row[0]), "q": [float(v) for v in row[1:5]],
            "qd": [float(v) for v in row[5:9]], "objects": objs}


def state_record(state: WorldState) -> dict:
    return {"t": state.time, "q": [float(v) for v in state.robot.q],
            "qd": [float(v) for v in state.robot.qd],
            "objects": [{"pose": [float(v) for v in o.pose], "vel": [float(v) for v in o.velocity],
                         "fallen": o.fallen} for o in state.objects]}


# ---------------------------------------------------------------------------
# candidate generation


def candidate_lengths(n_min: int, n_max: int, count: int) -> list[int]:
    """Evenly spread sequence lengths ``ceil((n_max - n_min) / (count - 1) * k) + n_min``.

    With ``count == 1`` the single length is ``n_min``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return [n_min]
    span = n_max - n_min
    return [-(-span * k // (count - 1)) + n_min for k in range(count)]


def _box_exit(obj, direction: np.ndarray) -> float:
    """Distance from a box centre to its boundary along ``direction``."""
    c, s = math.cos(obj.pose[2]), math.sin(obj.pose[2])
    lx = abs(direction[0] * c + direction[1] * s)
    ly = abs(-direction[0] * s + direction[1] * c)
    hx, hy = obj.dims[0], obj.dims[1]
    return min(hx / lx if lx > 1e-12 else math.inf, hy / ly if ly > 1e-12 else math.inf)


def goal_offset(state: WorldState, task: Task) -> tuple[float, np.ndarray]:
    """Distance the robot has to cover and the unit direction to cover it in.

    Pushing: target-to-goal distance plus the gap between the palm face and
    the target surface, heading from the palm face to the goal. Grasping:
    fingertip midpoint to target centre.
    """
    robot = state.robot
    obj = state.objects[task.target]
    if task.kind == "push":
        fwd = robot.forward()
        ref = np.array([robot.x, robot.y]) + fwd * task.geometry.palm_half_depth
        goal = np.asarray(task.table.goal.center, dtype=float)
        to_obj = obj.position - ref
        d_obj = float(np.hypot(*to_obj))
        if d_obj > 0:
            u = to_obj / d_obj
            extent = obj.radius if obj.shape == "disc" else _box_exit(obj, u)
            gap = max(0.0, d_obj - extent)
        else:
            gap = 0.0
        dist = float(np.hypot(*(goal - obj.position))) + gap
        aim = goal - ref
    else:
        ref, _ = gripper_frame(robot, task.geometry)
        aim = obj.position - ref
        dist = float(np.hypot(*aim))
    norm = float(np.hypot(*aim))
    direction = aim / norm if norm > 1e-12 else np.zeros(2)
    return dist, direction


def straight_line(state: WorldState, task: Task, n: int, dt: float, world: World,
                  speed_cap: float | None = None) -> ControlSequence:
    """``n`` identical actions covering the distance to the goal in ``n * dt`` seconds."""
    dist, direction = goal_offset(state, task)
    speed = dist / (n * dt)
    if speed_cap is not None:
        speed = min(speed, speed_cap)
    v = np.zeros(4)
    v[:2] = direction * speed
    v = world.clamp(v)
    return ControlSequence(np.tile(v, (n, 1)), dt)


def get_action_sequences(state: WorldState, n_min: int, n_max: int, N: int, task: Task,
                         world: World, dt: float = 1.0) -> list[ControlSequence]:
    """Constant-velocity straight-line candidates of spread-out lengths."""
    if N < 2:
        raise ValueError("need N >= 2 candidate sequences (lengths divide by N - 1)")
    return [straight_line(state, task, n, dt, world) for n in candidate_lengths(n_min, n_max, N)]


def get_opt_action_sequences(world: World, state: WorldState, candidates: Sequence[ControlSequence],
                             params: OptParams, task: Task, t_rest: float,
                             rngs: Sequence[np.random.Generator],
                             trace: Trace | None = None) -> list[OptimizeResult]:
    """Optimize each candidate independently; output order follows input order."""
    if not candidates:
        raise ValueError("need at least one candidate")
    log = trace.write if trace is not None and trace.enabled else None
    return [optimize(world, state, U, params, task, t_rest, rng, log=log)
            for U, rng in zip(candidates, rngs)]


# ---------------------------------------------------------------------------
# evaluation


def value_offset(result: OptimizeResult | RolloutResult, mode: str) -> float | None:
    """Planned cost-to-go added to each sampled immediate cost.

    ``None`` means the candidate has a single action and the sampled state's
    own terminal cost has to be used instead.
    """
    values = result.values
    if mode == "paper-literal":
        return float(values[0])
    return float(values[1]) if len(values) > 1 else None


def select_index(values: Sequence[float], lengths: Sequence[int]) -> int:
    """Argmin of ``values``; ties go to the candidate with more actions, then the lower index."""
    best = 0
    for i in range(1, len(values)):
        if values[i] < values[best] or (values[i] == values[best] and lengths[i] > lengths[best]):
            best = i
    return best


def evaluate_first_actions(world: World, state: WorldState, optimized: Sequence[OptimizeResult],
                           Q: int, noise: NoiseModel, task: Task, t_rest: float,
                           seed_key: Sequence[int], value_mode: str = "suffix-from-1"
                           ) -> tuple[int, list[float], int]:
    """Monte-Carlo value of each candidate's first action.

    Sample ``q`` of every candidate uses the same noise stream (common random
    numbers), so candidates are compared on equal footing. Returns the chosen
    index, the per-candidate values and the number of sub-steps simulated.
    """
    if Q < 1 or not optimized:
        raise ValueError("need Q >= 1 and at least one candidate")
    values = []
    substeps = 0
    for res in optimized:
        u = res.controls[0]
        offset = value_offset(res, value_mode)
        total = 0.0
        for q in range(Q):
            rng = np.random.default_rng([*seed_key, q])
            nxt, n_sub, _ = world.transition(state, u, t_rest, noise=noise, rng=rng)
            substeps += n_sub
            c = task.running(state, nxt, u)
            c += task.terminal(nxt) if offset is None else offset
            total += quantize(c)
        values.append(total / Q)
    lengths = [len(r.controls) for r in optimized]
    return select_index(values, lengths), values, substeps


# ---------------------------------------------------------------------------
# episodes


class _Clock:
    def __init__(self, params: PlannerParams):
        self.params = params
        self.substeps = 0
        self._start = time.perf_counter()
        self._wall = 0.0

    def start(self):
        self._start = time.perf_counter()

    def stop(self):
        self._wall += time.perf_counter() - self._start

    @property
    def planning(self) -> float:
        if self.params.clock == "wall":
            return self._wall
        return self.substeps * self.params.substep_cost


def _rng(seed: int, tag: int, cycle: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, tag, cycle, index])


def _check(task: Task, state: WorldState) -> str | None:
    if task.failed(state):
        return "object-fell"
    if task.complete(state):
        return "success"
    return None


def _execute(world: World, state: WorldState, control: Control, params: PlannerParams,
             noise: NoiseModel, seed: int, cycle: int, trace: Trace) -> WorldState:
    rng = _rng(seed, _EXEC, cycle, 0)
    record = params.record_every if trace.enabled else 0
    nxt, _, frames = world.transition(state, control, params.t_rest, noise=noise, rng=rng,
                                      record_every=record)
    trace.frames(frames, len(state.objects))
    return nxt


def _finish(status: str | None, actions: int, clock: _Clock, exec_time: float,
            params: PlannerParams, state: WorldState, speeds: list[float], trace: Trace
            ) -> EpisodeResult:
    success = status == "success"
    reason = "none" if success else (status or "timeout")
    result = EpisodeResult(success, reason, actions, clock.planning, exec_time, params.timeout,
                           state, speeds)
    trace.write({"type": "result", **result.to_dict(), "final": state_record(state)})
    return result


def run_tampc(world: World, state: WorldState, task: Task, params: PlannerParams,
              opt: OptParams, noise: NoiseModel, seed: int, trace: Trace | None = None
              ) -> EpisodeResult:
    """Online MDP solver: optimize N candidates, keep the first action that is best under noise."""
    trace = trace or Trace()
    n_min = params.n_max if params.method == "uampc" else params.n_min
    clock = _Clock(params)
    exec_time = 0.0
    actions = 0
    speeds: list[float] = []
    suffix: ControlSequence | None = None
    cycle = 0
    while True:
        status = _check(task, state)
        if status is not None or clock.planning + exec_time >= params.timeout:
            return _finish(status, actions, clock, exec_time, params, state, speeds, trace)
        clock.start()
        count = params.N - 1 if suffix is not None else params.N
        candidates = [] if count == 0 else [
            straight_line(state, task, n, params.dt, world)
            for n in candidate_lengths(n_min, params.n_max, count)]
        if suffix is not None:
            candidates.append(suffix)
        rngs = [_rng(seed, _OPT, cycle, i) for i in range(len(candidates))]
        optimized = get_opt_action_sequences(world, state, candidates, opt, task, params.t_rest,
                                             rngs, trace)
        clock.substeps += sum(r.substeps for r in optimized)
        idx, values, n_sub = evaluate_first_actions(
            world, state, optimized, params.Q, noise, task, params.t_rest,
            (seed, _EVAL, cycle), params.value_mode)
        clock.substeps += n_sub
        clock.stop()
        chosen = optimized[idx].controls
        trace.write({"type": "decision", "cycle": cycle, "values": values, "chosen": idx,
                     "lengths": [len(r.controls) for r in optimized],
                     "action": [float(v) for v in chosen.velocities[0]]})
        if clock.planning + exec_time >= params.timeout:
            return _finish(None, actions, clock, exec_time, params, state, speeds, trace)
        state = _execute(world, state, chosen[0], params, noise, seed, cycle, trace)
        exec_time += params.dt + params.t_rest
        actions += 1
        speeds.append(float(np.hypot(*chosen.velocities[0, :2])))
        suffix = chosen[1:] if len(chosen) > 1 else None
        cycle += 1


def run_uampc(world: World, state: WorldState, task: Task, params: PlannerParams,
              opt: OptParams, noise: NoiseModel, seed: int, trace: Trace | None = None
              ) -> EpisodeResult:
    """TAMPC with every candidate at the maximum length."""
    return run_tampc(world, state, task, replace(params, method="uampc"), opt, noise, seed, trace)


def mpc_initial(state: WorldState, task: Task, params: PlannerParams, world: World
                ) -> ControlSequence:
    """Quasi-static straight line: as few actions as the speed cap allows, zero-padded."""
    dist, _ = goal_offset(state, task)
    v_qs = world.config.quasi_static_speed
    m = min(max(math.ceil(dist / (v_qs * params.dt) - 1e-9), 1), params.n_max)
    return straight_line(state, task, m, params.dt, world, speed_cap=v_qs).padded(params.n_max)


def run_mpc(world: World, state: WorldState, task: Task, params: PlannerParams,
            opt: OptParams, noise: NoiseModel, seed: int, trace: Trace | None = None
            ) -> EpisodeResult:
    """Receding-horizon baseline: one warm-started sequence, no uncertainty evaluation.

    Planning rollouts settle for ``params.mpc_model_rest`` seconds only, so
    the model does not see objects sliding on after the robot stops.
    """
    trace = trace or Trace()
    clock = _Clock(params)
    exec_time = 0.0
    actions = 0
    speeds: list[float] = []
    warm: ControlSequence | None = None
    cycle = 0
    while True:
        status = _check(task, state)
        if status is not None or clock.planning + exec_time >= params.timeout:
            return _finish(status, actions, clock, exec_time, params, state, speeds, trace)
        clock.start()
        U = warm.padded(params.n_max) if warm is not None else mpc_initial(state, task, params,
                                                                          world)
        log = trace.write if trace.enabled else None
        res = optimize(world, state, U, opt, task, params.mpc_model_rest,
                       _rng(seed, _OPT, cycle, 0), log=log)
        clock.substeps += res.substeps
        clock.stop()
        chosen = res.controls
        trace.write({"type": "decision", "cycle": cycle, "values": [res.total], "chosen": 0,
                     "lengths": [len(chosen)], "action": [float(v) for v in chosen.velocities[0]]})
        if clock.planning + exec_time >= params.timeout:
            return _finish(None, actions, clock, exec_time, params, state, speeds, trace)
        state = _execute(world, state, chosen[0], params, noise, seed, cycle, trace)
        exec_time += params.dt + params.t_rest
        actions += 1
        speeds.append(float(np.hypot(*chosen.velocities[0, :2])))
        warm = chosen[1:] if len(chosen) > 1 else None
        cycle += 1


def run_episode(world: World, state: WorldState, task: Task, params: PlannerParams,
                opt: OptParams, noise: NoiseModel, seed: int, trace: Trace | None = None
                ) -> EpisodeResult:
    runner = {"tampc": run_tampc, "uampc": run_uampc, "mpc": run_mpc}[params.method]
    return runner(world, state, task, params, opt, noise, seed, trace)
