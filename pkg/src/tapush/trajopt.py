"""Stochastic trajectory optimization over the deterministic world model.

Per-step costs are snapped to a 2**-32 grid so that suffix sums are exact in
double precision; the identity ``V[j] - V[j+1] == C[j]`` then holds bit for
bit, not just approximately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .costs import Task
from .world import ControlSequence, World, WorldState

COST_QUANTUM = 2.0 ** -32


def quantize(cost: float) -> float:
    if not math.isfinite(cost):
        raise ValueError(f"non-finite cost {cost!r}")
    return float(np.round(cost / COST_QUANTUM) * COST_QUANTUM)


def suffix_values(costs) -> np.ndarray:
    """Reverse cumulative sum: ``V[j] = sum(costs[j:])``."""
    c = np.asarray(costs, dtype=float)
    return np.cumsum(c[::-1])[::-1].copy()


@dataclass(frozen=True)
class OptParams:
    K: int = 8
    sigma: tuple[float, float, float, float] = (0.08, 0.08, 0.3, 0.02)  # sqrt(nu), per joint
    C_thresh: float | None = None  # None: k_act * n + 0.01
    I_max: int = 20
    lam: float = 1.0
    update: str = "greedy"

    def __post_init__(self):
        if self.K < 1 or self.I_max < 1:
            raise ValueError("K and I_max must be >= 1")
        if len(self.sigma) != 4 or min(self.sigma) <= 0:
            raise ValueError("sigma needs four positive entries")
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.update not in ("greedy", "weighted"):
            raise ValueError(f"unknown update rule {self.update!r}")

    @property
    def nu(self) -> np.ndarray:
        return np.square(np.asarray(self.sigma, dtype=float))

    def threshold(self, n: int, k_act: float) -> float:
        return self.C_thresh if self.C_thresh is not None else k_act * n + 0.01


@dataclass(frozen=True)
class RolloutResult:
    states: tuple[WorldState, ...]
    costs: np.ndarray
    values: np.ndarray
    substeps: int = 0

    @property
    def total(self) -> float:
        return float(self.values[0])


def trajectory_rollout(world: World, x0: WorldState, U: ControlSequence, task: Task,
                       t_rest: float) -> RolloutResult:
    """Roll ``U`` out deterministically, settling after each action."""
    if len(U) == 0:
        raise ValueError("cannot roll out an empty control sequence")
    states = [x0]
    costs = np.empty(len(U))
    substeps = 0
    x = x0
    for t, u in enumerate(U):
        nxt, n_sub, _ = world.transition(x, u, t_rest)
        substeps += n_sub
        c = task.running(x, nxt, u)
        if t == len(U) - 1:
            c += task.terminal(nxt)
        costs[t] = quantize(c)
        states.append(nxt)
        x = nxt
    costs.setflags(write=False)
    values = suffix_values(costs)
    values.setflags(write=False)
    return RolloutResult(tuple(states), costs, values, substeps)


def perturb(U: ControlSequence, sigma, rng: np.random.Generator,
            limits=None) -> tuple[ControlSequence, np.ndarray]:
    """Add N(0, sigma^2) noise to every action and clamp to ``limits``.

    Returns the perturbed sequence and the variation actually applied.
    """
    sigma = np.asarray(sigma, dtype=float)
    noisy = U.velocities + rng.standard_normal(U.velocities.shape) * sigma
    if limits is not None:
        lim = np.asarray(limits, dtype=float)
        noisy = np.clip(noisy, -lim, lim)
    delta = noisy - U.velocities
    return U.with_velocities(noisy), delta


def update_greedy(U: ControlSequence, variations, totals) -> ControlSequence:
    k = int(np.argmin(np.asarray(totals, dtype=float)))  # argmin keeps the lowest index on ties
    return U.with_velocities(U.velocities + np.asarray(variations[k]))


def update_weighted(U: ControlSequence, variations, step_costs, lam: float) -> ControlSequence:
    """Per-timestep softmin-weighted average of the variations."""
    dU = np.asarray(variations, dtype=float)  # (K, n, 4)
    C = np.asarray(step_costs, dtype=float)  # (K, n)
    w = np.exp(-(C - C.min(axis=0)) / lam)
    w /= w.sum(axis=0)
    return U.with_velocities(U.velocities + np.einsum("kn,knj->nj", w, dU))


@dataclass
class OptimizeResult:
    controls: ControlSequence
    rollout: RolloutResult
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    substeps: int = 0

    @property
    def values(self) -> np.ndarray:
        return self.rollout.values

    @property
    def total(self) -> float:
        return self.rollout.total


def optimize(world: World, x0: WorldState, U_init: ControlSequence, params: OptParams,
             task: Task, t_rest: float, rng: np.random.Generator,
             log: Callable[[dict], None] | None = None,
             initial: RolloutResult | None = None) -> OptimizeResult:
    """Improve ``U_init`` by sampling perturbations around the incumbent.

    The incumbent is replaced only by a strictly cheaper sequence, so the
    recorded ``history`` of incumbent totals never increases.
    """
    if len(U_init) == 0:
        raise ValueError("cannot optimize an empty control sequence")
    sigma = np.asarray(params.sigma, dtype=float)
    if task.kind == "push":
        sigma = sigma * np.array([1.0, 1.0, 1.0, 0.0])  # the gripper stays put while pushing
    limits = world.config.speed_limits
    best_U = U_init
    best = initial if initial is not None else trajectory_rollout(world, x0, U_init, task, t_rest)
    substeps = best.substeps if initial is None else 0
    thresh = params.threshold(len(U_init), task.params.k_act)
    history = [best.total]
    it = 0
    while it < params.I_max and best.total > thresh:
        it += 1
        deltas, totals, steps = [], [], []
        for _ in range(params.K):
            Uk, dU = perturb(best_U, sigma, rng, limits)
            r = trajectory_rollout(world, x0, Uk, task, t_rest)
            substeps += r.substeps
            deltas.append(dU)
            totals.append(r.total)
            steps.append(r.costs)
        if params.update == "greedy":
            cand = update_greedy(best_U, deltas, totals)
        else:
            cand = update_weighted(best_U, deltas, steps, params.lam)
        cand = cand.with_velocities(world.clamp(cand.velocities))
        r = trajectory_rollout(world, x0, cand, task, t_rest)
        substeps += r.substeps
        accepted = r.total < best.total
        if accepted:
            best_U, best = cand, r
        history.append(best.total)
        if log is not None:
            log({"type": "opt", "iteration": it, "n": len(U_init),
                 "candidate": r.total, "incumbent": best.total, "accepted": accepted})
    return OptimizeResult(best_U, best, history, it, substeps)
