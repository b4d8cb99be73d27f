"""Benchmark harness: methods x accuracy levels x noise levels over paired scenes."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .costs import CostParams
from .planner import METHODS, EpisodeResult, PlannerParams, Trace, run_episode
from .scenes import BENCH_B, SceneSpec, generate_push_scene
from .trajopt import OptParams
from .world import NoiseModel, World

TRACE_FORMAT = "tapush-trace"
TRACE_VERSION = 1
CSV_COLUMNS = ("method", "accuracy", "b", "success_rate", "mean_time_s", "ci95_s", "mean_actions")
ACCURACIES = ("high", "low")


def _coerce(cls, data: dict):
    names = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} field(s): {', '.join(sorted(unknown))}")
    out = {}
    for k, v in data.items():
        out[k] = tuple(v) if isinstance(v, list) else v
    return out


@dataclass(frozen=True)
class Settings:
    """Parameter groups shared by single runs and benchmarks.

    ``cost`` holds overrides only: weights not given fall back to the
    defaults, and the safe margin falls back to the scene's table.
    """

    planner: PlannerParams = field(default_factory=PlannerParams)
    opt: OptParams = field(default_factory=OptParams)
    cost: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "Settings":
        planner = PlannerParams(**_coerce(PlannerParams, d.get("planner", {})))
        opt = OptParams(**_coerce(OptParams, d.get("opt", {})))
        cost = _coerce(CostParams, d.get("cost", {}))
        CostParams(**cost)  # validate eagerly
        return cls(planner, opt, dict(cost))

    def to_dict(self) -> dict:
        return {"planner": asdict(self.planner), "opt": asdict(self.opt), "cost": dict(self.cost)}

    def cost_params(self, scene: SceneSpec) -> CostParams:
        return CostParams(**{"safe_margin": scene.table.safe_margin, **self.cost})


def trace_header(scene: SceneSpec, settings: Settings, method: str, b: float, seed: int) -> dict:
    return {"type": "header", "format": TRACE_FORMAT, "version": TRACE_VERSION, "method": method,
            "b": b, "seed": seed, "scene": scene.to_dict(), "settings": settings.to_dict()}


def run_scene(scene: SceneSpec, settings: Settings, seed: int, method: str | None = None,
              b: float | None = None, trace_path: str | os.PathLike | None = None
              ) -> EpisodeResult:
    """Run one episode on ``scene``; ``b`` defaults to the scene's own noise level."""
    method = method or settings.planner.method
    b = scene.b if b is None else b
    params = replace(settings.planner, method=method)
    world = World(scene.table)
    task = scene.make_task(settings.cost_params(scene))
    noise = NoiseModel(b)
    if trace_path is None:
        return run_episode(world, scene.initial_state(), task, params, settings.opt, noise, seed)
    path = Path(trace_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        trace = Trace(fh)
        trace.write(trace_header(scene, settings, method, b, seed))
        result = run_episode(world, scene.initial_state(), task, params, settings.opt, noise,
                             seed, trace)
    result.trace_path = str(path)
    return result


@dataclass(frozen=True)
class BenchmarkConfig:
    methods: tuple[str, ...] = METHODS
    accuracies: tuple[str, ...] = ACCURACIES
    b_levels: tuple[float, ...] = BENCH_B
    scenes_per_cell: int = 50
    seed: int = 0
    timeout: float = 180.0
    out_dir: str | None = None
    workers: int = 1
    traces: bool = False
    allow_any_b: bool = False
    settings: Settings = field(default_factory=Settings)

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "accuracies", tuple(self.accuracies))
        object.__setattr__(self, "b_levels", tuple(float(b) for b in self.b_levels))
        if self.scenes_per_cell < 1 or self.workers < 1:
            raise ValueError("scenes_per_cell and workers must be >= 1")
        if not self.methods or not self.accuracies or not self.b_levels:
            raise ValueError("methods, accuracies and b_levels must be non-empty")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        for a in self.accuracies:
            if a not in ACCURACIES:
                raise ValueError(f"unknown accuracy {a!r}")
        for b in self.b_levels:
            if b < 0 or (not self.allow_any_b and b not in BENCH_B):
                raise ValueError(f"b = {b} is not one of the benchmark levels {BENCH_B}")
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        d = dict(d)
        settings = Settings.from_dict({k: d.pop(k) for k in ("planner", "opt", "cost") if k in d})
        kw = _coerce(cls, d)
        return cls(settings=settings, **kw)

    @classmethod
    def load(cls, path) -> "BenchmarkConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class CellResult:
    method: str
    accuracy: str
    b: float
    success_rate: float
    mean_time_s: float
    ci95_s: float
    mean_actions: float
    episodes: list[EpisodeResult] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS}


def scene_seed(master: int, accuracy: str, index: int) -> int:
    """Seed of the ``index``-th scene of an accuracy level; shared by all methods and b."""
    ss = np.random.SeedSequence([master, ACCURACIES.index(accuracy), index])
    return int(ss.generate_state(1, np.uint32)[0])


def episode_seed(master: int, accuracy: str, b: float, index: int) -> int:
    """Noise seed of an episode; shared by all methods so the comparison stays paired."""
    ss = np.random.SeedSequence([master, ACCURACIES.index(accuracy), int(round(b * 1e6)), index,
                                 1])
    return int(ss.generate_state(1, np.uint32)[0])


def trace_name(method: str, accuracy: str, b: float, seed: int) -> str:
    return f"{method}_{accuracy}_b{b:g}_s{seed}.jsonl"


def aggregate(method: str, accuracy: str, b: float, episodes: Sequence[EpisodeResult]
              ) -> CellResult:
    if not episodes:
        raise ValueError("cannot aggregate an empty cell")
    times = np.array([e.total_time for e in episodes])
    n = len(episodes)
    ci = 1.96 * float(times.std(ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    rate = sum(e.success for e in episodes) / n
    return CellResult(method, accuracy, float(b), rate, float(times.mean()), ci,
                      float(np.mean([e.actions for e in episodes])), list(episodes))


def _job(args):
    config, method, accuracy, b, k = args
    sseed = scene_seed(config.seed, accuracy, k)
    scene = generate_push_scene(accuracy, sseed, b)
    settings = replace(config.settings, planner=replace(config.settings.planner,
                                                        timeout=config.timeout))
    trace = None
    if config.traces and config.out_dir is not None:
        trace = Path(config.out_dir) / "traces" / trace_name(method, accuracy, b, sseed)
    result = run_scene(scene, settings, episode_seed(config.seed, accuracy, b, k), method, b,
                       trace)
    result.final_state = None  # keep inter-process payloads small
    return (method, accuracy, b, k), result


def run_benchmark(config: BenchmarkConfig, progress=None) -> list[CellResult]:
    """Run every cell; cells come back sorted by (method, accuracy, b)."""
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"output directory {out} is not writable")
    jobs = [(config, m, a, b, k) for m in config.methods for a in config.accuracies
            for b in config.b_levels for k in range(config.scenes_per_cell)]
    results: dict = {}
    if config.workers == 1:
        for job in jobs:
            key, res = _job(job)
            results[key] = res
            if progress is not None:
                progress(key, res)
    else:
        with ProcessPoolExecutor(config.workers) as pool:
            for key, res in pool.map(_job, jobs, chunksize=1):
                results[key] = res
                if progress is not None:
                    progress(key, res)
    cells = []
    for m in sorted(config.methods):
        for a in sorted(config.accuracies):
            for b in sorted(config.b_levels):
                eps = [results[(m, a, b, k)] for k in range(config.scenes_per_cell)]
                cells.append(aggregate(m, a, b, eps))
    return cells


def _sort_key(c: CellResult):
    return (c.method, c.accuracy, c.b)


def to_csv(results: Iterable[CellResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in sorted(results, key=_sort_key):
        w.writerow([c.method, c.accuracy, repr(c.b), repr(c.success_rate), repr(c.mean_time_s),
                    repr(c.ci95_s), repr(c.mean_actions)])
    return buf.getvalue()


def parse_csv(text: str) -> list[CellResult]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise ValueError(f"expected CSV header {','.join(CSV_COLUMNS)}")
    out = []
    for row in reader:
        if len(row) != len(CSV_COLUMNS):
            raise ValueError(f"malformed CSV row {row!r}")
        out.append(CellResult(row[0], row[1], *(float(v) for v in row[2:])))
    return out


def to_table(results: Iterable[CellResult]) -> str:
    rows = [["method", "accuracy", "b", "success", "time [s]", "ci95 [s]", "actions"]]
    for c in sorted(results, key=_sort_key):
        rows.append([c.method, c.accuracy, f"{c.b:g}", f"{c.success_rate:.2f}",
                     f"{c.mean_time_s:.2f}", f"{c.ci95_s:.2f}", f"{c.mean_actions:.1f}"])
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(v.rjust(w) if i > 1 else v.ljust(w) for i, (v, w) in
                       enumerate(zip(r, widths))).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


def summarize(results: Sequence[CellResult]) -> tuple[str, str]:
    """CSV text and an aligned human-readable table."""
    if not results:
        raise ValueError("no results to summarize")
    return to_csv(results), to_table(results)
