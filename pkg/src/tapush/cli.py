"""Command-line interface: run, bench, gen-scene, replay and validate.

Settings are resolved as built-in default < config file < command-line flag.
Exit status: 0 on success, 2 when an episode fails, 1 on usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from .bench import (TRACE_FORMAT, TRACE_VERSION, BenchmarkConfig, Settings, run_benchmark,
                    run_scene, summarize)
from .costs import CostParams
from .planner import METHODS, VALUE_MODES, PlannerParams
from .scenes import POSITION_STD, PRESETS, SceneSpec, generate_clutter_scene, \
    generate_push_scene, preset_scene
from .trajopt import OptParams

OUT_ENV = "TAPUSH_OUT"
DEFAULT_OUT = "tapush-out"

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# (flag, group, field, type, unit)
_PARAM_FLAGS = [
    ("--Q", "planner", "Q", int, "stochastic samples per candidate action"),
    ("--N", "planner", "N", int, "candidate sequences per cycle"),
    ("--n-min", "planner", "n_min", int, "fewest actions in a candidate"),
    ("--n-max", "planner", "n_max", int, "most actions in a candidate (MPC horizon)"),
    ("--dt", "planner", "dt", float, "action duration, s"),
    ("--t-rest", "planner", "t_rest", float, "settling time after each action, s"),
    ("--timeout-s", "planner", "timeout", float, "episode budget for planning plus execution, s"),
    ("--value-mode", "planner", "value_mode", str, "cost-to-go added to sampled costs"),
    ("--clock", "planner", "clock", str, "planning-time clock: model (deterministic) or wall"),
    ("--substep-cost", "planner", "substep_cost", float,
     "planning time charged per simulated sub-step by the model clock, s"),
    ("--mpc-model-rest", "planner", "mpc_model_rest", float,
     "settling time inside MPC planning rollouts, s"),
    ("--record-every", "planner", "record_every", int,
     "physics sub-steps (2 ms each) per trace frame; 1 = full rate, 0 = no frames"),
    ("--K", "opt", "K", int, "noisy rollouts per optimizer iteration"),
    ("--I-max", "opt", "I_max", int, "optimizer iterations"),
    ("--lam", "opt", "lam", float, "temperature of the weighted update, cost units"),
    ("--update", "opt", "update", str, "optimizer update rule"),
    ("--sigma", "opt", "sigma", float,
     "perturbation std per joint: x m/s, y m/s, rotation rad/s, gripper m/s"),
    ("--c-thresh", "opt", "C_thresh", float,
     "stop optimizing below this total cost, cost units (default: k_act * n + 0.01)"),
    ("--w-edge", "cost", "w_edge", float, "edge cost weight"),
    ("--w-disturb", "cost", "w_disturb", float, "disturbance weight, 1/m^2"),
    ("--k-edge", "cost", "k_edge", float, "edge cost exponent gain, 1/m"),
    ("--k-act", "cost", "k_act", float, "cost per action"),
    ("--w-final", "cost", "w_final", float, "terminal cost weight, 1/m^2"),
    ("--w-angle", "cost", "w_angle", float, "grasp angle weight, m^2/rad^2"),
    ("--safe-margin", "cost", "safe_margin", float,
     "safe-zone inset from the table edge, m (default: the scene's own margin)"),
]

_CHOICES = {"value_mode": VALUE_MODES, "clock": ("model", "wall"),
            "update": ("greedy", "weighted")}
_GROUP_DEFAULTS = {"planner": PlannerParams(), "opt": OptParams(), "cost": CostParams()}


def _add_param_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("planner, optimizer and cost parameters")
    for flag, group, name, typ, text in _PARAM_FLAGS:
        default = getattr(_GROUP_DEFAULTS[group], name)
        kw = {"type": typ, "default": None, "dest": f"{group}.{name}"}
        if name in _CHOICES:
            kw["choices"] = _CHOICES[name]
        if name == "sigma":
            kw["nargs"] = 4
        g.add_argument(flag, help=f"{text} (default: {default})", **kw)


def _overrides(args) -> dict:
    out: dict = {"planner": {}, "opt": {}, "cost": {}}
    for _, group, name, _, _ in _PARAM_FLAGS:
        v = getattr(args, f"{group}.{name}")
        if v is not None:
            out[group][name] = tuple(v) if isinstance(v, list) else v
    return out


def _merge(base: dict, over: dict) -> dict:
    merged = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k] = _merge(merged[k], v)
        else:
            merged[k] = v
    return merged


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}")
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}")
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return data


def _default_out() -> str:
    return os.environ.get(OUT_ENV, DEFAULT_OUT)


# ---------------------------------------------------------------------------
# run


RUN_KEYS = {"method", "b", "seed", "out", "scene", "planner", "opt", "cost"}


def resolve_run(args) -> dict:
    """Merge defaults, the config file and flags into one run configuration."""
    config = {"method": "tampc", "b": None, "seed": 0, "out": None,
              "scene": {"preset": "wide"}, "planner": {}, "opt": {}, "cost": {}}
    if args.config is not None:
        file_cfg = _read_json(args.config)
        unknown = set(file_cfg) - RUN_KEYS
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        config = _merge(config, file_cfg)
        if "scene" in file_cfg:
            config["scene"] = file_cfg["scene"]
    flags = {k: v for k, v in (("method", args.method), ("b", args.b), ("seed", args.seed),
                               ("out", args.out)) if v is not None}
    sources = [s for s in ("preset", "scene", "generate") if getattr(args, s) is not None]
    if len(sources) > 1:
        raise UsageError("give only one of --preset, --scene and --generate")
    if sources:
        src = sources[0]
        if src == "generate":
            flags["scene"] = {"generate": args.generate, "seed": args.scene_seed or 0}
        else:
            flags["scene"] = {"preset" if src == "preset" else "file": getattr(args, src)}
    config = _merge(config, flags)
    if "scene" in flags:
        config["scene"] = flags["scene"]
    config = _merge(config, _overrides(args))
    if config["out"] is None:
        config["out"] = _default_out()
    return config


def _load_scene(src: dict) -> SceneSpec:
    if not isinstance(src, dict) or len({"preset", "file", "generate"} & set(src)) != 1:
        raise UsageError("scene must name exactly one of preset, file or generate")
    if "preset" in src:
        return preset_scene(src["preset"])
    if "file" in src:
        try:
            return SceneSpec.load(src["file"])
        except FileNotFoundError:
            raise UsageError(f"scene file not found: {src['file']}")
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise UsageError(f"cannot read scene {src['file']}: {exc}")
    return generate_push_scene(src["generate"], int(src.get("seed", 0)))


def _settings(config: dict, method: str) -> Settings:
    planner = dict(config.get("planner", {}))
    planner["method"] = method
    return Settings.from_dict({"planner": planner, "opt": config.get("opt", {}),
                               "cost": config.get("cost", {})})


def cmd_run(args) -> int:
    config = resolve_run(args)
    method = config["method"]
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}")
    scene = _load_scene(config["scene"])
    settings = _settings(config, method)
    b = scene.b if config["b"] is None else float(config["b"])
    seed = int(config["seed"])
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    result = run_scene(scene, settings, seed, method, b, out / "trace.jsonl")
    record = {"method": method, "b": b, "seed": seed, "scene": scene.name, **result.to_dict()}
    (out / "episode.json").write_text(json.dumps(record, indent=1) + "\n")
    status = "success" if result.success else f"failed ({result.reason})"
    print(f"{method} on {scene.name or 'scene'} b={b:g} seed={seed}: {status}, "
          f"{result.actions} actions, {result.total_time:.2f} s total "
          f"({result.planning_time:.2f} s planning); trace {out / 'trace.jsonl'}")
    return EXIT_OK if result.success else EXIT_FAILED


# ---------------------------------------------------------------------------
# bench


def resolve_bench(args) -> BenchmarkConfig:
    base: dict = {}
    if args.config is not None:
        base = _read_json(args.config)
    flags = {k: v for k, v in (("methods", args.methods), ("accuracies", args.accuracies),
                               ("b_levels", args.b_levels), ("scenes_per_cell", args.scenes),
                               ("seed", args.seed), ("workers", args.workers),
                               ("out_dir", args.out), ("traces", args.traces),
                               ("timeout", getattr(args, "planner.timeout")))
             if v is not None}
    merged = _merge(_merge(base, flags), {k: v for k, v in _overrides(args).items() if v})
    merged.get("planner", {}).pop("timeout", None)
    merged.setdefault("out_dir", _default_out())
    try:
        return BenchmarkConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid benchmark config: {exc}")


def cmd_bench(args) -> int:
    config = resolve_bench(args)
    out = Path(config.out_dir)

    def progress(key, res):
        if args.verbose:
            m, a, b, k = key
            print(f"  {m} {a} b={b:g} #{k}: {'ok' if res.success else res.reason} "
                  f"{res.actions} actions {res.total_time:.2f} s", file=sys.stderr)

    try:
        cells = run_benchmark(config, progress)
    except OSError as exc:
        raise UsageError(f"cannot write to {out}: {exc}")
    csv_text, table = summarize(cells)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(csv_text)
    (out / "summary.txt").write_text(table)
    print(table, end="")
    print(f"wrote {out / 'results.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-scene


def cmd_gen_scene(args) -> int:
    chosen = [s for s in ("preset", "accuracy", "clutter") if getattr(args, s) is not None]
    if len(chosen) != 1:
        raise UsageError("give exactly one of --preset, --accuracy and --clutter")
    if args.preset is not None:
        scene = preset_scene(args.preset, args.b)
    elif args.accuracy is not None:
        scene = generate_push_scene(args.accuracy, args.seed, args.b, args.position_spread)
    else:
        scene = generate_clutter_scene(args.clutter, args.seed, args.b)
    text = scene.dumps() + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# replay


class TraceError(Exception):
    def __init__(self, index: int, message: str):
        super().__init__(f"record {index}: {message}")
        self.index = index


def _finite(values) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in values)


def check_trace(lines: list[str]) -> dict:
    """Validate a trace and return episode statistics."""
    if not lines:
        raise TraceError(0, "empty trace")
    records = []
    for i, line in enumerate(lines):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(i, f"unparseable record ({exc.msg})")
        if not isinstance(rec, dict) or "type" not in rec:
            raise TraceError(i, "record has no type")
        records.append(rec)
    head = records[0]
    if head["type"] != "header" or head.get("format") != TRACE_FORMAT:
        raise TraceError(0, "first record is not a trace header")
    if head.get("version") != TRACE_VERSION:
        raise TraceError(0, f"unsupported trace version {head.get('version')!r}")
    try:
        n_obj = len(head["scene"]["objects"])
    except (KeyError, TypeError):
        raise TraceError(0, "header lacks the scene")
    last_t = -math.inf
    fallen = [False] * n_obj
    frames = decisions = 0
    result = None
    for i, rec in enumerate(records[1:], start=1):
        kind = rec["type"]
        if result is not None:
            raise TraceError(i, "record after the result")
        if kind == "frame":
            t = rec.get("t")
            objs = rec.get("objects", [])
            if not _finite([t]) or t < last_t:
                raise TraceError(i, "frame time is not finite and non-decreasing")
            if len(rec.get("q", [])) != 4 or not _finite(rec["q"]) or \
                    not _finite(rec.get("qd", [None])):
                raise TraceError(i, "bad robot state")
            if len(objs) != n_obj:
                raise TraceError(i, f"expected {n_obj} objects")
            for j, o in enumerate(objs):
                if len(o.get("pose", [])) != 3 or not _finite(o["pose"]) or \
                        not _finite(o.get("vel", [None])):
                    raise TraceError(i, f"bad state for object {j}")
                if fallen[j] and not o.get("fallen"):
                    raise TraceError(i, f"object {j} came back after falling")
                fallen[j] = bool(o.get("fallen"))
            last_t = t
            frames += 1
        elif kind == "decision":
            values = rec.get("values", [])
            if not values or not _finite(values) or not 0 <= rec.get("chosen", -1) < len(values):
                raise TraceError(i, "bad decision record")
            decisions += 1
        elif kind == "opt":
            if not _finite([rec.get("incumbent"), rec.get("candidate")]):
                raise TraceError(i, "bad optimizer record")
        elif kind == "result":
            result = rec
        else:
            raise TraceError(i, f"unknown record type {kind!r}")
    if result is None:
        raise TraceError(len(records), "trace ends without a result record (truncated?)")
    return {"method": head.get("method"), "b": head.get("b"), "seed": head.get("seed"),
            "success": result.get("success"), "reason": result.get("reason"),
            "actions": result.get("actions"), "decisions": decisions, "frames": frames,
            "simulated_s": last_t if frames else 0.0, "total_time_s": result.get("total_time_s"),
            "records": records}


def resample_frames(records: list[dict], cadence: float) -> list[dict]:
    """Sample-and-hold frames at a fixed cadence (s)."""
    frames = [r for r in records if r["type"] == "frame"]
    if not frames:
        return []
    out = []
    t, j = frames[0]["t"], 0
    end = frames[-1]["t"]
    while t <= end + 1e-12:
        while j + 1 < len(frames) and frames[j + 1]["t"] <= t + 1e-12:
            j += 1
        out.append({**frames[j], "t": t})
        t += cadence
    return out


def cmd_replay(args) -> int:
    try:
        lines = Path(args.trace).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read trace: {exc}")
    try:
        stats = check_trace(lines)
    except TraceError as exc:
        print(f"invalid trace {args.trace}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    records = stats.pop("records")
    for k, v in stats.items():
        print(f"{k}: {v}")
    if args.emit is not None:
        if not args.cadence > 0:
            raise UsageError("--cadence must be > 0")
        frames = resample_frames(records, args.cadence)
        with open(args.emit, "w") as fh:
            for f in frames:
                fh.write(json.dumps(f) + "\n")
        print(f"wrote {len(frames)} frames to {args.emit}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    data = _read_json(args.file)
    kind = args.kind
    if kind is None:
        if data.get("format") == "tapush-scene":
            kind = "scene"
        elif {"methods", "accuracies", "b_levels", "scenes_per_cell"} & set(data):
            kind = "bench"
        else:
            kind = "run"
    try:
        if kind == "scene":
            SceneSpec.from_dict(data)
        elif kind == "bench":
            BenchmarkConfig.from_dict(data)
        else:
            unknown = set(data) - RUN_KEYS
            if unknown:
                raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
            _settings(data, data.get("method", "tampc"))
            if "scene" in data:
                _load_scene(data["scene"])
    except UsageError as exc:
        print(f"invalid {kind} file {args.file}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KeyError, TypeError, ValueError) as exc:
        print(f"invalid {kind} file {args.file}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"{args.file}: valid {kind} file")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tapush", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one episode and write its trace")
    r.add_argument("--config", help="JSON run config (default: none)")
    r.add_argument("--method", choices=METHODS, help="planner (default: tampc)")
    r.add_argument("--b", type=float, help="noise slope: velocity noise std per sub-step is "
                                           "b * |u| (default: the scene's b, else 0)")
    r.add_argument("--seed", type=int, help="master seed, unsigned 64-bit (default: 0)")
    r.add_argument("--preset", choices=PRESETS, help="built-in scene (default: wide)")
    r.add_argument("--scene", help="scene JSON file (default: none)")
    r.add_argument("--generate", choices=("high", "low"),
                   help="generate a pushing scene of this accuracy (default: none)")
    r.add_argument("--scene-seed", type=int, help="seed for --generate (default: 0)")
    r.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or {DEFAULT_OUT})")
    _add_param_flags(r)
    r.set_defaults(func=cmd_run)

    bch = sub.add_parser("bench", help="run the methods x accuracy x b benchmark grid")
    bch.add_argument("--config", help="JSON benchmark config (default: none)")
    bch.add_argument("--methods", nargs="+", choices=METHODS,
                     help="methods to compare (default: tampc mpc uampc)")
    bch.add_argument("--accuracies", nargs="+", choices=("high", "low"),
                     help="accuracy levels (default: high low)")
    bch.add_argument("--b-levels", nargs="+", type=float,
                     help="noise slopes b (default: 0 0.05 0.075 0.1)")
    bch.add_argument("--scenes", type=int, help="scenes per cell (default: 50)")
    bch.add_argument("--seed", type=int, help="master seed (default: 0)")
    bch.add_argument("--workers", type=int, help="worker processes (default: 1)")
    bch.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or {DEFAULT_OUT})")
    bch.add_argument("--traces", action="store_true", default=None,
                     help="write one trace per episode under OUT/traces (default: off)")
    bch.add_argument("--verbose", action="store_true", help="print every episode to stderr")
    _add_param_flags(bch)
    bch.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen-scene", help="write a scene file")
    g.add_argument("--preset", choices=PRESETS, help="built-in scene (default: none)")
    g.add_argument("--accuracy", choices=("high", "low"),
                   help="random pushing scene of this accuracy (default: none)")
    g.add_argument("--clutter", type=int, metavar="N",
                   help="random grasping scene with N objects (default: none)")
    g.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    g.add_argument("--b", type=float, default=0.0, help="noise slope stored in the scene "
                                                        "(default: 0)")
    g.add_argument("--position-spread", choices=tuple(POSITION_STD), default="variance",
                   help="start position spread: variance (std 0.1 m) or std (0.01 m) "
                        "(default: variance)")
    g.add_argument("--out", help="output file (default: stdout)")
    g.set_defaults(func=cmd_gen_scene)

    rp = sub.add_parser("replay", help="validate a trace and print episode statistics")
    rp.add_argument("trace", help="trace JSONL file")
    rp.add_argument("--emit", help="write frames resampled at --cadence to this file "
                                   "(default: none)")
    rp.add_argument("--cadence", type=float, default=0.04,
                    help="resampling period for --emit, s (default: 0.04)")
    rp.set_defaults(func=cmd_replay)

    v = sub.add_parser("validate", help="check a run config, benchmark config or scene file")
    v.add_argument("file", help="JSON file to check")
    v.add_argument("--kind", choices=("run", "bench", "scene"),
                   help="file kind (default: detected from the content)")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
