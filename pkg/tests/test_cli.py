import json

import pytest

from tapush.cli import (DEFAULT_OUT, OUT_ENV, _PARAM_FLAGS, build_parser, check_trace, main,
                        resample_frames, resolve_run)


@pytest.fixture(scope="module")
def wide_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("wide")
    code = main(["run", "--preset", "wide", "--method", "tampc", "--seed", "7", "--out",
                 str(out)])
    return code, out


def test_run_wide_succeeds(wide_run):
    code, out = wide_run
    assert code == 0
    episode = json.loads((out / "episode.json").read_text())
    assert episode["success"] and episode["method"] == "tampc"
    assert (out / "trace.jsonl").exists()


def test_run_with_single_candidate_is_usage_error(tmp_path, capsys):
    assert main(["run", "--preset", "wide", "--N", "1", "--out", str(tmp_path)]) == 1
    assert "N - 1" in capsys.readouterr().err


def test_run_strip_mpc_exit_reflects_outcome(tmp_path):
    code = main(["run", "--preset", "strip", "--method", "mpc", "--b", "0.1", "--seed", "3",
                 "--out", str(tmp_path)])
    episode = json.loads((tmp_path / "episode.json").read_text())
    assert code == (0 if episode["success"] else 2)


def test_run_is_byte_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--preset", "wide", "--b", "0.05", "--seed", "11", "--out",
                     str(tmp_path / d)]) in (0, 2)
    assert (tmp_path / "a" / "trace.jsonl").read_bytes() == \
        (tmp_path / "b" / "trace.jsonl").read_bytes()


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 1
    assert main(["run", "--method", "rrt"]) == 1
    assert main(["run", "--preset", "wide", "--scene", "x.json"]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"colour": 1}')
    assert main(["run", "--config", str(bad)]) == 1
    assert "colour" in capsys.readouterr().err


def test_help_lists_every_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for flag, *_ in _PARAM_FLAGS:
        assert flag in text
    for flag in ("--config", "--method", "--b", "--seed", "--preset", "--scene", "--out"):
        assert flag in text
    assert "default" in text


# -- precedence ---------------------------------------------------------------


@pytest.mark.parametrize("in_config,on_cli,expected", [
    (False, False, "default"), (True, False, "config"), (False, True, "cli"),
    (True, True, "cli")])
def test_precedence(tmp_path, monkeypatch, in_config, on_cli, expected):
    monkeypatch.delenv(OUT_ENV, raising=False)
    argv = ["run"]
    if in_config:
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"seed": 5, "method": "mpc", "planner": {"Q": 8},
                                   "opt": {"K": 3}, "cost": {"k_act": 0.5},
                                   "scene": {"preset": "strip"}}))
        argv += ["--config", str(cfg)]
    if on_cli:
        argv += ["--seed", "9", "--method", "uampc", "--Q", "16", "--K", "7", "--k-act", "0.25",
                 "--preset", "l-shape"]
    c = resolve_run(build_parser().parse_args(argv))
    want = {"default": (0, "tampc", None, None, None, {"preset": "wide"}),
            "config": (5, "mpc", 8, 3, 0.5, {"preset": "strip"}),
            "cli": (9, "uampc", 16, 7, 0.25, {"preset": "l-shape"})}[expected]
    got = (c["seed"], c["method"], c["planner"].get("Q"), c["opt"].get("K"),
           c["cost"].get("k_act"), c["scene"])
    assert got == want
    assert c["out"] == DEFAULT_OUT


def test_cli_overrides_single_field_of_config_group(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"planner": {"Q": 8, "N": 5}}))
    c = resolve_run(build_parser().parse_args(["run", "--config", str(cfg), "--Q", "2"]))
    assert c["planner"] == {"Q": 2, "N": 5}


def test_out_env_var(monkeypatch, tmp_path):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    c = resolve_run(build_parser().parse_args(["run"]))
    assert c["out"] == str(tmp_path / "env")
    c = resolve_run(build_parser().parse_args(["run", "--out", "x"]))
    assert c["out"] == "x"


# -- replay -------------------------------------------------------------------


def test_replay_valid_trace(wide_run, tmp_path, capsys):
    _, out = wide_run
    frames = tmp_path / "frames.jsonl"
    assert main(["replay", str(out / "trace.jsonl"), "--emit", str(frames),
                 "--cadence", "0.1"]) == 0
    text = capsys.readouterr().out
    assert "success: True" in text
    emitted = [json.loads(line) for line in frames.read_text().splitlines()]
    times = [f["t"] for f in emitted]
    first = next(json.loads(line) for line in (out / "trace.jsonl").read_text().splitlines()
                 if '"frame"' in line)
    assert times[0] == first["t"]
    assert all(b - a == pytest.approx(0.1) for a, b in zip(times, times[1:]))


def test_replay_truncated_trace(wide_run, tmp_path, capsys):
    _, out = wide_run
    lines = (out / "trace.jsonl").read_text().splitlines()
    cut = tmp_path / "cut.jsonl"
    cut.write_text("\n".join(lines[:-1]) + "\n")
    assert main(["replay", str(cut)]) == 1
    assert f"record {len(lines) - 1}" in capsys.readouterr().err
    broken = tmp_path / "broken.jsonl"
    broken.write_text("\n".join(lines[:3] + [lines[3][:20]] + lines[4:]) + "\n")
    assert main(["replay", str(broken)]) == 1
    assert "record 3" in capsys.readouterr().err


def test_replay_empty_and_missing(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["replay", str(empty)]) == 1
    assert main(["replay", str(tmp_path / "nope.jsonl")]) == 1


def test_check_trace_rejects_resurrected_object(wide_run):
    _, out = wide_run
    records = [json.loads(line) for line in (out / "trace.jsonl").read_text().splitlines()]
    frames = [i for i, r in enumerate(records) if r["type"] == "frame"]
    records[frames[0]]["objects"][0]["fallen"] = True
    with pytest.raises(Exception, match=f"record {frames[1]}"):
        check_trace([json.dumps(r) for r in records])


def test_resample_frames_sample_and_hold():
    recs = [{"type": "frame", "t": 0.0, "v": 0}, {"type": "frame", "t": 0.25, "v": 1},
            {"type": "decision"}, {"type": "frame", "t": 0.5, "v": 2}]
    got = resample_frames(recs, 0.1)
    assert [f["v"] for f in got] == [0, 0, 0, 1, 1, 2]
    assert resample_frames([], 0.1) == []


# -- validate and gen-scene ---------------------------------------------------------


def test_gen_scene_and_validate(tmp_path, capsys):
    scene = tmp_path / "s.json"
    assert main(["gen-scene", "--accuracy", "high", "--seed", "4", "--out", str(scene)]) == 0
    assert main(["validate", str(scene)]) == 0
    assert "valid scene" in capsys.readouterr().out
    assert main(["gen-scene", "--clutter", "4", "--seed", "1", "--out",
                 str(tmp_path / "c.json")]) == 0
    assert main(["validate", str(tmp_path / "c.json"), "--kind", "scene"]) == 0
    assert main(["gen-scene", "--preset", "strip", "--accuracy", "low"]) == 1
    assert main(["gen-scene"]) == 1
    # generated scenes can be run directly
    assert main(["run", "--scene", str(scene), "--seed", "1", "--I-max", "1",
                 "--out", str(tmp_path / "run")]) in (0, 2)


def test_gen_scene_stdout_is_deterministic(capsys):
    main(["gen-scene", "--preset", "changing"])
    first = capsys.readouterr().out
    main(["gen-scene", "--preset", "changing"])
    assert capsys.readouterr().out == first
    assert json.loads(first)["name"] == "changing"


def test_validate_configs(tmp_path):
    good_run = tmp_path / "run.json"
    good_run.write_text(json.dumps({"method": "mpc", "planner": {"Q": 4},
                                    "scene": {"preset": "wide"}}))
    assert main(["validate", str(good_run)]) == 0
    bad_run = tmp_path / "bad_run.json"
    bad_run.write_text(json.dumps({"planner": {"Q": 0}}))
    assert main(["validate", str(bad_run)]) == 1
    good_bench = tmp_path / "bench.json"
    good_bench.write_text(json.dumps({"methods": ["tampc"], "scenes_per_cell": 2}))
    assert main(["validate", str(good_bench)]) == 0
    bad_bench = tmp_path / "bad_bench.json"
    bad_bench.write_text(json.dumps({"methods": ["tampc"], "b_levels": [0.3]}))
    assert main(["validate", str(bad_bench)]) == 1
    bad_scene = tmp_path / "bad_scene.json"
    bad_scene.write_text(json.dumps({"format": "tapush-scene", "objects": []}))
    assert main(["validate", str(bad_scene)]) == 1
    not_json = tmp_path / "x.json"
    not_json.write_text("{")
    assert main(["validate", str(not_json)]) == 1


# -- bench ----------------------------------------------------------------------


def test_bench_missing_config(tmp_path):
    assert main(["bench", "--config", str(tmp_path / "none.json")]) == 1


def test_bench_minimal_config_is_byte_reproducible(tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({"methods": ["mpc"], "accuracies": ["low"], "b_levels": [0.05],
                               "scenes_per_cell": 1, "timeout": 20.0}))
    for d in ("a", "b"):
        assert main(["bench", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    assert len(a.decode().splitlines()) == 2
    assert (tmp_path / "a" / "summary.txt").exists()


def test_bench_flags_override_config(tmp_path):
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({"methods": ["mpc"], "accuracies": ["low"], "b_levels": [0.05],
                               "scenes_per_cell": 3}))
    assert main(["bench", "--config", str(cfg), "--scenes", "1", "--methods", "uampc",
                 "--timeout-s", "20", "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "results.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("uampc,low,0.05,")


def test_bench_invalid_values(tmp_path):
    assert main(["bench", "--b-levels", "0.3", "--out", str(tmp_path)]) == 1
    assert main(["bench", "--scenes", "0", "--out", str(tmp_path)]) == 1
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["bench", "--methods", "mpc", "--accuracies", "low", "--b-levels", "0",
                 "--scenes", "1", "--out", str(blocker / "sub")]) == 1
