import json
import os
import subprocess
import sys

import pytest

from saltspread import analysis, cli, rfid, simulation, telemetry
from saltspread.controller import ControllerConfig

REF_HEX = "525401010000000101F405280000F8A6"


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("inputs")
    spec, tags = simulation.tsp_like()
    short = simulation.RouteSpec(spec.segments[:6], 0.2, 0.3, "short")
    (d / "spec.json").write_text(json.dumps(short.to_json()))
    trace = simulation.synth_route(short, 1)
    (d / "t.csv").write_bytes(telemetry.emit_trace(trace))
    (d / "tags.json").write_text(rfid.dump_placements(
        [rfid.Placement(1000.0, rfid.RoadsideTag(1, "RateAdjust", 500, 1320))]))
    cal = simulation.synth_route(simulation.calibration_route(), 0)
    (d / "cal.csv").write_bytes(telemetry.emit_trace(cal))
    acc = analysis.synth_accidents(cal, ControllerConfig(expected_temp_f=28.0), 20_000, 5, dry_fraction=0.1)
    (d / "acc.csv").write_bytes(analysis.emit_accidents(acc))
    (d / "cal.cfg").write_text("k2_incline = 0.04\nk2_decline = 0.08\nexpected_temp_f = 28\n")
    return d


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def test_replay_writes_outputs(files, tmp_path, capsys):
    out = tmp_path / "runs"
    assert run_cli("replay", "--trace", files / "t.csv", "--config", "tsp-2018",
                   "--tags", files / "tags.json", "--out", out) == 0
    header = (out / "run.csv").read_text().splitlines()[0]
    assert header == ",".join(simulation.RUN_COLUMNS)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["total_salt_lb"] > 0 and summary["route_id"] == "t"
    assert "steps over" in capsys.readouterr().out


def test_replay_is_byte_identical(files, tmp_path):
    for name in ("a", "b"):
        assert run_cli("replay", "--trace", files / "t.csv", "--tags", files / "tags.json",
                       "--blast-ms", 4000, "--out", tmp_path / name) == 0
    for f in ("run.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synth_outputs(files, tmp_path):
    out = tmp_path / "s.csv"
    assert run_cli("synth", "--spec", files / "spec.json", "--seed", 1, "--out", out) == 0
    assert out.read_bytes() == (files / "t.csv").read_bytes()
    assert run_cli("synth", "--spec", "tsp-like", "--seed", 2, "--out", tmp_path / "tsp.csv",
                   "--tags-out", tmp_path / "tags.json", "--accidents-out", tmp_path / "acc.csv",
                   "--accidents-n", 300) == 0
    assert len(rfid.parse_placements((tmp_path / "tags.json").read_text())) == 4
    assert len(analysis.parse_accidents((tmp_path / "acc.csv").read_bytes())) == 300


def test_compare(files, tmp_path, capsys):
    out = tmp_path / "cmp.json"
    assert run_cli("compare", "--trace", files / "t.csv", "--flat-rate", 200, "--out", out) == 0
    res = json.loads(out.read_text())
    assert res["variable_total_lb"] < res["flat_rate_total_lb"]
    assert "saved" in capsys.readouterr().out


def test_tune_parallel_matches_serial(files, tmp_path):
    args = ["tune", "--trace", files / "cal.csv", "--window-ms", 0, "--accidents", files / "acc.csv",
            "--config", files / "cal.cfg", "--conserve-total", "--segment-mi", 0.01,
            "--k2-incline", "0.04:0.08:0.01", "--k2-decline", "0.04:0.08:0.01", "--k3", "1.5:3.5:0.5"]
    assert run_cli(*args, "--jobs", 1, "--out", tmp_path / "j1.json") == 0
    assert run_cli(*args, "--jobs", 4, "--out", tmp_path / "j4.json") == 0
    a = (tmp_path / "j1.json").read_bytes()
    assert a == (tmp_path / "j4.json").read_bytes()
    report = json.loads(a)
    assert len(report["surface"]) == 125
    assert abs(report["total_salt_after"] / report["total_salt_before"] - 1) <= 0.005


def test_config_dir_env(files, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.CONFIG_DIR_ENV, str(files))
    assert run_cli("replay", "--trace", files / "cal.csv", "--config", "cal", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["k2_decline"] == 0.08


def test_analyze(files, tmp_path):
    out = tmp_path / "an"
    assert run_cli("analyze", "--trace", files / "cal.csv", "--accidents", files / "acc.csv",
                   "--segment-mi", 0.01, "--out", out) == 0
    corr = json.loads((out / "correlation.json").read_text())
    assert corr["segments"] == 100 and corr["spearman"] > 0
    assert (out / "segments.csv").read_text().startswith("segment_index,start_mi,")


def test_filter_trace(files, tmp_path):
    out = tmp_path / "f.csv"
    assert run_cli("filter-trace", "--trace", files / "t.csv", "--window-ms", 500, "--out", out) == 0
    filtered = telemetry.parse_trace(out.read_bytes())
    raw = telemetry.parse_trace((files / "t.csv").read_bytes())
    assert len(filtered) == len(raw)
    assert filtered.incline_deg.std() < raw.incline_deg.std()


def test_encode_decode_tag(tmp_path, capsys):
    assert run_cli("encode-tag", "--tag-id", 1, "--command", "RateAdjust", "--magnitude", 500,
                   "--extent-ft", 1320, "--out", tmp_path / "tag.bin") == 0
    assert capsys.readouterr().out.strip() == REF_HEX
    assert (tmp_path / "tag.bin").read_bytes() == bytes.fromhex(REF_HEX)
    assert run_cli("decode-tag", "--file", tmp_path / "tag.bin", "--out", tmp_path / "tag.json") == 0
    tag = json.loads(capsys.readouterr().out)
    assert tag == {"command": "RateAdjust", "extent_ft": 1320, "magnitude": 500, "tag_id": 1}
    assert json.loads((tmp_path / "tag.json").read_text()) == tag


def test_decode_crc_corrupt_exits_1(capsys):
    bad = REF_HEX[:-1] + "7"
    assert run_cli("decode-tag", "--hex", bad) == 1
    assert "CRC mismatch" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["encode-tag", "--tag-id", "1", "--command", "RateAdjust", "--magnitude", "6000", "--extent-ft", "5"],
    ["decode-tag", "--hex", "zz"],
    ["replay", "--trace", "/nonexistent.csv", "--out", "x"],
    ["replay"],
    ["frobnicate"],
])
def test_input_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert exit_code(argv) == 1
    assert not (tmp_path / "x").exists()


def exit_code(argv):
    try:
        return cli.main(argv)
    except SystemExit as exc:
        return exc.code


def test_bad_trace_names_file_and_row(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text(telemetry.TRACE_HEADER + "\n0,30,0,0,\n10,30,0,0,\n5,30,0,0,\n")
    assert run_cli("replay", "--trace", p, "--out", tmp_path / "o") == 1
    err = capsys.readouterr().err
    assert "bad.csv" in err and "non-monotone timestamp at row 4" in err
    assert not (tmp_path / "o").exists()


def test_invariant_failure_exits_2(files, tmp_path, monkeypatch, capsys):
    from saltspread import errors

    def boom(*a, **k):
        raise errors.InvariantError("clamp escaped")

    monkeypatch.setattr(simulation, "run", boom)
    assert run_cli("replay", "--trace", files / "t.csv", "--out", tmp_path) == 2
    assert "clamp escaped" in capsys.readouterr().err


def test_atomic_write_leaves_nothing_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "out.bin"
    target.write_bytes(b"old")

    def fail(*a):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", fail)
    with pytest.raises(OSError):
        cli.atomic_write(target, b"new contents")
    assert target.read_bytes() == b"old"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out.bin"]


@pytest.mark.parametrize("sub, needles", [
    ("replay", ["--trace", "--tags", "--config", "--out", "--window-ms", "--blast-ms", telemetry.TRACE_HEADER,
                "chainage_ft,incline_deg"]),
    ("synth", ["--spec", "--seed", "--out", "tsp-like", telemetry.TRACE_HEADER]),
    ("compare", ["--flat-rate", telemetry.TRACE_HEADER]),
    ("tune", ["--accidents", "--conserve-total", "--jobs", "--k2-incline", "--k3", analysis.ACCIDENT_HEADER]),
    ("analyze", ["--accidents", "--segment-mi", analysis.ACCIDENT_HEADER]),
    ("filter-trace", ["--window-ms", telemetry.TRACE_HEADER]),
    ("encode-tag", ["--tag-id", "--command", "--magnitude", "--extent-ft", "CRC-16/CCITT-FALSE"]),
    ("decode-tag", ["--hex", "--file"]),
])
def test_help_documents_flags_and_formats(sub, needles, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([sub, "--help"])
    assert exc.value.code == 0
    text = " ".join(capsys.readouterr().out.split())
    for n in needles:
        assert n in text


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "saltspread", "encode-tag", "--tag-id", "1", "--command",
                          "RateAdjust", "--magnitude", "500", "--extent-ft", "1320"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == REF_HEX
