import argparse
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import straight_lane, to_camera
from lane3d import cli
from lane3d.geometry import CameraIntrinsics, CameraPose, bilinear_sample_backward
from lane3d.io import DatasetRecord, read_lines, write_lines
from lane3d.loss import LossGradients, loss_gradients


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "gt.jsonl"
    assert cli.main(["generate", "--seeds", "0..29", "--out", str(path)]) == 0
    return path


def _report(path):
    return json.loads(path.read_text())


def test_generate_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert cli.main(["generate", "--seeds", "0..99", "--out", str(a)]) == 0
    assert cli.main(["generate", "--seeds", "0..99", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert len(lines) == 100
    assert [json.loads(l)["id"] for l in lines] == list(range(100))


def test_generate_from_config_file(tmp_path):
    out = tmp_path / "o.jsonl"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seeds": "3..5", "out": str(out),
                               "generation": {"n_lanes": [3, 3]}}))
    assert cli.main(["generate", "--config", str(cfg)]) == 0
    recs = [DatasetRecord.from_json(o) for _, o in read_lines(out)]
    assert [r.seed for r in recs] == [3, 4, 5]


def test_generate_invalid_config_exit_1(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"generation": {"lane_width": [4.0, 3.2]}}))
    rc = cli.main(["generate", "--config", str(cfg), "--seeds", "0..1", "--out", str(tmp_path / "o")])
    assert rc == cli.EXIT_VALIDATION
    assert "lane_width" in capsys.readouterr().err


def test_generate_unwritable_exit_2(tmp_path):
    out = tmp_path / "missing" / "dir" / "o.jsonl"
    assert cli.main(["generate", "--seeds", "0..1", "--out", str(out)]) == cli.EXIT_IO


def test_missing_config_file_exit_2(tmp_path):
    assert cli.main(["generate", "--config", str(tmp_path / "nope.json"),
                     "--seeds", "0..1", "--out", str(tmp_path / "o")]) == cli.EXIT_IO


def _record(rid, xs):
    pose = CameraPose(np.radians(1.0), 1.6)
    road = [straight_lane(x) for x in xs]
    return DatasetRecord(rid, rid, 0, 1, CameraIntrinsics(), 1.0, 1.6, to_camera(road, pose), road)


def test_encode_counts_and_idempotence(tmp_path, capsys):
    src = tmp_path / "in.jsonl"
    write_lines(src, [_record(0, [-3.6, 0.0, 3.6]).to_json(), _record(1, [-3.6, 0.0, 3.6]).to_json(),
                      _record(2, [15.0]).to_json()])
    once, twice = tmp_path / "e1.jsonl", tmp_path / "e2.jsonl"
    assert cli.main(["encode", "--in", str(src), "--out", str(once)]) == 0
    out = capsys.readouterr().out
    assert "6 lanes assigned, 1 ignored, 0 malformed" in out
    recs = [DatasetRecord.from_json(o) for _, o in read_lines(once)]
    assert [len(r.gt.lane_slots) for r in recs] == [3, 3, 0]
    assert recs[2].gt.ignored_lanes and not recs[2].gt.assigned.any()
    assert cli.main(["encode", "--in", str(once), "--out", str(twice)]) == 0
    assert once.read_bytes() == twice.read_bytes()


def test_encode_skips_malformed(tmp_path, capsys, caplog):
    src = tmp_path / "in.jsonl"
    good = json.dumps(_record(0, [0.0]).to_json())
    src.write_text(good + "\n{broken\n" + json.dumps({"schema": "other/9"}) + "\n")
    out = tmp_path / "o.jsonl"
    assert cli.main(["encode", "--in", str(src), "--out", str(out)]) == cli.EXIT_VALIDATION
    captured = capsys.readouterr()
    assert "2 malformed skipped" in captured.out
    assert sum("skipped" in m for m in caplog.messages) == 2
    assert len(out.read_text().splitlines()) == 1


def test_eval_gt_as_predictions(dataset, tmp_path):
    pred = tmp_path / "p.jsonl"
    preds = []
    for _, o in read_lines(dataset):
        preds.append({"schema": "lane3d.pred/1", "id": o["id"], "frame": "camera",
                      "lanes": [{"kind": l["kind"], "confidence": 1.0, "points": l["camera"]}
                                for l in o["lanes"]]})
    write_lines(pred, preds)
    rep = tmp_path / "r.json"
    assert cli.main(["eval", "--gt", str(dataset), "--pred", str(pred), "--report", str(rep)]) == 0
    r = _report(rep)
    assert r["centerline"]["ap"] == 1.0 and r["delimiter"]["ap"] == 1.0
    assert r["centerline"]["near"]["1sigma"] == 0.0 and r["centerline"]["far"]["2sigma"] == 0.0
    rep2 = tmp_path / "r2.json"
    cli.main(["eval", "--gt", str(dataset), "--pred", str(pred), "--report", str(rep2)])
    assert rep.read_bytes() == rep2.read_bytes()


def test_eval_empty_predictions(dataset, tmp_path):
    pred = tmp_path / "p.jsonl"
    pred.write_text("")
    rep = tmp_path / "r.json"
    assert cli.main(["eval", "--gt", str(dataset), "--pred", str(pred), "--report", str(rep)]) == 0
    r = _report(rep)
    assert r["centerline"]["ap"] == 0.0 and r["centerline"]["near"]["1sigma"] is None


def test_eval_id_mismatch_names_ids(dataset, tmp_path, capsys):
    pred = tmp_path / "p.jsonl"
    write_lines(pred, [{"schema": "lane3d.pred/1", "id": i, "frame": "camera", "lanes": []}
                       for i in range(28)])
    rc = cli.main(["eval", "--gt", str(dataset), "--pred", str(pred), "--report", str(tmp_path / "r")])
    assert rc == cli.EXIT_VALIDATION
    assert "[28, 29]" in capsys.readouterr().err


def test_baseline_flat_far_worse_than_near(dataset, tmp_path):
    pred, rep = tmp_path / "flat.jsonl", tmp_path / "r.json"
    assert cli.main(["baseline-flat", "--in", str(dataset), "--out", str(pred)]) == 0
    assert cli.main(["eval", "--gt", str(dataset), "--pred", str(pred), "--report", str(rep)]) == 0
    c = _report(rep)["centerline"]
    assert c["far"]["1sigma"] > c["near"]["1sigma"]


def _flipped_loss_gradients(*args):
    g = loss_gradients(*args)
    return LossGradients(-g.confidence, g.x_offsets, g.z_values, g.pitch, g.h_cam)


def _flipped_sampler(*args):
    gi, gg = bilinear_sample_backward(*args)
    return gi, -gg


def test_gradcheck_pass_and_determinism(capsys):
    ns = argparse.Namespace(seed=0)
    assert cli.cmd_gradcheck(ns) == 0
    first = [l for l in capsys.readouterr().out.splitlines() if "max relative error" in l]
    assert cli.cmd_gradcheck(ns) == 0
    second = [l for l in capsys.readouterr().out.splitlines() if "max relative error" in l]
    assert first == second and len(first) == 2


@pytest.mark.parametrize("override", [{"gradients": _flipped_loss_gradients},
                                      {"sampler_backward": _flipped_sampler}])
def test_gradcheck_detects_sign_flip(override, capsys):
    assert cli.cmd_gradcheck(argparse.Namespace(seed=0), **override) == cli.EXIT_CHECK
    out = capsys.readouterr().out
    assert "FAIL" in out and "worst seed" in out


def test_console_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "lane3d.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("generate", "encode", "eval", "baseline-flat", "gradcheck"):
        assert cmd in r.stdout
