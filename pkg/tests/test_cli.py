import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bevloc.cli import dumps, main
from bevloc.geometry import Attitude, BevCamera, warp_pano
from bevloc.georef import PatchMeta, gps_to_patch_pixel
from bevloc.io import read_dump
from bevloc.raster import ImageBuffer, load_image, save_image

FIX = Path(__file__).parent / "fixtures" / "align"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, [json.loads(line) for line in out.splitlines() if line.strip()], err


def test_gps2pix_anchors(capsys):
    code, (rec,), _ = run(capsys, "gps2pix", "--lat", 0, "--lon", 0, "--zoom", 20)
    assert code == 0 and rec["x"] == 134217728 and rec["y"] == 134217728
    code, (rec,), _ = run(capsys, "gps2pix", "--lat", 0, "--lon", 90, "--zoom", 1)
    assert (rec["x"], rec["y"]) == (384, 256)


def test_patch_round_trip(capsys):
    center = ["--patch-center", "40.0", "-75.0", "--patch-size", "640"]
    _, (a,), _ = run(capsys, "gps2pix", "--lat", "40.0003", "--lon", "-74.9996", "--zoom", 20, *center)
    u, v = gps_to_patch_pixel(PatchMeta(40.0, -75.0, 20, 640.0), 40.0003, -74.9996)
    assert (a["u"], a["v"]) == (u, v)
    _, (b,), _ = run(capsys, "pix2gps", "--x", a["u"], "--y", a["v"], "--zoom", 20, *center)
    assert b["lat"] == pytest.approx(40.0003, abs=1e-9) and b["lon"] == pytest.approx(-74.9996, abs=1e-9)


@pytest.mark.parametrize("argv", [
    ["gps2pix", "--lat", "89", "--lon", "0", "--zoom", "20"],
    ["gps2pix", "--lat", "0", "--lon", "0", "--zoom", "30"],
    ["gps2pix", "--lat", "0", "--lon", "0"],
    ["gps2pix", "--lat", "nan", "--lon", "0", "--zoom", "3"],
    ["gps2pix", "--la", "0", "--lon", "0", "--zoom", "3"],
    ["warp-pano", "--input", "x.png", "--output", "y.png", "--fov", "90"],
    ["align", "--bev", "a", "--sat", "b", "--meta", "c", "--rotations", "2"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_2(capsys, argv):
    assert main(argv) == 2


def test_help_lists_every_command(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for name in ("warp-pano", "warp-front", "gps2pix", "pix2gps", "fix-labels", "align", "bench", "eval"):
        assert name in out


def test_input_errors_exit_3(tmp_path, capsys):
    assert main(["warp-pano", "--input", str(tmp_path / "none.png"), "--output", str(tmp_path / "o.png")]) == 3
    bad = tmp_path / "bad.yaml"
    bad.write_text("bev: [1,\n")
    assert main(["bench", "--suite", str(bad)]) == 3
    bad.write_text("trails: 3\n")
    assert main(["bench", "--suite", str(bad)]) == 3
    assert "unknown suite keys" in capsys.readouterr().err
    assert main(["fix-labels", "--labels", str(tmp_path / "none.csv")]) == 3


def test_contract_error_exits_5(tmp_path):
    meta = tmp_path / "m.csv"
    meta.write_text("image_id,lat,lon,center_lat,center_lon,zoom,size\na,0,0,0,0,20,512\n")
    args = ["align", "--bev", FIX / "bev.png", "--sat", FIX / "sat.png", "--meta", meta]
    assert main([str(a) for a in args]) == 5


def test_json_output_has_no_nan():
    assert dumps({"a": math.inf, "b": [np.float64("nan"), np.int64(3)], "c": np.arange(2)}) == \
        '{"a": null, "b": [null, 3], "c": [0, 1]}'


def test_warp_pano_matches_library(tmp_path, capsys):
    pano = ImageBuffer(np.random.default_rng(0).uniform(size=(128, 256, 3)))
    save_image(pano, tmp_path / "p.png")
    cfg = tmp_path / "c.yaml"
    cfg.write_text("bev: {width: 96, height: 96, fov: 80}\nattitude: {roll: 2, pitch: -1}\n")
    code, (rec,), _ = run(capsys, "warp-pano", "--input", tmp_path / "p.png", "--output", tmp_path / "b.png",
                          "--config", cfg, "--yaw", 30)
    assert code == 0 and (rec["width"], rec["height"]) == (96, 96)
    ref = warp_pano(load_image(tmp_path / "p.png"), BevCamera(96, 96, 80.0), Attitude(2.0, -1.0, 30.0))
    save_image(ref, tmp_path / "ref.png")
    assert (tmp_path / "b.png").read_bytes() == (tmp_path / "ref.png").read_bytes()
    cfg.write_text("camera: {fov: 80}\n")
    assert main(["warp-pano", "--input", str(tmp_path / "p.png"), "--output", str(tmp_path / "b.png"),
                 "--config", str(cfg)]) == 3


def test_warp_front(tmp_path, capsys):
    save_image(ImageBuffer(np.random.default_rng(1).uniform(size=(60, 200, 3))), tmp_path / "f.png")
    code, (rec,), _ = run(capsys, "warp-front", "--input", tmp_path / "f.png", "--output", tmp_path / "b.png",
                          "--size", 64, 64, "--tilt", 0)
    assert code == 0 and load_image(tmp_path / "b.png").shape == (64, 64, 3)
    # the output must keep the square BEV aspect
    assert main(["warp-front", "--input", str(tmp_path / "f.png"), "--output", str(tmp_path / "b.png"),
                 "--size", "64", "48"]) == 5


def test_fix_labels(tmp_path, capsys):
    meta = PatchMeta(41.0, -87.0, 20, 512.0)
    u, v = gps_to_patch_pixel(meta, 41.0002, -87.0001)
    labels = tmp_path / "l.csv"
    labels.write_text("image_id,lat,lon,center_lat,center_lon,zoom,size,legacy_u,legacy_v\n"
                      f"a,41.0002,-87.0001,41.0,-87.0,20,512,{u + 3},{v - 4}\n"
                      "b,41.0002,-87.0001,41.0,-87.0,20,512,,\n")
    code, recs, _ = run(capsys, "fix-labels", "--labels", labels, "--output", tmp_path / "o.csv")
    assert code == 0 and len(recs) == 2
    assert (recs[0]["u"], recs[0]["v"]) == pytest.approx((u, v), abs=1e-9)
    assert recs[0]["correction_m"] > 0 and recs[1]["correction_m"] is None
    lines = (tmp_path / "o.csv").read_text().splitlines()
    assert lines[0].endswith(",u,v,correction_m") and lines[2].endswith(",")


def test_align_golden(tmp_path, capsys):
    args = ["align", "--bev", FIX / "bev.png", "--sat", FIX / "sat.png", "--meta", FIX / "labels.csv",
            "--gt", FIX / "gt.json", "--output", tmp_path / "r.jsonl", "--overlay", tmp_path / "o.png",
            "--dump-correlation", tmp_path / "c.png", "--dump-volume", tmp_path / "v.bin"]
    code, (rec,), _ = run(capsys, *args)
    assert code == 0
    expected = json.loads((FIX / "expected.jsonl").read_text())
    assert rec.keys() == expected.keys()
    for key in ("homography", "u_s", "v_s", "lat", "lon", "theta_deg", "confidence", "per_step_corner_error"):
        assert np.allclose(rec[key], expected[key], rtol=1e-9, atol=1e-9), key
    # independent of the stored output: the synthetic ground truth
    gt = json.loads((FIX / "gt.json").read_text())
    assert rec["gps_error_m"] < 0.1 and abs(rec["theta_deg"] - gt["theta_deg"]) < 0.5
    assert rec["per_step_corner_error"][-1] < 0.25
    assert json.loads((tmp_path / "r.jsonl").read_text()) == rec
    assert load_image(tmp_path / "o.png").shape == (256, 256, 3)
    assert load_image(tmp_path / "c.png").shape == (256, 256, 3)
    assert read_dump(tmp_path / "v.bin").shape == (16, 16, 16, 16)


def test_align_config_and_rotations(tmp_path, capsys):
    cfg = tmp_path / "e.yaml"
    cfg.write_text("estimator:\n  iterations: 3\n")
    base = ["align", "--bev", FIX / "bev.png", "--sat", FIX / "sat.png", "--meta", FIX / "labels.csv"]
    code, (rec,), _ = run(capsys, *base, "--config", cfg, "--rotations", 4)
    assert code == 0 and rec["rotation_deg"] == 0 and len(rec["per_step_corner_error"]) == 4
    cfg.write_text("estimator:\n  sigma: 1\n")
    assert main([str(a) for a in base] + ["--config", str(cfg)]) == 3


def test_bench(tmp_path, capsys):
    suite = tmp_path / "s.yaml"
    suite.write_text("trials: 2\nfirst_seed: 7\nperturbation: 2\n")
    code, recs, _ = run(capsys, "bench", "--suite", suite, "--report", tmp_path / "r.json",
                        "--figure", tmp_path / "f.png", "--overlays", tmp_path / "ov")
    assert code == 0
    assert [r["kind"] for r in recs] == ["trial", "trial", "report"]
    assert [r["seed"] for r in recs[:2]] == [7, 8]
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["trials"] == 2 and report["converged_fraction"] == recs[-1]["converged_fraction"]
    assert (tmp_path / "f.png").stat().st_size > 0
    assert sorted(p.name for p in (tmp_path / "ov").iterdir()) == ["trial_00007.png", "trial_00008.png"]


def test_eval(tmp_path, capsys):
    recs = tmp_path / "e.csv"
    recs.write_text("pred_lat,pred_lon,pred_theta,gt_lat,gt_lon,gt_theta\n0,0,10,0,0,9\n0,0,0,0,0,0\n")
    code, (rep,), _ = run(capsys, "eval", "--records", recs)
    assert code == 0 and rep["count"] == 2 and rep["orientation_mean_deg"] == pytest.approx(0.5)
    recs.write_text("pred_lat,pred_lon\n0,0\n")
    assert main(["eval", "--records", str(recs)]) == 3


@pytest.mark.skipif(shutil.which("bevloc") is None, reason="console script not installed")
def test_console_script():
    p = subprocess.run(["bevloc", "gps2pix", "--lat", "0", "--lon", "0", "--zoom", "20"],
                       capture_output=True, text=True)
    assert p.returncode == 0 and json.loads(p.stdout)["x"] == 134217728
    p = subprocess.run([sys.executable, "-m", "bevloc.cli", "gps2pix", "--lat", "99", "--lon", "0", "--zoom", "1"],
                       capture_output=True, text=True)
    assert p.returncode == 2
