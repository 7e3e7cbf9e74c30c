import json
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from salresample.cli import main
from salresample.core import identity_coords
from salresample.io import read_grid, read_image, read_saliency, write_image
from salresample.pipeline import ScheduleConfig, expected_mean_cost


@pytest.fixture
def dets_file(tmp_path):
    doc = {
        "images": [{"id": 1, "file": "f.png", "width": 640, "height": 360}],
        "detections": [
            {"image_id": 1, "bbox": [300, 160, 30, 30], "score": 0.9, "category_id": 1},
            {"image_id": 1, "bbox": [50, 50, 200, 150], "score": 0.45, "category_id": 2},
        ],
    }
    p = tmp_path / "dets.json"
    p.write_text(json.dumps(doc))
    return p


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["grid", "--saliency", "x.pgm"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["grid", "--saliency", "x.pgm", "--out-size", "12", "--out", "g"])
    assert e.value.code == 1


def test_missing_input_exits_2(tmp_path):
    assert main(["warp", "--image", str(tmp_path / "nope.png"), "--grid", "g", "--out", "o.png"]) == 2


def test_bad_magic_exits_2(tmp_path):
    (tmp_path / "g.grid").write_bytes(b"JUNK" + bytes(40))
    write_image(tmp_path / "a.png", np.zeros((4, 4)))
    assert main(["warp", "--image", str(tmp_path / "a.png"), "--grid", str(tmp_path / "g.grid"),
                 "--out", str(tmp_path / "o.png")]) == 2


def test_saliency_empty_gives_zero_map(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text(json.dumps({"images": [{"id": 0, "file": "x", "width": 64, "height": 48}], "detections": []}))
    assert main(["saliency", "--detections", str(p), "--out", str(tmp_path / "s.pgm")]) == 0
    m = read_saliency(tmp_path / "s.pgm")
    assert m.shape == (128, 128) and not m.values.any()


def test_saliency_tau_flag_beats_config(tmp_path, dets_file):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[saliency]\ntau = 0.9\n")
    out = tmp_path / "s.pgm"
    assert main(["saliency", "--detections", str(dets_file), "--config", str(cfg), "--out", str(out)]) == 0
    assert read_saliency(out).values.max() == 1.0  # score 0.9 passes
    assert set(np.unique(read_saliency(out).values)) == {0.0, 1.0}
    assert main(["saliency", "--detections", str(dets_file), "--config", str(cfg),
                 "--tau", "0.4", "--out", str(out)]) == 0
    assert set(np.unique(read_saliency(out).values)) == {0.0, 0.5, 1.0}


def test_saliency_half_label_raster(tmp_path, dets_file):
    out = tmp_path / "s.pgm"
    main(["saliency", "--detections", str(dets_file), "--tau", "0.4", "--out", str(out)])
    data = out.read_bytes()
    raster = np.frombuffer(data[-2 * 128 * 128:], ">u2")
    assert set(np.unique(raster)) == {0, 32767, 65534}


def test_grid_uniform_saliency_is_identity(tmp_path):
    from salresample.core import SaliencyMap
    from salresample.io import write_saliency

    write_saliency(tmp_path / "u.pgm", SaliencyMap(np.full((32, 32), 0.5)))
    out = tmp_path / "g.grid"
    assert main(["grid", "--saliency", str(tmp_path / "u.pgm"), "--out-size", "40x30", "--out", str(out)]) == 0
    g = read_grid(out)
    assert g.shape == (30, 40)
    np.testing.assert_allclose(g.coords, identity_coords(30, 40), atol=1e-6)


def test_grid_1024_reports_bending_energy(tmp_path, dets_file):
    sal = tmp_path / "s.pgm"
    main(["saliency", "--detections", str(dets_file), "--out", str(sal)])
    rep = tmp_path / "loss.json"
    assert main(["grid", "--saliency", str(sal), "--out-size", "64x36", "--control-points", "1024",
                 "--out", str(tmp_path / "g.grid"), "--emit-loss", str(rep)]) == 0
    r = json.loads(rep.read_text())
    assert r["control_points"] == 1024
    assert r["bending_energy"] > 0
    assert r["loss_grid"] >= 0 and r["loss_grid_unsquared"] >= 0
    assert r["composition"] == "only_small"


def test_grid_rejects_bad_control_points(tmp_path):
    from salresample.core import SaliencyMap
    from salresample.io import write_saliency

    write_saliency(tmp_path / "u.pgm", SaliencyMap(np.zeros((8, 8))))
    assert main(["grid", "--saliency", str(tmp_path / "u.pgm"), "--out-size", "8x8",
                 "--control-points", "250", "--out", str(tmp_path / "g.grid")]) == 2


def test_warp_identity_grid_keeps_image(tmp_path, rng):
    img = np.rint(rng.uniform(0, 1, (30, 50, 3)) * 255) / 255
    write_image(tmp_path / "a.png", img)
    from salresample.core import identity_grid
    from salresample.io import write_grid

    write_grid(tmp_path / "id.grid", identity_grid(30, 50))
    assert main(["warp", "--image", str(tmp_path / "a.png"), "--grid", str(tmp_path / "id.grid"),
                 "--out", str(tmp_path / "b.png")]) == 0
    np.testing.assert_array_equal(read_image(tmp_path / "b.png"), img)


def test_invert_identity_grid(tmp_path, dets_file):
    from salresample.core import identity_grid
    from salresample.io import write_grid

    write_grid(tmp_path / "id.grid", identity_grid(360, 640))
    out = tmp_path / "back.json"
    assert main(["invert", "--detections", str(dets_file), "--grid", str(tmp_path / "id.grid"),
                 "--original-size", "640x360", "--out", str(out)]) == 0
    a = json.loads(dets_file.read_text())["detections"]
    b = json.loads(out.read_text())["detections"]
    assert len(a) == len(b)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x["bbox"], y["bbox"], atol=1e-9)
        assert x["score"] == y["score"] and x["category_id"] == y["category_id"]


def test_pipeline_cost_closed_form(tmp_path):
    assert main(["--seed", "1", "synth", "--frames", "32", "--size", "160x90", "--out-dir", str(tmp_path)]) == 0
    cfg = tmp_path / "config.toml"
    cfg.write_text(cfg.read_text().replace("propagate_odd_frames = true", "propagate_odd_frames = false"))
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(cfg), "--frames", str(tmp_path / "frames"),
                 "--out-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    want = expected_mean_cost(32, ScheduleConfig(16, False), 3.2, 1.36, 0.06)
    assert want == Fraction(49, 32)
    assert summary["mean_gflops"] == float(want)
    assert summary["key_frames"] == 2 and summary["failed_frames"] == 0
    lines = (out / "frames.jsonl").read_text().splitlines()
    assert len(lines) == 32
    assert [json.loads(l)["role"] for l in lines[:3]] == ["key", "resampled", "resampled"]
    assert (out / "costs.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_pipeline_command_failures_recorded(tmp_path):
    from dataclasses import replace

    from salresample.io import RunConfig, write_config

    main(["synth", "--frames", "4", "--size", "64x36", "--out-dir", str(tmp_path)])
    cfg = RunConfig()
    cfg.light_detector = replace(cfg.light_detector, kind="command",
                                 command=f'{sys.executable} -c "import sys; sys.exit(1)" {{input}}')
    write_config(tmp_path / "bad.toml", cfg)
    out = tmp_path / "run"
    assert main(["pipeline", "--config", str(tmp_path / "bad.toml"), "--frames", str(tmp_path / "frames"),
                 "--out-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    # frame 2 is propagated and never calls the light detector
    assert summary["failed_frames"] == 2
    recs = [json.loads(l) for l in (out / "frames.jsonl").read_text().splitlines()]
    assert [r["failed"] for r in recs] == [False, True, False, True]


def test_overlay_png(tmp_path, rng):
    write_image(tmp_path / "a.png", rng.uniform(0, 1, (36, 64)))
    from salresample.core import identity_grid
    from salresample.io import write_grid

    write_grid(tmp_path / "g.grid", identity_grid(18, 32))
    out = tmp_path / "ov.png"
    assert main(["overlay", "--image", str(tmp_path / "a.png"), "--grid", str(tmp_path / "g.grid"),
                 "--out", str(out)]) == 0
    assert read_image(out).shape[:2] == (36, 64)
    assert main(["overlay", "--image", str(tmp_path / "a.png"), "--out", str(out)]) == 1


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "salresample", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "pipeline" in r.stdout
