import csv
import json

import numpy as np
import pytest

from camera_manifold.align2d import ANCHOR_MINUS, ANCHOR_PLUS, FeaturePoints2D, compute_crop_window
from camera_manifold.camera import DEFAULT_FACE, ManifoldCoefficients, ManifoldCoord, manifold_camera
from camera_manifold.cli import main
from camera_manifold.imaging import read_image
from camera_manifold.texture import coordinate_key

FAST = ["--resolution", "24", "--manifold-resolution", "32", "--samples-per-pixel", "1"]


@pytest.fixture(scope="module")
def aligned(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth-dataset", "--out", str(root / "raw"), "--views", "6", "--resolution", "48",
                 "--scramble-seed", "3"]) == 0
    assert main(["align", "--manifest", str(root / "raw" / "manifest.json"), "--out", str(root / "al"),
                 "--resolution", "32"]) == 0
    return root


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def read_frames(out):
    with open(out / "frames.csv") as fh:
        return list(csv.DictReader(fh))


def test_align_outputs(aligned, capsys):
    al = aligned / "al"
    t = json.loads((al / "transform.json").read_text())
    assert t["residual"] < 1e-12
    with open(al / "range_report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and all(r["in_range"] == "1" for r in rows)
    assert len(list((al / "aligned").glob("*.ppm"))) == 6


def test_align_eyes_canonical(aligned, capsys):
    assert main(["align", "--manifest", str(aligned / "raw" / "manifest.json"),
                 "--out", str(aligned / "al2")]) == 0
    msg = capsys.readouterr().out
    err = float(msg.split("canonical eye error ")[1].split(";")[0])
    assert err < 1e-6


def test_already_canonical_gives_identity(aligned):
    out = aligned / "al_again"
    assert main(["align-canonical", "--views", str(aligned / "al" / "manifest.json"), "--out-dir", str(out)]) == 0
    t = json.loads((out / "transform.json").read_text())
    assert t["scale"] == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(np.reshape(t["rotation"], (3, 3)), np.eye(3), atol=1e-9)
    np.testing.assert_allclose(t["translation"], 0.0, atol=1e-9)


def test_unreadable_image_exit_2(aligned, tmp_path, capsys):
    m = json.loads((aligned / "raw" / "manifest.json").read_text())
    for e in m["views"]:
        e["image"] = str(aligned / "raw" / e["image"])
        for k in ("landmarks", "matte"):
            if k in e:
                e[k] = str(aligned / "raw" / e[k])
    m["mesh"] = str(aligned / "raw" / m["mesh"])
    m["views"][1]["image"] = str(tmp_path / "missing.ppm")
    bad = write_json(tmp_path / "manifest.json", m)
    out = tmp_path / "out"
    assert main(["align", "--manifest", str(bad), "--out", str(out)]) == 2
    assert "missing.ppm" in capsys.readouterr().err
    assert not out.exists()


def test_static_path_identical_frames(aligned, tmp_path):
    rec = {"look_at": {"position": [2.0, 1.0, 13.0], "fov": 30}}
    path = write_json(tmp_path / "path.json", [rec] * 3)
    out = tmp_path / "frames"
    assert main(["render", "--dataset", str(aligned / "al"), "--path", str(path), "--out", str(out), *FAST]) == 0
    imgs = [(out / f"frame_{i:04d}.ppm").read_bytes() for i in range(3)]
    assert imgs[0] == imgs[1] == imgs[2]
    assert read_image(out / "frame_0000.ppm").shape == (24, 24, 3)


def test_vertigo_path_keeps_anchors(aligned, tmp_path, capsys):
    recs = [{"manifold": {"theta": 8.0, "phi": 3.0, "d": float(d)}} for d in np.linspace(10, 40, 8)]
    path = write_json(tmp_path / "vertigo.json", recs)
    out = tmp_path / "vertigo"
    assert main(["render", "--dataset", str(aligned / "al"), "--path", str(path), "--out", str(out), *FAST]) == 0
    size = 32
    worst = 0.0
    for row in read_frames(out):
        m = ManifoldCoord(float(row["theta"]), float(row["phi"]), float(row["d"]))
        c = ManifoldCoefficients(*(float(row[k]) for k in ("alpha", "beta", "gamma", "psi")))
        cam = manifold_camera(m, c)
        w = compute_crop_window(FeaturePoints2D(*(cam.project(p)[0] for p in DEFAULT_FACE.points())))
        worst = max(worst, np.abs(w.minus - ANCHOR_MINUS).max() * size, np.abs(w.plus - ANCHOR_PLUS).max() * size)
    assert worst < 1e-3


def test_orbit_iterations(aligned, tmp_path, capsys):
    from camera_manifold.camera import spherical_position

    recs = [{"look_at": {"position": list(spherical_position(float(t), 4.0, 15.0)), "fov": 30}}
            for t in np.linspace(-25, 25, 60)]
    path = write_json(tmp_path / "orbit.json", recs)
    out = tmp_path / "orbit"
    args = ["render", "--dataset", str(aligned / "al"), "--path", str(path), "--out", str(out),
            "--resolution", "8", "--manifold-resolution", "8", "--samples-per-pixel", "1"]
    assert main(args) == 0
    rows = read_frames(out)
    assert len(rows) == 60
    assert np.mean([int(r["iterations"]) for r in rows]) <= 40
    assert all(r["in_range"] == "1" for r in rows)


def test_render_is_deterministic(aligned, tmp_path, monkeypatch):
    rec = [{"look_at": {"position": [3.0, 2.0, 14.0]}}, {"look_at": {"position": [40.0, 0.0, 5.0]}}]
    path = write_json(tmp_path / "p.json", rec)
    outs = []
    for k, threads in enumerate(("1", "3")):
        monkeypatch.setenv("CM_THREADS", threads)
        out = tmp_path / f"run{k}"
        assert main(["render", "--dataset", str(aligned / "al"), "--path", str(path), "--out", str(out), *FAST]) == 0
        outs.append(out)
    for name in ("frame_0000.ppm", "frame_0001.ppm", "flow_0001.f32r", "frames.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rows = read_frames(outs[0])
    assert rows[0]["in_range"] == "1" and rows[1]["in_range"] == "0"


def test_texture_dir_fallback(aligned, tmp_path, caplog):
    tex = tmp_path / "tex"
    tex.mkdir()
    rec = {"manifold": {"theta": 5.0, "phi": 2.0, "d": 14.0}}
    m = ManifoldCoord(5.0, 2.0, 14.0)
    from camera_manifold.imaging import write_image

    write_image(tex / f"{coordinate_key(m)}.ppm", np.full((32, 32, 3), 1.0))
    path = write_json(tmp_path / "p.json", [rec, {"manifold": {"theta": 6.0, "phi": 2.0, "d": 14.0}}])
    out = tmp_path / "tex_out"
    with caplog.at_level("WARNING"):
        assert main(["render", "--dataset", str(aligned / "al"), "--path", str(path), "--out", str(out),
                     "--texture-dir", str(tex), *FAST]) == 0
    assert read_image(out / "frame_0000.ppm").min() == 1.0
    assert any("falling back" in r.message for r in caplog.records)


def test_render_flow_and_warp(aligned, tmp_path):
    cam = write_json(tmp_path / "cam.json", {"look_at": {"position": [1.0, 0.5, 12.0]}})
    flow = tmp_path / "f.f32r"
    mimg = tmp_path / "m.ppm"
    assert main(["render-flow", "--dataset", str(aligned / "al"), "--camera", str(cam), "--out", str(flow),
                 "--manifold-image", str(mimg), *FAST]) == 0
    out = tmp_path / "w.ppm"
    assert main(["warp", "--image", str(mimg), "--flow", str(flow), "--out", str(out)]) == 0
    assert read_image(out).shape == (24, 24, 3)
    assert main(["warp", "--image", str(mimg), "--flow", str(tmp_path / "nope.f32r"), "--out", str(out)]) == 2


def test_stereo(aligned, tmp_path):
    cam = write_json(tmp_path / "cam.json", {"look_at": {"position": [0.0, 0.0, 14.0]}})
    out = tmp_path / "s.ppm"
    assert main(["stereo", "--dataset", str(aligned / "al"), "--camera", str(cam), "--interocular", "0.5",
                 "--screen-depth", "14", "--anaglyph", "--out", str(out), *FAST]) == 0
    assert read_image(out).shape == (24, 24, 3)
    side = tmp_path / "sbs.ppm"
    assert main(["stereo", "--dataset", str(aligned / "al"), "--camera", str(cam), "--interocular", "0.5",
                 "--screen-depth", "14", "--out", str(side), *FAST]) == 0
    assert read_image(side).shape == (24, 48, 3)


def test_solve_and_range_commands(tmp_path, capsys):
    assert main(["solve-manifold", "--theta", "10", "--phi", "5", "--d", "15"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["residual"] < 1e-10 and 0 < rec["psi"] < 90
    assert main(["project-range", "--theta", "0", "--phi", "25"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["theta"] == pytest.approx(0) and rec["phi"] == pytest.approx(20) and rec["moved"]
    samples = tmp_path / "s.csv"
    assert main(["sample-manifold", "--count", "20000", "--seed", "4", "--out", str(samples)]) == 0
    fitted = tmp_path / "r.json"
    assert main(["fit-range", "--samples", str(samples), "--out", str(fitted), "--iso-fraction", "0.5"]) == 0
    r = json.loads(fitted.read_text())
    assert r["a_u"] < 0 < r["a_l"]
    capsys.readouterr()
    assert main(["sample-manifold", "--count", "5", "--seed", "4"]) == 0
    first = capsys.readouterr().out
    assert main(["sample-manifold", "--count", "5", "--seed", "4"]) == 0
    assert capsys.readouterr().out == first


def test_selftest(tmp_path, capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 3 and "KS" in out
    bad = write_json(tmp_path / "bad.json", {"a_u": 0.02, "b_u": 20, "a_l": 0.01, "b_l": -14.6})
    assert main(["selftest", "--range", str(bad)]) == 1
    assert "invariant" in capsys.readouterr().err


def test_config_override(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"max_iters": 1})
    assert main(["solve-manifold", "--config", str(cfg), "--theta", "20", "--phi", "10", "--d", "12"]) == 1
    capsys.readouterr()
    assert main(["solve-manifold", "--config", str(cfg), "--max-iters", "50",
                 "--theta", "20", "--phi", "10", "--d", "12"]) == 0


def test_invalid_inputs(aligned, tmp_path, capsys):
    cam = write_json(tmp_path / "cam.json", {"look_at": {"position": [0, 0, 12]}})
    out = tmp_path / "x"
    assert main(["render", "--dataset", str(aligned / "al"), "--path", str(cam), "--out", str(out),
                 "--resolution", "9000"]) == 2
    assert "8192" in capsys.readouterr().err
    assert main(["render", "--dataset", str(tmp_path), "--path", str(cam), "--out", str(out)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("[{]")
    assert main(["render", "--dataset", str(aligned / "al"), "--path", str(bad), "--out", str(out)]) == 2
    assert not out.exists()
    assert main(["solve-manifold", "--config", str(tmp_path / "none.json"), "--theta", "0", "--phi", "0",
                 "--d", "12"]) == 2
