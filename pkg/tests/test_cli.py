import json
import math

import numpy as np
import pytest

from heraldimg import io, modes
from heraldimg.camera import CameraConfig
from heraldimg.cli import EXIT_IO, EXIT_OK, EXIT_VALIDATION, build_parser, inset_grid, main
from heraldimg.counting import estimate_background, extract_events
from heraldimg.modes import GridSpec, default_waist
from heraldimg.witness import finite_bin_factor

FAST_MC = ["--set", "analysis.n_mc=2000"]


def run(*argv):
    return main([str(a) for a in argv])


def cam(n):
    return ["--set", f"camera.nx={n}", "--set", f"camera.ny={n}"]


@pytest.fixture(scope="module")
def calibration_dir(tmp_path_factory):
    """~5800 sparse single photons on 512^2 frames, calibrated through the CLI."""
    d = tmp_path_factory.mktemp("cal")
    assert run("simulate", "--seed", 21, "--out", d, *cam(512), "--set", "run.mode=sparse", "--set", "run.frames=117") == EXIT_OK
    rc = run(
        "calibrate", "--seed", 21, "--out", d, "--frames", d / "frames" / "sparse_*.pgm",
        "--background", d / "background" / "bg_*.pgm", "--n-max", 60, "--set", "analysis.calibration_n_mc=4000",
    )
    assert rc == EXIT_OK
    return d


def test_parser_and_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["simulate"])  # --seed is mandatory
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["frobnicate"])
    assert run("simulate", "--seed", 1, "--out", tmp_path, "--set", "run.mode=movie") == EXIT_VALIDATION
    assert run("simulate", "--seed", 1, "--out", tmp_path, "--set", "nonsense") == EXIT_VALIDATION
    assert run("simulate", "--seed", -1, "--out", tmp_path) == EXIT_VALIDATION
    assert run("simulate", "--seed", 1, "--config", tmp_path / "missing.json") == EXIT_IO
    (tmp_path / "cfg.json").write_text('{"run": {"colour": 1}}')
    assert run("simulate", "--seed", 1, "--config", tmp_path / "cfg.json") == EXIT_VALIDATION
    assert "error" in capsys.readouterr().err


def test_calibrate_empty_glob(tmp_path):
    rc = run("calibrate", "--seed", 1, "--out", tmp_path, "--frames", tmp_path / "none_*.pgm", "--background", tmp_path / "none_*.pgm")
    assert rc == EXIT_IO


def test_dark_run_has_no_events(tmp_path):
    args = ["simulate", "--seed", 4, "--out", tmp_path, *cam(256), "--set", "run.mode=dark", "--set", "run.frames=3", "--set", "run.photons_per_image=0.001"]
    assert run(*args) == EXIT_OK
    bg = estimate_background([io.read_frame(p) for p in sorted((tmp_path / "background").glob("bg_*.pgm"))])
    n = [len(extract_events(io.read_frame(p), bg)) for p in sorted((tmp_path / "frames").glob("dark_*.pgm"))]
    assert len(n) == 3 and sum(n) <= 1
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 4 and len(man["files"]) == 23


def test_d_trigger_image_has_two_petals(tmp_path):
    args = ["simulate", "--seed", 5, "--out", tmp_path, *cam(256), "--set", "run.triggers=[\"D\"]", "--set", "run.photons_per_image=20000"]
    assert run(*args) == EXIT_OK
    f = io.read_frame(tmp_path / "frames" / "D_000.pgm")
    img = np.clip(f.counts.astype(float) - 100.0, 0, None)
    g = GridSpec.for_camera(256, 256)
    r, th = g.polar()
    w = default_waist(256, 1)
    ring = (r > 0.4 * w) & (r < 1.2 * w)
    # sum signal in 8 sectors: petals of cos^2(theta) sit at 0 and 180 degrees
    sector = ((np.degrees(th) % 360 + 22.5) // 45).astype(int) % 8
    s = np.array([img[ring & (sector == k)].sum() for k in range(8)])
    assert s[0] > 5 * s[2] and s[4] > 5 * s[2] and s[4] > 5 * s[6]
    assert abs(s[0] - s[4]) / (s[0] + s[4]) < 0.1
    assert json.loads((tmp_path / "manifest.json").read_text())["triggers"]["D"]["herald_probability"] == pytest.approx(0.5)


def test_simulate_is_byte_identical(tmp_path):
    args = [*cam(128), "--set", "run.photons_per_image=300", "--set", "run.n_background=2"]
    assert run("simulate", "--seed", 9, "--out", tmp_path / "a", *args) == EXIT_OK
    assert run("simulate", "--seed", 9, "--out", tmp_path / "b", *args) == EXIT_OK
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 2 * 2 + 4 * 2 + 1
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    run("simulate", "--seed", 10, "--out", tmp_path / "c", *args)
    assert (tmp_path / "c" / "frames" / "D_000.pgm").read_bytes() != (tmp_path / "a" / "frames" / "D_000.pgm").read_bytes()


def test_calibrate_mu1_and_rerun(calibration_dir, tmp_path):
    cal = io.read_calibration(calibration_dir / "calibration.json")
    assert 5500 <= cal.n_events_used <= 5900
    assert cal.mu1 == pytest.approx(CameraConfig().mean_photon_signal, rel=0.02)
    lines = (calibration_dir / "calibration_curve.csv").read_text().splitlines()
    assert lines[0] == "n,mean_signal,sigma_mc_photons,sigma_poisson_photons" and len(lines) == 61
    d = calibration_dir
    rc = run(
        "calibrate", "--seed", 21, "--out", tmp_path, "--frames", d / "frames" / "sparse_*.pgm",
        "--background", d / "background" / "bg_*.pgm", "--n-max", 60, "--set", "analysis.calibration_n_mc=4000",
    )
    assert rc == EXIT_OK
    assert (tmp_path / "calibration.json").read_bytes() == (d / "calibration.json").read_bytes()


def test_calibrate_too_few_events(calibration_dir, tmp_path):
    d = calibration_dir
    rc = run("calibrate", "--seed", 1, "--out", tmp_path, "--frames", d / "frames" / "sparse_000.pgm", "--background", d / "background" / "bg_*.pgm")
    assert rc == EXIT_VALIDATION  # too few events is an input problem


def test_analyze_closes_the_loop(calibration_dir, tmp_path):
    # measured per-basis visibility 0.84 -> state visibility 0.84 / bin factor
    v = 0.84 / finite_bin_factor(1)
    sim = tmp_path / "sim"
    args = ["simulate", "--seed", 33, "--out", sim, *cam(512), "--set", f"state.visibility={v}"]
    assert run(*args) == EXIT_OK
    out = tmp_path / "ana"
    assert run("analyze", "--input", sim, "--calibration", calibration_dir / "calibration.json", "--out", out, "--seed", 2, *FAST_MC) == EXIT_OK
    rep = json.loads((out / "witness.json").read_text())
    assert rep["W"] == pytest.approx(1.68, abs=0.05)
    assert rep["violation_sigmas"] >= 10
    assert rep["vis"]["DA"]["v"] == pytest.approx(0.84, abs=0.04)
    assert rep["l"] == 1 and rep["photons_per_image"] == 5800.0
    assert rep["config_hash"] == json.loads((sim / "manifest.json").read_text())["config_hash"]
    rows = (out / "bins.csv").read_text().splitlines()
    assert len(rows) == 1 + 4 * 16
    # rerun: identical report
    out2 = tmp_path / "ana2"
    run("analyze", "--input", sim, "--calibration", calibration_dir / "calibration.json", "--out", out2, "--seed", 2, *FAST_MC)
    assert (out2 / "witness.json").read_bytes() == (out / "witness.json").read_bytes()
    # explicit globs and auto centring give the same verdict
    out3 = tmp_path / "ana3"
    globs = [x for t in "DARL" for x in (f"--{t}", sim / "frames" / f"{t}_*.pgm")]
    rc = run(
        "analyze", "--background", sim / "background" / "bg_*.pgm", *globs, "--calibration", calibration_dir / "calibration.json",
        "--out", out3, *cam(512), "--set", "analysis.center=\"auto\"", "--estimator", "minmax", *FAST_MC,
    )
    assert rc == EXIT_OK
    rep3 = json.loads((out3 / "witness.json").read_text())
    assert rep3["W"] > 1.5 and rep3["estimator"] == "minmax"


def test_analyze_missing_inputs(calibration_dir, tmp_path):
    cal = calibration_dir / "calibration.json"
    assert run("analyze", "--calibration", cal, "--out", tmp_path) == EXIT_VALIDATION
    assert run("analyze", "--input", tmp_path, "--calibration", cal, "--out", tmp_path) == EXIT_IO
    assert run("analyze", "--input", tmp_path, "--calibration", tmp_path / "nope.json", "--out", tmp_path) == EXIT_IO


@pytest.mark.parametrize("l,expected", [(1, 180.0), (2, 90.0)])
def test_equator_scan_rotation(tmp_path, l, expected):
    assert run("scan", "--seed", 1, "--out", tmp_path, *cam(512), "--set", f"state.indices=[{l},0]", "--path", "equator", "--steps", 36) == EXIT_OK
    res = json.loads((tmp_path / "scan.json").read_text())
    assert res["steps"] == 36 and len(list((tmp_path / "scan").glob("scan_*.pgm"))) == 36
    assert abs(res["total_rotation_deg"]) == pytest.approx(expected, abs=2.0)
    assert res["expected_total_rotation_deg"] == pytest.approx(expected)


def test_scan_single_step_and_meridian(tmp_path):
    assert run("scan", "--seed", 1, "--out", tmp_path / "a", *cam(128), "--steps", 1) == EXIT_OK
    res = json.loads((tmp_path / "a" / "scan.json").read_text())
    assert res["steps"] == 1 and len(list((tmp_path / "a" / "scan").glob("*.pgm"))) == 1
    assert res["total_rotation_deg"] == 0.0
    args = ["scan", "--seed", 1, "--out", tmp_path / "b", *cam(128), "--path", "meridian", "--steps", 5, "--set", "scan.photons_per_image=2000"]
    assert run(*args) == EXIT_OK
    res = json.loads((tmp_path / "b" / "scan.json").read_text())
    assert np.allclose(res["points"][0]["jones"], [[1.0, 0.0], [0.0, 0.0]])  # starts at H
    assert (tmp_path / "b" / "scan" / "scan_000.json").exists()


def test_scan_custom_path(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"camera": {"nx": 128, "ny": 128}, "scan": {"path": ["D", [math.pi / 2, math.pi / 2], "A"]}}))
    assert run("scan", "--seed", 1, "--out", tmp_path, "--config", cfg) == EXIT_OK
    res = json.loads((tmp_path / "scan.json").read_text())
    assert res["steps"] == 3 and "expected_total_rotation_deg" not in res


def test_render_donut(tmp_path):
    assert run("render", "--out", tmp_path, *cam(128), "--mode", "LG:1:0", "--name", "donut.pgm") == EXIT_OK
    img = io.read_pgm(tmp_path / "donut.pgm")
    assert img[64, 64] == 0
    assert img.max() == 65535
    assert json.loads((tmp_path / "donut.json").read_text())["mode"] == "LG:1:0"
    assert run("render", "--out", tmp_path, *cam(128), "--mode", "XX:1") == EXIT_VALIDATION


def test_render_inset_matches_modes(tmp_path):
    assert run("render", "--out", tmp_path, *cam(128), "--mode", "HG:1:2", "--inset") == EXIT_OK
    img = io.read_pgm(tmp_path / "render.pgm")
    ig = inset_grid(128, 128)
    ref = io.to_full_scale(modes.intensity(modes.mode_field(modes.ModeSpec.hg(1, 2, default_waist(128, 1)), ig)).values)
    assert np.array_equal(img[: ig.ny, -ig.nx :], ref)
    meta = json.loads((tmp_path / "render.json").read_text())
    assert meta["inset"] == {"rows": [0, 32], "cols": [96, 128]}


def test_render_heralded_and_frame(tmp_path):
    assert run("render", "--out", tmp_path, *cam(128), "--trigger", "R", "--name", "r.pgm") == EXIT_OK
    img = io.read_pgm(tmp_path / "r.pgm").astype(float)
    # the heralded R image is a two-petal pattern, dark on axis
    assert img[64, 64] < 1e-3 * img.max()
    run("simulate", "--seed", 2, "--out", tmp_path / "s", *cam(128), "--set", "run.n_background=2", "--set", "run.photons_per_image=500")
    assert run("render", "--out", tmp_path, *cam(128), "--frame", tmp_path / "s" / "frames" / "D_000.pgm", "--name", "f.pgm") == EXIT_OK
    assert io.read_pgm(tmp_path / "f.pgm").max() == 65535
    a = (tmp_path / "f.pgm").read_bytes()
    run("render", "--out", tmp_path, *cam(128), "--frame", tmp_path / "s" / "frames" / "D_000.pgm", "--name", "f.pgm")
    assert (tmp_path / "f.pgm").read_bytes() == a
