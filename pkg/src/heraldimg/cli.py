"""Command-line driver: ``heraldimg {simulate,calibrate,analyze,scan,render}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
failure, 4 file I/O error.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import io, modes
from ._rng import derive_rng
from .camera import dark_frame, expose, sample_photons
from .config import ExperimentConfig
from .counting import calibrate, error_curves, estimate_background, extract_events, simulate_dark_frames, simulate_sparse_frames
from .exceptions import FormatError, NumericError, ParameterError
from .modes import GridSpec, ModeSpec, default_waist
from .state import D, equator_path, herald, meridian_path, polarization
from .witness import TRIGGERS, WitnessAnalyzer, cumulative_rotation, default_radial_window, simulate_trigger_images

log = logging.getLogger("heraldimg")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

MANIFEST = "manifest.json"


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ParameterError(f"--set expects section.field=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def load_config(args, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Config file (or ``base``, or defaults) with ``--set`` and dedicated flags applied on top."""
    if getattr(args, "config", None):
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = base or ExperimentConfig()
    overrides = _parse_set(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = args.seed
    if getattr(args, "estimator", None):
        overrides["analysis.estimator"] = args.estimator
    if getattr(args, "out", None):
        overrides["output.dir"] = args.out
    if getattr(args, "l", None) is not None:
        overrides["analysis.l"] = args.l
        if not getattr(args, "config", None) and base is None:
            overrides["state.indices"] = [args.l, 0]
    return cfg.with_overrides(overrides) if overrides else cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _glob(pattern: str, what: str) -> list[str]:
    files = sorted(glob.glob(pattern))
    if not files:
        raise FormatError(f"no {what} files match {pattern!r}")
    return files


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    seed = cfg.run.seed
    cam, run = cfg.camera, cfg.run
    out = _out_dir(cfg)
    (out / "frames").mkdir(exist_ok=True)
    (out / "background").mkdir(exist_ok=True)
    chash = cfg.config_hash()
    written = []

    for k, f in enumerate(simulate_dark_frames(cam, run.n_background, seed)):
        f.meta["config_hash"] = chash
        written.append(io.write_frame(out / "background" / f"bg_{k:03d}.pgm", f, seed, {"kind": "background"})[0])

    info = {}
    if run.mode == "heralded":
        state = cfg.build_state()
        images = simulate_trigger_images(state, cam, run.photons_per_image, seed, tuple(run.triggers), run.frames)
        for t in run.triggers:
            for k, f in enumerate(images[t]):
                f.meta["config_hash"] = chash
                written.append(io.write_frame(out / "frames" / f"{t}_{k:03d}.pgm", f, seed, {"kind": "heralded"})[0])
            info[t] = {"herald_probability": images[t][0].meta["herald_probability"]}
    elif run.mode == "dark":
        for k in range(run.frames):
            f = dark_frame(cam, run.photons_per_image, derive_rng(seed, "wrong-delay", k))
            f.meta["config_hash"] = chash
            written.append(io.write_frame(out / "frames" / f"dark_{k:03d}.pgm", f, seed, {"kind": "dark"})[0])
    else:
        frames = simulate_sparse_frames(cam, run.frames, run.sparse_photons, seed, run.sparse_spacing)
        for k, f in enumerate(frames):
            f.meta["config_hash"] = chash
            written.append(io.write_frame(out / "frames" / f"sparse_{k:03d}.pgm", f, seed, {"kind": "sparse"})[0])

    manifest = {
        "command": "simulate",
        "seed": seed,
        "config_hash": chash,
        "config": {k: v for k, v in cfg.to_dict().items() if k != "output"},
        "triggers": info,
        "files": sorted(p.relative_to(out).as_posix() for p in written),
    }
    io.write_json(out / MANIFEST, manifest)
    print(f"wrote {len(written)} frames to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- calibrate


def cmd_calibrate(args) -> int:
    cfg = load_config(args)
    out = _out_dir(cfg)
    bg = estimate_background([io.read_frame(p) for p in _glob(args.background, "background")])
    signals = []
    for p in _glob(args.frames, "frame"):
        signals.extend(e.signal for e in extract_events(io.read_frame(p), bg))
    n_max = args.n_max if args.n_max is not None else cfg.analysis.calibration_n_max
    cal = calibrate(signals, cfg.run.seed, cfg.analysis.calibration_n_mc, n_max, min_events=args.min_events)
    io.write_calibration(out / "calibration.json", cal)
    curves = error_curves(cal, np.arange(1, len(cal.sigma_lookup) + 1))
    with open(out / "calibration_curve.csv", "w") as fh:
        fh.write("n,mean_signal,sigma_mc_photons,sigma_poisson_photons\n")
        for n, m, s, p in zip(curves["n"], curves["mean_signal"], curves["sigma_mc"], curves["sigma_poisson"]):
            fh.write(f"{n},{m:.6f},{s:.6f},{p:.6f}\n")
    print(f"mu1 = {cal.mu1:.2f} counts from {cal.n_events_used} events")
    return EXIT_OK


# ---------------------------------------------------------------- analyze


def _trigger_frames(args, input_dir: Path | None) -> dict:
    images = {}
    for t in TRIGGERS:
        pattern = getattr(args, t)
        if pattern is None:
            if input_dir is None:
                raise ParameterError(f"give --input or --{t}")
            pattern = str(input_dir / "frames" / f"{t}_*.pgm")
        images[t] = [io.read_frame(p) for p in _glob(pattern, f"{t}-trigger")]
    return images


def cmd_analyze(args) -> int:
    input_dir = Path(args.input) if args.input else None
    manifest = {}
    if input_dir is not None and (input_dir / MANIFEST).exists():
        manifest = io.read_json(input_dir / MANIFEST)
    base = ExperimentConfig.from_dict(manifest["config"]) if manifest.get("config") else None
    cfg = load_config(args, base)
    out = _out_dir(cfg)
    bg_pattern = args.background or (str(input_dir / "background" / "bg_*.pgm") if input_dir else None)
    if bg_pattern is None:
        raise ParameterError("give --background or --input")
    bg = estimate_background([io.read_frame(p) for p in _glob(bg_pattern, "background")])
    cal = io.read_calibration(args.calibration)
    images = _trigger_frames(args, input_dir)

    an = cfg.analysis
    l = cfg.oam
    window = an.radial_window
    if window is None:
        window = default_radial_window(cfg.state.modes(cfg.camera.nx)[0].waist)
    seed = cfg.run.seed if cfg.run.seed is not None else 0
    analyzer = WitnessAnalyzer(l, an.bin_width, tuple(window), an.center if an.center in (None, "auto") else tuple(an.center), an.estimator, an.n_mc, seed)
    analyzer.fit(
        images,
        bg,
        cal,
        photons_per_image=manifest.get("config", {}).get("run", {}).get("photons_per_image"),
        config_hash=manifest.get("config_hash", cfg.config_hash()),
    )
    report = analyzer.report_
    io.write_json(out / "witness.json", report.to_dict())
    if cfg.output.bins_csv:
        report.write_bins_csv(out / "bins.csv")
    vs = report.violation_sigmas
    verdict = "entangled" if report.entangled else "not entangled"
    print(f"W = {report.W:.4f} +- {report.sigma_W:.4f} ({vs:.1f} sigma, {verdict})")
    return EXIT_OK


# ---------------------------------------------------------------- scan


def _scan_path(cfg: ExperimentConfig):
    sc = cfg.scan
    explicit = sc.triggers()
    if explicit is not None:
        return explicit
    return equator_path(sc.steps) if sc.path == "equator" else meridian_path(sc.steps)


def cmd_scan(args) -> int:
    overrides = {}
    if args.path:
        overrides["scan.path"] = args.path
    if args.steps is not None:
        overrides["scan.steps"] = args.steps
    cfg = load_config(args)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    out = _out_dir(cfg)
    (out / "scan").mkdir(exist_ok=True)
    state = cfg.build_state()
    if not hasattr(state, "spm1"):
        raise ParameterError("scan needs an entangled (hybrid) state")
    cam = cfg.camera
    grid = GridSpec.for_camera(cam.nx, cam.ny)
    path = _scan_path(cfg)
    photons = cfg.scan.photons_per_image
    seed = cfg.run.seed
    images, points = [], []
    for i, trig in enumerate(path):
        p, fld = herald(state, trig, grid, allow_degenerate=True)
        dens = None if fld is None else modes.intensity(fld)
        name = f"scan/scan_{i:03d}.pgm"
        if photons is None:
            img = np.zeros(grid.shape) if dens is None else dens.values
            io.write_pgm(out / name, io.to_full_scale(img))
        else:
            rng = derive_rng(seed, "scan", i)
            pos = np.empty((0, 2)) if dens is None else sample_photons(dens, photons * 2.0 * p, rng)
            frame = expose(pos, cam, rng)
            io.write_frame(out / name, frame, seed, {"kind": "scan", "index": i})
            img = np.clip(frame.counts - cam.readout[0], 0, None)
        images.append(img)
        points.append({"index": i, "file": name, "label": trig.label, "jones": [[trig.c_h.real, trig.c_h.imag], [trig.c_v.real, trig.c_v.imag]], "herald_probability": p})
    l = getattr(state, "oam", None)
    period = 180.0 / l if l else 360.0
    rot = cumulative_rotation(images, period=period) if len(images) > 1 else np.zeros(1)
    result = {
        "command": "scan",
        "seed": seed,
        "config_hash": cfg.config_hash(),
        "path": cfg.scan.path,
        "steps": len(path),
        "points": points,
        "rotation_deg": [float(r) for r in rot],
        "total_rotation_deg": float(rot[-1]),
    }
    if l is not None and isinstance(cfg.scan.path, str) and cfg.scan.path == "equator":
        result["expected_total_rotation_deg"] = modes.expected_rotation(l, 2.0 * math.pi) if len(path) > 1 else 0.0
    io.write_json(out / "scan.json", result)
    print(f"wrote {len(path)} frames; total rotation {rot[-1]:.2f} deg")
    return EXIT_OK


# ---------------------------------------------------------------- render


def parse_mode(text: str, waist: float) -> ModeSpec:
    """``LG:l:p``, ``HG:n:m`` or ``IG:p:m:parity:eps``."""
    parts = text.split(":")
    fam = parts[0].upper()
    try:
        if fam == "LG" and len(parts) == 3:
            return ModeSpec.lg(int(parts[1]), int(parts[2]), waist)
        if fam == "HG" and len(parts) == 3:
            return ModeSpec.hg(int(parts[1]), int(parts[2]), waist)
        if fam == "IG" and len(parts) == 5:
            return ModeSpec.ig(int(parts[1]), int(parts[2]), parts[3], float(parts[4]), waist)
    except ValueError as exc:
        raise ParameterError(f"bad mode spec {text!r}: {exc}") from exc
    raise ParameterError(f"bad mode spec {text!r}; use LG:l:p, HG:n:m or IG:p:m:parity:eps")


def theory_intensity(cfg: ExperimentConfig, trigger: str, grid: GridSpec, mode: str | None = None) -> np.ndarray:
    """Heralded (or single-mode) intensity of the configured source on ``grid``."""
    if mode is not None:
        l = abs(int(mode.split(":")[1])) if mode.upper().startswith("LG") else 1
        w = cfg.state.waist or default_waist(cfg.camera.nx, max(l, 1))
        return modes.intensity(modes.mode_field(parse_mode(mode, w), grid)).values
    state = cfg.build_state()
    _, dens = state.heralded_density(polarization(trigger), grid)
    return dens.values


def inset_grid(nx: int, ny: int, scale: int = 4) -> GridSpec:
    """Coarse grid covering the full camera field with ``1/scale`` of the pixels."""
    return GridSpec(nx // scale, ny // scale, extent=nx / 2.0)


def cmd_render(args) -> int:
    cfg = load_config(args)
    out = _out_dir(cfg)
    cam = cfg.camera
    grid = GridSpec.for_camera(cam.nx, cam.ny)
    if args.frame:
        frame = io.read_frame(args.frame)
        img = np.clip(frame.counts.astype(float) - cam.readout[0], 0, None)
        source = {"frame": Path(args.frame).name}
    else:
        img = theory_intensity(cfg, args.trigger, grid, args.mode)
        source = {"mode": args.mode} if args.mode else {"trigger": args.trigger}
    canvas = io.to_full_scale(img)
    if args.inset:
        ig = inset_grid(canvas.shape[1], canvas.shape[0])
        inset = io.to_full_scale(theory_intensity(cfg, args.trigger, ig, args.mode))
        h, w = inset.shape
        canvas = canvas.copy()
        canvas[:h, -w:] = inset
        source["inset"] = {"rows": [0, h], "cols": [canvas.shape[1] - w, canvas.shape[1]]}
    name = args.name or "render.pgm"
    io.write_pgm(out / name, canvas)
    io.write_json((out / name).with_suffix(".json"), {"command": "render", "config_hash": cfg.config_hash(), **source})
    print(f"wrote {out / name}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heraldimg", description="Heralded single-photon imaging of hybrid entanglement.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required: bool):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, required=seed_required, help="master seed (unsigned 64-bit)")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE", help="override a config field (value parsed as JSON)")

    sp = sub.add_parser("simulate", help="simulate heralded, dark or sparse calibration frames")
    common(sp, True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("calibrate", help="build the photon-number calibration from sparse frames")
    common(sp, True)
    sp.add_argument("--frames", required=True, help="glob of single-photon frames")
    sp.add_argument("--background", required=True, help="glob of readout-only frames")
    sp.add_argument("--n-max", type=int, default=None, help="largest tabulated photon number")
    sp.add_argument("--min-events", type=int, default=1000)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("analyze", help="evaluate the witness on D/A/R/L trigger frames")
    common(sp, False)
    sp.add_argument("--input", help="directory written by 'simulate'")
    sp.add_argument("--calibration", required=True, help="calibration JSON")
    sp.add_argument("--background", help="glob of readout-only frames")
    for t in TRIGGERS:
        sp.add_argument(f"--{t}", help=f"glob of {t}-trigger frames")
    sp.add_argument("--l", type=int, default=None, help="OAM order (default: from the state)")
    sp.add_argument("--estimator", choices=("projection", "minmax"))
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("scan", help="heralded images along a Poincare-sphere path")
    common(sp, True)
    sp.add_argument("--path", choices=("equator", "meridian"))
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("render", help="write a full-scale 16-bit PGM of a field or frame")
    common(sp, False)
    sp.add_argument("--frame", help="frame PGM to render instead of theory")
    sp.add_argument("--mode", help="single mode, e.g. LG:1:0, HG:1:2, IG:5:3:even:2.0")
    sp.add_argument("--trigger", default=D.label, help="trigger polarization for heralded theory images")
    sp.add_argument("--inset", action="store_true", help="add a theory inset in the top-right corner")
    sp.add_argument("--name", help="output file name (default render.pgm)")
    sp.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
