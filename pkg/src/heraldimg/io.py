"""File formats: 16-bit PGM images, raw complex fields, JSON sidecars.

All JSON is written with sorted keys and a trailing newline so that equal
content gives byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np

from .camera import Frame
from .counting import Calibration
from .exceptions import FormatError, ParameterError
from .modes import ComplexField, GridSpec, ScalarField

PGM_MAXVAL = 65535


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _finite(obj):
    # JSON has no inf/nan; map them to null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(obj) -> str:
    """Deterministic JSON text."""
    obj = json.loads(json.dumps(obj, default=_json_default))
    return json.dumps(_finite(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def content_hash(obj) -> str:
    """Short SHA-256 of the deterministic JSON form of ``obj``."""
    return hashlib.sha256(dumps(obj).encode()).hexdigest()[:16]


def write_pgm(path, image) -> Path:
    """Write a 2-D array as binary 16-bit PGM (P5, maxval 65535, big-endian)."""
    a = np.asarray(image)
    if a.ndim != 2:
        raise ParameterError("PGM images must be 2-D")
    if a.dtype != np.uint16:
        if np.any(a < 0) or np.any(a > PGM_MAXVAL) or not np.all(np.isfinite(a)):
            raise ParameterError("PGM values must lie in [0, 65535]")
        a = np.rint(a).astype(np.uint16)
    ny, nx = a.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(a.astype(">u2").tobytes())
    return path


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated PGM header")
        tokens.append(data[i:j])
        i = j
    # exactly one whitespace byte separates header and raster
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (8- or 16-bit) into a ``uint16`` array."""
    data = Path(path).read_bytes()
    tokens, offset = _header_tokens(data, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        nx, ny, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if not 0 < maxval <= PGM_MAXVAL:
        raise FormatError(f"{path}: maxval {maxval} out of range")
    dtype = ">u2" if maxval > 255 else "u1"
    size = nx * ny * np.dtype(dtype).itemsize
    raster = data[offset : offset + size]
    if len(raster) != size:
        raise FormatError(f"{path}: expected {size} raster bytes, found {len(raster)}")
    return np.frombuffer(raster, dtype=dtype).reshape(ny, nx).astype(np.uint16)


def to_full_scale(values) -> np.ndarray:
    """Scale a non-negative image so its maximum maps to 65535."""
    v = np.asarray(values, dtype=float)
    peak = v.max() if v.size else 0.0
    if peak <= 0:
        return np.zeros(v.shape, dtype=np.uint16)
    return np.rint(v * (PGM_MAXVAL / peak)).astype(np.uint16)


def write_scalar_field(path, fld: ScalarField) -> Path:
    """Intensity as a full-scale 16-bit PGM."""
    return write_pgm(path, to_full_scale(fld.values))


def write_complex_field(path, fld: ComplexField, waist: float | None = None) -> tuple[Path, Path]:
    """Raw little-endian float64 planes (all real parts, then all imaginary
    parts) plus a ``.json`` sidecar ``{nx, ny, extent, waist}``."""
    path = Path(path)
    a = fld.amplitudes
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(a.real, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(a.imag, dtype="<f8").tobytes())
    g = fld.grid
    if waist is None:
        waist = fld.meta.get("waist")
    side = {"nx": g.nx, "ny": g.ny, "extent": g.extent, "waist": waist}
    if g.center is not None:
        side["center"] = list(g.center)
    sidecar = write_json(path.with_suffix(path.suffix + ".json"), side)
    return path, sidecar


def read_complex_field(path) -> ComplexField:
    path = Path(path)
    side = read_json(path.with_suffix(path.suffix + ".json"))
    try:
        nx, ny, extent = int(side["nx"]), int(side["ny"]), float(side["extent"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete sidecar") from exc
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    if raw.size != 2 * nx * ny:
        raise FormatError(f"{path}: expected {2 * nx * ny} float64 values, found {raw.size}")
    re, im = raw[: nx * ny], raw[nx * ny :]
    grid = GridSpec(nx, ny, extent, tuple(side["center"]) if side.get("center") else None)
    meta = {"waist": side.get("waist")}
    return ComplexField(grid, (re + 1j * im).reshape(ny, nx), True, meta)


def frame_sidecar(frame: Frame, seed: int | None, exposure: dict | None = None) -> dict:
    meta = frame.meta
    desc = {k: meta[k] for k in sorted(meta) if k != "config_hash"}
    if exposure:
        desc.update(exposure)
    return {"seed": seed, "config_hash": meta.get("config_hash"), "exposure": desc}


def write_frame(path, frame: Frame, seed: int | None = None, exposure: dict | None = None) -> tuple[Path, Path]:
    """Frame counts as PGM plus a JSON sidecar ``{seed, config_hash, exposure}``.

    Simulation ground truth (``frame.truth``) is not written.
    """
    path = Path(path)
    write_pgm(path, frame.counts)
    sidecar = write_json(path.with_suffix(".json"), frame_sidecar(frame, seed, exposure))
    return path, sidecar


def read_frame(path) -> Frame:
    path = Path(path)
    counts = read_pgm(path)
    side = path.with_suffix(".json")
    meta = {}
    if side.exists():
        s = read_json(side)
        meta = dict(s.get("exposure") or {})
        meta["config_hash"] = s.get("config_hash")
        meta["seed"] = s.get("seed")
    meta["path"] = os.fspath(path)
    return Frame(counts, meta)


def write_calibration(path, cal: Calibration) -> Path:
    return write_json(path, cal.to_dict())


def read_calibration(path) -> Calibration:
    try:
        return Calibration.from_dict(read_json(path))
    except (KeyError, TypeError, ParameterError) as exc:
        raise FormatError(f"{path}: not a calibration file ({exc})") from exc
