"""Forward model of a gated ICCD exposure.

Each detected photon deposits a log-normally distributed total signal, spread
as a pixel-integrated Gaussian blob. Accidental events (intensifier thermal
noise, phosphor afterglow) are uniform over the frame with the same gain law,
and every pixel carries Gaussian readout noise. Counts are rounded and clamped
to the 16-bit range.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from ._rng import as_generator
from ._validation import check_int, check_non_negative, check_positive
from .exceptions import ParameterError
from .modes import ScalarField

# Median single-photon signal of 10 000 counts, log-sigma 0.6 (mean ~11 970 counts).
DEFAULT_GAIN = (math.log(10000.0), 0.6)
DEFAULT_READOUT = (100.0, 5.0)


@dataclass(frozen=True)
class CameraConfig:
    """Camera parameters. ``pixel_pitch_um``, ``qe``, ``gate_ns`` and ``pair_rate``
    only enter photon-budget bookkeeping (:meth:`expected_photons`)."""

    nx: int = 1024
    ny: int = 1024
    pixel_pitch_um: float = 13.0
    qe: float = 0.03
    gate_ns: float = 5.0
    psf_sigma: float = 1.5
    gain_lognormal: tuple[float, float] = DEFAULT_GAIN
    readout: tuple[float, float] = DEFAULT_READOUT
    accidental_ratio: float = 75.0
    saturation: int = 65535
    pair_rate: float = 1.3e6

    def __post_init__(self):
        check_int(self.nx, "nx", 16)
        check_int(self.ny, "ny", 16)
        check_positive(self.pixel_pitch_um, "pixel_pitch_um")
        if not 0.0 < self.qe <= 1.0:
            raise ParameterError(f"qe must lie in (0, 1], got {self.qe}")
        check_positive(self.gate_ns, "gate_ns")
        check_positive(self.psf_sigma, "psf_sigma")
        mu, sigma = self.gain_lognormal
        if not math.isfinite(mu):
            raise ParameterError("gain mu must be finite")
        check_positive(sigma, "gain sigma")
        rmean, rsigma = self.readout
        check_non_negative(rmean, "readout mean")
        check_non_negative(rsigma, "readout sigma")
        if not self.accidental_ratio > 0:
            raise ParameterError("accidental_ratio must be > 0 (use inf to disable accidentals)")
        check_int(self.saturation, "saturation", 1)
        if self.saturation > 65535:
            raise ParameterError("saturation cannot exceed the 16-bit range")
        check_positive(self.pair_rate, "pair_rate")
        object.__setattr__(self, "gain_lognormal", (float(mu), float(sigma)))
        object.__setattr__(self, "readout", (float(rmean), float(rsigma)))

    @classmethod
    def noiseless(cls, **overrides) -> "CameraConfig":
        """No readout noise, no accidentals, (almost) deterministic gain."""
        base = dict(readout=(DEFAULT_READOUT[0], 0.0), accidental_ratio=math.inf, gain_lognormal=(DEFAULT_GAIN[0], 1e-6))
        base.update(overrides)
        return cls(**base)

    @property
    def mean_photon_signal(self) -> float:
        mu, sigma = self.gain_lognormal
        return math.exp(mu + 0.5 * sigma * sigma)

    def expected_photons(self, seconds: float) -> float:
        """Heralded photons registered in ``seconds`` of acquisition."""
        return self.pair_rate * self.qe * seconds

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gain_lognormal"] = list(self.gain_lognormal)
        d["readout"] = list(self.readout)
        if math.isinf(self.accidental_ratio):
            d["accidental_ratio"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown camera keys: {sorted(extra)}")
        kw = dict(d)
        for key in ("gain_lognormal", "readout"):
            if key in kw:
                if len(kw[key]) != 2:
                    raise ParameterError(f"{key} must be a pair")
                kw[key] = tuple(float(v) for v in kw[key])
        if "accidental_ratio" in kw and kw["accidental_ratio"] is None:
            kw["accidental_ratio"] = math.inf
        return cls(**kw)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(eq=False)
class Frame:
    """One gated exposure. ``truth`` carries simulation ground truth and is never written to disk."""

    counts: np.ndarray
    meta: dict = field(default_factory=dict)
    truth: dict | None = None

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise ParameterError("frame counts must be 2-D")
        if c.dtype != np.uint16:
            if np.any(c < 0) or np.any(c > 65535):
                raise ParameterError("frame counts outside the 16-bit range")
            c = c.astype(np.uint16)
        self.counts = c

    @property
    def width(self) -> int:
        return self.counts.shape[1]

    @property
    def height(self) -> int:
        return self.counts.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


def sample_photons(density: ScalarField, n_expected: float, rng_seed) -> np.ndarray:
    """Draw heralded photon positions from a probability density.

    The photon number is Poisson(``n_expected``); positions are drawn i.i.d. by
    inverse-CDF lookup over pixels and jittered uniformly inside the pixel.

    Returns
    -------
    ndarray, shape (N, 2)
        ``(x, y)`` in pixel-index coordinates: pixel ``j`` spans ``[j - 0.5, j + 0.5)``.
    """
    if not isinstance(density, ScalarField) or not density.density:
        raise ParameterError("sample_photons needs a ScalarField flagged as a probability density")
    total = density.total()
    if abs(total - 1.0) > 1e-6:
        raise ParameterError(f"density integrates to {total}, expected 1")
    n_expected = check_non_negative(n_expected, "n_expected")
    rng = as_generator(rng_seed)
    n = int(rng.poisson(n_expected))
    if n == 0:
        return np.empty((0, 2))
    cdf = np.cumsum(density.values.ravel())
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    idx = np.minimum(idx, cdf.size - 1)
    iy, ix = np.divmod(idx, density.grid.nx)
    jitter = rng.random((n, 2)) - 0.5
    return np.column_stack([ix + jitter[:, 0], iy + jitter[:, 1]])


def deposit_blobs(shape: tuple[int, int], positions: np.ndarray, signals: np.ndarray, psf_sigma: float) -> np.ndarray:
    """Sum of pixel-integrated isotropic Gaussians with the given total signals."""
    ny, nx = shape
    if len(positions) == 0:
        return np.zeros(shape)
    half = int(math.ceil(4.0 * psf_sigma))
    offs = np.arange(-half, half + 1)
    # accumulate on a canvas padded by two kernel half-widths so no index needs
    # masking; photons whose kernel misses the frame entirely are dropped first
    pos = np.asarray(positions, dtype=float)
    signals = np.asarray(signals, dtype=float)
    cx = np.floor(pos[:, 0] + 0.5)
    cy = np.floor(pos[:, 1] + 0.5)
    keep = (cx >= -half) & (cx <= nx - 1 + half) & (cy >= -half) & (cy <= ny - 1 + half)
    pos, signals = pos[keep], signals[keep]
    pad = 2 * half
    py, px = ny + 2 * pad, nx + 2 * pad
    img = np.zeros(py * px)
    chunk = 20000
    for s in range(0, len(pos), chunk):
        p = pos[s : s + chunk]
        sig = signals[s : s + chunk]
        ix = np.floor(p[:, 0] + 0.5).astype(np.int64)[:, None] + offs
        iy = np.floor(p[:, 1] + 0.5).astype(np.int64)[:, None] + offs
        wx = ndtr((ix + 0.5 - p[:, :1]) / psf_sigma) - ndtr((ix - 0.5 - p[:, :1]) / psf_sigma)
        wy = ndtr((iy + 0.5 - p[:, 1:]) / psf_sigma) - ndtr((iy - 0.5 - p[:, 1:]) / psf_sigma)
        w = (sig[:, None, None] * wy[:, :, None]) * wx[:, None, :]
        flat = (iy + pad)[:, :, None] * px + (ix + pad)[:, None, :]
        img += np.bincount(flat.ravel(), weights=w.ravel(), minlength=py * px)
    return img.reshape(py, px)[pad : pad + ny, pad : pad + nx].copy()


def expose(photons, cfg: CameraConfig, rng_seed, accidental_mean: float | None = None) -> Frame:
    """Render one frame from photon positions.

    Accidentals are Poisson with mean ``len(photons) / cfg.accidental_ratio``
    unless ``accidental_mean`` is given. Photons outside the frame are dropped
    and counted in ``meta["dropped"]``; clamped pixels in ``meta["clamped"]``.
    """
    rng = as_generator(rng_seed)
    pos = np.asarray(photons, dtype=float).reshape(-1, 2)
    inside = (pos[:, 0] >= -0.5) & (pos[:, 0] < cfg.nx - 0.5) & (pos[:, 1] >= -0.5) & (pos[:, 1] < cfg.ny - 0.5)
    dropped = int(np.count_nonzero(~inside))
    pos = pos[inside]
    n_signal = len(pos)
    if accidental_mean is None:
        accidental_mean = 0.0 if math.isinf(cfg.accidental_ratio) else n_signal / cfg.accidental_ratio
    n_acc = int(rng.poisson(accidental_mean)) if accidental_mean > 0 else 0
    acc = rng.random((n_acc, 2)) * [cfg.nx, cfg.ny] - 0.5
    allpos = np.vstack([pos, acc])
    mu, sigma = cfg.gain_lognormal
    signals = rng.lognormal(mu, sigma, len(allpos))
    img = deposit_blobs((cfg.ny, cfg.nx), allpos, signals, cfg.psf_sigma)
    rmean, rsigma = cfg.readout
    if rsigma > 0:
        img += rng.normal(rmean, rsigma, img.shape)
    else:
        img += rmean
    img = np.rint(img)
    clamped = int(np.count_nonzero((img > cfg.saturation) | (img < 0)))
    counts = np.clip(img, 0, cfg.saturation).astype(np.uint16)
    meta = {
        "n_signal": n_signal,
        "n_accidental": n_acc,
        "dropped": dropped,
        "clamped": clamped,
        "config_hash": cfg.config_hash(),
    }
    truth = {"positions": allpos, "signals": signals, "is_signal": np.arange(len(allpos)) < n_signal}
    return Frame(counts, meta, truth)


def dark_frame(cfg: CameraConfig, expected_signal_photons: float, rng_seed) -> Frame:
    """Wrong-delay exposure: no heralded photons, only accidentals and readout noise.

    The accidental mean is ``expected_signal_photons / cfg.accidental_ratio``.
    """
    expected_signal_photons = check_non_negative(expected_signal_photons, "expected_signal_photons")
    acc = 0.0 if math.isinf(cfg.accidental_ratio) else expected_signal_photons / cfg.accidental_ratio
    frame = expose(np.empty((0, 2)), cfg, rng_seed, accidental_mean=acc)
    frame.meta["kind"] = "dark"
    return frame


def simulate_frame(density: ScalarField, n_expected: float, cfg: CameraConfig, rng_seed) -> Frame:
    """Sample photons from ``density`` and expose them; one generator drives both steps."""
    if density.grid.shape != (cfg.ny, cfg.nx):
        raise ParameterError(f"density grid {density.grid.shape} does not match camera {(cfg.ny, cfg.nx)}")
    rng = as_generator(rng_seed)
    photons = sample_photons(density, n_expected, rng)
    frame = expose(photons, cfg, rng)
    frame.meta["n_expected"] = float(n_expected)
    return frame


def sparse_positions(n: int, shape: tuple[int, int], min_spacing: float, rng_seed, margin: float = 8.0) -> np.ndarray:
    """``n`` random positions with pairwise distance >= ``min_spacing``.

    Points live in distinct cells of a ``2 * min_spacing`` lattice, each confined
    to the central half of its cell.
    """
    rng = as_generator(rng_seed)
    ny, nx = shape
    cell = 2.0 * min_spacing
    gx = int((nx - 2 * margin) // cell)
    gy = int((ny - 2 * margin) // cell)
    if n > gx * gy:
        raise ParameterError(f"cannot place {n} photons {min_spacing} px apart on a {nx}x{ny} frame")
    cells = rng.choice(gx * gy, size=n, replace=False)
    cy, cx = np.divmod(cells, gx)
    jitter = (rng.random((n, 2)) - 0.5) * (cell / 2.0)
    x = margin + (cx + 0.5) * cell + jitter[:, 0]
    y = margin + (cy + 0.5) * cell + jitter[:, 1]
    return np.column_stack([x, y])
