"""Signal-to-photon-number calibration of ICCD frames.

Pipeline: per-pixel readout background from dark frames, connected-component
photon extraction seeded at 5 sigma, a log-normal model of the single-photon
signal, and a Monte-Carlo table of the spread of n-photon signal sums.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import derive_rng
from ._validation import check_image, check_int, check_seed
from .camera import CameraConfig, Frame, dark_frame, expose, sparse_positions
from .exceptions import ParameterError, TooFewEventsError

log = logging.getLogger(__name__)

SIGMA_MIN = 0.1  # counts; guards sigma of noiseless backgrounds
PER_PIXEL_MIN_FRAMES = 10
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def _counts(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return frame.counts.astype(np.float64)
    return check_image(frame, "frame")


@dataclass(eq=False)
class BackgroundModel:
    mean: np.ndarray
    sigma: np.ndarray
    sigma_global: float
    n_frames: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape

    @property
    def residual_inflation(self) -> float:
        """Noise of ``frame - mean`` relative to the readout sigma: the mean
        itself carries the standard error of ``n_frames`` samples."""
        return math.sqrt(1.0 + 1.0 / self.n_frames)

    def subtract(self, frame) -> np.ndarray:
        img = _counts(frame)
        if img.shape != self.shape:
            raise ParameterError(f"frame shape {img.shape} does not match background {self.shape}")
        return img - self.mean


def estimate_background(dark_frames) -> BackgroundModel:
    """Per-pixel mean and noise of readout-only frames.

    The per-pixel sigma is the pooled sample standard deviation when at least
    ten frames are given; otherwise the global pooled value is used everywhere.
    Both are floored at ``SIGMA_MIN``.
    """
    frames = list(dark_frames)
    if len(frames) == 0:
        raise ParameterError("estimate_background needs at least one frame")
    if len(frames) < 2:
        raise ParameterError("estimate_background needs at least two frames")
    stack = np.stack([_counts(f) for f in frames])
    mean = stack.mean(axis=0)
    var = stack.var(axis=0, ddof=1)
    sigma_global = max(math.sqrt(float(var.mean())), SIGMA_MIN)
    if len(frames) >= PER_PIXEL_MIN_FRAMES:
        sigma = np.maximum(np.sqrt(var), SIGMA_MIN)
    else:
        sigma = np.full_like(mean, sigma_global)
    return BackgroundModel(mean, sigma, sigma_global, len(frames))


class BackgroundEstimator(TransformerMixin, BaseEstimator):
    """Fit a :class:`BackgroundModel` on dark frames; ``transform`` subtracts it.

    Examples
    --------
    >>> bg = BackgroundEstimator().fit(dark_frames)       # doctest: +SKIP
    >>> residual = bg.transform(frames)                   # doctest: +SKIP
    """

    def fit(self, X, y=None):
        self.model_ = estimate_background(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        if isinstance(X, Frame) or (isinstance(X, np.ndarray) and X.ndim == 2):
            return self.model_.subtract(X)
        return np.stack([self.model_.subtract(f) for f in X])


@dataclass(eq=False)
class PhotonEvent:
    rows: np.ndarray
    cols: np.ndarray
    signal: float
    centroid: tuple[float, float]
    peak: float

    @property
    def n_pixels(self) -> int:
        return len(self.rows)


def extract_events(
    frame,
    bg: BackgroundModel,
    threshold: float = 5.0,
    include: float = 1.0,
    sigma_mode: str = "global",
    connectivity: int = 8,
) -> list[PhotonEvent]:
    """Find single-photon blobs.

    Pixels above ``include`` sigma form 8-connected components; a component is
    one photon when at least one of its pixels exceeds ``threshold`` sigma. The
    event signal is the background-subtracted sum over the component.

    Sigma is that of the subtracted image, i.e. the readout sigma inflated by
    the uncertainty of the estimated per-pixel mean.
    """
    sub = bg.subtract(frame)
    if sigma_mode == "global":
        sig = bg.sigma_global
    elif sigma_mode == "per_pixel":
        sig = bg.sigma
    else:
        raise ParameterError(f"sigma_mode must be 'global' or 'per_pixel', got {sigma_mode!r}")
    sig = sig * bg.residual_inflation
    if connectivity not in (4, 8):
        raise ParameterError("connectivity must be 4 or 8")
    structure = EIGHT_CONNECTED if connectivity == 8 else FOUR_CONNECTED
    labels, n = ndimage.label(sub > include * sig, structure=structure)
    if n == 0:
        return []
    seeds = np.unique(labels[sub > threshold * sig])
    seeds = seeds[seeds > 0]
    if len(seeds) == 0:
        return []
    # remap seeded components to 1..k, everything else to 0
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[seeds] = np.arange(1, len(seeds) + 1)
    ids = remap[labels]
    rr, cc = np.nonzero(ids)
    comp = ids[rr, cc]
    vals = sub[rr, cc]
    order = np.argsort(comp, kind="stable")
    rr, cc, comp, vals = rr[order], cc[order], comp[order], vals[order]
    k = len(seeds) + 1
    totals = np.bincount(comp, weights=vals, minlength=k)[1:]
    sx = np.bincount(comp, weights=vals * cc, minlength=k)[1:]
    sy = np.bincount(comp, weights=vals * rr, minlength=k)[1:]
    peaks = np.full(k, -np.inf)
    np.maximum.at(peaks, comp, vals)
    bounds = np.cumsum(np.bincount(comp, minlength=k))
    events = []
    for j in range(len(seeds)):
        total = float(totals[j])
        if total <= 0:
            continue
        lo, hi = bounds[j], bounds[j + 1]
        events.append(PhotonEvent(rr[lo:hi], cc[lo:hi], total, (float(sx[j] / total), float(sy[j] / total)), float(peaks[j + 1])))
    return events


class PhotonExtractor(BaseEstimator):
    """Estimator wrapper around :func:`extract_events`.

    ``fit`` learns the background from dark frames; ``transform`` maps frames
    to arrays of event signals.
    """

    def __init__(self, threshold: float = 5.0, include: float = 1.0, sigma_mode: str = "global", connectivity: int = 8):
        self.threshold = threshold
        self.include = include
        self.sigma_mode = sigma_mode
        self.connectivity = connectivity

    def fit(self, X, y=None):
        self.background_ = estimate_background(X)
        return self

    def extract(self, frame) -> list[PhotonEvent]:
        check_is_fitted(self, "background_")
        return extract_events(frame, self.background_, self.threshold, self.include, self.sigma_mode, self.connectivity)

    def transform(self, X) -> list[np.ndarray]:
        if isinstance(X, Frame) or (isinstance(X, np.ndarray) and X.ndim == 2):
            X = [X]
        return [np.array([e.signal for e in self.extract(f)]) for f in X]


@dataclass(eq=False)
class PhotonCount:
    n: int
    err: float


@dataclass(eq=False)
class Calibration:
    """Single-photon signal statistics.

    ``sigma_lookup[n - 1]`` is the Monte-Carlo standard deviation (in counts)
    of the summed signal of ``n`` photons; ``mean_lookup`` the matching mean.
    """

    mu1: float
    lognormal: tuple[float, float]
    sigma_lookup: np.ndarray
    n_events_used: int
    seed: int
    n_mc: int
    mean_lookup: np.ndarray | None = None
    fit_residual: float = float("nan")

    def __post_init__(self):
        if not self.mu1 > 0:
            raise ParameterError("mu1 must be positive")
        self.sigma_lookup = np.asarray(self.sigma_lookup, dtype=float)
        if self.sigma_lookup.ndim != 1 or len(self.sigma_lookup) == 0:
            raise ParameterError("sigma_lookup must be a non-empty 1-D table")
        if np.any(np.diff(self.sigma_lookup) < 0):
            raise ParameterError("sigma_lookup must be non-decreasing")
        if self.mean_lookup is not None:
            self.mean_lookup = np.asarray(self.mean_lookup, dtype=float)

    @property
    def n_max(self) -> int:
        return len(self.sigma_lookup)

    def sigma_signal(self, n) -> np.ndarray:
        """Signal spread of ``n`` photons; beyond the table it scales as sqrt(n)."""
        n = np.asarray(n, dtype=np.int64)
        if np.any(n < 1):
            raise ParameterError("photon number must be >= 1 for the lookup")
        top = self.sigma_lookup[-1]
        inside = np.minimum(n, self.n_max) - 1
        return np.where(n <= self.n_max, self.sigma_lookup[inside], top * np.sqrt(n / self.n_max))

    def to_dict(self) -> dict:
        d = {
            "mu1": self.mu1,
            "lognormal": {"mu": self.lognormal[0], "sigma": self.lognormal[1]},
            "sigma_lookup": [float(v) for v in self.sigma_lookup],
            "n_events_used": self.n_events_used,
            "seed": self.seed,
            "n_mc": self.n_mc,
            "fit_residual": self.fit_residual,
        }
        if self.mean_lookup is not None:
            d["mean_lookup"] = [float(v) for v in self.mean_lookup]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        try:
            return cls(
                float(d["mu1"]),
                (float(d["lognormal"]["mu"]), float(d["lognormal"]["sigma"])),
                np.asarray(d["sigma_lookup"], dtype=float),
                int(d["n_events_used"]),
                int(d["seed"]),
                int(d.get("n_mc", 50000)),
                None if d.get("mean_lookup") is None else np.asarray(d["mean_lookup"], dtype=float),
                float("nan") if d.get("fit_residual") is None else float(d["fit_residual"]),
            )
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"malformed calibration: {exc}") from exc


def fit_lognormal(signals: np.ndarray) -> tuple[float, float, float]:
    """Log-moment fit ``(mu, sigma)`` and the RMS residual of the fitted pdf
    against a 50-bin histogram of the signals (in density units)."""
    logs = np.log(signals)
    mu = float(logs.mean())
    sigma = float(logs.std(ddof=1))
    hist, edges = np.histogram(signals, bins=50, density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    pdf = np.exp(-((np.log(centers) - mu) ** 2) / (2 * sigma * sigma)) / (centers * sigma * math.sqrt(2 * math.pi))
    resid = float(np.sqrt(np.mean((hist - pdf) ** 2)))
    return mu, sigma, resid


def mc_sum_statistics(mu: float, sigma: float, n_max: int, n_mc: int, seed: int, block: int = 128):
    """Mean and standard deviation of sums of ``n = 1..n_max`` log-normal draws.

    Each of the ``n_mc`` runs is a running sum extended one photon at a time,
    so every ``n`` sees ``n_mc`` independent ``n``-photon totals. Blocks of
    ``block`` photon numbers use their own derived stream.
    """
    running = np.zeros(n_mc)
    means = np.empty(n_max)
    stds = np.empty(n_max)
    for b, start in enumerate(range(0, n_max, block)):
        width = min(block, n_max - start)
        rng = derive_rng(seed, "mc-lookup", b)
        z = rng.standard_normal((n_mc, width), dtype=np.float32)
        draws = np.exp(np.float32(mu) + np.float32(sigma) * z)
        sums = np.cumsum(draws, axis=1, dtype=np.float64)
        sums += running[:, None]
        running = sums[:, -1].copy()
        mean = sums.mean(axis=0)
        sums -= mean
        means[start : start + width] = mean
        stds[start : start + width] = np.sqrt(np.einsum("ij,ij->j", sums, sums) / (n_mc - 1))
    return means, stds


def calibrate(
    events,
    seed: int = 0,
    n_mc: int = 50000,
    n_max: int = 10000,
    min_events: int = 1000,
) -> Calibration:
    """Build a :class:`Calibration` from single-photon events (or their signals).

    ``mu1`` is the sample mean signal. The Monte-Carlo table draws from the
    log-normal with the fitted shape ``sigma`` and the location placing its mean
    at ``mu1``; the log-moment location is kept in ``lognormal`` for reference.
    The table is forced non-decreasing (running maximum) against MC jitter.
    """
    seed = check_seed(seed)
    n_mc = check_int(n_mc, "n_mc", 2)
    n_max = check_int(n_max, "n_max", 1)
    signals = np.array([e.signal if isinstance(e, PhotonEvent) else e for e in events], dtype=float)
    if len(signals) < min_events:
        raise TooFewEventsError(f"{len(signals)} events; at least {min_events} are needed")
    if np.any(~np.isfinite(signals)) or np.any(signals <= 0):
        raise ParameterError("event signals must be finite and positive")
    if len(signals) < 5000:
        warnings.warn(f"calibrating on only {len(signals)} events (>= 5000 recommended)", stacklevel=2)
    mu1 = float(signals.mean())
    mu, sigma, resid = fit_lognormal(signals)
    mu_mc = math.log(mu1) - 0.5 * sigma * sigma
    means, stds = mc_sum_statistics(mu_mc, sigma, n_max, n_mc, seed)
    stds = np.maximum.accumulate(stds)
    log.debug("calibration: mu1=%.1f lognormal=(%.4f, %.4f) residual=%.3g", mu1, mu, sigma, resid)
    return Calibration(mu1, (mu, sigma), stds, len(signals), seed, n_mc, means, resid)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def signal_to_photons(region_signal: float, cal: Calibration) -> PhotonCount:
    """Photon number and 1-sigma error for a summed region signal.

    ``n = round(S / mu1)``. The error is ``sigma_lookup(n) / mu1``; for ``n = 0``
    it is zero when ``S == 0`` and the one-photon spread otherwise (an upper bound).
    """
    if not math.isfinite(region_signal) or region_signal < 0:
        raise ParameterError(f"region signal must be finite and >= 0, got {region_signal}")
    n = int(_round_half_away(np.float64(region_signal / cal.mu1)))
    if n == 0:
        err = 0.0 if region_signal == 0 else float(cal.sigma_lookup[0] / cal.mu1)
    else:
        err = float(cal.sigma_signal(n) / cal.mu1)
    return PhotonCount(n, err)


def signals_to_photons(signals, cal: Calibration) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`signal_to_photons`; negative inputs are clipped to 0."""
    s = np.clip(np.asarray(signals, dtype=float), 0.0, None)
    n = _round_half_away(s / cal.mu1).astype(np.int64)
    err = np.empty(n.shape)
    pos = n > 0
    err[pos] = cal.sigma_signal(n[pos]) / cal.mu1
    err[~pos] = np.where(s[~pos] > 0, cal.sigma_lookup[0] / cal.mu1, 0.0)
    return n, err


def error_curves(cal: Calibration, n_values=None) -> dict:
    """Monte-Carlo error and the Poisson ``sqrt(n)`` error, both in photons."""
    n = np.arange(1, cal.n_max + 1) if n_values is None else np.asarray(n_values, dtype=np.int64)
    return {
        "n": n,
        "sigma_mc": cal.sigma_signal(n) / cal.mu1,
        "sigma_poisson": np.sqrt(n),
        "mean_signal": (cal.mean_lookup[n - 1] if cal.mean_lookup is not None and n.max() <= cal.n_max else n * cal.mu1),
    }


class PhotonCalibrator(BaseEstimator):
    """``fit`` on single-photon signals, ``predict`` photon numbers for region signals."""

    def __init__(self, n_mc: int = 50000, n_max: int = 10000, seed: int = 0, min_events: int = 1000):
        self.n_mc = n_mc
        self.n_max = n_max
        self.seed = seed
        self.min_events = min_events

    def fit(self, X, y=None):
        self.calibration_ = calibrate(X, self.seed, self.n_mc, self.n_max, self.min_events)
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "calibration_")
        return signals_to_photons(X, self.calibration_)[0]

    def predict_error(self, X) -> np.ndarray:
        check_is_fitted(self, "calibration_")
        return signals_to_photons(X, self.calibration_)[1]


def simulate_dark_frames(cfg: CameraConfig, n_frames: int, seed: int, expected_signal_photons: float = 0.0) -> list[Frame]:
    return [dark_frame(cfg, expected_signal_photons, derive_rng(seed, "dark", k)) for k in range(n_frames)]


def simulate_sparse_frames(
    cfg: CameraConfig, n_frames: int, photons_per_frame: int, seed: int, min_spacing: float = 10.0
) -> list[Frame]:
    """Frames of isolated single photons (no accidentals) for calibration runs."""
    frames = []
    for k in range(n_frames):
        rng = derive_rng(seed, "sparse", k)
        pos = sparse_positions(photons_per_frame, (cfg.ny, cfg.nx), min_spacing, rng)
        frames.append(expose(pos, cfg, rng, accidental_mean=0.0))
    return frames


def simulate_calibration(
    cfg: CameraConfig,
    seed: int,
    n_events: int = 5800,
    photons_per_frame: int = 50,
    n_dark: int = 20,
    n_mc: int = 50000,
    n_max: int = 10000,
) -> tuple[BackgroundModel, Calibration]:
    """Dark frames -> background; sparse single-photon frames -> calibration."""
    bg = estimate_background(simulate_dark_frames(cfg, n_dark, seed))
    n_frames = max(1, math.ceil(n_events / photons_per_frame))
    signals = []
    for f in simulate_sparse_frames(cfg, n_frames, photons_per_frame, seed):
        signals.extend(e.signal for e in extract_events(f, bg))
    return bg, calibrate(signals, seed, n_mc, n_max, min_events=min(1000, n_events))
