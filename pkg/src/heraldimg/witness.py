"""Angular fringe analysis and the two-basis entanglement witness.

Photon numbers are evaluated per angular bin of width ``22.5 deg / l`` with bin
``k`` centred on ``k * width``; all periods ``360 deg / l`` are folded onto one.
The witness is ``W = vis_DA + vis_RL`` with each visibility built from four
projections (trigger polarization x angular position); ``W > 1`` certifies
entanglement.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._rng import derive_rng
from ._validation import check_int, check_seed
from .camera import CameraConfig, Frame, expose, simulate_frame
from .counting import BackgroundModel, Calibration, signals_to_photons, simulate_calibration
from .exceptions import DegenerateError, ParameterError, UndefinedVisibilityError
from .modes import GridSpec, ScalarField
from .state import polarization

TRIGGERS = ("D", "A", "R", "L")
DEFAULT_BIN_DEG = 22.5
ESTIMATORS = ("projection", "minmax")


def default_bin_width(l: int) -> float:
    return DEFAULT_BIN_DEG / l


def finite_bin_factor(l: int, bin_width_deg: float | None = None) -> float:
    """Visibility of ideal ``1 + cos(2 l theta)`` fringes integrated over a bin.

    Equals ``sin(l * width) / (l * width)`` with the width in radians.
    """
    w = math.radians(default_bin_width(l) if bin_width_deg is None else bin_width_deg)
    x = l * w
    return math.sin(x) / x


def state_visibility_for(target: float, l: int, bin_width_deg: float | None = None) -> float:
    """State mixing parameter whose binned fringe visibility equals ``target``."""
    v = target / finite_bin_factor(l, bin_width_deg)
    if not 0 <= v <= 1:
        raise ParameterError(f"visibility {target} is not reachable with this binning")
    return v


@dataclass(eq=False)
class AngularHistogram:
    l: int
    bin_width: float
    counts: np.ndarray
    errors: np.ndarray
    signals: np.ndarray
    center: tuple[float, float]
    radial_window: tuple[float, float]
    label: str = ""

    @property
    def period(self) -> float:
        return 360.0 / self.l

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def bin_centers(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_width

    def index(self, angle_deg: float) -> int:
        """Bin containing ``angle_deg`` (folded)."""
        return int(math.floor((angle_deg % self.period) / self.bin_width + 0.5)) % self.n_bins

    def at(self, angle_deg: float) -> tuple[int, float]:
        i = self.index(angle_deg)
        return int(self.counts[i]), float(self.errors[i])


def _check_binning(l: int, bin_width: float) -> int:
    period = 360.0 / l
    k = period / bin_width
    if bin_width <= 0 or abs(k - round(k)) > 1e-9:
        raise ParameterError(f"bin width {bin_width} deg does not tile the period {period} deg")
    return int(round(k))


@lru_cache(maxsize=32)
def _bin_index(shape, center, radial_window, l, bin_width):
    ny, nx = shape
    x0, y0 = center
    yy, xx = np.mgrid[0:ny, 0:nx]
    dx = xx - x0
    dy = yy - y0
    r = np.hypot(dx, dy)
    theta = np.degrees(np.arctan2(dy, dx)) % 360.0
    k = _check_binning(l, bin_width)
    idx = np.floor((theta % (360.0 / l)) / bin_width + 0.5).astype(np.int64) % k
    rmin, rmax = radial_window
    mask = (r >= rmin) & (r < rmax)
    idx = np.where(mask, idx, -1)
    idx.setflags(write=False)
    return idx


def _residual_image(frames, bg: BackgroundModel) -> np.ndarray:
    if isinstance(frames, (Frame, np.ndarray)):
        frames = [frames]
    frames = list(frames)
    if not frames:
        raise ParameterError("no frames to analyse")
    return sum(bg.subtract(f) for f in frames)


def angular_bin(
    frame,
    bg: BackgroundModel,
    cal: Calibration,
    l: int,
    center: tuple[float, float] | None = None,
    radial_window: tuple[float, float] = (0.0, math.inf),
    bin_width: float | None = None,
    label: str = "",
) -> AngularHistogram:
    """Photon numbers per folded angular bin.

    ``frame`` may be a :class:`Frame`, a raw count array or a sequence of them
    (summed). Accidentals are not removed; only the readout background is.
    """
    l = check_int(l, "l", 1)
    bin_width = default_bin_width(l) if bin_width is None else float(bin_width)
    sub = _residual_image(frame, bg)
    ny, nx = sub.shape
    if center is None:
        center = (float(nx // 2), float(ny // 2))
    cx, cy = float(center[0]), float(center[1])
    if not (0 <= cx < nx and 0 <= cy < ny):
        raise ParameterError(f"center {center} lies outside the {nx}x{ny} frame")
    rmin, rmax = radial_window
    if not 0 <= rmin < rmax:
        raise ParameterError(f"invalid radial window {radial_window}")
    idx = _bin_index((ny, nx), (cx, cy), (float(rmin), float(rmax)), l, bin_width)
    k = _check_binning(l, bin_width)
    sel = idx >= 0
    signals = np.bincount(idx[sel], weights=sub[sel], minlength=k)
    n, err = signals_to_photons(signals, cal)
    return AngularHistogram(l, bin_width, n, err, signals, (cx, cy), (float(rmin), float(rmax)), label)


def intensity_centroid(frames, bg: BackgroundModel) -> tuple[float, float]:
    """Signal-weighted centroid ``(x, y)`` of the summed, background-subtracted frames.

    Negative residuals are clipped so readout noise does not pull the centre.
    """
    sub = np.clip(_residual_image(frames, bg), 0.0, None)
    total = sub.sum()
    if total <= 0:
        raise ParameterError("cannot locate the beam centre on empty frames")
    ny, nx = sub.shape
    return float(sub.sum(axis=0) @ np.arange(nx) / total), float(sub.sum(axis=1) @ np.arange(ny) / total)


def _as_list(frames) -> list:
    return [frames] if isinstance(frames, (Frame, np.ndarray)) else list(frames)


def align_gamma1(hist_d: AngularHistogram) -> float:
    """Centre of the fullest bin of the D-trigger histogram (lowest angle on ties)."""
    if hist_d.n_bins == 0 or hist_d.counts.sum() == 0:
        raise ParameterError("cannot align on an empty histogram")
    return float(hist_d.bin_centers[int(np.argmax(hist_d.counts))])


def _mc_spread(fn, values, errors, n_mc, rng) -> float:
    draws = values[None, :] + errors[None, :] * rng.standard_normal((n_mc, len(values)))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = fn(draws)
    out = out[np.isfinite(out)]
    return float(out.std(ddof=1)) if len(out) > 1 else float("nan")


def visibility(
    hist_p: AngularHistogram,
    hist_porth: AngularHistogram,
    gamma: float,
    l: int | None = None,
    estimator: str = "projection",
    n_mc: int = 20000,
    seed: int = 0,
) -> tuple[float, float]:
    """Fringe visibility of a trigger pair and its Monte-Carlo error.

    ``projection`` (default): with ``g_perp = gamma + 90 deg / l``::

        vis = [N(P, g) + N(P', g_perp) - N(P, g_perp) - N(P', g)] / (sum of the four)

    ``minmax``: per-image maxima and minima,
    ``(max_P + max_P' - min_P - min_P') / (sum of the four)``.

    Errors come from Gaussian resampling of the bin counts with their lookup errors.
    """
    if hist_p.bin_width != hist_porth.bin_width or hist_p.l != hist_porth.l:
        raise ParameterError("histograms must share their binning")
    l = hist_p.l if l is None else check_int(l, "l", 1)
    if estimator not in ESTIMATORS:
        raise ParameterError(f"estimator must be one of {ESTIMATORS}")
    rng = derive_rng(check_seed(seed), "visibility", hist_p.label, hist_porth.label)
    if estimator == "projection":
        g_perp = gamma + 90.0 / l
        idx = [hist_p.index(gamma), hist_porth.index(g_perp), hist_p.index(g_perp), hist_porth.index(gamma)]
        vals = np.array([hist_p.counts[idx[0]], hist_porth.counts[idx[1]], hist_p.counts[idx[2]], hist_porth.counts[idx[3]]], float)
        errs = np.array([hist_p.errors[idx[0]], hist_porth.errors[idx[1]], hist_p.errors[idx[2]], hist_porth.errors[idx[3]]], float)
        total = vals.sum()
        if total == 0:
            raise UndefinedVisibilityError("all four projections are empty")
        vis = (vals[0] + vals[1] - vals[2] - vals[3]) / total

        def fn(x):
            return (x[:, 0] + x[:, 1] - x[:, 2] - x[:, 3]) / x.sum(axis=1)

        return float(vis), _mc_spread(fn, vals, errs, n_mc, rng)

    k = hist_p.n_bins
    vals = np.concatenate([hist_p.counts, hist_porth.counts]).astype(float)
    errs = np.concatenate([hist_p.errors, hist_porth.errors])

    def fn(x):
        a, b = x[:, :k], x[:, k:]
        mx = a.max(axis=1) + b.max(axis=1)
        mn = a.min(axis=1) + b.min(axis=1)
        return (mx - mn) / (mx + mn)

    denom = hist_p.counts.max() + hist_porth.counts.max() + hist_p.counts.min() + hist_porth.counts.min()
    if denom == 0:
        raise UndefinedVisibilityError("both histograms are empty")
    return float(fn(vals[None, :])[0]), _mc_spread(fn, vals, errs, n_mc, rng)


@dataclass(eq=False)
class WitnessReport:
    W: float
    sigma_W: float
    vis: dict
    gamma1_deg: float | None = None
    gamma2_deg: float | None = None
    l: int | None = None
    photons_per_image: float | None = None
    photon_totals: dict = field(default_factory=dict)
    seed: int | None = None
    config_hash: str | None = None
    estimator: str = "projection"
    histograms: dict = field(default_factory=dict, repr=False)

    @property
    def violation_sigmas(self) -> float:
        if self.sigma_W > 0:
            return (self.W - 1.0) / self.sigma_W
        return math.inf if self.W > 1 else -math.inf if self.W < 1 else 0.0

    @property
    def entangled(self) -> bool:
        return self.W > 1.0

    def to_dict(self) -> dict:
        vs = self.violation_sigmas
        return {
            "W": self.W,
            "sigma_W": self.sigma_W,
            "violation_sigmas": vs if math.isfinite(vs) else None,
            "entangled": self.entangled,
            "vis": self.vis,
            "gamma1_deg": self.gamma1_deg,
            "gamma2_deg": self.gamma2_deg,
            "l": self.l,
            "photons_per_image": self.photons_per_image,
            "photon_totals": self.photon_totals,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "estimator": self.estimator,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_bins_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trigger", "bin_center_deg", "n", "err", "signal"])
            for trig in sorted(self.histograms):
                h = self.histograms[trig]
                for c, n, e, s in zip(h.bin_centers, h.counts, h.errors, h.signals):
                    w.writerow([trig, f"{c:.6f}", int(n), f"{e:.6f}", f"{s:.3f}"])


def compute_witness(vis_da: tuple[float, float], vis_rl: tuple[float, float], **report_fields) -> WitnessReport:
    """``W = vis_DA + vis_RL`` with the errors added in quadrature."""
    (v1, e1), (v2, e2) = vis_da, vis_rl
    w = v1 + v2
    sw = math.hypot(e1, e2)
    vis = {"DA": {"v": v1, "err": e1}, "RL": {"v": v2, "err": e2}}
    return WitnessReport(w, sw, vis, **report_fields)


class WitnessAnalyzer(BaseEstimator):
    """Estimator form of the analysis: ``fit`` on the four trigger images.

    Parameters
    ----------
    l : int
        OAM order of the ``LG_{+-l}`` superposition.
    bin_width : float, optional
        Angular bin in degrees; default ``22.5 / l``. Must divide ``45 / l`` so
        that both measurement bases sit on bin centres.
    radial_window : (float, float), optional
        Inner and outer radius in pixels; default no cut.
    center : (float, float) or "auto", optional
        Rotation centre in pixels; default frame centre. ``"auto"`` uses the
        intensity centroid of all four trigger images, whose sum is
        rotationally symmetric about the beam axis.
    estimator : {"projection", "minmax"}
    n_mc : int
        Resampling draws for the visibility errors.
    seed : int
    """

    def __init__(self, l=1, bin_width=None, radial_window=None, center=None, estimator="projection", n_mc=20000, seed=0):
        self.l = l
        self.bin_width = bin_width
        self.radial_window = radial_window
        self.center = center
        self.estimator = estimator
        self.n_mc = n_mc
        self.seed = seed

    def fit(self, images: dict, background: BackgroundModel, calibration: Calibration, **report_fields):
        """``images`` maps "D", "A", "R", "L" to a frame (or list of frames)."""
        missing = [t for t in TRIGGERS if t not in images]
        if missing:
            raise ParameterError(f"missing trigger images: {missing}")
        if self.bin_width is not None:
            # gamma2 = gamma1 + 45/l deg must land on a bin centre
            k = 45.0 / self.l / self.bin_width
            if abs(k - round(k)) > 1e-9 or round(k) < 1:
                raise ParameterError(f"bin width {self.bin_width} deg must divide 45/l = {45.0 / self.l} deg")
        window = (0.0, math.inf) if self.radial_window is None else tuple(self.radial_window)
        center = self.center
        if isinstance(center, str):
            if center != "auto":
                raise ParameterError(f"center must be a pair or 'auto', got {center!r}")
            center = intensity_centroid([f for t in TRIGGERS for f in _as_list(images[t])], background)
        hists = {
            t: angular_bin(images[t], background, calibration, self.l, center, window, self.bin_width, label=t)
            for t in TRIGGERS
        }
        g1 = align_gamma1(hists["D"])
        g2 = (g1 + 45.0 / self.l) % (360.0 / self.l)
        v_da = visibility(hists["D"], hists["A"], g1, self.l, self.estimator, self.n_mc, self.seed)
        v_rl = visibility(hists["R"], hists["L"], g2, self.l, self.estimator, self.n_mc, self.seed)
        report = compute_witness(
            v_da,
            v_rl,
            gamma1_deg=g1,
            gamma2_deg=g2,
            l=self.l,
            seed=self.seed,
            estimator=self.estimator,
            photon_totals={t: int(h.counts.sum()) for t, h in hists.items()},
            histograms=hists,
            **report_fields,
        )
        self.histograms_ = hists
        self.report_ = report
        return self

    def score(self, images=None, background=None, calibration=None) -> float:
        check_is_fitted(self, "report_")
        return self.report_.W


def default_radial_window(waist: float) -> tuple[float, float]:
    return (0.3 * waist, 3.0 * waist)


def simulate_trigger_images(
    source, cfg: CameraConfig, photons_per_image: float, seed: int, triggers=TRIGGERS, frames: int = 1
) -> dict:
    """Heralded frames per trigger; the photon budget scales with the herald probability.

    ``photons_per_image`` is the expected count for a herald probability of 1/2
    (every trigger of a maximally entangled state), i.e. a fixed acquisition time.
    """
    grid = GridSpec.for_camera(cfg.nx, cfg.ny)
    out = {}
    for ti, t in enumerate(triggers):
        trig = polarization(t) if isinstance(t, str) else t
        try:
            prob, dens = source.heralded_density(trig, grid)
        except DegenerateError:
            # trigger never fires: readout-only frames
            prob = 0.0
            out[t] = [expose(np.empty((0, 2)), cfg, derive_rng(seed, "trigger", t, k), 0.0) for k in range(frames)]
        else:
            n_exp = photons_per_image * 2.0 * prob
            out[t] = [simulate_frame(dens, n_exp, cfg, derive_rng(seed, "trigger", t, k)) for k in range(frames)]
        for f in out[t]:
            f.meta.update(trigger=t, herald_probability=prob)
    return out


def run_experiment(
    state,
    cfg: CameraConfig,
    photons_per_image: float,
    seed: int,
    *,
    l: int | None = None,
    calibration: Calibration | None = None,
    background: BackgroundModel | None = None,
    radial_window: tuple[float, float] | None = None,
    bin_width: float | None = None,
    estimator: str = "projection",
    n_mc: int = 20000,
    calibration_n_max: int = 2000,
) -> WitnessReport:
    """Simulate the D/A/R/L heralded images of ``state`` and evaluate the witness.

    ``state`` is a :class:`~heraldimg.state.HybridState` built on ``LG_{+l}`` /
    ``LG_{-l}`` or a :class:`~heraldimg.state.SeparableState`. Background and
    calibration are simulated from ``cfg`` unless supplied.
    """
    seed = check_seed(seed)
    oam = getattr(state, "oam", None)
    if oam is None:
        raise ParameterError("run_experiment needs spm1 = LG_{+l} and spm2 = LG_{-l}")
    l = oam if l is None else check_int(l, "l", 1)
    if background is None or calibration is None:
        bg_sim, cal_sim = simulate_calibration(cfg, seed, n_max=calibration_n_max)
        background = background or bg_sim
        calibration = calibration or cal_sim
    window = default_radial_window(state.waist) if radial_window is None else radial_window
    images = simulate_trigger_images(state, cfg, photons_per_image, seed)
    an = WitnessAnalyzer(l, bin_width, window, None, estimator, n_mc, seed)
    an.fit(images, background, calibration, photons_per_image=photons_per_image, config_hash=experiment_hash(state, cfg, photons_per_image))
    return an.report_


def experiment_hash(state, cfg: CameraConfig, photons_per_image: float) -> str:
    blob = json.dumps({"state": state.to_dict(), "camera": cfg.to_dict(), "photons": photons_per_image}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def angular_profile(
    image, center: tuple[float, float] | None = None, radial_window: tuple[float, float] | None = None,
    n_angles: int = 720, n_radii: int = 64,
) -> np.ndarray:
    """Radially integrated intensity versus angle, sampled by bilinear interpolation.

    Sample ``k`` is at ``k * 360 / n_angles`` degrees.
    """
    img = image.values if isinstance(image, ScalarField) else np.asarray(image, dtype=float)
    ny, nx = img.shape
    if center is None:
        center = (nx // 2, ny // 2)
    if radial_window is None:
        radial_window = (1.0, 0.45 * min(nx, ny))
    theta = np.radians(np.arange(n_angles) * 360.0 / n_angles)
    radii = np.linspace(radial_window[0], radial_window[1], n_radii)
    xs = center[0] + radii[:, None] * np.cos(theta)[None, :]
    ys = center[1] + radii[:, None] * np.sin(theta)[None, :]
    vals = ndimage.map_coordinates(img, [ys.ravel(), xs.ravel()], order=1, mode="constant").reshape(xs.shape)
    return (vals * radii[:, None]).sum(axis=0)


def measure_rotation(profile_a: np.ndarray, profile_b: np.ndarray, upsample: int = 16, period: float = 360.0) -> float:
    """Angle (degrees) by which ``profile_b`` is ``profile_a`` rotated.

    Peak of the circular cross-correlation, refined by Fourier upsampling and a
    parabolic fit. A pattern with ``period``-degree symmetry only defines the
    rotation modulo ``period``; the result lies in ``(-period/2, period/2]``.
    """
    a = np.asarray(profile_a, float) - np.mean(profile_a)
    b = np.asarray(profile_b, float) - np.mean(profile_b)
    n = len(a)
    if len(b) != n:
        raise ParameterError("profiles must have equal length")
    if not 0 < period <= 360.0:
        raise ParameterError("period must lie in (0, 360]")
    spec = np.conj(np.fft.rfft(a)) * np.fft.rfft(b)
    m = n * upsample
    xc = np.fft.irfft(spec, m)
    k = int(np.argmax(xc))
    y0, y1, y2 = xc[k - 1], xc[k], xc[(k + 1) % m]
    denom = y0 - 2 * y1 + y2
    frac = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
    shift = ((k + frac) * 360.0 / m) % period
    return shift - period if shift > period / 2.0 else shift


def cumulative_rotation(images, center=None, radial_window=None, period: float = 360.0) -> np.ndarray:
    """Accumulated pattern rotation (degrees) along a sequence of images.

    Consecutive images must differ by less than ``period / 2``; for a
    ``2 l``-petal pattern pass ``period = 180 / l``.
    """
    profiles = [angular_profile(im, center, radial_window) for im in images]
    steps = [measure_rotation(p, q, period=period) for p, q in zip(profiles[:-1], profiles[1:])]
    return np.concatenate([[0.0], np.cumsum(steps)])
