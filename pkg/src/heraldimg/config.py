"""Experiment configuration: a strict JSON schema mapped onto dataclasses.

Sections are ``state``, ``camera``, ``run``, ``analysis``, ``scan`` and
``output``. Every section is optional; unknown keys anywhere are an error.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ._validation import check_int, check_positive, check_seed
from .camera import CameraConfig
from .exceptions import FormatError, ParameterError
from .modes import ModeSpec, default_waist
from .state import NAMED, HybridState, PolarizationState, SeparableState

STATE_KINDS = ("entangled", "separable")
RUN_MODES = ("heralded", "dark", "sparse")
SCAN_PATHS = ("equator", "meridian")


def _strict(cls, d, section: str) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ParameterError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(d) - known)
    if extra:
        raise ParameterError(f"unknown keys in {section!r}: {extra}")
    return dict(d)


@dataclass
class StateSection:
    """Source description.

    ``indices`` are those of ``spm1``; ``indices2`` default to the partner mode
    (``LG_{-l,p}``, ``HG_{m,n}``, or the opposite-parity IG mode).
    ``waist`` in pixels; ``None`` picks :func:`~heraldimg.modes.default_waist`.
    ``kind = "separable"`` uses ``a, b, phi1, c, d, phi2`` instead.
    """

    kind: str = "entangled"
    family: str = "LG"
    indices: list = field(default_factory=lambda: [1, 0])
    indices2: list | None = None
    parity: str = "even"
    ellipticity: float = 0.0
    alpha: float = math.sqrt(0.5)
    beta: float | None = None
    phi: float = 0.0
    waist: float | None = None
    visibility: float = 1.0
    separable: dict | None = None

    def __post_init__(self):
        if self.kind not in STATE_KINDS:
            raise ParameterError(f"state.kind must be one of {STATE_KINDS}")
        self.family = str(self.family).upper()
        if self.waist is not None:
            check_positive(self.waist, "state.waist")
        if self.kind == "separable":
            if self.family != "LG":
                raise ParameterError("separable states are built on LG_{+-l}")
            allowed = {"a", "b", "phi1", "c", "d", "phi2"}
            extra = sorted(set(self.separable or {}) - allowed)
            if extra:
                raise ParameterError(f"unknown keys in 'state.separable': {extra}")

    def modes(self, nx: int) -> tuple[ModeSpec, ModeSpec]:
        fam, idx = self.family, tuple(int(i) for i in self.indices)
        if len(idx) != 2:
            raise ParameterError("state.indices must have two entries")
        w = self.waist
        if w is None:
            w = default_waist(nx, abs(idx[0]) if fam == "LG" else 1)
        if fam == "LG":
            m1 = ModeSpec.lg(idx[0], idx[1], w)
            idx2 = (-idx[0], idx[1]) if self.indices2 is None else tuple(self.indices2)
            return m1, ModeSpec.lg(int(idx2[0]), int(idx2[1]), w)
        if fam == "HG":
            m1 = ModeSpec.hg(idx[0], idx[1], w)
            idx2 = (idx[1], idx[0]) if self.indices2 is None else tuple(self.indices2)
            return m1, ModeSpec.hg(int(idx2[0]), int(idx2[1]), w)
        if fam == "IG":
            m1 = ModeSpec.ig(idx[0], idx[1], self.parity, self.ellipticity, w)
            if self.indices2 is None:
                other = "odd" if self.parity == "even" else "even"
                return m1, ModeSpec.ig(idx[0], idx[1], other, self.ellipticity, w)
            return m1, ModeSpec.ig(int(self.indices2[0]), int(self.indices2[1]), self.parity, self.ellipticity, w)
        raise ParameterError(f"unknown mode family {self.family!r}")

    def build(self, nx: int):
        """The configured :class:`HybridState` or :class:`SeparableState`."""
        m1, m2 = self.modes(nx)
        if self.kind == "separable":
            l = m1.indices[0]
            if l < 1 or m2.indices[0] != -l:
                raise ParameterError("separable states need indices [l, 0] with l >= 1")
            s = {"a": 1.0, "b": 0.0, "phi1": 0.0, "c": math.sqrt(0.5), "d": math.sqrt(0.5), "phi2": 0.0}
            s.update(self.separable or {})
            return SeparableState(s["a"], s["b"], s["phi1"], s["c"], s["d"], s["phi2"], l, m1.waist)
        beta = math.sqrt(max(0.0, 1.0 - self.alpha**2)) if self.beta is None else self.beta
        return HybridState(self.alpha, beta, self.phi, m1, m2, self.visibility)


@dataclass
class RunSection:
    photons_per_image: float = 5800.0
    frames: int = 1
    seed: int | None = None
    mode: str = "heralded"
    triggers: list = field(default_factory=lambda: ["D", "A", "R", "L"])
    n_background: int = 20
    sparse_photons: int = 50
    sparse_spacing: float = 10.0

    def __post_init__(self):
        check_positive(self.photons_per_image, "run.photons_per_image")
        check_int(self.frames, "run.frames", 1)
        check_int(self.n_background, "run.n_background", 2)
        check_int(self.sparse_photons, "run.sparse_photons", 1)
        check_positive(self.sparse_spacing, "run.sparse_spacing")
        if self.seed is not None:
            self.seed = check_seed(self.seed)
        if self.mode not in RUN_MODES:
            raise ParameterError(f"run.mode must be one of {RUN_MODES}")
        for t in self.triggers:
            if t not in NAMED:
                raise ParameterError(f"unknown trigger {t!r}; expected one of {sorted(NAMED)}")


@dataclass
class AnalysisSection:
    """``l = None`` takes the OAM order from the state; ``radial_window = None``
    uses (0.3 w, 3 w)."""

    l: int | None = None
    bin_width: float | None = None
    radial_window: list | None = None
    center: list | str | None = None
    estimator: str = "projection"
    n_mc: int = 20000
    calibration_n_mc: int = 50000
    calibration_n_max: int = 10000

    def __post_init__(self):
        if self.l is not None:
            check_int(self.l, "analysis.l", 1)
        if self.bin_width is not None:
            check_positive(self.bin_width, "analysis.bin_width")
        if self.radial_window is not None:
            if len(self.radial_window) != 2 or not 0 <= self.radial_window[0] < self.radial_window[1]:
                raise ParameterError("analysis.radial_window must be [r_min, r_max] with 0 <= r_min < r_max")
        if self.center is not None and self.center != "auto" and (isinstance(self.center, str) or len(self.center) != 2):
            raise ParameterError("analysis.center must be [x0, y0] or \"auto\"")
        if self.estimator not in ("projection", "minmax"):
            raise ParameterError("analysis.estimator must be 'projection' or 'minmax'")
        check_int(self.n_mc, "analysis.n_mc", 2)
        check_int(self.calibration_n_mc, "analysis.calibration_n_mc", 2)
        check_int(self.calibration_n_max, "analysis.calibration_n_max", 1)


@dataclass
class ScanSection:
    """``path`` is ``"equator"``, ``"meridian"`` or a list whose entries are
    polarization names or ``[polar, azimuth]`` Bloch angles in radians."""

    path: str | list = "equator"
    steps: int = 36
    photons_per_image: float | None = None

    def __post_init__(self):
        check_int(self.steps, "scan.steps", 1)
        if isinstance(self.path, str):
            if self.path not in SCAN_PATHS:
                raise ParameterError(f"scan.path must be one of {SCAN_PATHS} or a list")
        elif not self.path:
            raise ParameterError("scan.path list is empty")
        else:
            self.triggers()
        if self.photons_per_image is not None:
            check_positive(self.photons_per_image, "scan.photons_per_image")

    def triggers(self) -> list[PolarizationState] | None:
        """Explicit trigger list, or ``None`` for the named paths."""
        if isinstance(self.path, str):
            return None
        out = []
        for i, p in enumerate(self.path):
            if isinstance(p, str):
                if p not in NAMED:
                    raise ParameterError(f"unknown polarization {p!r} in scan.path")
                out.append(NAMED[p])
            elif isinstance(p, (list, tuple)) and len(p) == 2:
                out.append(PolarizationState.from_bloch(float(p[0]), float(p[1]), f"pt{i:03d}"))
            else:
                raise ParameterError(f"scan.path entry {p!r} is neither a name nor [polar, azimuth]")
        return out


@dataclass
class OutputSection:
    dir: str = "out"
    bins_csv: bool = True


@dataclass
class ExperimentConfig:
    state: StateSection = field(default_factory=StateSection)
    camera: CameraConfig = field(default_factory=CameraConfig)
    run: RunSection = field(default_factory=RunSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    scan: ScanSection = field(default_factory=ScanSection)
    output: OutputSection = field(default_factory=OutputSection)

    SECTIONS = ("state", "camera", "run", "analysis", "scan", "output")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ParameterError("configuration must be a JSON object")
        extra = sorted(set(d) - set(cls.SECTIONS))
        if extra:
            raise ParameterError(f"unknown configuration sections: {extra}")
        try:
            return cls(
                state=StateSection(**_strict(StateSection, d.get("state"), "state")),
                camera=CameraConfig.from_dict(d.get("camera") or {}),
                run=RunSection(**_strict(RunSection, d.get("run"), "run")),
                analysis=AnalysisSection(**_strict(AnalysisSection, d.get("analysis"), "analysis")),
                scan=ScanSection(**_strict(ScanSection, d.get("scan"), "scan")),
                output=OutputSection(**_strict(OutputSection, d.get("output"), "output")),
            )
        except TypeError as exc:
            raise ParameterError(f"invalid configuration value: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "state": asdict(self.state),
            "camera": self.camera.to_dict(),
            "run": asdict(self.run),
            "analysis": asdict(self.analysis),
            "scan": asdict(self.scan),
            "output": asdict(self.output),
        }

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """New config with dotted-key overrides (``{"run.seed": 3}``) applied."""
        d = copy.deepcopy(self.to_dict())
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in self.SECTIONS or not name:
                raise ParameterError(f"override key {key!r} must look like 'section.field'")
            d[section][name] = value
        return type(self).from_dict(d)

    def config_hash(self) -> str:
        """Hash of everything that affects results (output paths excluded)."""
        from .io import content_hash

        d = self.to_dict()
        del d["output"]
        return content_hash(d)

    def build_state(self):
        return self.state.build(self.camera.nx)

    @property
    def oam(self) -> int:
        if self.analysis.l is not None:
            return self.analysis.l
        l = getattr(self.build_state(), "oam", None)
        if l is None:
            raise ParameterError("analysis.l is required when the state is not an LG_{+-l} pair")
        return l
