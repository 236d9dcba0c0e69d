"""Transverse mode synthesis on a pixel grid.

Fields are sampled at pixel centres and normalized by the discrete sum
``sum(|u|**2) * dA == 1``. Lengths are in arbitrary units shared by the grid
``extent`` and the beam waist; the camera pipeline uses pixels for both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import eval_genlaguerre, eval_hermite, gammaln

from ._validation import check_int, check_positive
from .exceptions import DegenerateError, NumericError, ParameterError
from .ince import check_ince_indices, ince_polynomial, ince_polynomial_imag

FAMILIES = ("LG", "HG", "IG")


@dataclass(frozen=True)
class GridSpec:
    """Sampling grid of the camera plane.

    ``extent`` is the half-width along x; pixels are square so the half-height
    is ``extent * ny / nx``. ``center`` is the pixel index (column, row) of the
    optical axis and defaults to ``(nx // 2, ny // 2)`` so that one pixel sits
    exactly on the axis.
    """

    nx: int = 1024
    ny: int = 1024
    extent: float = 512.0
    center: tuple[float, float] | None = None

    def __post_init__(self):
        check_int(self.nx, "nx", 16)
        check_int(self.ny, "ny", 16)
        check_positive(self.extent, "extent")
        if self.center is not None:
            cx, cy = self.center
            object.__setattr__(self, "center", (float(cx), float(cy)))

    @property
    def cx(self) -> float:
        return float(self.nx // 2) if self.center is None else self.center[0]

    @property
    def cy(self) -> float:
        return float(self.ny // 2) if self.center is None else self.center[1]

    @property
    def dx(self) -> float:
        return 2.0 * self.extent / self.nx

    @property
    def pixel_area(self) -> float:
        return self.dx * self.dx

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical ``(X, Y)`` coordinate arrays of shape ``(ny, nx)``."""
        return _coords(self)

    def polar(self) -> tuple[np.ndarray, np.ndarray]:
        """``(r, theta)`` arrays; ``theta = atan2(y, x)`` in radians."""
        return _polar(self)

    @classmethod
    def for_camera(cls, nx: int = 1024, ny: int = 1024) -> "GridSpec":
        """Grid whose length unit is one camera pixel."""
        return cls(nx=nx, ny=ny, extent=nx / 2.0)


@lru_cache(maxsize=8)
def _coords(grid: GridSpec):
    x = (np.arange(grid.nx) - grid.cx) * grid.dx
    y = (np.arange(grid.ny) - grid.cy) * grid.dx
    X, Y = np.meshgrid(x, y)
    X.setflags(write=False)
    Y.setflags(write=False)
    return X, Y


@lru_cache(maxsize=8)
def _polar(grid: GridSpec):
    X, Y = _coords(grid)
    r = np.hypot(X, Y)
    t = np.arctan2(Y, X)
    r.setflags(write=False)
    t.setflags(write=False)
    return r, t


@dataclass(frozen=True)
class ModeSpec:
    """Recipe for one spatial mode.

    ``indices`` holds ``(l, p)`` for LG, ``(n, m)`` for HG and ``(p, m)`` for IG.
    ``parity`` and ``ellipticity`` only apply to IG modes.
    """

    family: str
    indices: tuple[int, int]
    waist: float = 1.0
    parity: str = "even"
    ellipticity: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown mode family {self.family!r}")
        if len(self.indices) != 2:
            raise ParameterError("mode indices must be a pair")
        a, b = (check_int(i, "mode index") for i in self.indices)
        object.__setattr__(self, "indices", (a, b))
        check_positive(self.waist, "waist")
        if self.family == "LG":
            check_int(b, "p", 0)
        elif self.family == "HG":
            check_int(a, "n", 0)
            check_int(b, "m", 0)
        else:
            check_ince_indices(a, b, self.parity)
            if not self.ellipticity >= 0 or not math.isfinite(self.ellipticity):
                raise ParameterError(f"ellipticity must be finite and >= 0, got {self.ellipticity}")

    @classmethod
    def lg(cls, l: int, p: int = 0, waist: float = 1.0) -> "ModeSpec":
        return cls("LG", (l, p), waist)

    @classmethod
    def hg(cls, n: int, m: int, waist: float = 1.0) -> "ModeSpec":
        return cls("HG", (n, m), waist)

    @classmethod
    def ig(cls, p: int, m: int, parity: str = "even", ellipticity: float = 1.0, waist: float = 1.0) -> "ModeSpec":
        return cls("IG", (p, m), waist, parity, float(ellipticity))

    def to_dict(self) -> dict:
        d = {"family": self.family, "indices": list(self.indices), "waist": self.waist}
        if self.family == "IG":
            d.update(parity=self.parity, ellipticity=self.ellipticity)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModeSpec":
        allowed = {"family", "indices", "waist", "parity", "ellipticity"}
        extra = set(d) - allowed
        if extra:
            raise ParameterError(f"unknown mode keys: {sorted(extra)}")
        if "family" not in d or "indices" not in d:
            raise ParameterError("mode needs 'family' and 'indices'")
        return cls(
            d["family"],
            tuple(d["indices"]),
            d.get("waist", 1.0),
            d.get("parity", "even"),
            float(d.get("ellipticity", 0.0)),
        )


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: GridSpec
    amplitudes: np.ndarray
    normalized: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=np.complex128)
        if a.shape != self.grid.shape:
            raise ParameterError(f"amplitude shape {a.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericError("field has non-finite amplitudes")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.pixel_area)


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray
    density: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ParameterError(f"value shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ParameterError("scalar field values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def total(self) -> float:
        return float(self.values.sum() * self.grid.pixel_area)


def _normalized(grid: GridSpec, u: np.ndarray, meta: dict) -> ComplexField:
    nrm = np.sum(np.abs(u) ** 2) * grid.pixel_area
    if not np.isfinite(nrm):
        raise NumericError("field norm overflowed")
    if nrm <= 0:
        raise DegenerateError("field vanishes on the grid; enlarge the grid or the waist")
    return ComplexField(grid, u / math.sqrt(nrm), True, meta)


def lg_field(l: int, p: int, w: float, grid: GridSpec) -> ComplexField:
    """Laguerre-Gauss mode :math:`LG_{l,p}` at the beam waist.

    The radial prefactor is evaluated in log space so that orders up to
    ``|l| = 100`` neither overflow nor underflow.
    """
    l = check_int(l, "l")
    p = check_int(p, "p", 0)
    w = check_positive(w, "w")
    r, theta = grid.polar()
    al = abs(l)
    rho2 = 2.0 * (r / w) ** 2
    log_norm = 0.5 * (math.log(2.0 / math.pi) + gammaln(p + 1) - gammaln(p + al + 1)) - math.log(w)
    if al == 0:
        amp = np.exp(log_norm - rho2 / 2.0)
    else:
        with np.errstate(divide="ignore"):
            amp = np.exp(log_norm + 0.5 * al * np.log(rho2) - rho2 / 2.0)
    if p > 0:
        amp = amp * eval_genlaguerre(p, al, rho2)
    u = amp * np.exp(1j * l * theta)
    return _normalized(grid, u, {"mode": ModeSpec.lg(l, p, w).to_dict()})


def hg_field(n: int, m: int, w: float, grid: GridSpec) -> ComplexField:
    """Hermite-Gauss mode with ``n`` nodes along x and ``m`` along y."""
    n = check_int(n, "n", 0)
    m = check_int(m, "m", 0)
    w = check_positive(w, "w")
    X, Y = grid.coords()
    s = math.sqrt(2.0) / w
    hx = eval_hermite(n, s * X[0])
    hy = eval_hermite(m, s * Y[:, 0])
    gx = np.exp(-(X[0] / w) ** 2)
    gy = np.exp(-(Y[:, 0] / w) ** 2)
    u = np.outer(hy * gy, hx * gx).astype(np.complex128)
    return _normalized(grid, u, {"mode": ModeSpec.hg(n, m, w).to_dict()})


def helical_hg_field(n: int, m: int, w: float, grid: GridSpec) -> ComplexField:
    """``(HG_nm + i HG_mn) / sqrt(2)``."""
    return superpose(1.0, hg_field(n, m, w, grid), 1j, hg_field(m, n, w, grid))


def elliptic_coords(grid: GridSpec, semifocal: float) -> tuple[np.ndarray, np.ndarray]:
    """Elliptic coordinates ``(xi, eta)`` with ``x + i y = f cosh(xi + i eta)``."""
    X, Y = grid.coords()
    zeta = np.arccosh((X + 1j * Y) / semifocal)
    return zeta.real, zeta.imag


def ig_field(p: int, m: int, parity: str, eps: float, w: float, grid: GridSpec) -> ComplexField:
    """Ince-Gauss mode at the beam waist.

    ``u = C(i xi) C(eta) exp(-r**2 / w**2)`` (sine series for odd parity) on
    elliptic coordinates with semifocal distance ``sqrt(eps / 2) * w``. At
    ``eps == 0`` the coordinates degenerate and the Laguerre-Gauss limit is
    returned instead.
    """
    p = check_int(p, "p", 0)
    m = check_int(m, "m", 0)
    check_ince_indices(p, m, parity)
    w = check_positive(w, "w")
    if not eps >= 0 or not math.isfinite(eps):
        raise ParameterError(f"ellipticity must be finite and >= 0, got {eps}")
    meta = {"mode": ModeSpec.ig(p, m, parity, eps, w).to_dict()}
    if eps == 0:
        u = ig_lg_limit(p, m, parity, w, grid).amplitudes
        return _normalized(grid, np.array(u), meta)
    f = math.sqrt(eps / 2.0) * w
    xi, eta = elliptic_coords(grid, f)
    r, _ = grid.polar()
    with np.errstate(over="ignore", invalid="ignore"):
        u = ince_polynomial_imag(xi, p, m, parity, eps) * ince_polynomial(eta, p, m, parity, eps)
        u = u * np.exp(-(r / w) ** 2)
    if not np.all(np.isfinite(u)):
        raise NumericError("Ince-Gauss evaluation overflowed; reduce p or increase eps")
    return _normalized(grid, u.astype(np.complex128), meta)


def helical_ig_field(p: int, m: int, eps: float, w: float, grid: GridSpec) -> ComplexField:
    """``IG^e + i IG^o`` for the same ``(p, m)``, renormalized."""
    return superpose(1.0, ig_field(p, m, "even", eps, w, grid), 1j, ig_field(p, m, "odd", eps, w, grid))


def ig_lg_limit(p: int, m: int, parity: str, w: float, grid: GridSpec) -> ComplexField:
    """Real LG combination approached by ``IG_{p,m}`` as the ellipticity goes to 0."""
    check_ince_indices(p, m, parity)
    radial = (p - m) // 2
    if m == 0:
        return lg_field(0, radial, w, grid)
    plus = lg_field(m, radial, w, grid)
    minus = lg_field(-m, radial, w, grid)
    if parity == "even":
        return superpose(1.0, plus, 1.0, minus)
    return superpose(-1j, plus, 1j, minus)


def ig_hg_limit(p: int, m: int, parity: str, w: float, grid: GridSpec) -> ComplexField:
    """HG mode approached by ``IG_{p,m}`` as the ellipticity grows without bound."""
    check_ince_indices(p, m, parity)
    if parity == "even":
        return hg_field(m, p - m, w, grid)
    return hg_field(m - 1, p - m + 1, w, grid)


def mode_field(spec: ModeSpec, grid: GridSpec) -> ComplexField:
    """Field for a :class:`ModeSpec`; results are cached per (spec, grid)."""
    return _mode_field_cached(spec, grid)


@lru_cache(maxsize=16)
def _mode_field_cached(spec: ModeSpec, grid: GridSpec) -> ComplexField:
    a, b = spec.indices
    if spec.family == "LG":
        return lg_field(a, b, spec.waist, grid)
    if spec.family == "HG":
        return hg_field(a, b, spec.waist, grid)
    return ig_field(a, b, spec.parity, spec.ellipticity, spec.waist, grid)


def superpose(c1: complex, f1: ComplexField, c2: complex, f2: ComplexField) -> ComplexField:
    """Renormalized ``c1 * f1 + c2 * f2``.

    When ``|c1| == |c2|`` the relative phase ``arg(c2 / c1)`` is stored in
    ``meta["relative_phase"]``.
    """
    if f1.grid != f2.grid:
        raise ParameterError("cannot superpose fields on different grids")
    c1 = complex(c1)
    c2 = complex(c2)
    u = c1 * f1.amplitudes + c2 * f2.amplitudes
    meta = {"components": [f1.meta.get("mode"), f2.meta.get("mode")]}
    if c1 != 0 and math.isclose(abs(c1), abs(c2), rel_tol=1e-12):
        meta["relative_phase"] = float(np.angle(c2 / c1))
    if c2 == 0:
        meta = dict(f1.meta)
    try:
        return _normalized(f1.grid, u, meta)
    except DegenerateError as exc:
        raise DegenerateError("superposition vanishes identically") from exc


def intensity(f: ComplexField) -> ScalarField:
    """Probability density ``|u|**2`` per unit area."""
    v = np.abs(f.amplitudes) ** 2
    if not f.normalized:
        v = v / (v.sum() * f.grid.pixel_area)
    return ScalarField(f.grid, v, True, dict(f.meta))


def overlap(f1: ComplexField, f2: ComplexField) -> complex:
    """Discrete inner product ``sum(conj(u1) * u2) * dA``."""
    if f1.grid != f2.grid:
        raise ParameterError("overlap needs fields on the same grid")
    return complex(np.vdot(f1.amplitudes, f2.amplitudes) * f1.grid.pixel_area)


def expected_rotation(l: int, dphi: float) -> float:
    """Rotation in degrees of the ``LG_{+l} + e^{i dphi} LG_{-l}`` petals."""
    l = check_int(l, "l", 1)
    return math.degrees(dphi / (2.0 * l))


def default_waist(nx: int, l: int = 1) -> float:
    """Waist (in pixels) for an ``LG_l`` donut on an ``nx``-wide frame.

    The waist is ``nx * sqrt(2) / 8`` (ring diameter ``nx / 4`` at ``l = 1``)
    unless that would push the ring radius ``w * sqrt(l / 2)`` beyond ``nx / 4``.
    """
    l = max(abs(int(l)), 1)
    return min(nx * math.sqrt(2.0) / 8.0, (nx / 4.0) / math.sqrt(l / 2.0))
