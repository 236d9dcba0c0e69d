"""Hybrid polarization/spatial-mode two-photon states and trigger heralding.

Polarization convention (Jones vectors in the H/V basis)::

    D = (H + V)/sqrt2    A = (H - V)/sqrt2
    R = (H - iV)/sqrt2   L = (H + iV)/sqrt2

With this choice a trigger moving D -> R -> A -> L advances the relative phase
of the heralded mode superposition by +pi/2 per step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import modes
from ._validation import check_int
from .exceptions import DegenerateError, ParameterError
from .modes import ComplexField, GridSpec, ModeSpec, ScalarField

MIN_PROBABILITY = 1e-12
_SQ2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class PolarizationState:
    c_h: complex
    c_v: complex
    label: str = ""

    def __post_init__(self):
        ch, cv = complex(self.c_h), complex(self.c_v)
        n2 = abs(ch) ** 2 + abs(cv) ** 2
        if not math.isfinite(n2) or n2 == 0:
            raise ParameterError("Jones vector must be finite and non-zero")
        if abs(n2 - 1.0) > 1e-12:
            raise ParameterError(f"Jones vector not normalized: |c_H|^2 + |c_V|^2 = {n2}")
        object.__setattr__(self, "c_h", ch)
        object.__setattr__(self, "c_v", cv)

    @classmethod
    def from_jones(cls, c_h: complex, c_v: complex, label: str = "") -> "PolarizationState":
        """Normalizing constructor."""
        n = math.sqrt(abs(complex(c_h)) ** 2 + abs(complex(c_v)) ** 2)
        if n == 0:
            raise ParameterError("zero Jones vector")
        return cls(complex(c_h) / n, complex(c_v) / n, label)

    @classmethod
    def from_bloch(cls, polar: float, azimuth: float, label: str = "") -> "PolarizationState":
        """Point on the Poincare sphere; ``polar=0`` is H, equator at ``polar=pi/2``.

        ``azimuth`` runs D (0) -> R (pi/2) -> A (pi) -> L (3pi/2).
        """
        return cls(math.cos(polar / 2.0), math.sin(polar / 2.0) * complex(math.cos(-azimuth), math.sin(-azimuth)), label)

    @property
    def jones(self) -> np.ndarray:
        return np.array([self.c_h, self.c_v])

    def orthogonal(self) -> "PolarizationState":
        return PolarizationState(-self.c_v.conjugate(), self.c_h.conjugate(), self.label + "_perp")

    def overlap(self, other: "PolarizationState") -> complex:
        return complex(np.vdot(self.jones, other.jones))

    def to_dict(self) -> dict:
        return {"label": self.label, "c_h": [self.c_h.real, self.c_h.imag], "c_v": [self.c_v.real, self.c_v.imag]}


H = PolarizationState(1.0, 0.0, "H")
V = PolarizationState(0.0, 1.0, "V")
D = PolarizationState(_SQ2, _SQ2, "D")
A = PolarizationState(_SQ2, -_SQ2, "A")
R = PolarizationState(_SQ2, -1j * _SQ2, "R")
L = PolarizationState(_SQ2, 1j * _SQ2, "L")
NAMED = {"H": H, "V": V, "D": D, "A": A, "R": R, "L": L}


def polarization(name: str) -> PolarizationState:
    try:
        return NAMED[name]
    except KeyError:
        raise ParameterError(f"unknown polarization {name!r}; expected one of {sorted(NAMED)}") from None


@dataclass(frozen=True)
class HybridState:
    """``alpha |H>|spm1> + e^{i phi} beta |V>|spm2>``.

    ``visibility`` < 1 mixes the pure state with white noise on the
    two-qubit subspace spanned by {H, V} x {spm1, spm2}:
    ``rho = v |psi><psi| + (1 - v) I / 4``.
    """

    alpha: float
    beta: float
    phi: float
    spm1: ModeSpec
    spm2: ModeSpec
    visibility: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ParameterError("alpha and beta must be non-negative")
        if abs(self.alpha**2 + self.beta**2 - 1.0) > 1e-12:
            raise ParameterError(f"alpha^2 + beta^2 = {self.alpha**2 + self.beta**2}, expected 1")
        if not math.isfinite(self.phi):
            raise ParameterError("phi must be finite")
        if not 0.0 <= self.visibility <= 1.0:
            raise ParameterError(f"visibility must lie in [0, 1], got {self.visibility}")

    @classmethod
    def balanced(cls, spm1: ModeSpec, spm2: ModeSpec, phi: float = 0.0, visibility: float = 1.0) -> "HybridState":
        return cls(_SQ2, _SQ2, phi, spm1, spm2, visibility)

    @classmethod
    def lg_pair(cls, l: int, waist: float, alpha: float = _SQ2, phi: float = 0.0, visibility: float = 1.0) -> "HybridState":
        """State with ``spm1 = LG_{+l}`` and ``spm2 = LG_{-l}``."""
        l = check_int(l, "l", 1)
        beta = math.sqrt(max(0.0, 1.0 - alpha * alpha))
        return cls(alpha, beta, phi, ModeSpec.lg(l, 0, waist), ModeSpec.lg(-l, 0, waist), visibility)

    @property
    def oam(self) -> int | None:
        """``l`` when the modes are ``LG_{+l}`` / ``LG_{-l}`` (same ``p``), else ``None``."""
        a, b = self.spm1, self.spm2
        if a.family == b.family == "LG" and a.indices[1] == b.indices[1] and a.indices[0] == -b.indices[0] > 0:
            return a.indices[0]
        return None

    @property
    def waist(self) -> float:
        return self.spm1.waist

    def heralded_density(self, trigger: PolarizationState, grid: GridSpec) -> tuple[float, ScalarField]:
        """Herald probability and normalized camera density, including the noise admixture."""
        p_pure, fld = herald(self, trigger, grid, allow_degenerate=True)
        v = self.visibility
        if v == 1.0:
            if fld is None:
                raise DegenerateError(f"trigger {trigger.label or trigger.jones} never heralds this state")
            return p_pure, modes.intensity(fld)
        i1 = np.abs(modes.mode_field(self.spm1, grid).amplitudes) ** 2
        i2 = np.abs(modes.mode_field(self.spm2, grid).amplitudes) ** 2
        dens = (1.0 - v) / 4.0 * (i1 + i2)
        if fld is not None:
            dens = dens + v * p_pure * np.abs(fld.amplitudes) ** 2
        prob = v * p_pure + (1.0 - v) / 2.0
        if prob < MIN_PROBABILITY:
            raise DegenerateError("herald probability vanishes")
        return prob, ScalarField(grid, dens / prob, True, {"trigger": trigger.label})

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "phi": self.phi,
            "spm1": self.spm1.to_dict(),
            "spm2": self.spm2.to_dict(),
            "visibility": self.visibility,
        }


def herald(state: HybridState, trigger: PolarizationState, grid: GridSpec, *, allow_degenerate: bool = False):
    """Project the trigger photon onto ``trigger`` and return the partner's mode.

    Returns
    -------
    probability : float
        Squared norm of the conditional amplitude, in ``[0, 1]``.
    field : ComplexField
        Renormalized ``alpha conj(c_H) spm1 + e^{i phi} beta conj(c_V) spm2``.

    Raises
    ------
    DegenerateError
        If the probability is below ``1e-12`` (unless ``allow_degenerate``, in
        which case ``(probability, None)`` is returned).
    """
    f1 = modes.mode_field(state.spm1, grid)
    f2 = modes.mode_field(state.spm2, grid)
    a1 = state.alpha * trigger.c_h.conjugate()
    a2 = complex(math.cos(state.phi), math.sin(state.phi)) * state.beta * trigger.c_v.conjugate()
    u = a1 * f1.amplitudes + a2 * f2.amplitudes
    prob = float(np.sum(np.abs(u) ** 2) * grid.pixel_area)
    prob = min(max(prob, 0.0), 1.0)
    if prob < MIN_PROBABILITY:
        if allow_degenerate:
            return prob, None
        raise DegenerateError(f"herald probability {prob:.3g} below {MIN_PROBABILITY}")
    meta = {"trigger": trigger.label, "probability": prob}
    if a1 != 0 and math.isclose(abs(a1), abs(a2), rel_tol=1e-9):
        meta["relative_phase"] = float(np.angle(a2 / a1))
    return prob, ComplexField(grid, u / math.sqrt(prob), True, meta)


def heralded_mixture(state: HybridState, grid: GridSpec) -> ScalarField:
    """Density registered without a trigger polarizer: ``alpha^2 |spm1|^2 + beta^2 |spm2|^2``."""
    i1 = np.abs(modes.mode_field(state.spm1, grid).amplitudes) ** 2
    i2 = np.abs(modes.mode_field(state.spm2, grid).amplitudes) ** 2
    dens = state.alpha**2 * i1 + state.beta**2 * i2
    dens = dens / (dens.sum() * grid.pixel_area)
    return ScalarField(grid, dens, True, {"trigger": None})


@dataclass(frozen=True)
class SeparableState:
    """``(a|H> + b e^{i phi1}|V>) x (c|LG_l> + d e^{i phi2}|LG_-l>)``."""

    a: float
    b: float
    phi1: float
    c: float
    d: float
    phi2: float
    l: int = 1
    waist: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")
        if abs(self.a**2 + self.b**2 - 1.0) > 1e-9 or abs(self.c**2 + self.d**2 - 1.0) > 1e-9:
            raise ParameterError("separable state factors must be normalized")
        check_int(self.l, "l", 1)

    @classmethod
    def random(cls, rng: np.random.Generator, l: int = 1, waist: float = 1.0) -> "SeparableState":
        t, s = rng.uniform(0.0, math.pi / 2.0, size=2)
        p1, p2 = rng.uniform(0.0, 2.0 * math.pi, size=2)
        return cls(math.cos(t), math.sin(t), p1, math.cos(s), math.sin(s), p2, l, waist)

    @property
    def oam(self) -> int:
        return self.l

    def polarization(self) -> PolarizationState:
        return PolarizationState.from_jones(self.a, self.b * complex(math.cos(self.phi1), math.sin(self.phi1)))

    def heralded_density(self, trigger: PolarizationState, grid: GridSpec) -> tuple[float, ScalarField]:
        prob = abs(trigger.overlap(self.polarization())) ** 2
        if prob < MIN_PROBABILITY:
            raise DegenerateError("herald probability vanishes")
        f1 = modes.mode_field(ModeSpec.lg(self.l, 0, self.waist), grid)
        f2 = modes.mode_field(ModeSpec.lg(-self.l, 0, self.waist), grid)
        fld = modes.superpose(self.c, f1, self.d * complex(math.cos(self.phi2), math.sin(self.phi2)), f2)
        return prob, modes.intensity(fld)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("a", "b", "phi1", "c", "d", "phi2", "l", "waist")}


def separable_witness_value(s: SeparableState) -> float:
    """Witness expectation ``4 a b c d cos(phi1 - phi2)`` of a product state."""
    return 4.0 * s.a * s.b * s.c * s.d * math.cos(s.phi1 - s.phi2)


def separable_witness_values(n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized witness values of ``n`` random product states."""
    t = rng.uniform(0.0, math.pi / 2.0, n)
    s = rng.uniform(0.0, math.pi / 2.0, n)
    dphi = rng.uniform(0.0, 2.0 * math.pi, n) - rng.uniform(0.0, 2.0 * math.pi, n)
    return 4.0 * np.cos(t) * np.sin(t) * np.cos(s) * np.sin(s) * np.cos(dphi)


def equator_path(steps: int) -> list[PolarizationState]:
    """Closed loop D -> R -> A -> L -> D with ``steps`` points (endpoints included)."""
    steps = check_int(steps, "steps", 1)
    if steps == 1:
        return [D]
    az = np.linspace(0.0, 2.0 * math.pi, steps)
    return [PolarizationState.from_bloch(math.pi / 2.0, float(a), f"eq{i:03d}") for i, a in enumerate(az)]


def meridian_path(steps: int) -> list[PolarizationState]:
    """Closed loop H -> D -> V -> A -> H with ``steps`` points (endpoints included)."""
    steps = check_int(steps, "steps", 1)
    if steps == 1:
        return [H]
    th = np.linspace(0.0, 2.0 * math.pi, steps)
    return [PolarizationState(math.cos(t / 2.0), math.sin(t / 2.0), f"mer{i:03d}") for i, t in enumerate(th)]


def poincare_scan(state: HybridState, path: Sequence[PolarizationState], grid: GridSpec) -> list[tuple]:
    """Herald ``state`` at every trigger along ``path``.

    Returns ``(trigger, probability, density)`` per point; points where the
    trigger cannot herald yield ``density = None`` instead of raising.
    """
    if len(path) == 0:
        raise ParameterError("scan path is empty")
    out = []
    for trig in path:
        p, fld = herald(state, trig, grid, allow_degenerate=True)
        out.append((trig, p, None if fld is None else modes.intensity(fld)))
    return out
