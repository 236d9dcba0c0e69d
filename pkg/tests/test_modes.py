import math

import numpy as np
import pytest
from scipy import ndimage

from heraldimg import modes
from heraldimg.exceptions import DegenerateError, ParameterError
from heraldimg.modes import (
    GridSpec,
    ModeSpec,
    default_waist,
    expected_rotation,
    helical_hg_field,
    helical_ig_field,
    hg_field,
    ig_field,
    ig_hg_limit,
    ig_lg_limit,
    intensity,
    lg_field,
    overlap,
    superpose,
)
from oracles import count_circular_maxima, hermite_zeros, lg_reference


def test_gridspec_validation():
    with pytest.raises(ParameterError):
        GridSpec(8, 64, 1.0)
    with pytest.raises(ParameterError):
        GridSpec(64, 64, 0.0)
    g = GridSpec(64, 32, 2.0)
    assert g.shape == (32, 64)
    assert g.dx == pytest.approx(4.0 / 64)
    X, Y = g.coords()
    # axis pixel sits exactly at the origin
    assert X[16, 32] == 0.0 and Y[16, 32] == 0.0


def test_for_camera_uses_pixel_units():
    g = GridSpec.for_camera(256, 256)
    assert g.dx == 1.0
    assert g.pixel_area == 1.0


def test_modespec_validation_and_roundtrip():
    with pytest.raises(ParameterError):
        ModeSpec("XX", (0, 0))
    with pytest.raises(ParameterError):
        ModeSpec.lg(1, -1)
    with pytest.raises(ParameterError):
        ModeSpec.hg(-1, 0)
    with pytest.raises(ParameterError):
        ModeSpec.ig(3, 2, "even")  # p - m odd
    with pytest.raises(ParameterError):
        ModeSpec.ig(2, 0, "odd")
    with pytest.raises(ParameterError):
        ModeSpec.lg(1, 0, waist=0.0)
    for spec in (ModeSpec.lg(-3, 1, 2.0), ModeSpec.hg(1, 2), ModeSpec.ig(4, 2, "odd", 2.5)):
        assert ModeSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ParameterError):
        ModeSpec.from_dict({"family": "LG", "indices": [1, 0], "colour": 1})


def test_lg_matches_textbook(grid_small):
    X, Y = grid_small.coords()
    for l, p in [(0, 0), (1, 0), (-2, 1), (3, 2)]:
        ref = lg_reference(l, p, 1.0, X, Y)
        f = lg_field(l, p, 1.0, grid_small)
        # same shape up to the discrete renormalization (|ratio| ~ 1)
        scale = np.vdot(ref, f.amplitudes) / np.vdot(ref, ref)
        assert abs(abs(scale) - 1) < 1e-3
        assert np.max(np.abs(f.amplitudes - scale * ref)) < 1e-10


def test_lg_normalized(grid_small):
    f = lg_field(2, 1, 1.0, grid_small)
    assert f.norm() == pytest.approx(1.0, abs=1e-9)
    assert intensity(f).total() == pytest.approx(1.0, abs=1e-9)


def test_lg_gaussian_peak_and_vortex_core(grid_small):
    i0 = intensity(lg_field(0, 0, 1.0, grid_small)).values
    assert np.unravel_index(np.argmax(i0), i0.shape) == (64, 64)
    i3 = intensity(lg_field(3, 0, 1.0, grid_small)).values
    assert i3[64, 64] < 1e-12


def test_lg_high_order_finite():
    g = GridSpec(256, 256, extent=20.0)
    f = lg_field(100, 0, 2.0, g)
    assert np.all(np.isfinite(f.amplitudes))
    assert f.norm() == pytest.approx(1.0, abs=1e-9)


def test_lg_orthogonality(grid_512):
    assert abs(overlap(lg_field(1, 0, 1.0, grid_512), lg_field(-1, 0, 1.0, grid_512))) < 1e-8


def test_hg00_is_lg00(grid_small):
    a = hg_field(0, 0, 1.0, grid_small).amplitudes
    b = lg_field(0, 0, 1.0, grid_small).amplitudes
    assert np.max(np.abs(a - b)) < 1e-10


def test_hg_parity_orthogonal(grid_small):
    assert abs(overlap(hg_field(1, 0, 1.0, grid_small), hg_field(0, 1, 1.0, grid_small))) < 1e-8


def test_hg20_nodal_lines():
    g = GridSpec(512, 64, extent=4.0)
    u = hg_field(2, 0, 1.0, g).amplitudes.real[g.ny // 2]
    X, _ = g.coords()
    x = X[0]
    inside = np.abs(x) < 2.0
    sign_changes = np.nonzero(np.diff(np.sign(u[inside])) != 0)[0]
    assert len(sign_changes) == 2
    # nodes at the Hermite roots +-1/sqrt2 of the scaled variable sqrt2 x / w
    roots = hermite_zeros(2) / math.sqrt(2.0)
    xs = x[inside][sign_changes]
    assert np.allclose(np.sort(xs), roots, atol=g.dx)


def test_helical_hg_is_normalized(grid_small):
    f = helical_hg_field(1, 0, 1.0, grid_small)
    assert f.norm() == pytest.approx(1.0, abs=1e-9)
    # HG10 + i HG01 is the LG_{+1} donut
    assert abs(overlap(f, lg_field(1, 0, 1.0, grid_small))) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("p,m,parity", [(2, 0, "even"), (2, 2, "even"), (3, 1, "odd"), (4, 2, "even"), (4, 2, "odd")])
def test_ig_lg_limit(p, m, parity):
    g = GridSpec(256, 256, extent=4.5)
    f = ig_field(p, m, parity, 1e-6, 1.0, g)
    assert abs(overlap(f, ig_lg_limit(p, m, parity, 1.0, g))) > 0.999


@pytest.mark.parametrize("p,m,parity", [(2, 0, "even"), (2, 2, "even"), (3, 1, "odd"), (4, 2, "even"), (4, 2, "odd")])
def test_ig_hg_limit(p, m, parity):
    g = GridSpec(256, 256, extent=4.5)
    f = ig_field(p, m, parity, 1e4, 1.0, g)
    assert abs(overlap(f, ig_hg_limit(p, m, parity, 1.0, g))) > 0.99


def test_ig_eps_zero_is_lg_limit(grid_small):
    f = ig_field(2, 2, "even", 0.0, 1.0, grid_small)
    assert abs(overlap(f, ig_lg_limit(2, 2, "even", 1.0, grid_small))) == pytest.approx(1.0, abs=1e-12)


def _winding(u, cy, cx, rad):
    """Phase winding (in units of 2 pi) of ``u`` around a closed circular loop."""
    th = np.linspace(0, 2 * math.pi, 65)
    coords = [cy + rad * np.sin(th), cx + rad * np.cos(th)]
    z = ndimage.map_coordinates(u.real, coords, order=1) + 1j * ndimage.map_coordinates(u.imag, coords, order=1)
    steps = np.angle(z[1:] / z[:-1])
    return round(steps.sum() / (2 * math.pi))


def test_helical_ig_vortex_splitting():
    g = GridSpec(256, 256, extent=3.0)
    f = helical_ig_field(2, 2, 2.0, 1.0, g)
    u = np.asarray(f.amplitudes)
    mag = np.abs(u)
    r, _ = g.polar()
    mins = (mag == ndimage.minimum_filter(mag, size=5)) & (r < 1.5)
    ys, xs = np.nonzero(mins)
    assert len(ys) == 2
    # two separated off-axis vortices, one unit of charge each
    assert np.all(np.hypot(xs - g.cx, ys - g.cy) * g.dx > 0.2)
    for y, x in zip(ys, xs):
        assert _winding(u, y, x, 4.0) == 1
    # a loop enclosing both carries the full charge 2 of the LG_2 limit
    assert _winding(u, g.cy, g.cx, 0.9 / g.dx) == 2
    # at eps = 0 they merge into a single on-axis charge-2 vortex
    u0 = np.asarray(helical_ig_field(2, 2, 0.0, 1.0, g).amplitudes)
    assert np.abs(u0[g.ny // 2, g.nx // 2]) < 1e-12


def test_superpose_identity_and_phase(grid_small):
    f1 = lg_field(1, 0, 1.0, grid_small)
    f2 = lg_field(-1, 0, 1.0, grid_small)
    s = superpose(1.0, f1, 0.0, f2)
    assert np.allclose(s.amplitudes, f1.amplitudes, atol=1e-15)
    s = superpose(1.0, f1, 1j, f2)
    assert s.meta["relative_phase"] == pytest.approx(math.pi / 2)
    with pytest.raises(DegenerateError):
        superpose(1.0, f1, -1.0, f1)
    with pytest.raises(ParameterError):
        superpose(1.0, f1, 1.0, lg_field(1, 0, 1.0, GridSpec(64, 64, 4.0)))


def test_petal_zeros_and_rotation(grid_small):
    f1 = lg_field(1, 0, 1.0, grid_small)
    f2 = lg_field(-1, 0, 1.0, grid_small)
    i0 = intensity(superpose(1, f1, 1, f2)).values
    r, th = grid_small.polar()
    ring = (np.abs(r - 0.7) < 0.05)
    # intensity ~ r^2 (1 + cos 2 theta): zeros on the y-axis
    on_y = ring & (np.abs(np.cos(th)) < 0.02)
    on_x = ring & (np.abs(np.sin(th)) < 0.02)
    assert i0[on_y].max() < 1e-3 * i0[on_x].min()
    ipi = intensity(superpose(1, f1, -1, f2)).values
    # phi = pi turns the pattern by 90 deg: transpose on a square centred grid
    assert np.allclose(ipi[1:, 1:], i0[1:, 1:].T, atol=1e-12)


def test_expected_rotation_values():
    assert expected_rotation(1, 2 * math.pi) == pytest.approx(180.0)
    assert expected_rotation(5, 2 * math.pi) == pytest.approx(36.0)
    assert expected_rotation(2, 0.0) == 0.0
    with pytest.raises(ParameterError):
        expected_rotation(0, 1.0)


def test_petal_count_small():
    g = GridSpec.for_camera(256, 256)
    for l in (1, 3, 7):
        w = default_waist(256, l)
        f = superpose(1, lg_field(l, 0, w, g), 1, lg_field(-l, 0, w, g))
        img = intensity(f).values
        rad = w * math.sqrt(l / 2.0)
        th = np.linspace(0, 2 * math.pi, 2048, endpoint=False)
        prof = ndimage.map_coordinates(img, [g.cy + rad * np.sin(th), g.cx + rad * np.cos(th)], order=1)
        assert count_circular_maxima(prof) == 2 * l


def test_default_waist_caps_ring():
    assert default_waist(1024, 1) == pytest.approx(1024 * math.sqrt(2) / 8)
    for l in (1, 2, 5, 10, 20):
        assert default_waist(1024, l) * math.sqrt(l / 2) <= 1024 / 4 + 1e-9


def test_mode_field_cache_returns_same_object(grid_small):
    spec = ModeSpec.lg(2, 0, 1.0)
    assert modes.mode_field(spec, grid_small) is modes.mode_field(spec, grid_small)


def test_fields_are_read_only(grid_small):
    f = lg_field(1, 0, 1.0, grid_small)
    with pytest.raises(ValueError):
        f.amplitudes[0, 0] = 1.0
