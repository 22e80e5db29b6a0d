import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nanopat.errors import ConfigError, PoleError
from nanopat.media import (Box, Grid3, LorentzParams, Nanoparticle, REFERENCE_PHANTOMS,
                           gamma_of, lorentz_permittivity, make_grid, phantom_from_profiles,
                           profile, reference_phantom, sample_field, shell_mask, taper_weight,
                           trilinear, with_fields)

GRID = Grid3((-0.25, -0.25, -0.25), 0.125, (13, 13, 13))
coord = st.floats(-0.25, 1.25, allow_nan=False)


# ------------------------------------------------------------------ Grid3

@given(st.lists(st.tuples(coord, coord, coord), min_size=1, max_size=20))
def test_index_world_round_trip(points):
    p = np.array(points)
    # snapping to nodes moves points by at most 1e-9 index units
    assert np.allclose(GRID.to_world(GRID.to_index(p)), p, rtol=0, atol=1e-9 * GRID.h)


def test_index_snaps_near_integers():
    f = GRID.to_index(np.array([0.5 + 1e-12, 0.5, 0.5]))
    assert np.all(f == np.round(f))


def test_grid_rejects_bad_geometry():
    with pytest.raises(ConfigError):
        Grid3((0, 0, 0), 0.0, (4, 4, 4))
    with pytest.raises(ConfigError):
        Grid3((0, 0, 0), 0.1, (2, 4, 4))
    with pytest.raises(ConfigError):
        Grid3((0, 0), 0.1, (4, 4, 4))


def test_nearest_node_and_contains():
    assert tuple(GRID.nearest_node((0.51, 0.49, 0.0))) == (6, 6, 2)
    assert GRID.contains(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])).tolist() == [True, False]


# ---------------------------------------------------------------- trilinear

@given(st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3)),
       st.lists(st.tuples(coord, coord, coord), min_size=1, max_size=10))
def test_trilinear_exact_on_affine_fields(coef, points):
    a, b, c, d = coef
    x = GRID.node_coords()
    vals = a + b * x[..., 0] + c * x[..., 1] + d * x[..., 2]
    p = np.array(points)
    expect = a + b * p[:, 0] + c * p[:, 1] + d * p[:, 2]
    assert np.allclose(trilinear(vals, GRID, p), expect, atol=1e-10)


def test_trilinear_node_value_ignores_nan_neighbours():
    vals = np.full(GRID.dims, np.nan)
    vals[6, 6, 6] = 3.0
    assert trilinear(vals, GRID, GRID.to_world(np.array([6, 6, 6]))) == 3.0


def test_trilinear_outside_raises():
    with pytest.raises(ConfigError):
        trilinear(np.zeros(GRID.dims), GRID, np.array([2.0, 0.0, 0.0]))


# ------------------------------------------------------------------ Box

def test_box_geometry():
    b = Box((0, 0, 0), (1, 2, 2))
    assert b.diameter == pytest.approx(3.0)
    assert b.on_boundary((0.5, 0.5, 0.0)) and not b.on_boundary((0.5, 0.5, 0.5))
    assert b.distance_outside(np.array([[2.0, 1.0, -0.5]]))[0].tolist() == [1.0, 0.0, 0.5]
    with pytest.raises(ConfigError):
        Box((0, 0, 0), (1, 0, 1))


# --------------------------------------------------------------- phantoms

@pytest.mark.parametrize("name", REFERENCE_PHANTOMS)
def test_reference_phantoms_valid(name):
    ph = reference_phantom(name, n_cells=16)
    ph.check()
    outer = shell_mask(ph.grid.dims, 2)
    assert np.all(ph.c[outer] == ph.c_background)
    assert np.all(ph.rho[outer] == ph.rho_background)
    assert np.all(ph.eps0_im[outer] == 0.0)


def test_unknown_phantom_and_options():
    with pytest.raises(ConfigError):
        reference_phantom("marble")
    with pytest.raises(ConfigError):
        reference_phantom("homogeneous", n_cells=16, wobble=1)


def test_phantom_fields_are_readonly():
    ph = reference_phantom("homogeneous", n_cells=8)
    with pytest.raises(ValueError):
        ph.c[0, 0, 0] = 2.0


def test_phantom_validation_errors():
    ph = reference_phantom("homogeneous", n_cells=8)
    bad_rho = ph.rho.copy()
    bad_rho[5, 5, 5] = -1.0
    with pytest.raises(ConfigError):
        with_fields(ph, rho=bad_rho)
    shell_rho = ph.rho.copy()
    shell_rho[0, 0, 0] = 2.5
    with pytest.raises(ConfigError, match="background"):
        with_fields(ph, rho=shell_rho)
    rough = ph.c.copy()
    rough[0, 0, 0] = 1.3
    with pytest.raises(ConfigError, match="C\\^1,1"):
        with_fields(ph, c=rough)
    slow = ph.c.copy()
    slow[8, 8, 8] = 0.05
    with pytest.raises(ConfigError):
        with_fields(ph, c=slow)
    with pytest.raises(ConfigError):
        with_fields(ph, c=np.full(ph.grid.dims, np.inf))


def test_phantom_speed_inside_omega_follows_profile():
    ph = reference_phantom("ramp", n_cells=16)
    pts = ph.grid.node_coords()[ph.omega_slices()]
    assert np.allclose(ph.c[ph.omega_slices()], 1.0 + 0.3 * pts[..., 2], atol=1e-12)


def test_exponential_density_exact_inside_omega():
    ph = reference_phantom("exprho", n_cells=16)
    pts = ph.grid.node_coords()[ph.omega_slices()]
    expect = 2.0 * np.exp((pts - np.array([0.5, 0.5, 0.0])) @ np.array([0.1, -0.1, 0.2]))
    assert np.allclose(ph.rho[ph.omega_slices()], expect, rtol=1e-12)


def test_gamma_examples():
    assert gamma_of(reference_phantom("homogeneous", n_cells=8, gamma=0.0)) == 0.0
    assert gamma_of(reference_phantom("homogeneous", n_cells=8, gamma=1e-4)) == pytest.approx(1e-4)
    omega = Box((0, 0, 0), (1, 1, 1))
    grid = make_grid(omega, 16)
    ph = phantom_from_profiles(grid, omega, {
        "eps0_im": {"kind": "gaussian", "value": 1e-9, "amplitude": 1e6, "center": (0.375, 0.5, 0.625),
                    "sigma": 0.1}}, {"c": 1.0, "rho": 1.0, "eps_infinity": 1.0})
    brute = ph.eps0_im[ph.omega_slices()].max()
    assert gamma_of(ph) == brute
    assert gamma_of(ph) == pytest.approx(1e-3, rel=1e-5)


def test_taper_weight_layers():
    omega = Box((0, 0, 0), (1, 1, 1))
    grid = make_grid(omega, 16)
    w = taper_weight(grid, omega)
    sl = omega.node_slices(grid)
    assert np.all(w[sl] == 1.0)
    assert np.all(w[shell_mask(grid.dims, 2)] == 0.0)
    assert w.min() >= 0 and w.max() <= 1


def test_profile_kinds_and_unknown():
    p = np.array([[0.5, 0.5, 0.5]])
    assert profile({"kind": "constant", "value": 2.0}, p)[0] == 2.0
    assert profile({"kind": "cosine", "mean": 2.0, "amplitude": 0.5, "ref": (0, 0, 0)}, p)[0] \
        == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        profile({"kind": "spiral"}, p)


def test_sample_field_scalar():
    ph = reference_phantom("homogeneous", n_cells=8, c_background=1.5)
    assert sample_field(ph, "c", (0.3, 0.3, 0.3)) == pytest.approx(1.5)
    with pytest.raises(ConfigError):
        ph.field("pressure")


# ----------------------------------------------------------------- Lorentz

def test_lorentz_matches_frozen_values(frozen):
    for row in frozen["lorentz"]:
        v = lorentz_permittivity(LorentzParams(gamma_p=row["gamma_p"]), row["omega"])
        assert v.real == pytest.approx(row["re"], rel=1e-13)
        assert v.imag == pytest.approx(row["im"], rel=1e-12, abs=1e-300)


def test_lorentz_pole_and_domain():
    with pytest.raises(PoleError):
        lorentz_permittivity(LorentzParams(gamma_p=0.0), 1.0)
    with pytest.raises(ConfigError):
        lorentz_permittivity(LorentzParams(), 0.0)


@given(st.floats(1e-6, 0.1), st.floats(0.05, 5.0))
def test_lorentz_absorption_sign(gp, w):
    assert lorentz_permittivity(LorentzParams(gamma_p=gp), w).imag <= 0


@given(st.floats(0.5, 3.0), st.floats(0.5, 3.0))
def test_lossless_band_is_negative(wp, w0):
    lp = LorentzParams(omega_p=wp, omega_0=w0, gamma_p=0.0)
    w = np.linspace(w0, lp.omega_max, 202)[1:-1]
    assert np.all(lorentz_permittivity(lp, w).real < 0)


def test_lorentz_continuity_away_from_pole():
    lp = LorentzParams(gamma_p=1e-2)
    w = np.linspace(1.05, 2.2, 20001)
    v = lorentz_permittivity(lp, w)
    slope = np.abs(np.diff(v)) / np.diff(w)
    # derivative bound of the Lorentz formula on this interval
    bound = 2 * lp.omega_p ** 2 * (2.2 + lp.gamma_p) / ((1.05 ** 2 - 1) ** 2)
    assert slope.max() < bound


def test_lorentz_params_validation():
    with pytest.raises(ConfigError):
        LorentzParams(omega_p=-1.0)
    with pytest.raises(ConfigError):
        LorentzParams(gamma_p=-1e-3)
    with pytest.raises(ConfigError):
        LorentzParams(omega_0=math.nan)
    with pytest.warns(RuntimeWarning):
        LorentzParams(gamma_p=0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        LorentzParams(gamma_p=1e-3)
    assert LorentzParams().omega_max == pytest.approx(math.sqrt(5))


# ------------------------------------------------------------ Nanoparticle

def test_nanoparticle_validation():
    with pytest.raises(ConfigError):
        Nanoparticle(z=(0.5, 0.5, 0.5), a=0.0)
    with pytest.raises(ConfigError):
        Nanoparticle(z=(0.5, 0.5, 0.5), a=0.01, lambda_n0=1.0)
    with pytest.raises(ConfigError):
        Nanoparticle(z=(0.5, 0.5, 0.5), a=0.01, polarization=(0.0, 0.0, 1.0))
    with pytest.raises(ConfigError):
        Nanoparticle(z=(0.5, 0.5), a=0.01)
    p = Nanoparticle(z=(0.5, 0.5, 0.5), a=0.01)
    assert p.mode_moment[0] == pytest.approx(4 * math.pi / 3)
    box = Box((0, 0, 0), (1, 1, 1))
    p.check_inside(box)
    with pytest.raises(ConfigError):
        p.moved(z=(0.995, 0.5, 0.5)).check_inside(box)
    q = p.moved(a=0.02)
    assert q.a == 0.02 and q.z == p.z and q.lorentz == p.lorentz


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(0.5, 3.0))
def test_constant_phantom_any_background(c, rho):
    ph = reference_phantom("homogeneous", n_cells=8, c_background=c, rho_background=rho)
    assert np.all(ph.c == c) and np.all(ph.rho == rho)
