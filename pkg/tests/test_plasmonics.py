import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nanopat.errors import ConfigError
from nanopat.media import LorentzParams, lorentz_permittivity
from nanopat.plasmonics import (DispersionContext, approx_resonance, complex_root,
                                dispersion_value, invert_permittivity, resonance_band,
                                residual_bound_check, residual_constant)


def ctx(eps0=2.0, lam=1 / 3, gp=1e-3, **kw):
    return DispersionContext(eps0, lam, LorentzParams(gamma_p=gp, **kw))


def test_dispersion_value_definition():
    c = ctx(2.0 + 0.01j)
    w = 1.3
    eps_p = lorentz_permittivity(c.lorentz, w)
    assert dispersion_value(c, w) == pytest.approx(c.eps0_at_z - (c.eps0_at_z - eps_p) / 3)


def test_context_validation():
    with pytest.raises(ConfigError):
        ctx(lam=1.0)
    with pytest.raises(ConfigError):
        ctx(lam=0.0)
    with pytest.raises(ConfigError):
        ctx(eps0=-1.0)


def test_approx_resonance_example():
    assert approx_resonance(ctx(2.0)) == pytest.approx(math.sqrt(9 / 5), rel=1e-15)
    assert approx_resonance(ctx(2.0 + 0.3j)) == approx_resonance(ctx(2.0))


@given(st.floats(0.01, 0.99), st.floats(0.1, 20.0))
def test_approx_resonance_inside_band(lam, eps0):
    lo, hi = resonance_band(LorentzParams())
    w = approx_resonance(ctx(eps0, lam))
    assert lo < w < hi


def test_approx_resonance_limits():
    assert approx_resonance(ctx(2.0, 1e-9)) == pytest.approx(1.0, abs=1e-8)
    assert approx_resonance(ctx(2.0, 1 - 1e-9)) == pytest.approx(math.sqrt(5), rel=1e-8)


def test_exact_root_without_losses():
    c = ctx(1.7, 0.4, 0.0)
    w = approx_resonance(c)
    assert abs(dispersion_value(c, w)) <= 1e-12
    r = complex_root(c)
    assert r.imag == 0 and r.real == pytest.approx(w, rel=1e-14)


def test_equal_backgrounds_root():
    # eps_infinity == eps0 reduces the shifted square to omega_0^2 + lambda omega_p^2
    lp = LorentzParams(eps_infinity=1.5, gamma_p=0.0)
    r = complex_root(DispersionContext(1.5, 1 / 3, lp))
    assert r.real ** 2 == pytest.approx(1.0 + 4.0 / 3, rel=1e-14)


def test_complex_root_matches_frozen(frozen):
    for row in frozen["roots"]:
        c = ctx(complex(row["eps0_re"], row["eps0_im"]), row["lambda"], row["gamma_p"])
        r = complex_root(c)
        assert r.real == pytest.approx(row["root_re"], rel=1e-12)
        assert r.imag == pytest.approx(row["root_im"], rel=1e-9, abs=1e-15)
        L = c.lorentz
        eps_p = L.eps_infinity * (1 + L.omega_p ** 2 / (L.omega_0 ** 2 - r * r + 1j * r * L.gamma_p))
        assert abs(c.eps0_at_z - (c.eps0_at_z - eps_p) * c.lambda_n0) <= 1e-10
        assert approx_resonance(c) == pytest.approx(row["approx"], rel=1e-14)


def test_residual_linear_in_losses():
    gs = np.logspace(-4, -2, 5)
    res_gp = [residual_bound_check(ctx(2.0, gp=g)) for g in gs]
    res_im = [residual_bound_check(ctx(2.0 + g * 1j, gp=0.0)) for g in gs]
    for res in (res_gp, res_im):
        slope = np.polyfit(np.log(gs), np.log(res), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.02)


def test_residual_bound_check_raises():
    c = ctx(2.0 + 0.01j, gp=0.01)
    C = residual_constant(c)
    assert residual_bound_check(c, C=C) <= C * 0.02
    with pytest.raises(Exception, match="exceeds"):
        residual_bound_check(c, C=1e-6)


def test_inversion_half_eigenvalue():
    lp = LorentzParams()
    assert invert_permittivity(1.4, 0.5, lp) == pytest.approx(-lorentz_permittivity(lp, 1.4))
    with pytest.raises(ConfigError):
        invert_permittivity(1.4, 1.0, lp)


@settings(max_examples=40)
@given(st.floats(0.5, 5.0), st.floats(0.05, 0.95), st.floats(0.0, 1e-2), st.floats(0.0, 1e-2))
def test_round_trip_within_loss_bound(eps_re, lam, gp, gi):
    c = ctx(complex(eps_re, gi), lam, gp)
    w = approx_resonance(c)
    back = invert_permittivity(w, lam, c.lorentz)
    C = residual_constant(ctx(eps_re, lam, 1e-3))
    # the inversion solves the lossless equation at the real resonance
    assert abs(back.real - eps_re) <= C * (gi + gp) / (1 - lam) + 1e-9
