"""Dispersion equation of a plasmonic mode, its roots and the permittivity inversion."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .media import LorentzParams, lorentz_permittivity


@dataclass(frozen=True)
class DispersionContext:
    eps0_at_z: complex
    lambda_n0: float
    lorentz: LorentzParams

    def __post_init__(self):
        object.__setattr__(self, "eps0_at_z", complex(self.eps0_at_z))
        if not 0.0 < self.lambda_n0 < 1.0:
            raise ConfigError("mode eigenvalue must lie strictly between 0 and 1", "lambda_n0")
        if not self.eps0_at_z.real > 0:
            raise ConfigError("Re eps0 must be positive", "eps0_at_z")


def dispersion_value(ctx: DispersionContext, omega):
    """eps0 - (eps0 - eps_p(omega)) * lambda."""
    eps_p = lorentz_permittivity(ctx.lorentz, omega)
    return ctx.eps0_at_z - (ctx.eps0_at_z - eps_p) * ctx.lambda_n0


def _shifted_square(ctx, eps0):
    lam, L = ctx.lambda_n0, ctx.lorentz
    den = L.eps_infinity * lam + (1.0 - lam) * eps0
    if den == 0:
        raise NumericalError("degenerate dispersion denominator")
    return L.omega_0 ** 2 + L.eps_infinity * lam * L.omega_p ** 2 / den


def complex_root(ctx: DispersionContext):
    """The root of the dispersion equation with positive real part."""
    gp = ctx.lorentz.gamma_p
    disc = -gp * gp + 4.0 * _shifted_square(ctx, ctx.eps0_at_z)
    sq = cmath.sqrt(disc)
    if sq.real < 0:
        sq = -sq
    root = 0.5 * (1j * gp + sq)
    if not root.real > 0:
        raise NumericalError("dispersion root has no positive real part")
    return root


def approx_resonance(ctx: DispersionContext):
    """Real resonance frequency built from Re eps0 only."""
    lam, L = ctx.lambda_n0, ctx.lorentz
    den = lam * L.eps_infinity + (1.0 - lam) * ctx.eps0_at_z.real
    if not den > 0:
        raise NumericalError("nonpositive denominator in the resonance formula")
    return math.sqrt(L.omega_0 ** 2 + L.omega_p ** 2 * lam * L.eps_infinity / den)


def residual_bound_check(ctx: DispersionContext, omega_n0=None, C=None):
    """|f(omega_n0)|; with ``C`` given, raise if it exceeds C * (Im eps0 + gamma_p)."""
    w = approx_resonance(ctx) if omega_n0 is None else float(omega_n0)
    res = abs(dispersion_value(ctx, w))
    if C is not None:
        bound = C * (abs(ctx.eps0_at_z.imag) + ctx.lorentz.gamma_p)
        if res > bound:
            raise NumericalError(f"dispersion residual {res:.3g} exceeds bound {bound:.3g}")
    return res


def residual_constant(ctx: DispersionContext, scales=np.logspace(-4, -1, 7)):
    """Empirical constant C with |f(omega_n0)| <= C (gamma + gamma_p) over a sweep of
    damping and absorption levels around ``ctx``."""
    ratios = []
    for g in scales:
        for gp, gi in ((g, 0.0), (0.0, g), (g, g)):
            L = LorentzParams(ctx.lorentz.eps_infinity, ctx.lorentz.omega_p,
                              ctx.lorentz.omega_0, gp)
            c = DispersionContext(complex(ctx.eps0_at_z.real, gi), ctx.lambda_n0, L)
            ratios.append(residual_bound_check(c) / (gp + gi))
    return float(max(ratios))


def invert_permittivity(omega_peak, lambda_n0, lorentz: LorentzParams):
    """eps0 = lambda / (lambda - 1) * eps_p(omega_peak)."""
    if lambda_n0 == 1:
        raise ConfigError("mode eigenvalue 1 makes the inversion singular", "lambda_n0")
    return lambda_n0 / (lambda_n0 - 1.0) * lorentz_permittivity(lorentz, omega_peak)


def resonance_band(lorentz: LorentzParams):
    return lorentz.omega_0, lorentz.omega_max
