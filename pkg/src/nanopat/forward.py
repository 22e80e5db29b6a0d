"""Synthetic boundary measurements of a plasmonic particle sweep.

The measured average pressure at the boundary point x, for a particle of
radius a at z, time s and incident frequency omega follows three regimes:

* before the entrance time tau1 only an O(gamma) background remains,
* during transit the covered part of the particle contributes
  Psi1(z*) * energy * covered fraction,
* after the exit time tau2 the signal is Psi2(s) * energy.

The leading energy term is the near-resonance estimate
a^3 |eps0|^2 |<u0; m>|^2 / |eps0 - (eps0 - eps_p) lambda|^2.  Interior
fields |u1|^2 on the particle are taken uniform (energy / |D|); only their
integral over D is known at the orders kept.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .eikonal import TravelTimeField, solve_travel_time
from .errors import ConfigError, MaskedPointError, PoleError
from .kernel import KernelCoefficients, build_kernel
from .media import Box, Nanoparticle, Phantom, lorentz_permittivity, sample_field
from .plasmonics import DispersionContext, dispersion_value

NOISE_MODES = ("off", "bound", "random")


@dataclass(frozen=True)
class ForwardConfig:
    h_exponent: float = 0.0
    K_max: int = 2
    n_cloud: int = 4096
    n_surface: int = 1024
    noise: str = "off"
    C_gamma: float = 1.0
    C_a: float = 1.0
    C_e: float = 1.0
    seed: int = 0
    quad_tol: float = 1e-13

    def __post_init__(self):
        if not 0.0 <= self.h_exponent < 1.0:
            raise ConfigError("h_exponent must lie in [0, 1)", "h_exponent")
        if self.noise not in NOISE_MODES:
            raise ConfigError(f"noise must be one of {NOISE_MODES}", "noise")
        if self.n_cloud < 8 or self.K_max < 0:
            raise ConfigError("n_cloud >= 8 and K_max >= 0 required", "forward")

    def remainder_scales(self, a, gamma):
        h = self.h_exponent
        return {"gamma": self.C_gamma * gamma, "transit": self.C_a * a ** (4 - 2 * h),
                "energy": self.C_e * a ** min(3.0, 4 - 3 * h)}

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class RegimeTimes:
    tau1: float
    tau2: float
    inf_tau: float
    sup_tau: float

    @property
    def width(self):
        return self.tau2 - self.tau1


# ------------------------------------------------------------- point clouds

def unit_ball_cloud(n=4096):
    """Low-discrepancy points filling the unit ball (radial Sobol map)."""
    m = max(int(math.ceil(math.log2(n))), 3)
    u = qmc.Sobol(d=3, scramble=False).random_base2(m)[:n]
    r = np.cbrt(u[:, 0])
    cz = 1.0 - 2.0 * u[:, 1]
    sz = np.sqrt(np.maximum(0.0, 1.0 - cz * cz))
    phi = 2.0 * math.pi * u[:, 2]
    return np.stack([r * sz * np.cos(phi), r * sz * np.sin(phi), r * cz], axis=1)


def unit_sphere_points(n=1024):
    """Fibonacci points on the unit sphere."""
    k = np.arange(n) + 0.5
    cz = 1.0 - 2.0 * k / n
    sz = np.sqrt(1.0 - cz * cz)
    phi = math.pi * (1.0 + 5 ** 0.5) * k
    return np.stack([sz * np.cos(phi), sz * np.sin(phi), cz], axis=1)


# ------------------------------------------------------------------ regimes

def regime_times(tt: TravelTimeField, particle: Nanoparticle, n_cloud=4096, n_surface=1024):
    z = np.asarray(particle.z)
    pts = np.concatenate([z + particle.a * unit_ball_cloud(n_cloud),
                          z + particle.a * unit_sphere_points(n_surface)])
    tau = tt.tau_at(pts)
    if not np.all(np.isfinite(tau)):
        raise MaskedPointError(f"travel time undefined inside the particle at {tuple(z)}")
    lo, hi = float(tau.min()), float(tau.max())
    return RegimeTimes(tau1=lo - particle.a, tau2=hi + particle.a, inf_tau=lo, sup_tau=hi)


# ------------------------------------------------------------------ energy

def eps0_at(phantom: Phantom, z):
    return complex(sample_field(phantom, "eps0_re", z), sample_field(phantom, "eps0_im", z))


def field_energy(particle: Nanoparticle, phantom: Phantom, omega, eps0=None):
    """Leading electric energy inside the particle (vectorised over omega)."""
    e0 = eps0_at(phantom, particle.z) if eps0 is None else complex(eps0)
    ctx = DispersionContext(e0, particle.lambda_n0, particle.lorentz)
    f = dispersion_value(ctx, omega)
    den = np.abs(f) ** 2
    if np.any(den < 1e-12 * abs(e0) ** 2):
        raise PoleError("frequency sits on the complex resonance; energy diverges")
    proj = abs(np.dot(particle.polarization, particle.mode_moment)) ** 2
    out = particle.a ** 3 * abs(e0) ** 2 * proj / den
    return float(out) if np.ndim(out) == 0 else out


def im_eps_p(particle: Nanoparticle, omega):
    """Absorption weight |Im eps_p(omega)| of the particle.

    The Lorentz formula as written has Im eps_p <= 0; the heating it
    describes is the magnitude.
    """
    return np.abs(np.imag(lorentz_permittivity(particle.lorentz, omega)))


# --------------------------------------------------------------- quadrature

def adaptive_simpson(f, a, b, tol=1e-12, max_depth=40):
    """Adaptive Simpson quadrature with Richardson correction."""
    if b == a:
        return 0.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) * (fa + 4 * fm + fb) / 6.0

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) * (fa + 4 * flm + fm) / 6.0
        right = (b - m) * (fm + 4 * frm + fb) / 6.0
        diff = left + right - whole
        if depth <= 0 or abs(diff) <= 15 * tol:
            return left + right + diff / 15.0
        return (rec(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))

    return rec(a, b, fa, fm, fb, whole, tol, max_depth)


# ------------------------------------------------------------ Psi profiles

@dataclass(frozen=True, eq=False)
class ParticleProfile:
    """Everything about one particle position needed to evaluate the signal."""

    particle: Nanoparticle
    regimes: RegimeTimes
    tau_z: float
    alpha_z: np.ndarray        # alpha_{-1} .. alpha_{K_max} at z
    grad_norm_z: float
    cloud: np.ndarray          # volume points of D
    cloud_tau: np.ndarray
    cloud_psi: np.ndarray      # alpha_{-1} |grad tau| at the cloud points
    coeffs: KernelCoefficients = field(repr=False)
    tt: TravelTimeField = field(repr=False)

    @property
    def lead(self):
        return float(self.alpha_z[0] * self.grad_norm_z)


def particle_profile(tt, coeffs, particle, n_cloud=4096, n_surface=1024):
    z = np.asarray(particle.z)
    reg = regime_times(tt, particle, n_cloud, n_surface)
    alpha_z = coeffs.values_at(z)
    if not np.all(np.isfinite(alpha_z)):
        raise MaskedPointError(f"kernel coefficients masked at z = {tuple(z)}")
    cloud = z + particle.a * unit_ball_cloud(n_cloud)
    a_cloud = coeffs.values_at(cloud)[:, 0]
    if not np.all(np.isfinite(a_cloud)):
        raise MaskedPointError(f"kernel coefficients masked inside the particle at {tuple(z)}")
    return ParticleProfile(particle=particle, regimes=reg, tau_z=float(tt.tau_at(z)),
                           alpha_z=alpha_z, grad_norm_z=float(np.linalg.norm(tt.grad_at(z))),
                           cloud=cloud, cloud_tau=tt.tau_at(cloud),
                           cloud_psi=a_cloud * np.linalg.norm(tt.grad_at(cloud), axis=-1),
                           coeffs=coeffs, tt=tt)


def _series(alpha_k, tau, r):
    """2 r sum_k alpha_k (r^2 - tau^2)^k / k!."""
    q = r * r - tau * tau
    return 2.0 * r * sum(a * q ** k / math.factorial(k) for k, a in enumerate(alpha_k))


def psi2_geometric(prof: ParticleProfile, s, tol=1e-13, K_max=None):
    """Psi2 / Im eps_p for times ``s`` (scalar or sorted array) beyond tau2."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    tau2 = prof.regimes.tau2
    if np.any(s_arr < tau2 - 1e-14):
        raise ConfigError("Psi2 requires s >= tau2", "s")
    ak = prof.alpha_z[1:] if K_max is None else prof.alpha_z[1:K_max + 2]
    f = lambda r: _series(ak, prof.tau_z, r)  # noqa: E731
    order = np.argsort(s_arr)
    out = np.empty_like(s_arr)
    acc, prev = 0.0, tau2
    for i in order:
        acc += adaptive_simpson(f, prev, s_arr[i], tol)
        prev = s_arr[i]
        out[i] = prof.lead + acc
    return float(out[0]) if np.ndim(s) == 0 else out


def psi2(coeffs, tt, particle, s, im_eps, tol=1e-13, prof=None):
    prof = prof or particle_profile(tt, coeffs, particle)
    return im_eps * psi2_geometric(prof, s, tol)


def transit_geometric(prof: ParticleProfile, s):
    """Psi1(z*) * covered fraction / Im eps_p for transit times ``s``."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.zeros_like(s_arr)
    for i, t in enumerate(s_arr):
        cov = prof.cloud_tau <= t
        n = int(cov.sum())
        if n == 0:
            continue
        zstar = prof.cloud[cov].mean(axis=0)
        a = float(prof.coeffs.values_at(zstar)[0])
        g = float(np.linalg.norm(prof.tt.grad_at(zstar)))
        out[i] = a * g * n / prof.cloud.shape[0]
    return float(out[0]) if np.ndim(s) == 0 else out


def time_profile(prof: ParticleProfile, s, tol=1e-13, K_max=None):
    """Geometric factor T(s) with p* = Im eps_p * energy * T(s) (noise off)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape)
    reg = prof.regimes
    transit = (s > reg.tau1) & (s < reg.tau2)
    post = s >= reg.tau2
    if transit.any():
        out[transit] = transit_geometric(prof, s[transit])
    if post.any():
        out[post] = psi2_geometric(prof, s[post], tol, K_max)
    return out


def p_star(tt, coeffs, particle, phantom, config: ForwardConfig, s, omega, prof=None):
    """Regime-dispatched measurement for one particle, times ``s`` and frequencies ``omega``.

    Returns an array of shape (len(s), len(omega)) (squeezed for scalars).
    """
    prof = prof or particle_profile(tt, coeffs, particle, config.n_cloud, config.n_surface)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    w_arr = np.atleast_1d(np.asarray(omega, dtype=float))
    T = time_profile(prof, s_arr, config.quad_tol, config.K_max)
    E = np.atleast_1d(field_energy(particle, phantom, w_arr))
    I = np.atleast_1d(im_eps_p(particle, w_arr))
    out = T[:, None] * (I * E)[None, :]
    if config.noise != "off":
        sc = config.remainder_scales(particle.a, phantom.gamma)
        out = out + _remainders(config, sc, prof.regimes, s_arr, I, T, np.random.default_rng(
            np.random.SeedSequence(config.seed)))
    if np.ndim(s) == 0 and np.ndim(omega) == 0:
        return float(out[0, 0])
    if np.ndim(s) == 0:
        return out[0]
    if np.ndim(omega) == 0:
        return out[:, 0]
    return out


def _remainders(config, scales, reg, s, im_eps, T, rng):
    """Remainder terms at the orders kept, as a (len(s), len(omega)) array."""
    active = (s > reg.tau1).astype(float)[:, None]
    if config.noise == "bound":
        u_g = np.ones((s.size, im_eps.size))
        u_a = np.ones((s.size, im_eps.size))
        u_e = np.ones((1, im_eps.size))
    else:
        u_g = rng.uniform(-1, 1, (s.size, im_eps.size))
        u_a = rng.uniform(-1, 1, (s.size, im_eps.size))
        u_e = rng.uniform(-1, 1, (1, im_eps.size))
    return (scales["gamma"] * u_g + scales["transit"] * u_a * active
            + T[:, None] * im_eps[None, :] * scales["energy"] * u_e)


def p_star_quadrature_oracle(tt, coeffs, particle, phantom, s, omega, n_cloud=4096, K_max=None):
    """Direct volume quadrature over the particle with uniform |u1|^2.

    Im eps_p * (E/|D|) * int_{D, tau <= s} [alpha_{-1} |grad tau|
    + sum_k alpha_k (s^2 - tau^2)^{k+1} / (k+1)!] dy, the inner time
    integral done in closed form.
    """
    z = np.asarray(particle.z)
    cloud = z + particle.a * unit_ball_cloud(n_cloud)
    vals = coeffs.values_at(cloud)
    if not np.all(np.isfinite(vals)):
        raise MaskedPointError(f"kernel coefficients masked inside the particle at {tuple(z)}")
    K = vals.shape[1] - 2 if K_max is None else K_max
    tau = tt.tau_at(cloud)
    g = np.linalg.norm(tt.grad_at(cloud), axis=-1)
    I = im_eps_p(particle, omega)
    if np.all(I == 0):
        return 0.0 * np.asarray(s, dtype=float)
    E = field_energy(particle, phantom, omega)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.empty(s_arr.shape)
    for i, t in enumerate(s_arr):
        cov = tau <= t
        q = t * t - tau[cov] ** 2
        dens = vals[cov, 0] * g[cov]
        for k in range(K + 1):
            dens = dens + vals[cov, k + 1] * q ** (k + 1) / math.factorial(k + 1)
        out[i] = dens.sum() / n_cloud
    res = I * E * out
    return float(res[0]) if np.ndim(s) == 0 else res


# ------------------------------------------------------------------ coarea

def coarea_selfcheck(tt: TravelTimeField, f, s, omega: Box, n_levels=65, width=1.5):
    """(surface-integral side, volume-integral side) of the coarea identity on Omega.

    ``f`` maps world points (N, 3) to values.  The surface side integrates
    f over marching-cubes level sets of tau and then over the level by
    Simpson's rule; the volume side sums f |grad tau| over nodes with
    trapezoid weights and a smoothed indicator of tau <= s.
    """
    from scipy.integrate import simpson
    from skimage.measure import marching_cubes

    g = tt.grid
    sl = omega.node_slices(g)
    vol = np.asarray(tt.tau[sl], dtype=float)
    origin = np.array([g.axis(a)[sl[a].start] for a in range(3)])
    levels = np.linspace(0.0, s, n_levels)
    surf = np.zeros(n_levels)
    tmin, tmax = vol.min(), vol.max()
    for i, r in enumerate(levels):
        if r <= tmin or r >= tmax:
            continue
        verts, faces, _, _ = marching_cubes(vol, level=r, spacing=(g.h,) * 3)
        if len(faces) == 0:
            continue
        tri = verts[faces] + origin
        area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
        surf[i] = float(np.sum(area * f(tri.mean(axis=1))))
    lhs = float(simpson(surf, x=levels))

    pts = g.node_coords()[sl]
    grad = np.moveaxis(tt.grad_field(), 0, -1)[sl]
    gn = np.linalg.norm(grad, axis=-1)
    gn = np.where(np.isfinite(gn), gn, 0.0)
    w = np.ones(vol.shape)
    for ax in range(3):
        idx = [slice(None)] * 3
        idx[ax] = 0
        w[tuple(idx)] *= 0.5
        idx[ax] = -1
        w[tuple(idx)] *= 0.5
    eps = width * g.h * float(np.median(gn[gn > 0]))
    phi = (s - vol) / eps
    heav = np.where(phi >= 1, 1.0, np.where(phi <= -1, 0.0,
                                            0.5 * (1 + phi + np.sin(math.pi * phi) / math.pi)))
    vals = f(pts.reshape(-1, 3)).reshape(vol.shape)
    rhs = float(np.sum(w * heav * vals * gn) * g.h ** 3)
    return lhs, rhs


# -------------------------------------------------------------- datasets

@dataclass(eq=False)
class MeasurementSet:
    x: tuple
    z: np.ndarray          # (Nz, 3)
    s: np.ndarray
    omega: np.ndarray
    pstar: np.ndarray      # (Nz, Ns, Nw)
    meta: dict = field(default_factory=dict)

    def trace(self, iz, iw):
        return self.pstar[iz, :, iw]

    def sweep(self, iz, i_s):
        return self.pstar[iz, i_s, :]


def check_windows(phantom: Phantom, particle: Nanoparticle, s, omega):
    s = np.asarray(s, dtype=float)
    w = np.asarray(omega, dtype=float)
    t_max = phantom.M * phantom.omega_domain.diameter
    if s.size == 0 or np.any(s <= 0) or np.any(s > t_max) or np.any(np.diff(s) <= 0):
        raise ConfigError(f"s grid must be increasing inside (0, {t_max:.4g}]", "sgrid")
    lo, hi = particle.lorentz.omega_0, particle.lorentz.omega_max
    if w.size == 0 or np.any(w <= lo) or np.any(w >= hi) or np.any(np.diff(w) <= 0):
        raise ConfigError(f"omega grid must be increasing inside ({lo:.4g}, {hi:.4g})", "wgrid")


def synthesize_measurements(phantom: Phantom, template: Nanoparticle, z_list, s_grid, omega_grid,
                            config: ForwardConfig = ForwardConfig(), x=(0.5, 0.5, 0.0), tt=None,
                            coeffs=None, workers=1):
    """Dense p* tensor over (z, s, omega) for one boundary point."""
    z_list = np.atleast_2d(np.asarray(z_list, dtype=float))
    s_grid = np.asarray(s_grid, dtype=float)
    omega_grid = np.asarray(omega_grid, dtype=float)
    check_windows(phantom, template, s_grid, omega_grid)
    if config.noise == "random" and config.seed is None:
        raise ConfigError("random noise needs a seed", "seed")
    tt = tt or solve_travel_time(phantom, x)
    coeffs = coeffs or build_kernel(tt, phantom, K_max=config.K_max)
    gamma = phantom.gamma
    I = np.atleast_1d(im_eps_p(template, omega_grid))
    nz = z_list.shape[0]
    out = np.zeros((nz, s_grid.size, omega_grid.size))

    def one(iz):
        z = z_list[iz]
        part = template.moved(z=z)
        try:
            part.check_inside(phantom.omega_domain)
            if tt.distance_to_source(z) < 5 * tt.grid.h:
                raise MaskedPointError("particle closer than 5h to the source")
            prof = particle_profile(tt, coeffs, part, config.n_cloud, config.n_surface)
            E = np.atleast_1d(field_energy(part, phantom, omega_grid))
        except (MaskedPointError, ConfigError, PoleError) as e:
            return iz, None, {"index": iz, "z": list(z), "reason": str(e)}
        T = time_profile(prof, s_grid, config.quad_tol, config.K_max)
        block = T[:, None] * (I * E)[None, :]
        if config.noise != "off":
            # one stream per particle position: results do not depend on scheduling
            rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(iz,)))
            block = block + _remainders(config, config.remainder_scales(part.a, gamma),
                                        prof.regimes, s_grid, I, T, rng)
        return iz, block, {"index": iz, "tau1": prof.regimes.tau1, "tau2": prof.regimes.tau2,
                           "tau": prof.tau_z}

    if workers > 1 and nz > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(nz)))
    else:
        results = [one(iz) for iz in range(nz)]
    kept, skipped, regimes = [], [], []
    for iz, block, info in results:
        if block is None:
            skipped.append(info)
            continue
        out[iz] = block
        kept.append(iz)
        regimes.append(info)
    sc = config.remainder_scales(template.a, gamma)
    floor = 0.0 if config.noise == "off" else sc["gamma"]
    meta = {"x": list(tt.source), "a": template.a, "gamma": gamma, "noise_floor": floor,
            "seed": config.seed, "config": config.to_dict(), "phantom": phantom.name,
            "lambda_n0": template.lambda_n0,
            "lorentz": {k: getattr(template.lorentz, k) for k in
                        ("eps_infinity", "omega_p", "omega_0", "gamma_p")},
            "mode_moment": list(template.mode_moment), "polarization": list(template.polarization),
            "incident_dir": list(template.incident_dir),
            "grid": {"origin": list(tt.grid.origin), "h": tt.grid.h, "dims": list(tt.grid.dims)},
            "omega_domain": {"lo": list(phantom.omega_domain.lo),
                             "hi": list(phantom.omega_domain.hi)},
            "valid": kept, "skipped": skipped, "forward_diagnostics": regimes}
    return MeasurementSet(x=tt.source, z=z_list, s=s_grid, omega=omega_grid, pstar=out, meta=meta)


def dataset_to_files(ms: MeasurementSet, directory):
    from .io import write_dataset
    meta = dict(ms.meta)
    meta.update({"z": ms.z.tolist(), "s": ms.s.tolist(), "omega": ms.omega.tolist(), "x": list(ms.x)})
    write_dataset(directory, ms.pstar, meta)


def dataset_from_files(directory):
    from .io import read_dataset
    p, meta = read_dataset(directory)
    return MeasurementSet(x=tuple(meta["x"]), z=np.asarray(meta["z"], dtype=float).reshape(-1, 3),
                          s=np.asarray(meta["s"], dtype=float),
                          omega=np.asarray(meta["omega"], dtype=float), pstar=p, meta=meta)


def default_grids(phantom: Phantom, lorentz, n_omega=48, s_step=0.0025, s_max=1.6):
    s = np.arange(1, int(round(s_max / s_step)) + 1) * s_step
    w = np.linspace(lorentz.omega_0, lorentz.omega_max, n_omega + 2)[1:-1]
    return s, w
