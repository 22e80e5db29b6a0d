"""Three-stage inversion of boundary measurements.

1. Arrival times from the rise of each time trace give tau(x, z); the
   speed follows from |grad tau| = 1/c on the particle grid.
2. The resonance peak of each frequency sweep gives eps0(z) through the
   dispersion relation.
3. The post-exit plateau gives alpha_{-1}(z); dividing out the
   determinant factor leaves the geodesic integral of grad log rho, which
   is the exact difference log rho(z) - log rho(x).

Finally the kernel coefficients are rebuilt on the recovered fields.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, RBFInterpolator, RegularGridInterpolator, griddata

from .eikonal import solve_on_speed
from .errors import ConfigError, DetectionError, NanopatError
from .forward import MeasurementSet, field_energy, im_eps_p
from .kernel import TWO_PI, build_kernel, determinant_factor, region_slices
from .media import (Box, Grid3, LorentzParams, Nanoparticle, Phantom, lorentz_permittivity,
                    taper_weight, trilinear)
from .plasmonics import invert_permittivity


# ------------------------------------------------------------- stage one

@dataclass(frozen=True)
class ArrivalEstimate:
    tau_hat: float
    plateau: float
    knee_index: int


def detect_arrival(trace, s, gamma_floor=0.0, full=False, plateau=None):
    """Half-rise time of the first jump of a trace above the floor.

    The plateau is the value at the knee, the first sample after onset
    where the slope falls below a tenth of the steepest rise so far.  The
    late-time growth of the smooth tail never enters.  A known ``plateau``
    level (for instance extrapolated back to the exit time) overrides the
    knee value.
    """
    p = np.asarray(trace, dtype=float)
    s = np.asarray(s, dtype=float)
    if p.shape != s.shape or p.size < 3:
        raise ConfigError("trace and time samples must match and have >= 3 entries", "trace")
    gamma_floor = float(gamma_floor)
    above = np.nonzero(p > 10.0 * gamma_floor if gamma_floor > 0 else p > 0)[0]
    if above.size == 0:
        raise DetectionError(f"no plateau: trace never exceeds 10 x floor {gamma_floor:.3g}")
    onset = int(above[0])
    d = np.diff(p)
    knee = p.size - 1
    peak_slope = 0.0
    for j in range(max(onset - 1, 0), p.size - 1):
        peak_slope = max(peak_slope, d[j])
        if peak_slope > 0 and d[j] < 0.1 * peak_slope:
            knee = j
            break
    plateau = float(p[knee]) if plateau is None else float(plateau)
    if not plateau > 10.0 * gamma_floor or not plateau > 0:
        raise DetectionError(f"no plateau: level {plateau:.3g} <= 10 x floor {gamma_floor:.3g}")
    level = gamma_floor + 0.5 * (plateau - gamma_floor)
    i = int(np.nonzero(p[:knee + 1] >= level)[0][0])
    if i == 0:
        t = float(s[0])
    else:
        t = float(s[i - 1] + (level - p[i - 1]) * (s[i] - s[i - 1]) / (p[i] - p[i - 1]))
    est = ArrivalEstimate(tau_hat=t, plateau=plateau, knee_index=knee)
    return est if full else t


def subgrid_axes(z):
    """Axes of a regular particle grid and the index of each z in it."""
    z = np.asarray(z, dtype=float).reshape(-1, 3)
    axes = [np.unique(np.round(z[:, a], 12)) for a in range(3)]
    if any(len(ax) < 3 for ax in axes) or int(np.prod([len(ax) for ax in axes])) != len(z):
        raise ConfigError("particle positions must form a full regular grid with >= 3 points "
                          "per axis", "zgrid")
    idx = np.stack([np.searchsorted(axes[a], np.round(z[:, a], 12)) for a in range(3)], axis=1)
    return axes, idx


def _axis_derivative(f, x, axis):
    """Second-order derivative along one axis that steps around NaN samples.

    Central differences where both neighbours are valid, otherwise the
    one-sided three-point formula on whichever side has two valid samples.
    """
    f = np.moveaxis(f, axis, 0)
    x = np.asarray(x, dtype=float)
    n = f.shape[0]
    out = np.full(f.shape, np.nan)
    ok = np.isfinite(f)
    for i in range(n):
        if i >= 1 and i + 1 < n:
            m = ok[i - 1] & ok[i + 1]
            d = (f[i + 1] - f[i - 1]) / (x[i + 1] - x[i - 1])
            out[i] = np.where(m, d, out[i])
        if i + 2 < n:
            m = np.isnan(out[i]) & ok[i] & ok[i + 1] & ok[i + 2]
            dx = 0.5 * (x[i + 2] - x[i])
            d = (-3 * f[i] + 4 * f[i + 1] - f[i + 2]) / (2 * dx)
            out[i] = np.where(m, d, out[i])
        if i >= 2:
            m = np.isnan(out[i]) & ok[i] & ok[i - 1] & ok[i - 2]
            dx = 0.5 * (x[i] - x[i - 2])
            d = (3 * f[i] - 4 * f[i - 1] + f[i - 2]) / (2 * dx)
            out[i] = np.where(m, d, out[i])
    return np.moveaxis(out, 0, axis)


def recover_speed(tau_hat, axes, x=None, method="spline"):
    """c = 1 / |grad tau| on the particle grid.

    |grad tau| is evaluated as |grad tau^2| / (2 tau): tau^2 is smooth
    through the source, so its derivatives are not spoiled by the cone
    singularity.  ``method="spline"`` differentiates a not-a-knot cubic
    spline along each axis (needs a complete table, 4+ points per axis);
    otherwise, or with ``method="difference"``, second-order differences
    step around NaN entries and points without a usable stencil stay NaN.
    """
    tau_hat = np.asarray(tau_hat, dtype=float)
    if tau_hat.ndim != 3 or min(tau_hat.shape) < 3:
        raise ConfigError("need a 3D table with at least 3 points per axis", "tau_hat")
    if method not in ("spline", "difference"):
        raise ConfigError(f"unknown derivative method {method!r}", "method")
    t2 = tau_hat ** 2
    holes = ~np.isfinite(t2)
    if x is not None and holes.any() and not holes.all():
        t2 = _fill_tau_squared(t2, axes, x)
    if method == "spline" and np.all(np.isfinite(t2)) and min(t2.shape) >= 4:
        g = [CubicSpline(np.asarray(axes[a], dtype=float), t2, axis=a)(axes[a], 1)
             for a in range(3)]
    else:
        g = [_axis_derivative(t2, axes[a], a) for a in range(3)]
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = np.sqrt(sum(q * q for q in g)) / np.sqrt(4.0 * t2)
        c = np.where(norm > 1e-9, 1.0 / norm, np.nan)
    c[holes] = np.nan
    return c


def correct_speed(c_tab, axes, grid: Grid3, omega: Box, x, boundary_value=None, steps=2,
                  method="spline", impl=None):
    """Defect correction of a speed table recovered as 1 / |grad tau|.

    The eikonal solver and the differentiation together map a speed c to
    a slightly biased c'.  Each step re-solves on the current estimate,
    recovers its speed the same way and rescales by (first estimate) / c'.
    """
    c0 = np.asarray(c_tab, dtype=float)
    c = c0.copy()
    pts = np.stack(np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij"), -1)
    holes = ~np.isfinite(c0)
    for _ in range(int(steps)):
        field = extend_to_grid(c, axes, grid, omega, boundary_value)
        tt = solve_on_speed(field, grid, x, omega=omega, impl=impl)
        t = tt.tau_at(pts.reshape(-1, 3)).reshape(c0.shape)
        t[holes] = np.nan
        c = c * c0 / recover_speed(t, axes, x, method)
    return c


def _fill_tau_squared(t2, axes, x, neighbors=40):
    """Fill missing tau^2 entries from nearby valid ones and tau^2(x) = 0.

    tau^2 is close to a quadratic around the source, so a thin-plate
    spline with quadratic polynomial part reproduces it well; the filled
    values only serve as stencil partners for their neighbours.
    """
    pts = np.stack(np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij"), -1)
    ok = np.isfinite(t2)
    known = np.vstack([pts[ok], np.asarray(x, dtype=float)[None]])
    vals = np.append(t2[ok], 0.0)
    rbf = RBFInterpolator(known, vals, neighbors=min(neighbors, len(vals)),
                          kernel="thin_plate_spline", degree=2)
    out = t2.copy()
    out[~ok] = rbf(pts[~ok])
    return out


# ------------------------------------------------------------- stage two

@dataclass(frozen=True)
class ResonanceEstimate:
    omega: float
    index: int
    reliable: bool


def detect_resonance(sweep, omega, scale="reciprocal", min_samples=32):
    """Peak frequency of a sweep, refined by a 3-point parabola.

    ``scale="linear"`` fits the parabola to the values, ``"reciprocal"`` to
    their inverse (exact for a Lorentzian line).  A peak on the first or
    last sample is returned unrefined and flagged unreliable.
    """
    p = np.asarray(sweep, dtype=float)
    w = np.asarray(omega, dtype=float)
    if p.shape != w.shape:
        raise ConfigError("sweep and frequency samples must match", "sweep")
    if p.size < min_samples:
        raise ConfigError(f"need at least {min_samples} frequency samples", "wgrid")
    i = int(np.argmax(p))
    if i == 0 or i == p.size - 1:
        return ResonanceEstimate(float(w[i]), i, False)
    if scale == "linear":
        y = p[i - 1:i + 2]
    elif scale == "reciprocal":
        if np.any(p[i - 1:i + 2] <= 0):
            return ResonanceEstimate(float(w[i]), i, False)
        y = 1.0 / p[i - 1:i + 2]
    else:
        raise ConfigError("scale must be 'linear' or 'reciprocal'", "scale")
    x0, x1, x2 = w[i - 1:i + 2]
    y0, y1, y2 = y
    num = (x1 - x0) ** 2 * (y1 - y2) - (x1 - x2) ** 2 * (y1 - y0)
    den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0)
    if den == 0:
        return ResonanceEstimate(float(x1), i, True)
    wv = float(x1 - 0.5 * num / den)
    return ResonanceEstimate(min(max(wv, x0), x2), i, True)


def recover_permittivity(omega_hat, lambda_n0, lorentz: LorentzParams):
    return invert_permittivity(omega_hat, lambda_n0, lorentz)


# ----------------------------------------------------------- stage three

def exit_plateau(trace, s, s_exit, degree=3, n_fit=None):
    """Trace value extrapolated back to the exit time from post-exit samples.

    After exit the trace is the plateau plus a tail that is a polynomial
    of degree K_max + 1 in s^2 vanishing at the exit time.  A least-squares
    fit in s^2 - s_exit^2 through the samples past ``s_exit + ds`` returns
    the plateau as its constant term.  NaN when too few samples exist.
    """
    p = np.asarray(trace, dtype=float)
    s = np.asarray(s, dtype=float)
    ds = float(np.median(np.diff(s)))
    n_fit = 2 * (degree + 1) if n_fit is None else n_fit
    idx = np.nonzero(s >= s_exit + ds)[0][:n_fit]
    if idx.size < degree + 1:
        return math.nan
    q = s[idx] ** 2 - s_exit ** 2
    scale = float(q.max())
    coef = np.polynomial.polynomial.polyfit(q / scale, p[idx], degree)
    return float(coef[0])


def extract_alpha_minus1(plateau_value, energy, grad_tau_norm, im_eps_p_value):
    """alpha_{-1} = plateau / (Im eps_p |grad tau| energy); NaN when ill-posed."""
    if not (energy >= 1e-12 and grad_tau_norm >= 1e-12 and im_eps_p_value > 0):
        return math.nan
    return float(plateau_value / (im_eps_p_value * grad_tau_norm * energy))


def recover_density(alpha_hat, det_factor, rho_x):
    """Return ``(rho_hat, g_hat)`` with g = 2 log(2 pi alpha / det) and rho = rho(x) e^g."""
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    det_factor = np.asarray(det_factor, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        arg = TWO_PI * alpha_hat / det_factor
        g = np.where(arg > 0, 2.0 * np.log(np.where(arg > 0, arg, 1.0)), np.nan)
    return rho_x * np.exp(g), g


# --------------------------------------------------------- field extension

def fill_masked(values, axes):
    """Replace NaN table entries by linear interpolation from the valid ones
    (nearest valid value outside their convex hull)."""
    v = np.array(values, dtype=float)
    bad = ~np.isfinite(v)
    if not bad.any():
        return v
    pts = np.stack(np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij"), -1)
    known, want = pts[~bad], pts[bad]
    fill = griddata(known, v[~bad], want, method="linear")
    miss = ~np.isfinite(fill)
    if miss.any():
        fill[miss] = griddata(known, v[~bad], want[miss], method="nearest")
    v[bad] = fill
    return v


def extend_to_grid(values, axes, grid: Grid3, omega: Box, boundary_value=None):
    """Extend a particle-grid table to a full-grid field.

    Linear interpolation inside the particle grid hull; outside it the hull
    value is blended linearly towards ``boundary_value`` (if given) across
    the gap to the face of Omega, then the whole field is tapered to that
    value in the grid margin like a phantom.  Masked table entries are
    filled from their nearest valid neighbour first.
    """
    v = np.asarray(values, dtype=float)
    bad = ~np.isfinite(v)
    if bad.all():
        raise ConfigError("no valid values to extend", "values")
    if bad.any():
        v = fill_masked(v, axes)
    method = "cubic" if min(len(a) for a in axes) >= 4 else "linear"
    interp = RegularGridInterpolator([np.asarray(a) for a in axes], v, method=method)
    lo = np.array([a[0] for a in axes])
    hi = np.array([a[-1] for a in axes])
    pts = grid.node_coords()
    clamped = np.clip(pts, lo, hi)
    inner = interp(clamped.reshape(-1, 3)).reshape(grid.dims)
    if boundary_value is None:
        return inner
    gap_lo = np.maximum(lo - np.asarray(omega.lo), 1e-12)
    gap_hi = np.maximum(np.asarray(omega.hi) - hi, 1e-12)
    t = np.maximum(np.maximum((lo - pts) / gap_lo, (pts - hi) / gap_hi), 0.0).max(axis=-1)
    t = np.clip(t, 0.0, 1.0)
    ext = (1 - t) * inner + t * boundary_value
    w = taper_weight(grid, omega)
    return boundary_value + w * (ext - boundary_value)


def recovered_phantom(c_full, rho_full, grid: Grid3, omega: Box, c_b, rho_b, eps_inf, M):
    return Phantom(grid=grid, c=c_full, rho=rho_full, eps0_re=np.full(grid.dims, eps_inf),
                   eps0_im=np.zeros(grid.dims), omega_domain=omega, c_background=c_b,
                   rho_background=rho_b, eps_infinity=eps_inf, M=M, name="recovered",
                   validate=False)


def rebuild_green(c_hat, rho_hat, x, K_max, grid: Grid3, omega: Box, impl=None):
    """Kernel coefficients on the recovered fields (full-grid arrays)."""
    ph = recovered_phantom(c_hat, rho_hat, grid, omega, float(c_hat[0, 0, 0]),
                           float(rho_hat[0, 0, 0]), 1.0, 1e6)
    tt = solve_on_speed(ph.c, grid, x, omega=omega, impl=impl)
    return build_kernel(tt, ph, K_max=K_max, impl=impl), tt


# --------------------------------------------------------------- pipeline

@dataclass(eq=False)
class ReconstructionReport:
    z: np.ndarray
    axes: list
    tau_hat: np.ndarray
    c_hat: np.ndarray
    omega_hat: np.ndarray
    eps0_hat: np.ndarray
    alpha_minus1_hat: np.ndarray
    det_factor_hat: np.ndarray
    g_hat: np.ndarray
    rho_hat: np.ndarray
    c_field: np.ndarray | None = None
    rho_field: np.ndarray | None = None
    kernel: object = None
    diagnostics: dict = field(default_factory=dict)

    def table(self, name):
        """Per-z values of ``name`` reshaped onto the particle grid."""
        _, idx = subgrid_axes(self.z)
        vals = np.asarray(getattr(self, name))
        out = np.full(tuple(len(a) for a in self.axes), np.nan, dtype=vals.dtype)
        out[tuple(idx.T)] = vals
        return out


DEFAULT_PRIOR_KEYS = ("lorentz", "lambda_n0", "a", "mode_moment", "polarization", "incident_dir")


def _particle_from(priors, meta):
    def get(k):
        return priors[k] if k in priors else meta[k]
    L = get("lorentz")
    lor = L if isinstance(L, LorentzParams) else LorentzParams(**L)
    return Nanoparticle(z=(0.0, 0.0, 0.0), a=get("a"), lorentz=lor, lambda_n0=get("lambda_n0"),
                        mode_moment=tuple(get("mode_moment")),
                        incident_dir=tuple(get("incident_dir")),
                        polarization=tuple(get("polarization")))


def run_pipeline(ms: MeasurementSet, priors: dict, grid: Grid3 | None = None,
                 omega: Box | None = None, rebuild=True, K_max=2, impl=None):
    """Stages 1-3 plus the kernel rebuild; per-z failures are recorded, not fatal.

    ``priors`` must hold ``rho_x`` (density at the boundary point).  It may
    hold the particle description (otherwise read from the dataset), the
    speed and density outside Omega (``c_boundary``, ``rho_boundary``), and
    the grid/Omega used for the determinant re-solve.
    """
    if ms.pstar.size == 0 or len(ms.z) == 0:
        raise ConfigError("empty dataset", "data")
    if "rho_x" not in priors:
        raise ConfigError("the density at the boundary point is required", "priors.rho_x")
    part = _particle_from(priors, ms.meta)
    floor = float(priors.get("noise_floor", ms.meta.get("noise_floor", 0.0)))
    s, w = ms.s, ms.omega
    nz = len(ms.z)
    valid = set(ms.meta.get("valid", range(nz)))
    failures = {"arrival": [], "resonance": [], "plateau": []}

    # stage 1: arrival times
    tau_hat = np.full(nz, np.nan)
    arrival_w = np.full(nz, -1, dtype=int)
    for iz in range(nz):
        if iz not in valid:
            failures["arrival"].append({"index": iz, "reason": "skipped by forward model"})
            continue
        iw = int(np.argmax(np.abs(ms.pstar[iz]).sum(axis=0)))
        try:
            tau_hat[iz] = detect_arrival(ms.pstar[iz, :, iw], s, floor)
            arrival_w[iz] = iw
        except DetectionError as e:
            failures["arrival"].append({"index": iz, "reason": str(e)})
    axes, idx = subgrid_axes(ms.z)
    deriv = priors.get("speed_derivative", "spline")
    tau_tab = np.full(tuple(len(a) for a in axes), np.nan)
    tau_tab[tuple(idx.T)] = tau_hat
    c_tab = recover_speed(tau_tab, axes, ms.x, deriv)
    c_hat = c_tab[tuple(idx.T)]
    tail_degree = int(priors.get("K_max", ms.meta.get("config", {}).get("K_max", 2))) + 1
    if priors.get("refine_arrival", True):
        # second pass: half-rise of the plateau extrapolated to the exit time
        for iz in np.nonzero(np.isfinite(tau_hat) & np.isfinite(c_hat))[0]:
            tr = ms.pstar[iz, :, arrival_w[iz]]
            level = exit_plateau(tr, s, tau_hat[iz] + part.a * (1.0 + 1.0 / c_hat[iz]),
                                 degree=tail_degree)
            if np.isfinite(level) and level > 10.0 * floor:
                tau_hat[iz] = detect_arrival(tr, s, floor, plateau=level)
        tau_tab[tuple(idx.T)] = tau_hat
        c_tab = recover_speed(tau_tab, axes, ms.x, deriv)
    grid = grid or _grid_from(priors, ms)
    omega = omega or _omega_from(priors, ms)
    c_b = priors.get("c_boundary")
    steps = int(priors.get("speed_correction", 2))
    if steps > 0 and np.isfinite(c_tab).any():
        c_tab = correct_speed(c_tab, axes, grid, omega, ms.x, c_b, steps, deriv, impl)
    c_hat = c_tab[tuple(idx.T)]

    # stage 2: resonance peak -> permittivity
    ds = float(np.median(np.diff(s)))
    omega_hat = np.full(nz, np.nan)
    eps_hat = np.full(nz, np.nan + 0j)
    s_star = np.full(nz, -1, dtype=int)
    for iz in range(nz):
        if not (np.isfinite(tau_hat[iz]) and np.isfinite(c_hat[iz])):
            continue
        t_star = tau_hat[iz] + part.a * (1.0 + 1.0 / c_hat[iz]) + 2.0 * ds
        later = np.nonzero(s >= t_star)[0]
        if later.size == 0:
            failures["plateau"].append({"index": iz, "reason": "no post-exit samples"})
            continue
        s_star[iz] = int(later[0])
        try:
            res = detect_resonance(ms.pstar[iz, s_star[iz], :], w)
        except ConfigError as e:
            failures["resonance"].append({"index": iz, "reason": str(e)})
            continue
        if not res.reliable:
            failures["resonance"].append({"index": iz, "reason": "peak on sweep boundary"})
        omega_hat[iz] = res.omega
        eps_hat[iz] = recover_permittivity(res.omega, part.lambda_n0, part.lorentz)

    # stage 3: plateau -> alpha_{-1} -> density
    im_w = im_eps_p(part, w)
    alpha_hat = np.full(nz, np.nan)
    stage3_w = np.full(nz, -1, dtype=int)
    for iz in range(nz):
        if s_star[iz] < 0 or not np.isfinite(eps_hat[iz]):
            continue
        e0 = complex(eps_hat[iz].real, 0.0)
        plateau = ms.pstar[iz, s_star[iz], :]
        ok = plateau > 10.0 * floor
        if not ok.any():
            failures["plateau"].append({"index": iz, "reason": "plateau below 10 x floor"})
            continue
        p_at = part.moved(z=ms.z[iz])
        lam = part.lambda_n0
        eps_p = lorentz_permittivity(part.lorentz, w)
        f = e0 * (1 - lam) + lam * eps_p
        sens = np.where(ok, 2 * lam * np.abs(eps_p) / (abs(e0) * np.abs(f)), np.inf)
        j = int(np.argmin(sens))
        E = field_energy(p_at, None, w[j], eps0=e0)
        s_exit = tau_hat[iz] + part.a * (1.0 + 1.0 / c_hat[iz])
        level = exit_plateau(ms.pstar[iz, :, j], s, s_exit, degree=tail_degree)
        if not np.isfinite(level):
            failures["plateau"].append({"index": iz, "reason": "too few post-exit samples"})
            continue
        alpha_hat[iz] = extract_alpha_minus1(level, E, 1.0 / c_hat[iz], im_w[j])
        stage3_w[iz] = j

    # determinant factor from the recovered speed
    c_field = extend_to_grid(c_tab, axes, grid, omega, c_b)
    tt_hat = solve_on_speed(c_field, grid, ms.x, omega=omega, impl=impl)
    region = region_slices(grid, omega, 1)
    det_full = np.full(grid.dims, np.nan)
    det_full[region] = determinant_factor(c_field, grid, tt_hat.source_index, region, impl=impl)
    det_hat = trilinear(det_full, grid, ms.z)
    rho_hat, g_hat = recover_density(alpha_hat, det_hat, float(priors["rho_x"]))

    report = ReconstructionReport(z=ms.z, axes=axes, tau_hat=tau_hat, c_hat=c_hat,
                                  omega_hat=omega_hat, eps0_hat=eps_hat,
                                  alpha_minus1_hat=alpha_hat, det_factor_hat=det_hat,
                                  g_hat=g_hat, rho_hat=rho_hat, c_field=c_field)
    report.diagnostics = {
        "failures": failures,
        "masked": {k: int(np.sum(~np.isfinite(np.asarray(getattr(report, k)).real)))
                   for k in ("tau_hat", "c_hat", "omega_hat", "rho_hat")},
        "arrival_omega_index": arrival_w.tolist(), "stage3_omega_index": stage3_w.tolist(),
        "stage3_s_index": s_star.tolist(), "noise_floor": floor,
    }
    if rebuild:
        try:
            rho_tab = np.full(tau_tab.shape, np.nan)
            rho_tab[tuple(idx.T)] = rho_hat
            rho_field = extend_to_grid(rho_tab, axes, grid, omega,
                                       priors.get("rho_boundary", float(priors["rho_x"])))
            c_reb = c_field if c_b is not None else extend_to_grid(c_tab, axes, grid, omega,
                                                                   float(np.nanmean(c_hat)))
            kern, _ = rebuild_green(c_reb, rho_field, ms.x, K_max, grid, omega, impl=impl)
            report.rho_field = rho_field
            report.kernel = kern
        except (NanopatError, ValueError) as e:
            report.diagnostics["rebuild_error"] = str(e)
    return report


def _grid_from(priors, ms):
    g = priors.get("grid") or ms.meta.get("grid")
    if g is None:
        raise ConfigError("grid geometry needed for the determinant re-solve", "priors.grid")
    if isinstance(g, Grid3):
        return g
    return Grid3(tuple(g["origin"]), g["h"], tuple(g["dims"]))


def _omega_from(priors, ms):
    o = priors.get("omega_domain") or ms.meta.get("omega_domain")
    if o is None:
        raise ConfigError("Omega box needed for the determinant re-solve", "priors.omega_domain")
    if isinstance(o, Box):
        return o
    return Box(tuple(o["lo"]), tuple(o["hi"]))
