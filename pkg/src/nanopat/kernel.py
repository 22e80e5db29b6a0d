"""Progressing-wave coefficients of the variable-speed Green's kernel.

For a fixed boundary source x the kernel is

    G(t, y) = sum_{k >= -1} alpha_k(y) Theta_k(t^2 - tau(y)^2)

with Theta_{-1} a Dirac mass, Theta_k(t) = t^k / k! for t >= 0.  The
amplitude alpha_{-1} combines a geometric-spreading determinant with the
exponential of half the geodesic integral of grad log rho; higher
coefficients follow a transport recurrence integrated along geodesics.

Coefficient arrays live on the full grid and are NaN where masked or
outside the computed region (Omega plus a halo).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .eikonal import TravelTimeField, solve_from_node, trace_many
from .errors import ConfigError, MaskedPointError, NumericalError
from .media import Box, Grid3, Phantom, trilinear

TWO_PI = 2.0 * math.pi


def theta_k(k, t):
    """Theta_k(t) = t^k / k! for t >= 0 and 0 otherwise (vectorised)."""
    if k == -1:
        raise ConfigError("Theta_{-1} is a Dirac mass; use GreenEval.singular_coeff", "k")
    if k < -1 or int(k) != k:
        raise ConfigError("k must be an integer >= 0", "k")
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 0, np.abs(t) ** k / math.factorial(int(k)), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class KernelCoefficients:
    source: tuple
    K_max: int
    alpha: tuple             # alpha[0] = alpha_{-1}, alpha[k + 1] = alpha_k
    det_factor: np.ndarray
    rho_line_integral: np.ndarray
    region: tuple            # index slices of the computed block
    grid: Grid3

    def alpha_k(self, k):
        return self.alpha[k + 1]

    @property
    def mask(self):
        """True where alpha_{-1} is defined."""
        return np.isfinite(self.alpha[0])

    def values_at(self, points):
        """Interpolated (alpha_{-1}, ..., alpha_{K_max}) at points, shape (..., K_max + 2)."""
        return np.stack([trilinear(a, self.grid, points) for a in self.alpha], axis=-1)


def region_slices(grid: Grid3, omega: Box, halo: int):
    sl = omega.node_slices(grid)
    return tuple(slice(max(s.start - halo, 0), min(s.stop + halo, n)) for s, n in zip(sl, grid.dims))


def _region_points(grid: Grid3, region):
    ax = [grid.axis(a)[region[a]] for a in range(3)]
    return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)


def grad_tau_squared(tt: TravelTimeField):
    """grad_y tau^2 = 2 u^2 (y - x)/c_x^2 + 2 tau0^2 u grad u, shape (3, ...)."""
    pts = tt.grid.node_coords()
    d = np.moveaxis(pts - np.asarray(tt.source), -1, 0)
    tau0 = np.sqrt(np.sum(d * d, axis=0)) / tt.c_source
    return 2.0 * tt.u ** 2 * d / tt.c_source ** 2 + 2.0 * tau0 ** 2 * tt.u * tt.grad_u


def determinant_factor(c, grid: Grid3, source_index, region, impl=None):
    """sqrt(det d/dx(-1/2 grad_y tau^2)) on ``region``; NaN where det <= 0.

    The x-derivative uses central differences over the six sources
    shifted by one node along each axis.
    """
    h = grid.h
    shape = tuple(s.stop - s.start for s in region)
    mat = np.empty(shape + (3, 3))
    for i in range(3):
        g = []
        for side in (1, -1):
            node = list(source_index)
            node[i] += side
            if not 0 <= node[i] < grid.dims[i]:
                raise ConfigError("source too close to the grid edge for shifted solves", "source")
            tt = solve_from_node(c, grid, node, impl=impl)
            g.append(grad_tau_squared(tt)[(slice(None),) + tuple(region)])
        for j in range(3):
            mat[..., i, j] = -0.5 * (g[0][j] - g[1][j]) / (2.0 * h)
    det = np.linalg.det(mat)
    with np.errstate(invalid="ignore"):
        return np.where(det > 0, np.sqrt(np.where(det > 0, det, 0.0)), np.nan)


def _near_source(tt: TravelTimeField, region, radius):
    pts = _region_points(tt.grid, region)
    return tt.distance_to_source(pts) <= radius, pts


def _embed(grid, region, block):
    full = np.full(grid.dims, np.nan)
    full[region] = block
    full.setflags(write=False)
    return full


def alpha_minus1(tt: TravelTimeField, phantom: Phantom, region=None, halo=3, impl=None,
                 det_factor=None):
    """Leading amplitude alpha_{-1} on ``region`` (default Omega + halo).

    Returns ``(alpha, det_factor, rho_line_integral, report)`` as full-grid
    arrays; masked nodes are NaN and counted in ``report``.
    """
    grid = tt.grid
    if region is None:
        region = region_slices(grid, phantom.omega_domain, halo)
    if np.any(phantom.rho <= 0):
        raise ConfigError("density must be positive", "rho")
    if det_factor is None:
        det_factor = determinant_factor(tt.c, grid, tt.source_index, region, impl=impl)
    near, pts = _near_source(tt, region, 2.0 * grid.h * (1 + 1e-9))
    logrho = np.log(phantom.rho)
    grad_logrho = np.stack(np.gradient(logrho, grid.h))
    if np.all(np.abs(grad_logrho) == 0):
        line = np.zeros(pts.shape[:-1])
        status = np.zeros(pts.shape[:-1], dtype=np.int64)
    else:
        flat = pts.reshape(-1, 3)
        _, line, _, status = trace_many(tt, flat, G=grad_logrho, impl=impl)
        line = line.reshape(pts.shape[:-1])
        status = status.reshape(pts.shape[:-1])
    alpha = det_factor * np.exp(0.5 * line) / TWO_PI
    bad_trace = (status != 0) & ~near
    neg_det = ~np.isfinite(det_factor) & ~near
    alpha = np.where(near | bad_trace | neg_det, np.nan, alpha)
    line = np.where(near | (status != 0), np.nan, line)
    report = {"masked_source": int(near.sum()), "masked_trace": int(bad_trace.sum()),
              "masked_negative_det": int(neg_det.sum())}
    return (_embed(grid, region, alpha), _embed(grid, region, det_factor),
            _embed(grid, region, line), report)


def laplacian(f, h):
    """Seven-point Laplacian; NaN on the outer layer and next to NaN values."""
    out = np.full(f.shape, np.nan)
    c = f[1:-1, 1:-1, 1:-1]
    out[1:-1, 1:-1, 1:-1] = (f[2:, 1:-1, 1:-1] + f[:-2, 1:-1, 1:-1] + f[1:-1, 2:, 1:-1]
                             + f[1:-1, :-2, 1:-1] + f[1:-1, 1:-1, 2:] + f[1:-1, 1:-1, :-2]
                             - 6.0 * c) / (h * h)
    return out


def central_gradient(f, h):
    out = np.full((3,) + f.shape, np.nan)
    out[0, 1:-1] = (f[2:] - f[:-2]) / (2 * h)
    out[1, :, 1:-1] = (f[:, 2:] - f[:, :-2]) / (2 * h)
    out[2, :, :, 1:-1] = (f[:, :, 2:] - f[:, :, :-2]) / (2 * h)
    return out


def transport_source(alpha_prev, alpha_m1, c, rho, h):
    """[c^2 Lap(alpha_prev) - c^2 grad log rho . grad alpha_prev] / alpha_{-1}."""
    lap = laplacian(alpha_prev, h)
    ga = central_gradient(alpha_prev, h)
    glr = np.stack(np.gradient(np.log(rho), h))
    with np.errstate(invalid="ignore", divide="ignore"):
        return c * c * (lap - np.sum(glr * ga, axis=0)) / alpha_m1


def alpha_k_field(prev: KernelCoefficients, k, tt: TravelTimeField, phantom: Phantom, impl=None):
    """alpha_k from alpha_{k-1} by integrating the transport source along geodesics."""
    if k < 0 or k > len(prev.alpha) - 1:
        raise ConfigError(f"need alpha_{k - 1} to build alpha_{k}", "k")
    grid = tt.grid
    a_prev = prev.alpha[k]
    a_m1 = prev.alpha[0]
    region = prev.region
    if np.all(np.nan_to_num(a_prev[region]) == 0):
        out = np.where(np.isfinite(a_prev), 0.0, np.nan)
        out.setflags(write=False)
        return out
    F = transport_source(a_prev, a_m1, tt.c, phantom.rho, grid.h)
    pts = _region_points(grid, region)
    flat = pts.reshape(-1, 3)
    integral, _, _, status = trace_many(tt, flat, F=F, kpow=k, impl=impl)
    tau_y = tt.tau_at(flat)
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = a_m1[region].ravel() / (4.0 * tau_y ** (k + 1)) * integral
    too_close = tau_y < grid.h / float(tt.c.max())
    vals = np.where((status != 0) | too_close | ~np.isfinite(F[region].ravel()), np.nan, vals)
    return _embed(grid, region, vals.reshape(pts.shape[:-1]))


def build_kernel(tt: TravelTimeField, phantom: Phantom, K_max=2, halo=None, impl=None,
                 det_factor=None):
    """All coefficients alpha_{-1} .. alpha_{K_max} for the source of ``tt``."""
    if K_max < 0:
        raise ConfigError("K_max must be >= 0", "K_max")
    halo = K_max + 1 if halo is None else halo
    region = region_slices(tt.grid, phantom.omega_domain, halo)
    if det_factor is not None and det_factor.shape == tt.grid.dims:
        det_factor = det_factor[region]
    a_m1, det, line, report = alpha_minus1(tt, phantom, region=region, impl=impl,
                                           det_factor=det_factor)
    coeffs = KernelCoefficients(source=tt.source, K_max=K_max, alpha=(a_m1,), det_factor=det,
                                rho_line_integral=line, region=region, grid=tt.grid)
    alphas = [a_m1]
    for k in range(K_max + 1):
        alphas.append(alpha_k_field(coeffs, k, tt, phantom, impl=impl))
        coeffs = KernelCoefficients(source=tt.source, K_max=K_max, alpha=tuple(alphas),
                                    det_factor=det, rho_line_integral=line, region=region,
                                    grid=tt.grid)
    object.__setattr__(coeffs, "report", report)
    return coeffs


@dataclass(frozen=True)
class GreenEval:
    singular_time: float
    singular_coeff: float
    alpha: tuple             # alpha_0 .. alpha_{K_max} at y

    def smooth_value(self, t):
        """sum_k alpha_k Theta_k(t^2 - tau^2); zero for t < tau."""
        t = np.asarray(t, dtype=float)
        arg = t * t - self.singular_time ** 2
        arg = np.where(t < self.singular_time, -1.0, arg)
        out = sum(a * theta_k(k, arg) for k, a in enumerate(self.alpha))
        return float(out) if np.ndim(out) == 0 else out


def green_eval(coeffs: KernelCoefficients, tt: TravelTimeField, y):
    y = np.asarray(y, dtype=float)
    vals = coeffs.values_at(y)
    if not np.all(np.isfinite(vals)):
        raise MaskedPointError(f"kernel coefficients are masked at {tuple(y)}")
    tau = float(tt.tau_at(y))
    if not tau > 0:
        raise NumericalError("travel time must be positive at the evaluation point")
    return GreenEval(singular_time=tau, singular_coeff=float(vals[0]) / (2.0 * tau),
                     alpha=tuple(float(v) for v in vals[1:]))
