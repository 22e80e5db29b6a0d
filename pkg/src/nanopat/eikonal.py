"""Travel times |grad tau| = 1/c by factored fast marching, and geodesic tracing.

The solver writes tau = tau0 * u with tau0 = |y - x| / c(x).  The factor u
is smooth at the source, so gradients and interpolation act on u and the
singular part is reinserted analytically.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ConfigError, ConvergenceError, NumericalError
from .media import Box, Grid3, Phantom, trilinear


class AccuracyWarning(RuntimeWarning):
    """Result computed, but in a regime where the discretisation is poor."""


@dataclass(frozen=True, eq=False)
class TravelTimeField:
    grid: Grid3
    source: tuple          # world coordinates of the source node
    source_index: tuple
    c_source: float
    tau: np.ndarray
    u: np.ndarray
    grad_u: np.ndarray     # (3, nx, ny, nz), world units
    order: np.ndarray      # fast-marching acceptance rank
    c: np.ndarray          # speed used for the solve
    backend: str = "cython"
    omega: Box | None = None

    @property
    def frozen(self):
        return self.order >= 0

    def tau_at(self, points):
        """Factored interpolation tau0(y) * u(y); exact for constant speed."""
        p = np.asarray(points, dtype=float)
        r = np.linalg.norm(p - np.asarray(self.source), axis=-1)
        return r / self.c_source * trilinear(self.u, self.grid, p)

    def grad_at(self, points):
        """Gradient of tau at world points, shape (..., 3)."""
        p = np.asarray(points, dtype=float)
        d = p - np.asarray(self.source)
        r = np.linalg.norm(d, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            dir0 = d / r[..., None]
        uu = trilinear(self.u, self.grid, p)
        gu = np.stack([trilinear(self.grad_u[a], self.grid, p) for a in range(3)], axis=-1)
        return uu[..., None] * dir0 / self.c_source + (r / self.c_source)[..., None] * gu

    def distance_to_source(self, points):
        return np.linalg.norm(np.asarray(points, dtype=float) - np.asarray(self.source), axis=-1)

    def grad_field(self):
        """Gradient of tau at every node (NaN at the source node)."""
        pts = self.grid.node_coords()
        d = pts - np.asarray(self.source)
        r = np.linalg.norm(d, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            dir0 = d / r[..., None]
        g = self.u[..., None] * dir0 / self.c_source + (r / self.c_source)[..., None] * \
            np.moveaxis(self.grad_u, 0, -1)
        return np.moveaxis(g, -1, 0)

    def eikonal_residual(self, exclude_radius=None):
        """| |grad tau| c - 1 | from central differences of tau on interior nodes
        away from the source (default radius 3h)."""
        h = self.grid.h
        g = np.gradient(self.tau, h)
        res = np.abs(np.sqrt(sum(q * q for q in g)) * self.c - 1.0)
        mask = np.zeros(self.grid.dims, dtype=bool)
        mask[1:-1, 1:-1, 1:-1] = True
        rad = 3 * h if exclude_radius is None else exclude_radius
        mask &= self.distance_to_source(self.grid.node_coords()) > rad
        mask &= self.frozen
        return res[mask]


def _snap_source(grid: Grid3, omega: Box | None, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise ConfigError("source must be a 3-vector", "source")
    if omega is not None:
        # project onto the nearest face of Omega before snapping to a node
        lo, hi = np.asarray(omega.lo), np.asarray(omega.hi)
        p = np.clip(x, lo, hi)
        if not omega.on_boundary(p):
            gaps = np.concatenate([p - lo, hi - p])
            f = int(np.argmin(gaps))
            p[f % 3] = lo[f % 3] if f < 3 else hi[f % 3]
        x = p
    idx = grid.nearest_node(x)
    return idx, tuple(float(v) for v in grid.to_world(idx))


def solve_from_node(c, grid: Grid3, node, impl=None, omega=None):
    """Fast marching from grid node ``node`` on speed array ``c``."""
    c = np.ascontiguousarray(c, dtype=float)
    if c.shape != grid.dims:
        raise ConfigError(f"speed shape {c.shape} != grid dims {grid.dims}", "c")
    if not np.all(np.isfinite(c)) or np.any(c <= 0):
        raise ConfigError("speed must be finite and positive everywhere", "c")
    node = tuple(int(v) for v in node)
    if any(n < 0 or n >= d for n, d in zip(node, grid.dims)):
        raise ConfigError(f"source node {node} outside the grid", "source")
    mod = backend.get(impl)
    tau, u, order = mod.fmm_factored(c, grid.h, *node)
    gu = np.ascontiguousarray(np.stack(np.gradient(u, grid.h)))
    for a in (tau, u, gu, order):
        a.setflags(write=False)
    return TravelTimeField(grid=grid, source=tuple(float(v) for v in grid.to_world(node)),
                           source_index=node, c_source=float(c[node]), tau=tau, u=u,
                           grad_u=gu, order=order, c=c,
                           backend="python" if mod is backend.python_impl else "cython",
                           omega=omega)


def solve_travel_time(phantom: Phantom, x, impl=None):
    """Travel time from the boundary point ``x`` (snapped to a boundary node)."""
    idx, _ = _snap_source(phantom.grid, phantom.omega_domain, x)
    return solve_from_node(phantom.c, phantom.grid, idx, impl=impl, omega=phantom.omega_domain)


def solve_on_speed(c, grid: Grid3, x, omega: Box | None = None, impl=None):
    idx, _ = _snap_source(grid, omega, x)
    return solve_from_node(c, grid, idx, impl=impl, omega=omega)


# ----------------------------------------------------------------- tracing

@dataclass(frozen=True)
class Geodesic:
    points: np.ndarray      # (N, 3) from the source to y
    arclen_tau: np.ndarray  # cumulative travel time along the polyline
    tau_field: float        # tau(x, y) read from the field

    @property
    def total(self):
        return float(self.arclen_tau[-1])


def default_step(grid: Grid3):
    return 0.5 * grid.h


def max_steps_for(tt: TravelTimeField, tau_values, step):
    cmax = float(tt.c.max())
    t = np.nan_to_num(np.asarray(tau_values, dtype=float), nan=0.0, posinf=0.0)
    return (np.ceil(10.0 * t * cmax / step) + 10).astype(np.int64)


_STATUS = {1: "step limit reached", 2: "left the grid", 3: "degenerate gradient"}


def trace_geodesic(tt: TravelTimeField, y, step=None, impl=None):
    """Back-trace the geodesic from ``y`` to the source and return it source-first."""
    g = tt.grid
    y = np.asarray(y, dtype=float)
    if not g.contains(y):
        raise ConfigError("target outside the grid", "target")
    tval = float(tt.tau_at(y))
    if not math.isfinite(tval):
        raise NumericalError("travel time is not finite at the target")
    step = default_step(g) if step is None else float(step)
    if tt.distance_to_source(y) == 0.0:
        return Geodesic(points=y[None, :].copy(), arclen_tau=np.zeros(1), tau_field=0.0)
    mod = backend.get(impl or tt.backend)
    nmax = int(max_steps_for(tt, [tval], step)[0])
    path, status = mod.trace_path(tt.u, tt.grad_u, tt.c, g.to_index(y),
                                  np.asarray(tt.source_index, dtype=float), tt.c_source, g.h,
                                  step, g.h, nmax)
    if status != 0:
        raise ConvergenceError(f"geodesic trace from {tuple(y)} failed: {_STATUS[status]} "
                               "(unique-geodesic hypothesis suspect)")
    pts = g.to_world(path[::-1, :3])
    total = path[-1, 3]
    return Geodesic(points=pts, arclen_tau=total - path[::-1, 3], tau_field=tval)


def trace_many(tt: TravelTimeField, points, F=None, G=None, kpow=0, step=None, impl=None):
    """Integrate along the geodesics ending at each of ``points`` (M, 3).

    Returns ``(int_F, int_G, arclen, status)``; ``F`` is a node field
    integrated as F tau^kpow dtau, ``G`` a (3, ...) node field integrated as
    the 1-form G.dxi from the source to the point.
    """
    g = tt.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    step = default_step(g) if step is None else float(step)
    mod = backend.get(impl or tt.backend)
    tvals = tt.tau_at(pts)
    nmax = max_steps_for(tt, tvals, step)
    Fa = None if F is None else np.ascontiguousarray(F, dtype=float)
    Ga = None if G is None else np.ascontiguousarray(G, dtype=float)
    return mod.trace_integrate(tt.u, tt.grad_u, tt.c, Fa, Ga,
                               np.ascontiguousarray(g.to_index(pts)),
                               np.asarray(tt.source_index, dtype=float), tt.c_source, g.h,
                               step, g.h, int(kpow), nmax)


@dataclass
class HypothesisReport:
    passed: bool
    n_samples: int
    failures: list = field(default_factory=list)   # (point, reason)


def check_geodesic_hypotheses(tt: TravelTimeField, n_samples=64, seed=0, omega: Box | None = None,
                              tol=None, impl=None):
    """Heuristic test of the unique-geodesic assumption.

    Traces from random points of Omega and flags traces that fail or leave
    Omega.  Passing is evidence, not proof.
    """
    omega = omega or tt.omega
    if omega is None:
        raise ConfigError("an Omega box is required", "omega")
    tol = 0.25 * tt.grid.h if tol is None else tol
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(omega.lo), np.asarray(omega.hi)
    failures = []
    n = 0
    for y in lo + (hi - lo) * rng.random((int(n_samples), 3)):
        if tt.distance_to_source(y) < 2 * tt.grid.h:
            continue
        n += 1
        try:
            geo = trace_geodesic(tt, y, impl=impl)
        except NumericalError as e:
            failures.append((tuple(y), str(e)))
            continue
        if not np.all(omega.contains(geo.points, tol)):
            failures.append((tuple(y), "path leaves Omega"))
    return HypothesisReport(passed=not failures, n_samples=n, failures=failures)


def grad_tau(tt: TravelTimeField, y):
    """Gradient of tau at ``y`` from central differences of the smooth factor."""
    y = np.asarray(y, dtype=float)
    dist = float(tt.distance_to_source(y))
    if dist == 0.0:
        raise NumericalError("gradient of tau is undefined at the source")
    if dist < tt.grid.h:
        warnings.warn("gradient within one cell of the source is inaccurate", AccuracyWarning,
                      stacklevel=2)
    return tt.grad_at(y)


# ------------------------------------------------------------------ oracle

_NEIGHBOURS = [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
               if (i, j, k) > (0, 0, 0)]


def dijkstra_travel_time(c, grid: Grid3, node):
    """Shortest path on the 26-neighbour lattice with edge time len * mean(1/c)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra

    c = np.asarray(c, dtype=float)
    nx, ny, nz = c.shape
    ids = np.arange(c.size).reshape(c.shape)
    slow = 1.0 / c
    rows, cols, vals = [], [], []
    for di, dj, dk in _NEIGHBOURS:
        a = (slice(max(-di, 0), nx - max(di, 0)), slice(max(-dj, 0), ny - max(dj, 0)),
             slice(max(-dk, 0), nz - max(dk, 0)))
        b = (slice(max(di, 0), nx + min(di, 0)), slice(max(dj, 0), ny + min(dj, 0)),
             slice(max(dk, 0), nz + min(dk, 0)))
        length = grid.h * math.sqrt(di * di + dj * dj + dk * dk)
        rows.append(ids[a].ravel())
        cols.append(ids[b].ravel())
        vals.append((0.5 * length * (slow[a] + slow[b])).ravel())
    graph = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(c.size, c.size)).tocsr()
    src = int(np.ravel_multi_index(tuple(node), c.shape))
    return dijkstra(graph, directed=False, indices=src).reshape(c.shape)
