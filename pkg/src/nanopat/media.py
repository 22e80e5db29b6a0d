"""Material fields, the Lorentz permittivity model and phantom generators.

All quantities are nondimensional.  Every field lives on one regular grid
that contains the imaging box ``Omega`` plus a margin in which the fields
are blended smoothly to their background constants.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PoleError

FIELD_NAMES = ("c", "rho", "eps0_re", "eps0_im")


@dataclass(frozen=True)
class Grid3:
    """Regular grid geometry: node (i, j, k) sits at origin + h*(i, j, k)."""

    origin: tuple
    h: float
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "h", float(self.h))
        if len(self.origin) != 3 or len(self.dims) != 3:
            raise ConfigError("origin and dims must have three entries", "grid")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ConfigError("spacing must be positive", "grid.h")
        if min(self.dims) < 3:
            raise ConfigError("need at least 3 nodes per axis", "grid.dims")

    @property
    def shape(self):
        return self.dims

    @property
    def upper(self):
        return tuple(o + self.h * (n - 1) for o, n in zip(self.origin, self.dims))

    def axis(self, a):
        return self.origin[a] + self.h * np.arange(self.dims[a])

    def node_coords(self):
        """Array of shape dims + (3,) with the position of every node."""
        return np.stack(np.meshgrid(*(self.axis(a) for a in range(3)), indexing="ij"), axis=-1)

    def to_index(self, points):
        """Fractional node index; values within 1e-9 of an integer snap to it."""
        f = (np.asarray(points, dtype=float) - np.asarray(self.origin)) / self.h
        r = np.round(f)
        return np.where(np.abs(f - r) < 1e-9, r, f)

    def to_world(self, index):
        return np.asarray(self.origin) + self.h * np.asarray(index, dtype=float)

    def nearest_node(self, point):
        idx = np.rint(self.to_index(point)).astype(int)
        return tuple(int(v) for v in np.clip(idx, 0, np.asarray(self.dims) - 1))

    def contains(self, points, tol=1e-9):
        f = self.to_index(points)
        return np.all((f >= -tol) & (f <= np.asarray(self.dims) - 1 + tol), axis=-1)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi]."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ConfigError("box must have hi > lo on every axis", "omega_domain")

    @property
    def diameter(self):
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    @property
    def center(self):
        return tuple(0.5 * (a + b) for a, b in zip(self.lo, self.hi))

    def contains(self, points, tol=1e-12):
        p = np.asarray(points, dtype=float)
        return np.all((p >= np.asarray(self.lo) - tol) & (p <= np.asarray(self.hi) + tol), axis=-1)

    def distance_outside(self, points):
        """Per-axis distance outside the box (zero inside), shape (..., 3)."""
        p = np.asarray(points, dtype=float)
        return np.maximum(np.maximum(np.asarray(self.lo) - p, p - np.asarray(self.hi)), 0.0)

    def node_slices(self, grid: Grid3):
        """Index slices of the grid nodes inside the box."""
        lo = np.ceil(grid.to_index(self.lo) - 1e-9).astype(int)
        hi = np.floor(grid.to_index(self.hi) + 1e-9).astype(int)
        return tuple(slice(int(a), int(b) + 1) for a, b in zip(lo, hi))

    def on_boundary(self, point, tol=1e-9):
        p = np.asarray(point, dtype=float)
        if not self.contains(p, tol):
            return False
        return bool(np.any(np.isclose(p, self.lo, atol=tol) | np.isclose(p, self.hi, atol=tol)))


def _readonly(a):
    a = np.array(a, dtype=float, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Phantom:
    """Gridded material fields with their background constants.

    Arrays are copied and made read-only on construction; validation
    raises ``ConfigError`` unless ``validate=False``.
    """

    grid: Grid3
    c: np.ndarray
    rho: np.ndarray
    eps0_re: np.ndarray
    eps0_im: np.ndarray
    omega_domain: Box
    c_background: float
    rho_background: float
    eps_infinity: float
    M: float
    name: str = "custom"
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        for nm in FIELD_NAMES:
            object.__setattr__(self, nm, _readonly(getattr(self, nm)))
        for nm in ("c_background", "rho_background", "eps_infinity", "M"):
            object.__setattr__(self, nm, float(getattr(self, nm)))
        if self.validate:
            self.check()

    def check(self, shell=2, atol=1e-12):
        """Raise ``ConfigError`` on any violated phantom invariant."""
        for nm in FIELD_NAMES:
            v = getattr(self, nm)
            if v.shape != self.grid.dims:
                raise ConfigError(f"shape {v.shape} != grid dims {self.grid.dims}", nm)
            if not np.all(np.isfinite(v)):
                raise ConfigError("non-finite values", nm)
        for nm in ("c_background", "rho_background", "eps_infinity", "M"):
            if not getattr(self, nm) > 0:
                raise ConfigError("must be positive", nm)
        if not self.grid.contains(np.array([self.omega_domain.lo, self.omega_domain.hi])).all():
            raise ConfigError("Omega must lie inside the grid", "omega_domain")
        if np.any(self.rho <= 0):
            raise ConfigError("density must be positive", "rho")
        if np.any(self.c <= 0):
            raise ConfigError("speed must be positive", "c")
        if self.c.min() < 1.0 / self.M:
            raise ConfigError(f"min c = {self.c.min():.4g} below 1/M = {1 / self.M:.4g}", "c")
        norm = speed_bound_norm(self.c, self.grid.h)
        if norm > self.M:
            raise ConfigError(f"C^1,1 norm of c^2 = {norm:.4g} exceeds M = {self.M:.4g}", "c")
        backgrounds = {"c": self.c_background, "rho": self.rho_background,
                       "eps0_re": self.eps_infinity, "eps0_im": 0.0}
        outer = shell_mask(self.grid.dims, shell)
        for nm, bg in backgrounds.items():
            dev = np.abs(getattr(self, nm)[outer] - bg).max()
            if dev > atol * max(1.0, abs(bg)):
                raise ConfigError(f"differs from background {bg} on the boundary shell "
                                  f"(max deviation {dev:.3g})", nm)

    def field(self, name):
        if name not in FIELD_NAMES:
            raise ConfigError(f"unknown field {name!r}; expected one of {FIELD_NAMES}", "field")
        return getattr(self, name)

    @property
    def gamma(self):
        return gamma_of(self)

    def omega_slices(self):
        return self.omega_domain.node_slices(self.grid)


@dataclass(frozen=True)
class LorentzParams:
    eps_infinity: float = 1.0
    omega_p: float = 2.0
    omega_0: float = 1.0
    gamma_p: float = 1e-3

    def __post_init__(self):
        vals = (self.eps_infinity, self.omega_p, self.omega_0, self.gamma_p)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError("Lorentz parameters must be finite", "lorentz")
        if min(self.eps_infinity, self.omega_p, self.omega_0) <= 0:
            raise ConfigError("eps_infinity, omega_p, omega_0 must be positive", "lorentz")
        if self.gamma_p < 0:
            raise ConfigError("damping must be nonnegative", "lorentz.gamma_p")
        if self.gamma_p > 0.1 * self.omega_0:
            warnings.warn("damping exceeds 0.1*omega_0; resonance expansions degrade",
                          RuntimeWarning, stacklevel=3)

    @property
    def omega_max(self):
        """Upper end of the band where Re eps_p < 0 (lossless)."""
        return math.sqrt(self.omega_0 ** 2 + self.omega_p ** 2)


BALL_VOLUME = 4.0 * math.pi / 3.0


@dataclass(frozen=True)
class Nanoparticle:
    z: tuple
    a: float
    lorentz: LorentzParams = LorentzParams()
    lambda_n0: float = 1.0 / 3.0
    mode_moment: tuple = (BALL_VOLUME, 0.0, 0.0)
    incident_dir: tuple = (0.0, 0.0, 1.0)
    polarization: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        for nm in ("z", "mode_moment", "incident_dir", "polarization"):
            v = tuple(float(q) for q in getattr(self, nm))
            if len(v) != 3:
                raise ConfigError("expected a 3-vector", nm)
            object.__setattr__(self, nm, v)
        object.__setattr__(self, "a", float(self.a))
        if not self.a > 0:
            raise ConfigError("radius must be positive", "a")
        if not 0.0 < self.lambda_n0 < 1.0:
            raise ConfigError("mode eigenvalue must lie in (0, 1)", "lambda_n0")
        th, d = np.array(self.incident_dir), np.array(self.polarization)
        if abs(np.linalg.norm(th) - 1) > 1e-9 or abs(np.linalg.norm(d) - 1) > 1e-9:
            raise ConfigError("incident direction and polarization must be unit vectors")
        if abs(th @ d) > 1e-9:
            raise ConfigError("polarization must be orthogonal to the incident direction")

    def check_inside(self, box: Box):
        lo = np.asarray(self.z) - self.a
        hi = np.asarray(self.z) + self.a
        if not (box.contains(lo) and box.contains(hi)):
            raise ConfigError(f"ball of radius {self.a} around {self.z} leaves Omega", "z")

    def moved(self, z=None, a=None):
        return Nanoparticle(z=self.z if z is None else tuple(z), a=self.a if a is None else a,
                            lorentz=self.lorentz, lambda_n0=self.lambda_n0,
                            mode_moment=self.mode_moment, incident_dir=self.incident_dir,
                            polarization=self.polarization)


def lorentz_permittivity(params: LorentzParams, omega):
    """Lorentz oscillator permittivity, vectorised over ``omega``."""
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise ConfigError("frequency must be positive", "omega")
    den = params.omega_0 ** 2 - w ** 2 + 1j * w * params.gamma_p
    if np.any(den == 0):
        raise PoleError("Lorentz pole: omega == omega_0 with zero damping")
    out = params.eps_infinity * (1.0 + params.omega_p ** 2 / den)
    return complex(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- sampling

def trilinear(values, grid: Grid3, points, tol=1e-9):
    """Trilinear interpolation of a node array at world ``points`` (..., 3)."""
    pts = np.asarray(points, dtype=float)
    f = grid.to_index(pts)
    dims = np.asarray(grid.dims)
    if np.any(f < -tol) or np.any(f > dims - 1 + tol):
        raise ConfigError("sample point outside the grid", "y")
    f = np.clip(f, 0, dims - 1)
    base = np.minimum(np.floor(f).astype(int), dims - 2)
    t = f - base
    i, j, k = base[..., 0], base[..., 1], base[..., 2]
    tx, ty, tz = t[..., 0], t[..., 1], t[..., 2]
    v = np.asarray(values)
    out = 0.0
    for di, wx in ((0, 1 - tx), (1, tx)):
        for dj, wy in ((0, 1 - ty), (1, ty)):
            for dk, wz in ((0, 1 - tz), (1, tz)):
                w = wx * wy * wz
                # zero-weight corners are skipped so NaN neighbours do not leak
                out = out + np.where(w == 0, 0.0, w * v[i + di, j + dj, k + dk])
    return out


def sample_field(phantom: Phantom, name, y):
    """Interpolated value of field ``name`` at ``y`` (scalar or array of points)."""
    out = trilinear(phantom.field(name), phantom.grid, y)
    return float(out) if np.ndim(out) == 0 else out


def gamma_of(phantom: Phantom):
    """Largest imaginary part of eps0 over the nodes of Omega."""
    return float(max(phantom.eps0_im[phantom.omega_slices()].max(), 0.0))


# ------------------------------------------------------------ speed bounds

def speed_bound_norm(c, h):
    """Discrete C^{1,1} norm of c^2.

    sup|c^2| + max_a sup|d_a c^2| + max_a sup of the Lipschitz quotients of
    d_a c^2 between axis neighbours.
    """
    q = np.asarray(c, dtype=float) ** 2
    grads = np.gradient(q, h)
    first = max(np.abs(g).max() for g in grads)
    lip = 0.0
    for g in grads:
        for ax in range(3):
            lip = max(lip, np.abs(np.diff(g, axis=ax)).max() / h)
    return float(np.abs(q).max() + first + lip)


def shell_mask(dims, width):
    m = np.zeros(dims, dtype=bool)
    for ax in range(3):
        sl = [slice(None)] * 3
        sl[ax] = slice(0, width)
        m[tuple(sl)] = True
        sl[ax] = slice(dims[ax] - width, dims[ax])
        m[tuple(sl)] = True
    return m


# -------------------------------------------------------------- generators

def make_grid(omega: Box, n_cells=38, margin=8):
    """Grid with ``n_cells`` cells across the longest side of Omega plus a margin."""
    ext = np.subtract(omega.hi, omega.lo)
    h = float(ext.max()) / n_cells
    cells = np.rint(ext / h).astype(int)
    if np.any(np.abs(cells * h - ext) > 1e-9 * ext.max()):
        raise ConfigError("Omega sides must be integer multiples of the spacing", "grid")
    origin = np.asarray(omega.lo) - margin * h
    return Grid3(tuple(origin), h, tuple(int(n) + 1 + 2 * margin for n in cells))


def taper_weight(grid: Grid3, omega: Box, keep=2, blank=2):
    """Blend weight: 1 inside Omega and on ``keep`` node rings around it, then a
    smootherstep down to exactly 0 on the outer ``blank`` shells."""
    pts = grid.node_coords()
    d = omega.distance_outside(pts) - keep * grid.h
    lo_margin = np.subtract(omega.lo, grid.origin)
    hi_margin = np.subtract(grid.upper, omega.hi)
    width = np.minimum(lo_margin, hi_margin) - (keep + blank) * grid.h
    if np.any(width <= 0):
        raise ConfigError(f"grid margin must exceed {keep + blank} nodes", "grid")
    t = np.clip(d / width, 0.0, 1.0)
    s = t * t * t * (t * (6 * t - 15) + 10)
    return np.prod(1.0 - s, axis=-1)


def profile(spec, pts):
    """Evaluate an analytic profile dict on points (..., 3)."""
    kind = spec.get("kind", "constant")
    p = np.asarray(pts, dtype=float)
    def vec(key, default):
        return np.asarray(spec.get(key, default), dtype=float)
    if kind == "constant":
        return np.full(p.shape[:-1], float(spec["value"]))
    if kind == "linear":
        # value * (1 + slope . (y - ref))
        return float(spec["value"]) * (1.0 + (p - vec("ref", (0, 0, 0))) @ vec("slope", (0, 0, 0)))
    if kind == "gaussian":
        r2 = np.sum((p - vec("center", (0.5, 0.5, 0.5))) ** 2, axis=-1)
        return float(spec["value"]) * (1.0 + float(spec["amplitude"])
                                       * np.exp(-0.5 * r2 / float(spec["sigma"]) ** 2))
    if kind == "exponential":
        return float(spec["value"]) * np.exp((p - vec("ref", (0, 0, 0))) @ vec("beta", (0, 0, 0)))
    if kind == "cosine":
        # mean + amplitude * prod_a cos(k_a (y_a - ref_a))
        arg = (p - vec("ref", (0, 0, 0))) * vec("wavenumber", (math.pi, math.pi, 0.0))
        return float(spec["mean"]) + float(spec["amplitude"]) * np.prod(np.cos(arg), axis=-1)
    raise ConfigError(f"unknown profile kind {kind!r}", "profile.kind")


def phantom_from_profiles(grid: Grid3, omega: Box, specs: dict, backgrounds: dict, M=10.0,
                          name="custom"):
    """Build a phantom whose fields follow ``specs`` inside Omega and taper to
    ``backgrounds`` (keys c, rho, eps_infinity) on the outer shells."""
    pts = grid.node_coords()
    w = taper_weight(grid, omega)
    bg = {"c": backgrounds["c"], "rho": backgrounds["rho"],
          "eps0_re": backgrounds["eps_infinity"], "eps0_im": 0.0}
    fields = {}
    for nm in FIELD_NAMES:
        if nm in specs:
            fields[nm] = bg[nm] + w * (profile(specs[nm], pts) - bg[nm])
        else:
            fields[nm] = np.full(grid.dims, float(bg[nm]))
    if "rho" in specs and specs["rho"].get("kind") == "exponential":
        # blend log rho so the exponential stays exact inside Omega
        lp = np.log(profile(specs["rho"], pts))
        fields["rho"] = np.exp(math.log(bg["rho"]) + w * (lp - math.log(bg["rho"])))
    return Phantom(grid=grid, omega_domain=omega, c_background=bg["c"], rho_background=bg["rho"],
                   eps_infinity=bg["eps0_re"], M=M, name=name, **fields)


UNIT_BOX = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
DEFAULT_SOURCE = (0.5, 0.5, 0.0)


def reference_phantom(name="homogeneous", n_cells=38, margin=8, omega: Box = UNIT_BOX,
                      M=None, **overrides):
    """Built-in analytic phantoms.

    homogeneous   constant c and rho, constant Re eps0 inside Omega
    ramp          linear speed ramp along the third axis
    exprho        constant c, exponential density
    heterogeneous slow Gaussian speed bump, exponential density, cosine eps0
    lens          slow core inside Omega surrounded by a fast margin
    """
    grid = make_grid(omega, n_cells, margin)
    if M is None:
        # the ramp and lens blend steeply to the background in the margin
        M = 400.0 if name in ("ramp", "lens") else 10.0
    ctr = omega.center
    c_b = overrides.pop("c_background", 1.0)
    rho_b = overrides.pop("rho_background", 2.0)
    eps_inf = overrides.pop("eps_infinity", 1.0)
    eps_in = overrides.pop("eps0", 2.0)
    gamma = overrides.pop("gamma", 1e-4)
    specs = {"eps0_re": {"kind": "constant", "value": eps_in},
             "eps0_im": {"kind": "constant", "value": gamma}}
    if name == "homogeneous":
        specs["c"] = {"kind": "constant", "value": c_b}
    elif name == "ramp":
        specs["c"] = {"kind": "linear", "value": c_b, "slope": (0.0, 0.0, overrides.pop("alpha", 0.3)),
                      "ref": omega.lo}
    elif name == "exprho":
        specs["rho"] = {"kind": "exponential", "value": rho_b,
                        "beta": overrides.pop("beta", (0.1, -0.1, 0.2)), "ref": DEFAULT_SOURCE}
    elif name == "heterogeneous":
        specs["c"] = {"kind": "gaussian", "value": c_b, "amplitude": overrides.pop("amplitude", -0.1),
                      "center": (ctr[0], ctr[1], 0.55), "sigma": 0.18}
        specs["rho"] = {"kind": "exponential", "value": rho_b,
                        "beta": overrides.pop("beta", (0.12, -0.1, 0.2)), "ref": ctr}
        specs["eps0_re"] = {"kind": "cosine", "mean": eps_in, "amplitude": 0.5,
                            "wavenumber": (math.pi, math.pi, 0.0), "ref": omega.lo}
    elif name == "lens":
        specs["c"] = {"kind": "constant", "value": 0.5 * c_b}
    else:
        raise ConfigError(f"unknown reference phantom {name!r}", "phantom.name")
    if overrides:
        raise ConfigError(f"unused options {sorted(overrides)}", "phantom")
    return phantom_from_profiles(grid, omega, specs,
                                 {"c": c_b, "rho": rho_b, "eps_infinity": eps_inf}, M=M, name=name)


REFERENCE_PHANTOMS = ("homogeneous", "ramp", "exprho", "heterogeneous", "lens")


def with_fields(phantom: Phantom, **fields):
    """Copy of ``phantom`` with some fields replaced."""
    kw = {nm: fields.get(nm, getattr(phantom, nm)) for nm in FIELD_NAMES}
    return Phantom(grid=phantom.grid, omega_domain=phantom.omega_domain,
                   c_background=fields.get("c_background", phantom.c_background),
                   rho_background=fields.get("rho_background", phantom.rho_background),
                   eps_infinity=phantom.eps_infinity, M=phantom.M,
                   name=fields.get("name", phantom.name), validate=fields.get("validate", True), **kw)
