import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nanopat.errors import ConfigError, DetectionError
from nanopat.forward import ForwardConfig, MeasurementSet, default_grids, synthesize_measurements
from nanopat.kernel import TWO_PI
from nanopat.media import LorentzParams, Nanoparticle, sample_field, trilinear
from nanopat.reconstruct import (detect_arrival, detect_resonance, exit_plateau, extend_to_grid,
                                 extract_alpha_minus1, fill_masked, rebuild_green, recover_density,
                                 recover_speed, run_pipeline, subgrid_axes)

from conftest import SOURCE, scene

X = np.array(SOURCE)


def ramp_trace(s, t0, w, tail=0.0):
    p = np.clip((s - t0) / w, 0.0, 1.0)
    return p + tail * np.where(s > t0 + w, (s - t0 - w) ** 2, 0.0)


# ---------------------------------------------------------------- arrival

def test_arrival_of_linear_rise():
    s = np.linspace(0.0, 1.0, 1001)
    assert detect_arrival(ramp_trace(s, 0.3, 0.04), s) == pytest.approx(0.32, abs=1e-12)
    est = detect_arrival(ramp_trace(s, 0.3, 0.04, tail=0.5), s, full=True)
    assert est.plateau == pytest.approx(1.0, abs=1e-5)
    assert est.tau_hat == pytest.approx(0.32, abs=1e-5)
    assert s[est.knee_index] == pytest.approx(0.34, abs=2e-3)


@settings(max_examples=50)
@given(st.floats(0.05, 0.8), st.floats(0.005, 0.1), st.floats(0.0, 5.0))
def test_arrival_inside_rise(t0, w, tail):
    s = np.linspace(0.0, 1.0, 801)
    t = detect_arrival(ramp_trace(s, t0, w, tail), s)
    ds = s[1] - s[0]
    assert t0 - ds <= t <= t0 + w + ds


def test_arrival_with_floor_and_known_plateau():
    s = np.linspace(0.0, 1.0, 1001)
    p = 1e-3 + ramp_trace(s, 0.3, 0.04, tail=2.0)
    t = detect_arrival(p, s, gamma_floor=1e-3)
    assert t == pytest.approx(0.32, abs=1e-4)
    assert detect_arrival(p, s, 1e-3, plateau=0.5 + 1e-3) == pytest.approx(0.31, abs=1e-4)


def test_arrival_failures():
    s = np.linspace(0.0, 1.0, 101)
    with pytest.raises(DetectionError):
        detect_arrival(np.zeros_like(s), s)
    with pytest.raises(DetectionError):
        detect_arrival(np.full_like(s, 1e-3), s, gamma_floor=1e-3)
    with pytest.raises(ConfigError):
        detect_arrival(np.ones(5), s)


# ------------------------------------------------------------------ speed

def _table(f, n=5, lo=0.3, hi=0.7):
    ax = [np.linspace(lo, hi, n)] * 3
    pts = np.stack(np.meshgrid(*ax, indexing="ij"), -1)
    return f(pts), ax, pts


@pytest.mark.parametrize("method", ["spline", "difference"])
def test_speed_exact_for_constant_medium(method):
    tau, ax, _ = _table(lambda p: np.linalg.norm(p - X, axis=-1) / 1.7)
    assert np.allclose(recover_speed(tau, ax, X, method), 1.7, rtol=1e-10)


def test_speed_spline_beats_differences():
    g = 0.3

    def ramp_tau(p):
        d2 = np.sum((p - X) ** 2, axis=-1)
        return np.arccosh(1 + g * g * d2 / (2 * (1 + g * p[..., 2]) * (1 + g * X[2]))) / g

    tau, ax, pts = _table(ramp_tau, n=7, lo=0.2, hi=0.8)
    c = 1 + g * pts[..., 2]
    e_sp = np.max(np.abs(recover_speed(tau, ax, X, "spline") / c - 1))
    e_fd = np.max(np.abs(recover_speed(tau, ax, X, "difference") / c - 1))
    assert e_sp < 0.2 * e_fd and e_fd < 0.02


def test_speed_holes_and_errors():
    tau, ax, _ = _table(lambda p: np.linalg.norm(p - X, axis=-1))
    holed = tau.copy()
    holed[2, 2, 2] = np.nan
    c = recover_speed(holed, ax, method="difference")
    assert np.isnan(c[2, 2, 2]) and np.allclose(c[np.isfinite(c)], 1.0, rtol=1e-10)
    # with the source known the hole is filled for the derivative, then restored
    c = recover_speed(holed, ax, X)
    assert np.isnan(c[2, 2, 2]) and np.nanmax(np.abs(c - 1)) < 1e-3
    with pytest.raises(ConfigError):
        recover_speed(tau[:2], [ax[0][:2], ax[1], ax[2]])
    with pytest.raises(ConfigError):
        recover_speed(tau, ax, X, "psychic")


def test_subgrid_axes():
    _, ax, pts = _table(lambda p: p[..., 0])
    z = pts.reshape(-1, 3)[::-1]
    axes, idx = subgrid_axes(z)
    assert all(np.allclose(a, b) for a, b in zip(axes, ax))
    assert np.allclose(np.stack([axes[a][idx[:, a]] for a in range(3)], 1), z)
    with pytest.raises(ConfigError):
        subgrid_axes(z[:-1])


# -------------------------------------------------------------- resonance

def test_resonance_reciprocal_parabola_exact():
    w = np.linspace(1.1, 2.1, 41)
    sweep = 1.0 / ((w - 1.4567) ** 2 + 1e-4)
    est = detect_resonance(sweep, w)
    assert est.reliable and est.omega == pytest.approx(1.4567, abs=1e-12)
    lin = detect_resonance(3.0 - (w - 1.4567) ** 2, w, scale="linear")
    assert lin.omega == pytest.approx(1.4567, abs=1e-12)


@given(st.floats(1e-6, 1e6), st.floats(1.2, 2.0))
def test_resonance_scale_invariant(k, w0):
    w = np.linspace(1.1, 2.1, 41)
    sweep = 1.0 / ((w - w0) ** 2 + 1e-3)
    assert detect_resonance(k * sweep, w).omega == pytest.approx(detect_resonance(sweep, w).omega,
                                                                 abs=1e-9)


def test_resonance_edge_and_errors():
    w = np.linspace(1.1, 2.1, 41)
    est = detect_resonance(w, w)
    assert not est.reliable and est.omega == w[-1]
    with pytest.raises(ConfigError):
        detect_resonance(w[:10], w[:10])
    with pytest.raises(ConfigError):
        detect_resonance(w, w[:-1])
    with pytest.raises(ConfigError):
        detect_resonance(1 / ((w - 1.5) ** 2 + 1), w, scale="log")


# ---------------------------------------------------------------- density

def test_exit_plateau_exact_for_polynomial_tail():
    s = np.linspace(0.5, 1.0, 51)
    q = s ** 2 - 0.6 ** 2
    p = 2.5 + 0.3 * q - 0.2 * q ** 2 + 0.05 * q ** 3
    assert exit_plateau(p, s, 0.6) == pytest.approx(2.5, rel=1e-10)
    assert math.isnan(exit_plateau(p, s, 0.98))


def test_alpha_extraction_inverse():
    a = extract_alpha_minus1(2.0 * 0.3 * 0.7 * 0.11, 0.3, 0.7, 0.11)
    assert a == pytest.approx(2.0, rel=1e-15)
    assert math.isnan(extract_alpha_minus1(1.0, 0.0, 0.7, 0.11))
    assert math.isnan(extract_alpha_minus1(1.0, 0.3, 0.7, 0.0))


def test_recover_density_cases():
    det = np.array([0.8, 1.1, 0.9, 1.0])
    g = np.array([0.0, 0.3, -0.2, 0.0])
    alpha = det * np.exp(g / 2) / TWO_PI
    alpha[3] = -1.0
    rho, gh = recover_density(alpha, det, 2.0)
    assert np.allclose(gh[:3], g[:3], atol=1e-14)
    assert np.allclose(rho[:3], 2.0 * np.exp(g[:3]))
    assert np.isnan(rho[3]) and np.isnan(gh[3])


def test_recover_exponential_density_from_kernel(exprho):
    co, ph = exprho.coeffs, exprho.phantom
    z = np.array([[0.5, 0.5, 0.5], [0.3, 0.6, 0.7], [0.7, 0.2, 0.4], [0.8, 0.8, 0.9]])
    vals = co.values_at(z)[:, 0]
    det = trilinear(co.det_factor, co.grid, z)
    rho, g = recover_density(vals, det, float(ph.rho[exprho.tt.source_index]))
    assert np.allclose(g, (z - X) @ np.array([0.1, -0.1, 0.2]), atol=0.02)
    assert np.allclose(rho, sample_field(ph, "rho", z), rtol=0.02)


# ------------------------------------------------------------ extension

def test_fill_and_extend():
    vals, ax, pts = _table(lambda p: 1 + p[..., 0] - 0.5 * p[..., 2])
    holed = vals.copy()
    holed[1, 2, 3] = np.nan
    assert np.allclose(fill_masked(holed, ax), vals)
    sc = scene("homogeneous", n_cells=16)
    g, om = sc.phantom.grid, sc.phantom.omega_domain
    full = extend_to_grid(vals, ax, g, om, boundary_value=1.0)
    nodes = g.node_coords()
    inside = np.all((nodes >= 0.3 - 1e-12) & (nodes <= 0.7 + 1e-12), axis=-1)
    exact = 1 + nodes[..., 0] - 0.5 * nodes[..., 2]
    assert np.allclose(full[inside], exact[inside], atol=1e-12)
    assert np.all(full[0] == 1.0) and np.all(full[:, :, -1] == 1.0)
    with pytest.raises(ConfigError):
        extend_to_grid(np.full_like(vals, np.nan), ax, g, om)


def test_rebuild_green_on_true_fields(small_heterogeneous):
    sc = small_heterogeneous
    ph = sc.phantom
    kern, tt = rebuild_green(ph.c, ph.rho, SOURCE, 1, ph.grid, ph.omega_domain)
    assert tt.tau.tobytes() == sc.tt.tau.tobytes()
    sl = ph.omega_slices()
    a, b = kern.alpha[0][sl], sc.coeffs.alpha[0][sl]
    assert np.array_equal(np.isnan(a), np.isnan(b))
    assert np.allclose(a[np.isfinite(a)], b[np.isfinite(b)], rtol=1e-12)


# --------------------------------------------------------------- pipeline

def _dataset(name, gamma_p):
    sc = scene(name, n_cells=16)
    ph = sc.phantom
    lor = LorentzParams(gamma_p=gamma_p)
    tmpl = Nanoparticle(z=(0.5, 0.5, 0.5), a=0.01, lorentz=lor)
    s, w = default_grids(ph, lor)
    ax = np.linspace(0.3, 0.7, 5)
    z = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    ms = synthesize_measurements(ph, tmpl, z, s, w, ForwardConfig(n_cloud=1024, n_surface=256),
                                 tt=sc.tt, coeffs=sc.coeffs)
    priors = {"rho_x": float(sample_field(ph, "rho", SOURCE)),
              "c_boundary": float(sample_field(ph, "c", SOURCE))}
    return sc, ms, priors


@pytest.fixture(scope="module")
def small_runs():
    out = {}
    for gp in (1e-3, 1e-2):
        sc, ms, priors = _dataset("heterogeneous", gp)
        out[gp] = (sc, ms, priors, run_pipeline(ms, priors, rebuild=gp == 1e-3))
    return out


def test_pipeline_end_to_end(small_runs):
    sc, ms, _, rep = small_runs[1e-3]
    ph = sc.phantom
    ok = np.isfinite(rep.rho_hat)
    # the alpha_2 mask reaches the slab nearest the source on this coarse grid
    skipped = {f["index"] for f in rep.diagnostics["failures"]["arrival"]}
    assert skipped == {d["index"] for d in ms.meta["skipped"]} and len(skipped) == 9
    assert ok.sum() == len(ms.z) - 9
    c_t = sample_field(ph, "c", ms.z)
    rho_t = sample_field(ph, "rho", ms.z)
    eps_t = sample_field(ph, "eps0_re", ms.z)
    assert np.max(np.abs(rep.c_hat[ok] / c_t[ok] - 1)) <= 0.03
    assert np.max(np.abs(rep.rho_hat[ok] / rho_t[ok] - 1)) <= 0.05
    assert np.max(np.abs(rep.eps0_hat[ok].real / eps_t[ok] - 1)) <= 1e-3
    # g_hat - log rho is the constant -log rho(x)
    assert np.std(rep.g_hat[ok] - np.log(rho_t[ok])) <= 0.03
    assert rep.kernel is not None and rep.rho_field.shape == ph.grid.dims
    assert rep.table("c_hat").shape == (5, 5, 5)


def test_permittivity_degrades_with_damping(small_runs):
    errs = []
    for gp in (1e-3, 1e-2):
        sc, ms, _, rep = small_runs[gp]
        ok = np.isfinite(rep.eps0_hat.real)
        eps_t = sample_field(sc.phantom, "eps0_re", ms.z)
        errs.append(np.mean(np.abs(rep.eps0_hat[ok].real - eps_t[ok])))
    assert errs[0] < errs[1]


def test_pipeline_without_post_exit_samples(small_runs):
    sc, ms, priors, _ = small_runs[1e-3]
    tau2 = max(d["tau2"] for d in ms.meta["forward_diagnostics"])
    k = int(np.searchsorted(ms.s, tau2)) + 1
    cut = MeasurementSet(x=ms.x, z=ms.z, s=ms.s[:k], omega=ms.omega, pstar=ms.pstar[:, :k].copy(),
                         meta=ms.meta)
    rep = run_pipeline(cut, priors, rebuild=False)
    f = rep.diagnostics["failures"]
    assert f["plateau"] and not f["resonance"]
    assert all("post-exit" in e["reason"] for e in f["plateau"])
    lost = {e["index"] for e in f["plateau"]}
    assert all(np.isnan(rep.rho_hat[i]) for i in lost)
    assert np.isfinite(rep.c_hat[ms.meta["valid"]]).all()


def test_pipeline_input_errors(small_runs):
    _, ms, priors, _ = small_runs[1e-3]
    with pytest.raises(ConfigError):
        run_pipeline(ms, {}, rebuild=False)
    empty = MeasurementSet(x=ms.x, z=np.zeros((0, 3)), s=ms.s, omega=ms.omega,
                           pstar=np.zeros((0, ms.s.size, ms.omega.size)), meta=ms.meta)
    with pytest.raises(ConfigError):
        run_pipeline(empty, priors)
    bare = MeasurementSet(x=ms.x, z=ms.z, s=ms.s, omega=ms.omega, pstar=ms.pstar,
                          meta={k: v for k, v in ms.meta.items() if k != "grid"})
    with pytest.raises(ConfigError):
        run_pipeline(bare, priors, rebuild=False)
