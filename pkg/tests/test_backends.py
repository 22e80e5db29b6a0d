"""The compiled kernels and the pure-Python fallback agree."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nanopat import backend
from nanopat.eikonal import solve_from_node, trace_geodesic, trace_many
from nanopat.media import Grid3

pytestmark = pytest.mark.skipif(backend.cython_impl is None, reason="extension not built")

GRID = Grid3((0, 0, 0), 0.125, (9, 9, 9))


def smooth_speed(seed):
    rng = np.random.default_rng(seed)
    x = GRID.node_coords()
    k = rng.normal(size=(3, 3))
    amp = rng.uniform(-0.2, 0.2, 3)
    return 1.0 + sum(a * np.sin(x @ kk) for a, kk in zip(amp, k))


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2 ** 20), st.integers(0, 8), st.integers(0, 8))
def test_fast_marching_identical(seed, i, j):
    c = smooth_speed(seed)
    a = solve_from_node(c, GRID, (i, j, 0), impl="cython")
    b = solve_from_node(c, GRID, (i, j, 0), impl="python")
    assert np.allclose(a.tau, b.tau, rtol=1e-13, atol=1e-15)
    assert np.array_equal(a.order >= 0, b.order >= 0)


def test_tracing_identical():
    c = smooth_speed(5)
    a = solve_from_node(c, GRID, (4, 4, 0), impl="cython")
    b = solve_from_node(c, GRID, (4, 4, 0), impl="python")
    pts = np.array([[0.3, 0.6, 0.7], [0.8, 0.2, 0.5], [0.5, 0.5, 0.95]])
    F = np.cos(GRID.node_coords()[..., 0])
    G = np.stack(np.gradient(c, GRID.h))
    ra = trace_many(a, pts, F=F, G=G, kpow=1, impl="cython")
    rb = trace_many(b, pts, F=F, G=G, kpow=1, impl="python")
    for u, v in zip(ra, rb):
        assert np.allclose(u, v, rtol=1e-11, atol=1e-13)
    ga = trace_geodesic(a, pts[0], impl="cython")
    gb = trace_geodesic(b, pts[0], impl="python")
    assert np.allclose(ga.points, gb.points, atol=1e-12)


def test_backend_selection():
    assert backend.get("python") is backend.python_impl
    assert backend.get() is backend.impl
    with pytest.raises(ValueError):
        backend.get("fortran")
