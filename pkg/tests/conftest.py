import json
from pathlib import Path

import pytest

from nanopat.eikonal import solve_travel_time
from nanopat.kernel import build_kernel
from nanopat.media import reference_phantom

SOURCE = (0.5, 0.5, 0.0)
FROZEN = Path(__file__).parent / "oracles" / "frozen.json"


def pytest_configure(config):
    config._criteria = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = getattr(config, "_criteria", [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(rows, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def report(request):
    """Record one criterion line; printed now and again in the terminal summary."""
    def rec(num, ok, detail):
        request.config._criteria.append((num, bool(ok), detail))
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
    return rec


@pytest.fixture(scope="session")
def frozen():
    return json.loads(FROZEN.read_text())


class Scene:
    """A phantom with its travel time and kernel from the default source."""

    def __init__(self, name, K_max=2, **kw):
        self.phantom = reference_phantom(name, **kw)
        self.tt = solve_travel_time(self.phantom, SOURCE)
        self.coeffs = build_kernel(self.tt, self.phantom, K_max=K_max)


_scenes = {}


def scene(name, **kw):
    key = (name, tuple(sorted(kw.items())))
    if key not in _scenes:
        _scenes[key] = Scene(name, **kw)
    return _scenes[key]


@pytest.fixture(scope="session")
def homogeneous():
    return scene("homogeneous")


@pytest.fixture(scope="session")
def exprho():
    return scene("exprho")


@pytest.fixture(scope="session")
def heterogeneous():
    return scene("heterogeneous")


@pytest.fixture(scope="session")
def small_homogeneous():
    return scene("homogeneous", n_cells=16)


@pytest.fixture(scope="session")
def small_heterogeneous():
    return scene("heterogeneous", n_cells=16)
