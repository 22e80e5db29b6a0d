import json

import numpy as np
import pytest

from nanopat import io
from nanopat.cli import (emit_plots, load_config, parse_axis, parse_vector, parse_zgrid,
                         run_subcommand)
from nanopat.errors import ConfigError
from nanopat.forward import MeasurementSet

EXP = {"phantom": {"kind": "heterogeneous", "n_cells": 16},
       "particle": {"a": 0.02, "lorentz": {"gamma_p": 0.001}},
       "zgrid": "0.3:0.7:3,0.3:0.7:3,0.4:0.8:3", "sgrid": "0.01:1.6:160", "wgrid": "1.05:2.2:32",
       "noise": "random", "seed": 11, "n_cloud": 256, "n_surface": 128}


def run(*argv):
    return run_subcommand(["--quiet", *map(str, argv)])


def test_validate_passes(capsys):
    assert run("validate", "--cells", 16) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out


def test_usage_errors():
    with pytest.raises(SystemExit) as e:
        run_subcommand(["teleport"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        run_subcommand(["--threads", "0", "validate"])
    assert e.value.code == 2


def test_config_error_is_json(tmp_path, capsys):
    (tmp_path / "exp.json").write_text(json.dumps(dict(EXP, sgrid="0.5:0.1:3")))
    assert run("forward", "sweep", "--config", tmp_path / "exp.json", "--out", tmp_path / "o") == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError" and err["field"] == "sgrid"
    assert run("eikonal", "solve", "--phantom", "nowhere", "--out", tmp_path / "t.json") == 2


def test_parsers():
    assert parse_vector("1,2,3") == (1.0, 2.0, 3.0)
    with pytest.raises(ConfigError):
        parse_vector("1,2")
    assert parse_axis("0:1:5", "a").tolist() == [0, 0.25, 0.5, 0.75, 1]
    with pytest.raises(ConfigError):
        parse_axis("0:1", "a")
    assert parse_zgrid("0:1:2,0:1:3,0:1:4").shape == (24, 3)
    assert parse_zgrid({"x": [0.5], "y": [0.5], "z": "0:1:3"}).shape == (3, 3)
    assert parse_zgrid([]).shape == (0, 3)


def test_includes_override(tmp_path):
    (tmp_path / "base.json").write_text(json.dumps({"a": 1, "b": {"c": 2, "d": 3}}))
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "top.json").write_text(json.dumps({"include": "../base.json", "a": 5}))
    cfg = load_config(tmp_path / "sub" / "top.json")
    assert cfg == {"a": 5, "b": {"c": 2, "d": 3}}


def _fake_set(nz):
    s = np.linspace(0.1, 1.0, 10)
    w = np.linspace(1.1, 2.0, 4)
    z = np.tile([0.5, 0.5, 0.5], (nz, 1))
    return MeasurementSet(x=(0.5, 0.5, 0.0), z=z, s=s, omega=w,
                          pstar=np.ones((nz, s.size, w.size)), meta={"a": 0.01})


@pytest.mark.parametrize("nz,files", [(0, 0), (1, 2), (10, 20)])
def test_emit_plot_counts(tmp_path, nz, files):
    assert len(emit_plots(_fake_set(nz), tmp_path / "p")) == files
    assert len(list((tmp_path / "p").iterdir())) == files


def test_threads_do_not_change_data(tmp_path):
    (tmp_path / "exp.json").write_text(json.dumps(EXP))
    for n, d in ((1, "a"), (3, "b")):
        assert run_subcommand(["--quiet", "--threads", str(n), "forward", "sweep", "--config",
                               str(tmp_path / "exp.json"), "--out", str(tmp_path / d)]) == 0
    da = next((tmp_path / "a").glob("dataset-*"))
    db = next((tmp_path / "b").glob("dataset-*"))
    assert da.name == db.name
    assert (da / "pstar.bin").read_bytes() == (db / "pstar.bin").read_bytes()


def test_field_commands(tmp_path):
    ph = tmp_path / "ph.json"
    assert run("phantom", "gen", "--kind", "heterogeneous", "--cells", 12, "--out", ph) == 0
    assert run("eikonal", "solve", "--phantom", ph, "--out", tmp_path / "tau.json") == 0
    g, fields, meta = io.read_field_file(tmp_path / "tau.json")
    assert fields["tau"].shape == g.dims and np.allclose(meta["source"], [0.5, 0.5, 0.0])
    assert run("eikonal", "trace", "--phantom", ph, "--target", "0.4,0.6,0.8",
               "--out", tmp_path / "ray.csv") == 0
    head, cols = io.read_csv(tmp_path / "ray.csv")
    assert np.allclose([cols["x"][-1], cols["y"][-1], cols["z"][-1]], [0.4, 0.6, 0.8])
    assert float(head["geodesic_time"]) == pytest.approx(float(head["tau_field"]), rel=0.02)
    assert np.all(np.diff(cols["tau"]) > 0)
    assert run("kernel", "build", "--phantom", ph, "--kmax", 1, "--out", tmp_path / "k.json") == 0
    _, kf, km = io.read_field_file(tmp_path / "k.json")
    assert {"alpha_m1", "alpha_0", "alpha_1", "det_factor"} <= set(kf) and km["K_max"] == 1


def test_plasmonics_root_command(tmp_path):
    assert run("plasmonics", "root", "--eps0", 1.5, 2.0, "--out", tmp_path / "r.csv") == 0
    head, cols = io.read_csv(tmp_path / "r.csv")
    assert cols["approx"][1] == pytest.approx(np.sqrt(9 / 5))
    # default damping 1e-3 shifts the round trip by O(gamma_p)
    assert np.allclose(cols["eps0_roundtrip_re"], [1.5, 2.0], rtol=1e-3)
