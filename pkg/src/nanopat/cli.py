"""Command-line front end.

    nanopat phantom gen      --kind heterogeneous --out ph.json
    nanopat eikonal solve    --phantom ph.json --source 0.5,0.5,0 --out tau.json
    nanopat eikonal trace    --phantom ph.json --source 0.5,0.5,0 --target 0.5,0.5,0.8 --out ray.csv
    nanopat kernel build     --phantom ph.json --source 0.5,0.5,0 --kmax 2 --out kernel.json
    nanopat plasmonics root  --eps0 2.0 --out roots.csv
    nanopat forward sweep    --config exp.json --out runs/
    nanopat forward plot     --data runs/dataset-<hash> --out plots/
    nanopat reconstruct run  --data runs/dataset-<hash> --priors priors.json --out report/
    nanopat validate

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 detection failure.  Every output is a deterministic function of the
resolved configuration; dataset and report directories carry its hash.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .eikonal import solve_travel_time, trace_geodesic
from .errors import ConfigError, NanopatError
from .forward import (ForwardConfig, MeasurementSet, check_windows, dataset_from_files,
                      dataset_to_files, default_grids, synthesize_measurements)
from .kernel import build_kernel
from .media import (DEFAULT_SOURCE, REFERENCE_PHANTOMS, LorentzParams, Nanoparticle, Phantom,
                    reference_phantom, sample_field)
from .plasmonics import (DispersionContext, approx_resonance, complex_root, dispersion_value,
                         invert_permittivity)


# ------------------------------------------------------------------ config

def _resolve_includes(obj, base: Path):
    """Expand ``{"include": path, ...}`` dicts; local keys override included ones."""
    if isinstance(obj, dict):
        out = {}
        if "include" in obj:
            path = (base / obj["include"]).resolve()
            inc = io.read_json(path)
            out.update(_resolve_includes(inc, path.parent))
        for k, v in obj.items():
            if k != "include":
                out[k] = _resolve_includes(v, base)
        return out
    if isinstance(obj, list):
        return [_resolve_includes(v, base) for v in obj]
    return obj


def load_config(path):
    p = Path(path)
    return _resolve_includes(io.read_json(p), p.parent.resolve())


def parse_vector(text, n=3, name="vector"):
    try:
        v = tuple(float(q) for q in (text.split(",") if isinstance(text, str) else text))
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse {text!r} as {n} numbers", name) from None
    if len(v) != n:
        raise ConfigError(f"expected {n} numbers, got {len(v)}", name)
    return v


def parse_axis(spec, name):
    """``"lo:hi:n"`` (inclusive linspace) or an explicit list of numbers."""
    if isinstance(spec, str):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"axis spec {spec!r} is not lo:hi:n", name)
        try:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise ConfigError(f"axis spec {spec!r} is not lo:hi:n", name) from None
        if n < 1:
            raise ConfigError("axis needs at least one point", name)
        return np.round(np.linspace(lo, hi, n), 12)
    try:
        return np.asarray([float(v) for v in spec])
    except (TypeError, ValueError):
        raise ConfigError(f"cannot read axis {spec!r}", name) from None


def parse_zgrid(spec):
    """Three comma-separated axis specs (tensor grid) or an explicit point list."""
    if isinstance(spec, str):
        axes_txt = spec.split(",")
        if len(axes_txt) != 3:
            raise ConfigError("zgrid needs three axis specs separated by commas", "zgrid")
        axes = [parse_axis(a, f"zgrid[{i}]") for i, a in enumerate(axes_txt)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    if isinstance(spec, dict):
        axes = [parse_axis(spec[k], f"zgrid.{k}") for k in ("x", "y", "z")]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    pts = np.asarray(spec, dtype=float)
    if pts.size == 0:
        return np.zeros((0, 3))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ConfigError("zgrid point list must be N x 3", "zgrid")
    return pts


def phantom_from_spec(spec, base: Path = Path(".")):
    """A phantom from a field-file path or a generator dict {kind, n_cells, ...}."""
    if isinstance(spec, str):
        return io.read_phantom(base / spec)
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("phantom must be a file path or a dict with 'kind'", "phantom")
    opts = dict(spec)
    kind = opts.pop("kind")
    if kind not in REFERENCE_PHANTOMS:
        raise ConfigError(f"unknown phantom kind {kind!r}; choose from {REFERENCE_PHANTOMS}",
                          "phantom.kind")
    for k in ("beta",):
        if k in opts:
            opts[k] = tuple(opts[k])
    try:
        return reference_phantom(kind, **opts)
    except TypeError as e:
        raise ConfigError(str(e), "phantom") from None


def particle_from_spec(spec: dict, z=(0.5, 0.5, 0.5)):
    spec = dict(spec)
    lor = spec.pop("lorentz", {})
    try:
        lorentz = LorentzParams(**lor)
        return Nanoparticle(z=tuple(spec.pop("z", z)), lorentz=lorentz, **spec)
    except TypeError as e:
        raise ConfigError(str(e), "particle") from None


@dataclass
class ExperimentConfig:
    phantom: object = field(default_factory=lambda: {"kind": "homogeneous"})
    particle: dict = field(default_factory=lambda: {"a": 0.01})
    source: tuple = DEFAULT_SOURCE
    zgrid: object = "0.5:0.5:1,0.5:0.5:1,0.5:0.5:1"
    sgrid: object = None
    wgrid: object = None
    noise: str = "off"
    seed: int | None = 0
    K_max: int = 2
    n_cloud: int = 4096
    n_surface: int = 1024
    quad_tol: float = 1e-13
    h_exponent: float = 0.0

    @classmethod
    def from_dict(cls, d: dict):
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config keys {extra}", extra[0])
        return cls(**d)

    def forward_config(self):
        return ForwardConfig(h_exponent=self.h_exponent, K_max=self.K_max, n_cloud=self.n_cloud,
                             n_surface=self.n_surface, noise=self.noise, seed=self.seed,
                             quad_tol=self.quad_tol)

    def resolved(self, base: Path = Path(".")):
        """Build every object and return (phantom, particle, z, s, omega, resolved dict).

        The resolved dict replaces a phantom path by the content hash of
        the file, so the config hash tracks content, not file names.
        """
        ph = phantom_from_spec(self.phantom, base)
        part = particle_from_spec(self.particle)
        z = parse_zgrid(self.zgrid)
        s_def, w_def = default_grids(ph, part.lorentz)
        s = s_def if self.sgrid is None else parse_axis(self.sgrid, "sgrid")
        w = w_def if self.wgrid is None else parse_axis(self.wgrid, "wgrid")
        check_windows(ph, part, s, w)
        if self.noise == "random" and self.seed is None:
            raise ConfigError("random noise needs a seed", "seed")
        self.forward_config()
        d = asdict(self)
        if isinstance(self.phantom, str):
            d["phantom"] = {"file_sha256": io.config_hash(
                (base / self.phantom).read_text(), n=64)}
        d["source"] = list(parse_vector(self.source, name="source"))
        d["resolved_axes"] = {"z": z, "s": s, "omega": w}
        return ph, part, z, s, w, d


# ------------------------------------------------------------------ plots

def _post_exit_index(ms: MeasurementSet, iz):
    ds = float(np.median(np.diff(ms.s))) if ms.s.size > 1 else 0.0
    diag = {d["index"]: d for d in ms.meta.get("forward_diagnostics", [])}
    if iz in diag:
        later = np.nonzero(ms.s >= diag[iz]["tau2"] + 2 * ds)[0]
        if later.size:
            return int(later[0])
    return ms.s.size - 1


def emit_plots(ms: MeasurementSet, out_dir, valid_only=True):
    """One CSV per curve: the time trace and the frequency sweep of each z.

    The trace is taken at the frequency with the largest response, the
    sweep just after the exit time.  Returns the list of written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    valid = set(ms.meta.get("valid", range(len(ms.z))))
    written = []
    for iz in range(len(ms.z)):
        if valid_only and iz not in valid:
            continue
        iw = int(np.argmax(np.abs(ms.pstar[iz]).sum(axis=0))) if ms.omega.size else 0
        i_s = _post_exit_index(ms, iz)
        head = {"z": list(ms.z[iz]), "x": list(ms.x), "a": ms.meta.get("a")}
        p1 = out / f"trace_z{iz:04d}.csv"
        io.write_csv(p1, dict(head, curve="trace", omega=float(ms.omega[iw])),
                     {"s": ms.s, "pstar": ms.trace(iz, iw)})
        p2 = out / f"sweep_z{iz:04d}.csv"
        io.write_csv(p2, dict(head, curve="sweep", s=float(ms.s[i_s])),
                     {"omega": ms.omega, "pstar": ms.sweep(iz, i_s)})
        written += [p1, p2]
    return written


# --------------------------------------------------------------- commands

def cmd_phantom_gen(args):
    spec = load_config(args.config) if args.config else {"kind": args.kind}
    if args.cells is not None:
        spec["n_cells"] = args.cells
    ph = phantom_from_spec(spec)
    io.write_phantom(args.out, ph, extra={"generator": spec})
    _say(args, f"wrote {args.out} ({ph.name}, dims {ph.grid.dims})")
    return 0


def _load_phantom(path):
    p = Path(path)
    if p.suffix == ".json" and p.exists():
        doc = io.read_json(p)
        if doc.get("format") == io.FIELD_FORMAT:
            return io.read_phantom(p)
        return phantom_from_spec(_resolve_includes(doc, p.parent))
    if path in REFERENCE_PHANTOMS:
        return reference_phantom(path)
    raise ConfigError(f"no phantom file or reference phantom named {path!r}", "phantom")


def cmd_eikonal_solve(args):
    ph = _load_phantom(args.phantom)
    tt = solve_travel_time(ph, parse_vector(args.source, name="source"))
    res = tt.eikonal_residual()
    io.write_field_file(args.out, ph.grid, {"tau": tt.tau, "u": tt.u},
                        {"kind": "travel_time", "source": list(tt.source),
                         "residual_median": float(np.nanmedian(res)),
                         "residual_max": float(np.nanmax(res))})
    _say(args, f"wrote {args.out}; median eikonal residual {np.nanmedian(res):.3g}")
    return 0


def cmd_eikonal_trace(args):
    ph = _load_phantom(args.phantom)
    tt = solve_travel_time(ph, parse_vector(args.source, name="source"))
    target = parse_vector(args.target, name="target")
    geo = trace_geodesic(tt, target)
    pts = np.asarray(geo.points)
    io.write_csv(args.out, {"source": list(tt.source), "target": list(target),
                            "geodesic_time": geo.total, "tau_field": geo.tau_field},
                 {"x": pts[:, 0], "y": pts[:, 1], "z": pts[:, 2], "tau": geo.arclen_tau})
    _say(args, f"wrote {args.out}; geodesic time {geo.total:.6g} vs field {geo.tau_field:.6g}")
    return 0


def cmd_kernel_build(args):
    ph = _load_phantom(args.phantom)
    tt = solve_travel_time(ph, parse_vector(args.source, name="source"))
    co = build_kernel(tt, ph, K_max=args.kmax)
    fields = {"alpha_m1": co.alpha[0], "det_factor": co.det_factor,
              "rho_line_integral": co.rho_line_integral}
    fields.update({f"alpha_{k}": co.alpha_k(k) for k in range(args.kmax + 1)})
    io.write_field_file(args.out, ph.grid, fields,
                        {"kind": "kernel", "source": list(tt.source), "K_max": args.kmax,
                         "report": getattr(co, "report", {})})
    _say(args, f"wrote {args.out}")
    return 0


def cmd_plasmonics_root(args):
    lor = LorentzParams(**(load_config(args.lorentz) if args.lorentz else {}))
    rows = {k: [] for k in ("eps0_re", "eps0_im", "root_re", "root_im", "approx", "residual",
                            "eps0_roundtrip_re")}
    for e in args.eps0:
        ctx = DispersionContext(complex(e, args.eps0_im), args.lam, lor)
        r = complex_root(ctx)
        w = approx_resonance(ctx)
        back = invert_permittivity(w, args.lam, lor)
        for k, v in zip(rows, (e, args.eps0_im, r.real, r.imag, w,
                               abs(dispersion_value(ctx, w)), np.real(back))):
            rows[k].append(v)
    io.write_csv(args.out, {"lambda_n0": args.lam, **asdict(lor)}, rows)
    _say(args, f"wrote {args.out}")
    return 0


def _experiment_from_args(args):
    base = Path(".")
    cfg = {}
    if args.config:
        cfg = load_config(args.config)
        base = Path(args.config).parent
    for key, val in (("phantom", args.phantom), ("zgrid", args.zgrid), ("sgrid", args.sgrid),
                     ("wgrid", args.wgrid), ("noise", args.noise), ("seed", args.seed)):
        if val is not None:
            cfg[key] = val
    if args.particle:
        cfg["particle"] = load_config(args.particle)
    if isinstance(cfg.get("phantom"), str) and cfg["phantom"] in REFERENCE_PHANTOMS:
        cfg["phantom"] = {"kind": cfg["phantom"]}
    return ExperimentConfig.from_dict(cfg), base


def cmd_forward_sweep(args):
    exp, base = _experiment_from_args(args)
    ph, part, z, s, w, resolved = exp.resolved(base)
    h = io.config_hash(resolved)
    out = Path(args.out) / f"dataset-{h}"
    ms = synthesize_measurements(ph, part, z, s, w, exp.forward_config(),
                                 x=parse_vector(exp.source, name="source"),
                                 workers=args.threads)
    ms.meta["config_hash"] = h
    ms.meta["experiment"] = resolved
    dataset_to_files(ms, out)
    _say(args, f"wrote {out} ({len(ms.meta['valid'])} of {len(z)} positions valid)")
    return 0


def cmd_forward_plot(args):
    ms = dataset_from_files(args.data)
    files = emit_plots(ms, args.out)
    _say(args, f"wrote {len(files)} plot files to {args.out}")
    return 0


def cmd_reconstruct_run(args):
    from .reconstruct import run_pipeline
    ms = dataset_from_files(args.data)
    priors = load_config(args.priors) if args.priors else {}
    if "rho_x" not in priors:
        raise ConfigError("priors must give rho_x, the density at the boundary point",
                          "priors.rho_x")
    h = io.config_hash({"data": ms.meta.get("config_hash"), "priors": priors})
    out = Path(args.out) / f"report-{h}"
    rep = run_pipeline(ms, priors, K_max=int(priors.get("K_max", 2)))
    out.mkdir(parents=True, exist_ok=True)
    axes = rep.axes
    tables = {nm: rep.table(nm) for nm in ("tau_hat", "c_hat", "omega_hat", "alpha_minus1_hat",
                                           "det_factor_hat", "g_hat", "rho_hat")}
    tables["eps0_hat_re"] = rep.table("eps0_hat").real
    tables["eps0_hat_im"] = rep.table("eps0_hat").imag
    io.write_json(out / "tables.json", {"axes": axes, "tables": tables,
                                        "order": "C(x,y,z) over the particle grid"})
    grid = rep.kernel.grid if rep.kernel is not None else None
    if grid is not None:
        fields = {"c": rep.c_field, "rho": rep.rho_field,
                  "alpha_m1": rep.kernel.alpha[0]}
        io.write_field_file(out / "fields.json", grid, fields, {"kind": "recovered"})
    io.write_json(out / "diagnostics.json", dict(rep.diagnostics, config_hash=h))
    plots = emit_plots(ms, out / "plots")
    if args.truth:
        truth = _load_phantom(args.truth)
        _profile_plots(rep, truth, out / "plots")
    _say(args, f"wrote {out} ({len(plots)} curve files)")
    return 0


def _profile_plots(rep, truth: Phantom, out: Path):
    """Recovered vs true values along the particle grid's vertical centre line."""
    ax = rep.axes
    i, j = len(ax[0]) // 2, len(ax[1]) // 2
    zs = np.asarray(ax[2])
    pts = np.stack([np.full_like(zs, ax[0][i]), np.full_like(zs, ax[1][j]), zs], -1)
    for nm, key, tr in (("c", "c_hat", "c"), ("rho", "rho_hat", "rho"),
                        ("eps0", "eps0_hat", "eps0_re")):
        est = np.real(rep.table(key)[i, j, :])
        io.write_csv(out / f"profile_{nm}.csv", {"x": ax[0][i], "y": ax[1][j], "field": nm},
                     {"z": zs, "recovered": est, "true": sample_field(truth, tr, pts)})


def cmd_validate(args):
    """Anchor checks on the constant reference phantom."""
    ph = reference_phantom("homogeneous", n_cells=args.cells)
    tt = solve_travel_time(ph, DEFAULT_SOURCE)
    co = build_kernel(tt, ph, K_max=0)
    sl = ph.omega_slices()
    pts = ph.grid.node_coords()[sl]
    r = tt.distance_to_source(pts)
    far = r > 3 * ph.grid.h
    c0 = ph.c_background
    tau_err = float(np.median(np.abs(tt.tau[sl][far] * c0 / r[far] - 1)))
    a_err = float(np.nanmax(np.abs(co.alpha[0][sl][far] * 2 * np.pi * c0 ** 3 - 1)))
    lor = LorentzParams(gamma_p=0.0)
    ctx = DispersionContext(2.0, 1 / 3, lor)
    root_err = abs(complex_root(ctx) - approx_resonance(ctx))
    trip = abs(invert_permittivity(approx_resonance(ctx), 1 / 3, lor) - 2.0)
    checks = [("travel time median rel. error", tau_err, 0.03),
              ("alpha_{-1} max rel. error", a_err, 0.05),
              ("lossless root vs resonance", root_err, 1e-12),
              ("permittivity round trip", trip, 1e-10)]
    ok = True
    for name, val, tol in checks:
        good = val <= tol
        ok &= good
        print(f"{'PASS' if good else 'FAIL'}  {name}: {val:.3g} (tol {tol:g})")
    return 0 if ok else 3


# ------------------------------------------------------------------ parser

def _say(args, msg):
    if not getattr(args, "quiet", False):
        print(msg)


def build_parser():
    p = argparse.ArgumentParser(prog="nanopat", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    p.add_argument("--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom").add_subparsers(dest="action", required=True)
    g = ph.add_parser("gen", help="write a reference phantom to a field file")
    g.add_argument("--kind", default="homogeneous", choices=REFERENCE_PHANTOMS)
    g.add_argument("--cells", type=int, default=None, help="cells across Omega")
    g.add_argument("--config", help="JSON generator spec {kind, n_cells, ...}")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_phantom_gen)

    ek = sub.add_parser("eikonal").add_subparsers(dest="action", required=True)
    s = ek.add_parser("solve")
    s.add_argument("--phantom", required=True)
    s.add_argument("--source", default="0.5,0.5,0")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eikonal_solve)
    t = ek.add_parser("trace")
    t.add_argument("--phantom", required=True)
    t.add_argument("--source", default="0.5,0.5,0")
    t.add_argument("--target", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_eikonal_trace)

    kn = sub.add_parser("kernel").add_subparsers(dest="action", required=True)
    b = kn.add_parser("build")
    b.add_argument("--phantom", required=True)
    b.add_argument("--source", default="0.5,0.5,0")
    b.add_argument("--kmax", type=int, default=2)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_kernel_build)

    pl = sub.add_parser("plasmonics").add_subparsers(dest="action", required=True)
    r = pl.add_parser("root")
    r.add_argument("--eps0", type=float, nargs="+", default=[2.0])
    r.add_argument("--eps0-im", type=float, default=0.0)
    r.add_argument("--lam", type=float, default=1.0 / 3.0, help="mode eigenvalue")
    r.add_argument("--lorentz", help="JSON file with Lorentz parameters")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_plasmonics_root)

    fw = sub.add_parser("forward").add_subparsers(dest="action", required=True)
    sw = fw.add_parser("sweep")
    sw.add_argument("--config", help="experiment JSON (includes allowed)")
    sw.add_argument("--phantom", help="phantom file or reference name")
    sw.add_argument("--particle", help="particle JSON file")
    sw.add_argument("--zgrid", help="lo:hi:n,lo:hi:n,lo:hi:n")
    sw.add_argument("--sgrid", help="lo:hi:n")
    sw.add_argument("--wgrid", help="lo:hi:n")
    sw.add_argument("--noise", choices=("off", "bound", "random"))
    sw.add_argument("--seed", type=int)
    sw.add_argument("--out", required=True)
    sw.set_defaults(func=cmd_forward_sweep)
    fp = fw.add_parser("plot")
    fp.add_argument("--data", required=True)
    fp.add_argument("--out", required=True)
    fp.set_defaults(func=cmd_forward_plot)

    rc = sub.add_parser("reconstruct").add_subparsers(dest="action", required=True)
    rr = rc.add_parser("run")
    rr.add_argument("--data", required=True)
    rr.add_argument("--priors", help="JSON with rho_x and optional particle/boundary priors")
    rr.add_argument("--truth", help="phantom to compare recovered profiles against")
    rr.add_argument("--out", required=True)
    rr.set_defaults(func=cmd_reconstruct_run)

    v = sub.add_parser("validate", help="anchor checks on the constant phantom")
    v.add_argument("--cells", type=int, default=38)
    v.set_defaults(func=cmd_validate)
    return p


def run_subcommand(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except NanopatError as e:
        err = {"error": type(e).__name__, "message": str(e)}
        if getattr(e, "field", None):
            err["field"] = e.field
        print(json.dumps(err), file=sys.stderr)
        return e.exit_code


def main(argv=None):
    sys.exit(run_subcommand(argv))


if __name__ == "__main__":
    main()
