"""Persistence: field files, phantom files, datasets and config hashing.

Field file
    One JSON document.  ``grid`` holds origin/h/dims, ``meta`` free-form
    metadata, ``fields`` maps names to base64 strings of little-endian
    float64 values with the first axis varying fastest.

Dataset directory
    ``dataset.json`` (metadata, axes, config) plus ``pstar.bin``: raw
    little-endian float64, C order over (z index, s index, omega index).
"""
from __future__ import annotations

import base64
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .media import FIELD_NAMES, Box, Grid3, Phantom

FIELD_FORMAT = "nanopat-field/1"
DATASET_FORMAT = "nanopat-dataset/1"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps(obj):
    """Deterministic JSON text (sorted keys, fixed separators)."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1, allow_nan=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", "path") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}", "path") from None


def config_hash(cfg, n=12):
    """Content hash of a resolved config; equal configs give equal hashes."""
    text = json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(text.encode()).hexdigest()[:n]


def encode_array(a):
    a = np.asarray(a, dtype="<f8")
    return base64.b64encode(a.ravel(order="F").tobytes()).decode("ascii")


def decode_array(text, dims):
    raw = np.frombuffer(base64.b64decode(text), dtype="<f8")
    if raw.size != int(np.prod(dims)):
        raise ConfigError(f"array size {raw.size} does not match dims {dims}", "fields")
    return raw.reshape(tuple(dims), order="F").astype(float)


def grid_to_dict(grid: Grid3):
    return {"origin": list(grid.origin), "h": grid.h, "dims": list(grid.dims)}


def grid_from_dict(d):
    try:
        return Grid3(tuple(d["origin"]), float(d["h"]), tuple(d["dims"]))
    except KeyError as e:
        raise ConfigError(f"missing key {e}", "grid") from None


def write_field_file(path, grid: Grid3, fields: dict, meta=None):
    doc = {"format": FIELD_FORMAT, "grid": grid_to_dict(grid), "meta": meta or {},
           "order": "x-fastest", "dtype": "<f8",
           "fields": {nm: encode_array(v) for nm, v in fields.items()}}
    Path(path).write_text(dumps(doc))


def read_field_file(path):
    """Return ``(grid, fields, meta)``."""
    doc = read_json(path)
    if doc.get("format") != FIELD_FORMAT:
        raise ConfigError(f"not a field file (format={doc.get('format')!r})", "format")
    grid = grid_from_dict(doc["grid"])
    fields = {nm: decode_array(txt, grid.dims) for nm, txt in doc["fields"].items()}
    return grid, fields, doc.get("meta", {})


def write_phantom(path, phantom: Phantom, extra=None):
    meta = {"kind": "phantom", "name": phantom.name,
            "omega_domain": {"lo": list(phantom.omega_domain.lo), "hi": list(phantom.omega_domain.hi)},
            "c_background": phantom.c_background, "rho_background": phantom.rho_background,
            "eps_infinity": phantom.eps_infinity, "M": phantom.M}
    if extra:
        meta.update(extra)
    write_field_file(path, phantom.grid, {nm: getattr(phantom, nm) for nm in FIELD_NAMES}, meta)


def read_phantom(path):
    grid, fields, meta = read_field_file(path)
    missing = [nm for nm in FIELD_NAMES if nm not in fields]
    if missing:
        raise ConfigError(f"phantom file lacks fields {missing}", "fields")
    try:
        om = meta["omega_domain"]
        return Phantom(grid=grid, omega_domain=Box(tuple(om["lo"]), tuple(om["hi"])),
                       c_background=meta["c_background"], rho_background=meta["rho_background"],
                       eps_infinity=meta["eps_infinity"], M=meta["M"],
                       name=meta.get("name", "custom"), **{nm: fields[nm] for nm in FIELD_NAMES})
    except KeyError as e:
        raise ConfigError(f"missing key {e}", "meta") from None


def write_dataset(directory, pstar, meta):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(pstar, dtype="<f8")
    (d / "pstar.bin").write_bytes(arr.tobytes(order="C"))
    doc = dict(meta)
    doc.update({"format": DATASET_FORMAT, "shape": list(arr.shape), "dtype": "<f8",
                "order": "C(z,s,omega)", "data": "pstar.bin"})
    write_json(d / "dataset.json", doc)


def read_dataset(directory):
    """Return ``(pstar, meta)``."""
    d = Path(directory)
    meta = read_json(d / "dataset.json")
    if meta.get("format") != DATASET_FORMAT:
        raise ConfigError(f"not a dataset (format={meta.get('format')!r})", "format")
    raw = np.frombuffer((d / meta.get("data", "pstar.bin")).read_bytes(), dtype="<f8")
    shape = tuple(meta["shape"])
    if raw.size != int(np.prod(shape)):
        raise ConfigError("tensor size does not match the declared shape", "shape")
    return raw.reshape(shape).copy(), meta


def write_csv(path, header: dict, columns: dict):
    """CSV with ``# key=value`` header lines and one column per entry."""
    names = list(columns)
    cols = [np.asarray(columns[nm]) for nm in names]
    lines = [f"# {k}={_jsonable(header[k])}" for k in sorted(header)]
    lines.append(",".join(names))
    for row in zip(*cols):
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    header, rows, names = {}, [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            header[k] = v
        elif names is None:
            names = line.split(",")
        elif line:
            rows.append([float(v) for v in line.split(",")])
    data = np.array(rows).reshape(-1, len(names or []))
    return header, {nm: data[:, i] for i, nm in enumerate(names or [])}


def list_files(directory):
    """Sorted relative paths of all files under ``directory``."""
    root = Path(directory)
    out = []
    for dirpath, _, files in os.walk(root):
        for f in files:
            out.append(str((Path(dirpath) / f).relative_to(root)))
    return sorted(out)
