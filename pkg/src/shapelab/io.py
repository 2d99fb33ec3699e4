"""Run-configuration ingestion, field/report persistence, and rendering.

The control plane (configs, reports, manifests) is JSON so humans can read
and diff it; the data plane (nodal fields) is a minimal binary format so
round trips are bit-exact.  Everything written here is deterministic:
identical inputs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coeffs import make_coefficients
from .errors import (BadMagic, BadParams, BadResolution, DimensionMismatch,
                     IoError, NonSquareCells, NotSPD, ParseError, SchemaError,
                     TruncatedFile, UnknownKind)
from .grid import Field, Grid, build_grid
from .optimizer import OptimizeOptions, build_phi0

_MAGIC = b"SSF1"
_HEADER = struct.Struct("<III")

_COEFF_KINDS = ("identity", "drift", "weight", "anisotropic")
_PHI0_PRESETS = ("constant", "disk", "annulus", "two-disks")


# --------------------------------------------------------------------------
# config schema


@dataclass(frozen=True)
class RunConfig:
    """A fully validated run description with all defaults applied.

    ``applied_defaults`` lists the dotted key paths that were absent from the
    input and filled with documented defaults; ``effective`` is the complete
    plain-JSON mapping (input plus defaults) suitable for persisting next to
    run artifacts.
    """

    origin: tuple[float, float]
    extent: tuple[float, float]
    nx: int
    coeff_kind: str
    coeff_params: dict
    k: int
    lam: float
    eps0: float | str
    eps_min: float | str
    eps_factor: float
    phi0: dict
    tol: float
    max_iters: int
    step0: float | str
    seed: int
    radii: str | tuple
    delta_tol: float
    quad: tuple[int, int]
    d_in: float | str
    applied_defaults: tuple[str, ...]
    effective: dict

    def build_grid(self) -> Grid:
        return build_grid(self.origin, self.extent, self.nx)

    def build_coefficients(self, grid: Grid):
        return make_coefficients(grid, self.coeff_kind, dict(self.coeff_params))

    def build_phi0(self, grid: Grid) -> Field:
        return build_phi0(grid, dict(self.phi0))

    def optimizer_options(self) -> OptimizeOptions:
        return OptimizeOptions(
            k=self.k, lam_penalty=self.lam, eps0=self.eps0,
            eps_min=self.eps_min, eps_factor=self.eps_factor,
            step0=self.step0, tol=self.tol, max_iters=self.max_iters,
            seed=self.seed,
        )


def _need_mapping(node, path: str) -> dict:
    if not isinstance(node, dict):
        raise SchemaError(f"{path}: expected an object, got {type(node).__name__}")
    return node


def _reject_unknown(node: dict, allowed, path: str) -> None:
    unknown = sorted(set(node) - set(allowed))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise SchemaError(f"{where}: unknown key")


def _need(node: dict, key: str, path: str):
    if key not in node:
        where = f"{path}.{key}" if path else key
        raise SchemaError(f"{where}: required key missing")
    return node[key]


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{path}: expected a number, got {type(value).__name__}")
    out = float(value)
    if not math.isfinite(out):
        raise SchemaError(f"{path}: must be finite, got {out}")
    return out


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{path}: expected an integer, got {type(value).__name__}")
    return value


def _as_pair(value, path: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise SchemaError(f"{path}: expected a pair of numbers")
    return (_as_float(value[0], f"{path}[0]"), _as_float(value[1], f"{path}[1]"))


def _auto_or_positive(value, path: str) -> float | str:
    if value == "auto":
        return "auto"
    out = _as_float(value, path)
    if out <= 0:
        raise SchemaError(f"{path}: must be positive or \"auto\", got {out}")
    return out


def _probe_grid(origin, extent, grid: Grid) -> Grid:
    """Smallest grid with the same box and cell aspect, for cheap validation
    of coefficient/preset parameters without full-size node arrays."""
    g = math.gcd(grid.nx, grid.ny)
    bx, by = grid.nx // g, grid.ny // g
    m = max(1, -(-8 // bx), -(-8 // by))
    nxp = min(bx * m, grid.nx)
    if nxp == grid.nx:
        return grid
    return build_grid(origin, extent, nxp)


def parse_config(text) -> RunConfig:
    """Validate a JSON run description against the strict schema.

    Unknown keys anywhere are errors (silent typos in Lambda or eps would
    invalidate experiments); all optional sections receive documented
    defaults, and every default actually applied is echoed in
    ``applied_defaults``.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"config is not valid UTF-8: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc}") from exc
    top = _need_mapping(raw, "$")
    _reject_unknown(top, ("box", "nx", "coefficients", "k", "Lambda", "eps",
                          "phi0", "optimizer", "diagnostics"), "")
    applied: list[str] = []

    box = _need_mapping(_need(top, "box", ""), "box")
    _reject_unknown(box, ("origin", "extent"), "box")
    origin = _as_pair(_need(box, "origin", "box"), "box.origin")
    extent = _as_pair(_need(box, "extent", "box"), "box.extent")
    if extent[0] <= 0 or extent[1] <= 0:
        raise SchemaError(f"box.extent: must be positive, got {list(extent)}")

    nx = _as_int(_need(top, "nx", ""), "nx")
    try:
        grid = build_grid(origin, extent, nx)
    except (BadResolution, NonSquareCells) as exc:
        raise SchemaError(f"nx: {exc}") from exc

    coeff = _need_mapping(_need(top, "coefficients", ""), "coefficients")
    _reject_unknown(coeff, ("kind", "params"), "coefficients")
    kind = _need(coeff, "kind", "coefficients")
    if kind not in _COEFF_KINDS:
        raise SchemaError(
            f"coefficients.kind: unknown kind {kind!r}, expected one of {list(_COEFF_KINDS)}")
    params = coeff.get("params")
    if params is None:
        params = {}
        applied.append("coefficients.params")
    params = _need_mapping(params, "coefficients.params")

    k = _as_int(_need(top, "k", ""), "k")
    if not 1 <= k <= 8:
        raise SchemaError(f"k: must be in [1, 8], got {k}")
    lam = _as_float(_need(top, "Lambda", ""), "Lambda")
    if lam < 0:
        raise SchemaError(f"Lambda: must be non-negative, got {lam}")

    eps = top.get("eps")
    if eps is None:
        eps = {}
        applied.append("eps")
    else:
        eps = _need_mapping(eps, "eps")
        applied.extend(f"eps.{key}" for key in ("eps0", "eps_min", "factor")
                       if key not in eps)
    _reject_unknown(eps, ("eps0", "eps_min", "factor"), "eps")
    eps0 = _auto_or_positive(eps.get("eps0", "auto"), "eps.eps0")
    eps_min = _auto_or_positive(eps.get("eps_min", "auto"), "eps.eps_min")
    eps_factor = _as_float(eps.get("factor", 0.25), "eps.factor")
    if not 0.0 < eps_factor < 1.0:
        raise SchemaError(f"eps.factor: must lie in (0, 1), got {eps_factor}")
    if (eps0 != "auto" and eps_min != "auto" and eps_min > eps0):
        raise SchemaError(f"eps.eps_min: must not exceed eps.eps0, got {eps_min} > {eps0}")

    phi0 = top.get("phi0")
    if phi0 is None:
        phi0 = {"preset": "constant", "value": 1.0}
        applied.append("phi0")
    phi0 = dict(_need_mapping(phi0, "phi0"))
    preset = _need(phi0, "preset", "phi0")
    if preset not in _PHI0_PRESETS:
        raise SchemaError(
            f"phi0.preset: unknown preset {preset!r}, expected one of {list(_PHI0_PRESETS)}")

    opt = top.get("optimizer")
    if opt is None:
        opt = {}
        applied.append("optimizer")
    else:
        opt = _need_mapping(opt, "optimizer")
        applied.extend(f"optimizer.{key}"
                       for key in ("tol", "max_iters", "step0", "seed")
                       if key not in opt)
    _reject_unknown(opt, ("tol", "max_iters", "step0", "seed"), "optimizer")
    tol = _as_float(opt.get("tol", 1e-5), "optimizer.tol")
    if tol <= 0:
        raise SchemaError(f"optimizer.tol: must be positive, got {tol}")
    max_iters = _as_int(opt.get("max_iters", 80), "optimizer.max_iters")
    if max_iters < 1:
        raise SchemaError(f"optimizer.max_iters: must be at least 1, got {max_iters}")
    step0 = _auto_or_positive(opt.get("step0", "auto"), "optimizer.step0")
    seed = _as_int(opt.get("seed", 0), "optimizer.seed")
    if seed < 0:
        raise SchemaError(f"optimizer.seed: must be non-negative, got {seed}")

    diag = top.get("diagnostics")
    if diag is None:
        diag = {}
        applied.append("diagnostics")
    else:
        diag = _need_mapping(diag, "diagnostics")
        applied.extend(f"diagnostics.{key}"
                       for key in ("radii", "delta_tol", "quad", "d_in")
                       if key not in diag)
    _reject_unknown(diag, ("radii", "delta_tol", "quad", "d_in"), "diagnostics")
    radii = diag.get("radii", "auto")
    if radii != "auto":
        if not isinstance(radii, (list, tuple)) or len(radii) != 3:
            raise SchemaError(
                "diagnostics.radii: expected \"auto\" or [r_min, r_max, count]")
        r_min = _as_float(radii[0], "diagnostics.radii[0]")
        r_max = _as_float(radii[1], "diagnostics.radii[1]")
        count = _as_int(radii[2], "diagnostics.radii[2]")
        if not 0 < r_min < r_max:
            raise SchemaError(
                f"diagnostics.radii: need 0 < r_min < r_max, got {r_min}, {r_max}")
        if count < 2:
            raise SchemaError(f"diagnostics.radii[2]: need at least 2 radii, got {count}")
        radii = (r_min, r_max, count)
    delta_tol = _as_float(diag.get("delta_tol", 0.1), "diagnostics.delta_tol")
    if not 0.0 < delta_tol < 0.25:
        raise SchemaError(
            f"diagnostics.delta_tol: must lie in (0, 0.25), got {delta_tol}")
    quad_raw = diag.get("quad", [64, 256])
    if not isinstance(quad_raw, (list, tuple)) or len(quad_raw) != 2:
        raise SchemaError("diagnostics.quad: expected [n_radial, n_angular]")
    quad = (_as_int(quad_raw[0], "diagnostics.quad[0]"),
            _as_int(quad_raw[1], "diagnostics.quad[1]"))
    if quad[0] < 16 or quad[1] < 64:
        raise SchemaError(
            f"diagnostics.quad: minimum resolution is [16, 64], got {list(quad)}")
    d_in = _auto_or_positive(diag.get("d_in", "auto"), "diagnostics.d_in")

    probe = _probe_grid(origin, extent, grid)
    try:
        make_coefficients(probe, kind, dict(params))
    except UnknownKind as exc:
        raise SchemaError(f"coefficients.kind: {exc}") from exc
    except (BadParams, NotSPD) as exc:
        raise SchemaError(f"coefficients.params: {exc}") from exc
    try:
        build_phi0(probe, dict(phi0))
    except BadParams as exc:
        raise SchemaError(f"phi0: {exc}") from exc

    effective = {
        "box": {"origin": list(origin), "extent": list(extent)},
        "nx": nx,
        "coefficients": {"kind": kind, "params": dict(params)},
        "k": k,
        "Lambda": lam,
        "eps": {"eps0": eps0, "eps_min": eps_min, "factor": eps_factor},
        "phi0": dict(phi0),
        "optimizer": {"tol": tol, "max_iters": max_iters, "step0": step0,
                      "seed": seed},
        "diagnostics": {"radii": list(radii) if radii != "auto" else "auto",
                        "delta_tol": delta_tol, "quad": list(quad),
                        "d_in": d_in},
    }
    return RunConfig(
        origin=origin, extent=extent, nx=nx, coeff_kind=kind,
        coeff_params=dict(params), k=k, lam=lam, eps0=eps0, eps_min=eps_min,
        eps_factor=eps_factor, phi0=dict(phi0), tol=tol, max_iters=max_iters,
        step0=step0, seed=seed, radii=radii, delta_tol=delta_tol, quad=quad,
        d_in=d_in, applied_defaults=tuple(sorted(applied)),
        effective=effective,
    )


# --------------------------------------------------------------------------
# binary nodal fields (SSF1)


def write_field(field: Field, path) -> None:
    """Persist a nodal field: magic "SSF1", little-endian u32 nx+1, ny+1,
    ncomp, then little-endian f64 payload, component-major then row-major."""
    vals = np.ascontiguousarray(field.values, dtype="<f8")
    ncomp, ny1, nx1 = vals.shape
    blob = _MAGIC + _HEADER.pack(nx1, ny1, ncomp) + vals.tobytes()
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write field to {path}: {exc}") from exc


def read_field(path, grid: Grid | None = None) -> Field:
    """Inverse of write_field; bit-exact.

    The format stores resolution only, so when no grid is supplied the field
    is placed on a unit-width box at the recorded aspect ratio; pass the run
    grid to restore the original geometry.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read field from {path}: {exc}") from exc
    if len(data) < len(_MAGIC):
        raise TruncatedFile(f"{path}: shorter than the format magic")
    if data[:len(_MAGIC)] != _MAGIC:
        raise BadMagic(f"{path}: expected magic {_MAGIC!r}, got {data[:4]!r}")
    head_end = len(_MAGIC) + _HEADER.size
    if len(data) < head_end:
        raise TruncatedFile(f"{path}: header cut short")
    nx1, ny1, ncomp = _HEADER.unpack(data[len(_MAGIC):head_end])
    if min(nx1, ny1, ncomp) == 0:
        raise IoError(f"{path}: degenerate dimensions {(nx1, ny1, ncomp)}")
    need = head_end + 8 * nx1 * ny1 * ncomp
    if len(data) < need:
        raise TruncatedFile(
            f"{path}: header promises {need} bytes, file has {len(data)}")
    if len(data) > need:
        raise IoError(f"{path}: {len(data) - need} trailing bytes after payload")
    values = np.frombuffer(data, dtype="<f8", offset=head_end)
    values = values.reshape(ncomp, ny1, nx1).copy()
    if grid is None:
        grid = build_grid((0.0, 0.0), (1.0, (ny1 - 1) / (nx1 - 1)), nx1 - 1)
    elif grid.nodes_shape != (ny1, nx1):
        raise DimensionMismatch(
            f"{path}: field is {(ny1, nx1)} nodes, grid is {grid.nodes_shape}")
    try:
        return Field(grid, values)
    except BadResolution as exc:
        # nodal fields are finite by invariant; a payload violating that is
        # a corrupt file, not a usable field
        raise IoError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# reports


def _jsonable(obj, path: str, warnings: list[str]):
    if isinstance(obj, dict):
        out = {}
        for key in obj:
            if not isinstance(key, str):
                raise IoError(f"report keys must be strings, got {key!r} at {path}")
            out[key] = _jsonable(obj[key], f"{path}.{key}", warnings)
        return out
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v, f"{path}[{i}]", warnings) for i, v in enumerate(obj)]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist(), path, warnings)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        if not math.isfinite(val):
            text = "nan" if math.isnan(val) else ("inf" if val > 0 else "-inf")
            warnings.append(f"non-finite value at {path}")
            return text
        return val
    if obj is None or isinstance(obj, str):
        return obj
    raise IoError(f"report value of type {type(obj).__name__} at {path} "
                  "is not serializable")


def _emit(node, indent: int) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if node is None:
        return "null"
    if isinstance(node, bool):
        return "true" if node else "false"
    if isinstance(node, int):
        return str(node)
    if isinstance(node, float):
        text = format(node, ".17g")
        if not any(c in text for c in ".eE"):
            text += ".0"
        return text
    if isinstance(node, str):
        return json.dumps(node)
    if isinstance(node, list):
        if not node:
            return "[]"
        body = ",\n".join(inner + _emit(v, indent + 1) for v in node)
        return "[\n" + body + "\n" + pad + "]"
    if not node:
        return "{}"
    body = ",\n".join(
        f"{inner}{json.dumps(key)}: {_emit(node[key], indent + 1)}"
        for key in sorted(node))
    return "{\n" + body + "\n" + pad + "}"


def report_text(report: dict) -> str:
    """Canonical JSON text: sorted keys, 17-significant-digit floats,
    non-finite values as strings plus a top-level warnings entry."""
    if not isinstance(report, dict):
        raise IoError(f"report must be a mapping, got {type(report).__name__}")
    warnings: list[str] = []
    tree = _jsonable(report, "$", warnings)
    existing = tree.get("warnings", [])
    if not isinstance(existing, list):
        existing = [existing]
    tree["warnings"] = existing + warnings
    return _emit(tree, 0) + "\n"


def write_report(report: dict, path) -> None:
    text = report_text(report)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write report to {path}: {exc}") from exc


def write_config(effective: dict, path) -> None:
    """Persist an effective config in canonical form.

    Unlike reports, configs get no injected warnings entry — the written
    file must re-parse under the strict schema.
    """
    if not isinstance(effective, dict):
        raise IoError(f"config must be a mapping, got {type(effective).__name__}")
    tree = _jsonable(effective, "$", [])
    try:
        Path(path).write_text(_emit(tree, 0) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write config to {path}: {exc}") from exc


# --------------------------------------------------------------------------
# rendering


def render_heatmap(field: Field, component: int, path) -> None:
    """Write one field component as a binary PGM (P5, maxval 255), min-max
    normalized; the top image row is the top of the box (max y)."""
    ncomp = field.values.shape[0]
    if not 0 <= component < ncomp:
        raise BadParams(f"component {component} out of range for {ncomp} components")
    vals = field.values[component][::-1, :]
    lo = float(vals.min())
    hi = float(vals.max())
    if hi == lo:
        pixels = np.full(vals.shape, 128, dtype=np.uint8)
    else:
        pixels = np.rint((vals - lo) / (hi - lo) * 255.0).astype(np.uint8)
    ny1, nx1 = vals.shape
    header = f"P5\n{nx1} {ny1}\n255\n".encode("ascii")
    try:
        Path(path).write_bytes(header + pixels.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write image to {path}: {exc}") from exc


# --------------------------------------------------------------------------
# manifests


def file_digest(path) -> str:
    """Hex SHA-256 of a file's bytes."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot digest {path}: {exc}") from exc
    return hashlib.sha256(data).hexdigest()


def write_manifest(directory, names) -> Path:
    """Record digests and sizes of the named files in directory/manifest.json."""
    directory = Path(directory)
    files = {}
    for name in sorted(names):
        target = directory / name
        files[name] = {"sha256": file_digest(target),
                       "bytes": target.stat().st_size}
    out = directory / "manifest.json"
    write_report({"files": files}, out)
    return out
