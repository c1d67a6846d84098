"""Experiment configuration: parsing, validation and field construction.

A config is a YAML or JSON mapping with sections ``geometry``, ``chi``,
``operator``, ``psi``, ``u0``, ``u_under``, ``tolerances`` and ``outputs``.
Field specs are a number, a path string to a snapshot file, or a mapping with
any of ``constant``, ``modes``, ``file``, ``transform``, ``normalize`` and
(``psi`` only) ``manufactured``.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from . import flow, torus
from .ops import DomainError, OperatorSpec
from .torus import ChiSpec, TorusGeometry

SECTIONS = {"geometry", "chi", "operator", "psi", "u0", "u_under", "tolerances", "outputs"}
FIELD_KEYS = {"constant", "modes", "file", "transform", "normalize", "manufactured"}
TOLERANCE_KEYS = {f.name for f in fields(flow.FlowParams)}


class ConfigError(ValueError):
    pass


def _load(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError(f"{where}: {exc.problem}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _matrix(value, n, key):
    """Hermitian matrix from a scalar (times I), nested lists, or complex strings/pairs."""
    if value is None or value == "identity":
        return np.eye(n, dtype=complex)
    if isinstance(value, (int, float)):
        return float(value) * np.eye(n, dtype=complex)
    try:
        rows = [[_entry(x) for x in row] for row in value]
        mat = np.array(rows, dtype=complex)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot read matrix entries ({exc})") from None
    if mat.shape != (n, n):
        raise ConfigError(f"{key}: expected {n}x{n} matrix, got shape {mat.shape}")
    return mat


def _entry(x):
    if isinstance(x, str):
        return complex(x.replace(" ", "").replace("i", "j"))
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            raise ValueError("complex entries are [re, im]")
        return complex(float(x[0]), float(x[1]))
    if isinstance(x, dict):
        return complex(float(x.get("re", 0.0)), float(x.get("im", 0.0)))
    return complex(float(x))


def _modes(value, n, key):
    out = []
    for i, m in enumerate(value or []):
        k = f"{key}.modes[{i}]"
        if isinstance(m, dict):
            extra = set(m) - {"amp", "k", "phase"}
            if extra:
                raise ConfigError(f"{k}: unknown keys {sorted(extra)}")
            amp, kvec, phase = m.get("amp"), m.get("k"), m.get("phase", 0.0)
        elif isinstance(m, (list, tuple)) and len(m) in (2, 3):
            amp, kvec = m[0], m[1]
            phase = m[2] if len(m) == 3 else 0.0
        else:
            raise ConfigError(f"{k}: a mode is [amp, [k_1..k_2n], phase] or a mapping")
        if amp is None or kvec is None:
            raise ConfigError(f"{k}: amp and k are required")
        if len(kvec) != 2 * n or any(int(c) != c for c in kvec):
            raise ConfigError(f"{k}: wave-vector must hold {2 * n} integers")
        out.append((float(amp), [int(c) for c in kvec], float(phase)))
    return out


@dataclass
class Experiment:
    """Everything needed to run one config, plus its resolved echo."""

    geom: TorusGeometry
    chi: ChiSpec
    op: OperatorSpec
    psi: np.ndarray
    u0: np.ndarray
    u_under: np.ndarray | None
    params: flow.FlowParams
    out_dir: Path
    resolved: dict
    source: Path

    def problem(self):
        return flow.Problem(self.geom, self.chi, self.op, self.psi)


class _Builder:
    def __init__(self, data, base):
        self.data = data
        self.base = base

    def field(self, spec, key, geom, allow_manufactured=False, chi=None, op=None):
        if spec is None:
            return geom.zeros(), None
        if isinstance(spec, (int, float)):
            return np.full(geom.shape, float(spec)), spec
        if isinstance(spec, str):
            spec = {"file": spec}
        if isinstance(spec, list):
            spec = {"modes": spec}
        if not isinstance(spec, dict):
            raise ConfigError(f"{key}: field spec must be a number, path, mode list or mapping")
        extra = set(spec) - FIELD_KEYS
        if extra:
            raise ConfigError(f"{key}: unknown keys {sorted(extra)}")
        if "manufactured" in spec and not allow_manufactured:
            raise ConfigError(f"{key}: 'manufactured' is only valid for psi")
        if "manufactured" in spec:
            ustar, _ = self.field(spec["manufactured"], f"{key}.manufactured", geom)
            try:
                val = flow.Problem(geom, chi, op, 0.0).rhs(ustar)
            except DomainError as exc:
                raise ConfigError(f"{key}.manufactured: target not admissible: {exc}") from None
        elif "file" in spec:
            p = Path(spec["file"])
            p = p if p.is_absolute() else self.base / p
            try:
                hdr, val = torus.read_field(p)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"{key}.file: {exc}") from None
            if (hdr.n, hdr.N, hdr.kind) != (geom.n, geom.N, torus.KIND_SCALAR):
                raise ConfigError(f"{key}.file: snapshot is n={hdr.n}, N={hdr.N}, kind={hdr.kind}; "
                                  f"expected a scalar field with n={geom.n}, N={geom.N}")
        else:
            try:
                val = torus.trig_field(geom, _modes(spec.get("modes"), geom.n, key),
                                       float(spec.get("constant", 0.0)))
            except torus.ConfigurationError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        tr = spec.get("transform")
        if tr == "log1p":
            if np.any(val <= -1):
                raise ConfigError(f"{key}: log1p transform needs field > -1")
            val = np.log1p(val)
        elif tr is not None:
            raise ConfigError(f"{key}.transform: unknown transform {tr!r} (expected 'log1p')")
        norm = spec.get("normalize")
        if norm == "exp_mean_one":
            val = val - np.log(np.mean(np.exp(val)))
        elif norm == "mean_zero":
            val = val - np.mean(val)
        elif norm is not None:
            raise ConfigError(f"{key}.normalize: unknown normalization {norm!r}")
        return val, spec


def parse(path):
    """Read, validate and resolve a config file into an :class:`Experiment`."""
    path = Path(path)
    data = _load(path)
    extra = set(data) - SECTIONS
    if extra:
        raise ConfigError(f"{path}: unknown sections {sorted(extra)}")
    b = _Builder(data, path.parent)

    g = data.get("geometry") or {}
    if not isinstance(g, dict):
        raise ConfigError("geometry: must be a mapping")
    bad = set(g) - {"n", "N", "alpha"}
    if bad:
        raise ConfigError(f"geometry: unknown keys {sorted(bad)}")
    if "n" not in g or "N" not in g:
        raise ConfigError("geometry: n and N are required")
    try:
        n, N = int(g["n"]), int(g["N"])
    except (TypeError, ValueError):
        raise ConfigError("geometry: n and N must be integers") from None
    alpha = _matrix(g.get("alpha"), n, "geometry.alpha")
    try:
        geom = TorusGeometry(n, N, alpha)
    except torus.ConfigurationError as exc:
        raise ConfigError(f"geometry: {exc}") from None

    c = data.get("chi") or {}
    if not isinstance(c, dict) or set(c) - {"chi0", "rho"}:
        raise ConfigError("chi: mapping with keys chi0, rho")
    chi0 = _matrix(c.get("chi0"), n, "chi.chi0")
    if not np.allclose(chi0, chi0.conj().T):
        raise ConfigError("chi.chi0: must be Hermitian")
    rho, _ = b.field(c.get("rho"), "chi.rho", geom)
    chi = ChiSpec(chi0, rho if c.get("rho") is not None else None)

    o = data.get("operator")
    if not isinstance(o, dict):
        raise ConfigError("operator: required mapping with key 'kind'")
    o = dict(o)
    auto = o.get("c_const") == "auto"
    if auto:
        o["c_const"] = 0.0
    try:
        op = OperatorSpec.from_dict(o).resolved(n)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"operator: {exc}") from None
    if auto:
        try:
            op = op.with_constant(torus.cohomology_constant(geom, chi, op))
        except torus.ConfigurationError as exc:
            raise ConfigError(f"operator.c_const: {exc}") from None

    psi, psi_spec = b.field(data.get("psi"), "psi", geom, allow_manufactured=True, chi=chi, op=op)
    u0, _ = b.field(data.get("u0"), "u0", geom)
    u_under = None
    if data.get("u_under") is not None:
        u_under, _ = b.field(data.get("u_under"), "u_under", geom)

    tol = data.get("tolerances") or {}
    if not isinstance(tol, dict):
        raise ConfigError("tolerances: must be a mapping")
    bad = set(tol) - TOLERANCE_KEYS
    if bad:
        raise ConfigError(f"tolerances: unknown keys {sorted(bad)}")
    try:
        params = flow.FlowParams(**tol)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"tolerances: {exc}") from None

    outs = data.get("outputs") or {}
    if not isinstance(outs, dict) or set(outs) - {"dir"}:
        raise ConfigError("outputs: mapping with key 'dir'")
    out_dir = Path(outs.get("dir", f"{path.stem}_out"))
    if not out_dir.is_absolute():
        out_dir = path.parent / out_dir

    resolved = copy.deepcopy(data)
    resolved["geometry"] = {"n": n, "N": N, "alpha": _matrix_json(geom.alpha)}
    resolved["chi"] = {"chi0": _matrix_json(chi0), "rho": c.get("rho")}
    resolved["operator"] = op.to_dict()
    resolved["tolerances"] = asdict(params)
    resolved["outputs"] = {"dir": str(out_dir)}
    return Experiment(geom, chi, op, psi, u0, u_under, params, out_dir, resolved, path)


def _matrix_json(m):
    m = np.asarray(m, dtype=complex)
    if np.allclose(m.imag, 0):
        return m.real.tolist()
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]
