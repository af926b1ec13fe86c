"""Command line: configuration, dispatch, checkpoints and reports.

    flockhydro <command> --config <path> [--key value ...]

The configuration is an INI file. Keys may sit inside their section
(``[model]``, ``[grid]``, ...) or before any section header, in which case
they are matched by name. Flags use the same names, optionally qualified as
``--section.key``; they override the file.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FlockHydroError, FormatError

MAGIC = b"FLKHYD01"
COMMANDS = ("coeffs", "chi", "hydro", "kinetic", "verify", "compare")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def write_checkpoint(array, meta, path):
    """Magic, ``key = value`` header lines, a blank line, then little-endian f8 payload."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    header = {"shape": ",".join(str(n) for n in arr.shape), "dtype": "<f8", "order": "C"}
    for key, value in (meta or {}).items():
        key, text = str(key), str(value)
        if not key or "=" in key or "\n" in key or "\n" in text or key != key.strip():
            raise FormatError(f"header entry {key!r} cannot be serialised")
        if key in header:
            raise FormatError(f"header key {key!r} is reserved")
        header[key] = text
    lines = "".join(f"{k} = {v}\n" for k, v in header.items()) + "\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(lines.encode("utf-8"))
        fh.write(arr.tobytes(order="C"))


def read_checkpoint(path):
    """Inverse of :func:`write_checkpoint`; returns ``(array, meta)``."""
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic: not a flockhydro checkpoint")
    end = data.find(b"\n\n", len(MAGIC))
    if end < 0:
        raise FormatError("header is not terminated")
    meta = {}
    for line in data[len(MAGIC):end].decode("utf-8").split("\n"):
        if " = " not in line:
            raise FormatError(f"malformed header line {line!r}")
        key, value = line.split(" = ", 1)
        meta[key] = value
    if meta.pop("dtype", None) != "<f8" or meta.pop("order", None) != "C":
        raise FormatError("unsupported dtype or order")
    try:
        shape = tuple(int(n) for n in meta.pop("shape").split(",") if n != "")
    except (KeyError, ValueError):
        raise FormatError("missing or malformed shape") from None
    payload = data[end + 2:]
    expected = 8 * math.prod(shape)
    if len(payload) != expected:
        raise FormatError(f"payload length {len(payload)} does not match shape {shape} ({expected} bytes)")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy(), meta


# ---------------------------------------------------------------------------
# configuration schema
# ---------------------------------------------------------------------------

def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _floats(text):
    text = text.strip()
    return tuple(float(t) for t in text.split(",") if t.strip()) if text else ()


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    kind: object  # int, float, str, bool, or a parser callable
    default: object
    check: object = None  # predicate on the parsed value
    reason: str = ""
    choices: tuple = ()


SCHEMA = [
    Key("run", "command", str, None, choices=COMMANDS),
    Key("run", "seed", int, 0, _nonneg, "must be a nonnegative integer"),
    Key("run", "output_dir", str, "."),
    Key("model", "sigma", float, None, _positive, "must be positive"),
    Key("model", "d", int, 2, lambda d: d in (2, 3), "must be 2 or 3"),
    Key("model", "potential", str, "zero", choices=("zero", "self_propulsion", "tabulated")),
    Key("model", "alpha", float, 1.0, _positive, "must be positive"),
    Key("model", "beta", float, 1.0, _positive, "must be positive"),
    Key("model", "eta", float, 1.0, _positive, "must be positive"),
    Key("model", "nodes", _floats, ()),
    Key("model", "values", _floats, ()),
    Key("grid", "n_theta", int, 128, lambda n: n >= 4, "must be >= 4"),
    Key("grid", "n_r", int, 128, lambda n: n >= 4, "must be >= 4"),
    Key("grid", "truncation_tol", float, 1e-18, lambda x: 0 < x < 1, "must lie in (0, 1)"),
    Key("grid", "chi_tol", float, 1e-10, lambda x: 0 < x <= 1e-4, "must lie in (0, 1e-4]"),
    Key("coeffs", "lambdas", _floats, (), lambda xs: all(x > 0 for x in xs)
        and all(b > a for a, b in zip(xs, xs[1:])), "must be positive and increasing"),
    Key("hydro", "cells", int, 200, lambda n: n >= 3, "must be >= 3"),
    Key("hydro", "cells_y", int, 0, lambda n: n == 0 or n >= 3, "must be 0 (1D) or >= 3"),
    Key("hydro", "length", float, 1.0, _positive, "must be positive"),
    Key("hydro", "t_end", float, 0.5, _nonneg, "must be nonnegative"),
    Key("hydro", "cfl", float, 0.5, lambda x: 0 < x <= 1, "must lie in (0, 1]"),
    Key("hydro", "flux", str, "rusanov", choices=("rusanov", "upwind")),
    Key("hydro", "output_every", float, 0.0, _nonneg, "must be nonnegative (0: end only)"),
    Key("hydro", "rho0", float, 1.0, _positive, "must be positive"),
    Key("hydro", "rho_amp", float, 0.2, _nonneg, "must be nonnegative"),
    Key("hydro", "angle0", float, 0.0),
    Key("hydro", "angle_amp", float, 0.5),
    Key("hydro", "c1", float, None),
    Key("hydro", "c2", float, None),
    Key("kinetic", "particles", int, 100_000, _positive, "must be positive"),
    Key("kinetic", "epsilon", _floats, (0.2, 0.1, 0.05), lambda xs: len(xs) > 0 and all(x > 0 for x in xs),
        "must be a nonempty list of positive numbers"),
    Key("kinetic", "t_end", float, 50.0, _nonneg, "must be nonnegative"),
    Key("kinetic", "dt_ratio", float, 0.01, lambda x: 0 < x <= 0.1, "must lie in (0, 0.1]"),
    Key("kinetic", "bins", int, 64, lambda n: n >= 1, "must be >= 1"),
    Key("kinetic", "n_boot", int, 50, lambda n: n >= 2, "must be >= 2"),
    Key("kinetic", "checkpoints", int, 5, lambda n: n >= 1, "must be >= 1"),
    Key("kinetic", "initial", str, "shifted", choices=("shifted", "equilibrium")),
    Key("verify", "n_test", int, 20, lambda n: n >= 1, "must be >= 1"),
    Key("verify", "n_densities", int, 20, lambda n: n >= 1, "must be >= 1"),
]
_BY_QUALIFIED = {f"{k.section}.{k.name}": k for k in SCHEMA}
_BY_NAME = {}
for _k in SCHEMA:
    _BY_NAME.setdefault(_k.name, []).append(_k)
ALIASES = {"dim": "d"}


def _resolve(raw_key):
    key = raw_key.strip().lower().replace("-", "_")
    if "." in key:
        section, name = key.split(".", 1)
        name = ALIASES.get(name, name)
        q = f"{section}.{name}"
        if q not in _BY_QUALIFIED:
            raise ConfigError(raw_key, "unknown key")
        return _BY_QUALIFIED[q]
    key = ALIASES.get(key, key)
    matches = _BY_NAME.get(key, [])
    if not matches:
        raise ConfigError(raw_key, "unknown key")
    if len(matches) > 1:
        options = ", ".join(f"{k.section}.{k.name}" for k in matches)
        raise ConfigError(raw_key, f"ambiguous outside a section; use one of {options}")
    return matches[0]


def _parse_value(key, text):
    qual = f"{key.section}.{key.name}"
    text = str(text).strip()
    if key.kind in (int, float) and text == "" and key.default is None and key.check is None:
        return None
    try:
        if key.kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            value = low in ("true", "1", "yes")
        elif key.kind is int:
            value = int(text)
        elif key.kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
        elif key.kind is str:
            value = text
        else:
            value = key.kind(text)
    except ValueError:
        kind = getattr(key.kind, "__name__", "value").lstrip("_")
        raise ConfigError(qual, f"cannot parse {text!r} as {kind}") from None
    if key.choices and value not in key.choices:
        raise ConfigError(qual, f"must be one of {', '.join(key.choices)} (got {value!r})")
    if key.check is not None and not key.check(value):
        raise ConfigError(qual, f"{key.name} {key.reason}")
    return value


@dataclass(frozen=True)
class RunConfig:
    """Validated settings keyed ``section.name``."""

    values: dict

    def __getitem__(self, qualified):
        return self.values[qualified]

    @property
    def command(self):
        return self.values["run.command"]

    def digest(self):
        # where the outputs land does not change them
        text = "\n".join(f"{k}={self.values[k]!r}" for k in sorted(self.values) if k != "run.output_dir")
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def model_params(self):
        from .quadrature import ModelParams, SelfPropulsion, TabulatedRadial, ZeroPotential

        kind = self["model.potential"]
        if kind == "zero":
            pot = ZeroPotential()
        elif kind == "self_propulsion":
            pot = SelfPropulsion(self["model.alpha"], self["model.beta"])
        else:
            nodes, values = self["model.nodes"], self["model.values"]
            if len(nodes) < 4 or len(nodes) != len(values):
                raise ConfigError("model.nodes", "tabulated potential needs >= 4 nodes and as many values")
            try:
                pot = TabulatedRadial(nodes, values)
            except FlockHydroError as exc:
                raise ConfigError("model.nodes", str(exc)) from None
        return ModelParams(sigma=self["model.sigma"], dim=self["model.d"], potential=pot,
                           eta=self["model.eta"])


def parse_config(path=None, flags=None, command=None):
    """Merge file, flags and positional command into a validated :class:`RunConfig`.

    ``flags`` maps key names (plain or ``section.key``) to strings.
    """
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror or exc}") from None
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                           comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string("[__top__]\n" + text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError("config", f"malformed file: {exc}") from None
        for section in parser.sections():
            for name, value in parser.items(section):
                qual_in = name if section == "__top__" else f"{section}.{name}"
                key = _resolve(qual_in)
                raw[f"{key.section}.{key.name}"] = value
    for name, value in (flags or {}).items():
        key = _resolve(name)
        raw[f"{key.section}.{key.name}"] = value
    if command is not None:
        raw["run.command"] = command

    values = {}
    for key in SCHEMA:
        qual = f"{key.section}.{key.name}"
        if qual in raw:
            values[qual] = _parse_value(key, raw[qual])
        elif key.default is None and qual in ("run.command", "model.sigma"):
            raise ConfigError(qual, "is required")
        else:
            values[qual] = key.default
    if values["hydro.rho_amp"] > values["hydro.rho0"]:
        raise ConfigError("hydro.rho_amp", "must not exceed hydro.rho0 (the initial density would be negative)")
    config = RunConfig(values)
    config.model_params()  # potential-level checks happen before any computation
    return config


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt17(x):
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt17(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _outdir(config):
    out = Path(config["run.output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("run.output_dir", f"cannot create {out}: {exc.strerror or exc}") from None
    return out


def _grid(config, params=None):
    from .quadrature import build_polar_grid

    params = params or config.model_params()
    return build_polar_grid(params, config["grid.n_theta"], config["grid.n_r"], config["grid.truncation_tol"])


def _chi(config, grid):
    from .gci_chi import assemble_weak_form, solve_chi

    return solve_chi(assemble_weak_form(grid.params, grid), tol=config["grid.chi_tol"])


def _coefficients(config, params=None):
    from .coefficients import compute_coefficients

    params = params or config.model_params()
    grid = _grid(config, params)
    return compute_coefficients(params, grid, _chi(config, grid))


def _potential_columns(params):
    from .quadrature import SelfPropulsion

    pot = params.potential
    if isinstance(pot, SelfPropulsion):
        return pot.alpha, pot.beta
    return float("nan"), float("nan")


def _hydro_coeffs(config, params):
    from .coefficients import Coefficients

    c1, c2 = config["hydro.c1"], config["hydro.c2"]
    if c1 is not None and c2 is not None:
        return Coefficients.given(c1, c2, params.sigma, params.dim)
    co = _coefficients(config, params)
    return Coefficients.given(c1 if c1 is not None else co.c1, c2 if c2 is not None else co.c2,
                              params.sigma, params.dim)


def _profiles(config, dim):
    L = config["hydro.length"]
    rho0, amp = config["hydro.rho0"], config["hydro.rho_amp"]
    a0, a1 = config["hydro.angle0"], config["hydro.angle_amp"]

    def rho(x):
        return rho0 + amp * np.sin(2 * np.pi * x[..., 0] / L)

    def omega(x):
        phi = a0 + a1 * np.sin(2 * np.pi * x[..., 0] / L)
        comps = [np.cos(phi), np.sin(phi)] + [np.zeros_like(phi)] * (dim - 2)
        return np.stack(comps, axis=-1)

    return rho, omega


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_coeffs(config, out, log):
    from .coefficients import compute_coefficients
    from .quadrature import ModelParams

    params = config.model_params()
    co = _coefficients(config, params)
    alpha, beta = _potential_columns(params)
    write_csv(out / "coefficients.csv", ["sigma", "d", "alpha", "beta", "c1", "c2"],
              [[float(params.sigma), params.dim, float(alpha), float(beta), co.c1, co.c2]])
    log(f"c1 = {co.c1:.12g}  c2 = {co.c2:.12g}  (c2~/c1~ = {co.c2_tilde / co.c1_tilde:.12g})")
    lambdas = config["coeffs.lambdas"]
    if lambdas:
        rows = []
        for lam in lambdas:
            p = ModelParams(sigma=params.sigma, dim=params.dim, potential=params.potential.scaled(lam),
                            eta=params.eta)
            grid = _grid(config, p)
            c = compute_coefficients(p, grid, _chi(config, grid))
            rows.append([float(lam), c.c1, c.c2])
        write_csv(out / "c1_lambda.csv", ["lambda", "c1", "c2"], rows)
    return 0


def cmd_chi(config, out, log):
    params = config.model_params()
    grid = _grid(config, params)
    chi = _chi(config, grid)
    meta = {"kind": "chi", "n_theta": chi.mesh.n_theta, "n_r": chi.mesh.n_r,
            "r_max": _fmt17(chi.mesh.r_max), "sigma": _fmt17(params.sigma), "d": params.dim,
            "potential": repr(params.potential), "eta": _fmt17(params.eta),
            "residual_norm": _fmt17(chi.residual_norm), "solver_residual": _fmt17(chi.solver_residual),
            "config_digest": config.digest()}
    write_checkpoint(chi.values, meta, out / "chi.chk")
    log(f"chi on {chi.mesh.n_theta + 1} x {chi.mesh.n_r + 1} nodes, strong residual {chi.residual_norm:.3e}")
    return 0


def _write_hydro(out, k, state, digest):
    mesh = state.mesh
    x = mesh.centers()
    d = state.omega.shape[-1]
    cols = [x[..., i] for i in range(mesh.ndim)] + [state.rho] + [state.omega[..., i] for i in range(d)]
    table = np.stack(cols, axis=-1).reshape(-1, len(cols))
    names = ["x", "y"][:mesh.ndim] + ["rho"] + [f"omega_{i + 1}" for i in range(d)]
    write_csv(out / f"hydro_{k:04d}.csv", names, table.tolist())
    field = np.concatenate([state.rho[..., None], state.omega], axis=-1)
    write_checkpoint(field, {"kind": "hydro", "time": _fmt17(state.time), "columns": ",".join(names[mesh.ndim:]),
                             "lengths": ",".join(_fmt17(L) for L in mesh.lengths),
                             "config_digest": digest}, out / f"hydro_{k:04d}.chk")


def cmd_hydro(config, out, log):
    from .soh import PeriodicMesh, SolverConfig, init_state, run

    params = config.model_params()
    coeffs = _hydro_coeffs(config, params)
    L = config["hydro.length"]
    ny = config["hydro.cells_y"]
    mesh = PeriodicMesh((config["hydro.cells"],) + ((ny,) if ny else ()), (L,) + ((L,) if ny else ()))
    rho, omega = _profiles(config, params.dim)
    state = init_state(mesh, rho, omega, coeffs)
    every = config["hydro.output_every"] or None
    snaps = run(state, SolverConfig(t_end=config["hydro.t_end"], cfl=config["hydro.cfl"],
                                    flux=config["hydro.flux"], output_every=every))
    digest = config.digest()
    for k, s in enumerate(snaps):
        _write_hydro(out, k, s, digest)
    last = snaps[-1]
    log(f"{len(snaps)} snapshots, mass drift {abs(last.mass - state.mass) / state.mass:.2e}, "
        f"unit defect {max(s.unit_defect() for s in snaps):.2e}")
    return 0


def _write_moments(out, k, field, meta):
    d = field.omega_hat.shape[1]
    centres = 0.5 * (field.bins[1:] + field.bins[:-1])
    om = field.orientation
    rows = [[centres[i], field.rho_hat[i]] + list(om[i]) + [int(field.samples_per_bin[i])]
            for i in range(len(centres))]
    write_csv(out / f"kinetic_{k:04d}.csv", ["x", "rho"] + [f"omega_{i + 1}" for i in range(d)] + ["samples"],
              rows)
    arr = np.column_stack([centres, field.rho_hat, om, field.samples_per_bin.astype(float)])
    write_checkpoint(arr, meta, out / f"kinetic_{k:04d}.chk")


def cmd_kinetic(config, out, log):
    """Homogeneous relaxation at the first epsilon of the list."""
    from . import kinetic as kin

    params = config.model_params()
    eps = config["kinetic.epsilon"][0]
    t_end = config["kinetic.t_end"]
    if t_end < 10 * eps:
        raise ConfigError("kinetic.t_end", f"must be at least 10 epsilon = {10 * eps:g} for relaxation")
    seed = config["run.seed"]
    report = kin.relaxation_test(params, eps, config["kinetic.particles"], t_end, seed,
                                 dt=config["kinetic.dt_ratio"] * eps, initial=config["kinetic.initial"],
                                 checkpoints=config["kinetic.checkpoints"])
    write_csv(out / "kinetic_relaxation.csv", ["time", "ks_speed", "ks_angle"],
              [[float(t), a, b] for t, a, b in report.history])
    log(f"KS speed {report.ks_speed:.4f}, KS angle {report.ks_angle:.4f}, |mean velocity| "
        f"{report.mean_orientation_norm:.4f}")
    return 0


def cmd_compare(config, out, log):
    from . import kinetic as kin
    from .soh import PeriodicMesh

    params = config.model_params()
    coeffs = _hydro_coeffs(config, params)
    mesh = PeriodicMesh((config["kinetic.bins"],), (config["hydro.length"],))
    rho, omega = _profiles(config, params.dim)
    rows = kin.hydro_comparison(params, coeffs, config["kinetic.epsilon"], config["kinetic.particles"], mesh,
                                config["kinetic.t_end"], config["run.seed"], rho, omega,
                                dt_ratio=config["kinetic.dt_ratio"], n_boot=config["kinetic.n_boot"],
                                cfl=config["hydro.cfl"])
    write_csv(out / "kinetic_errors.csv", ["epsilon", "err_rho", "err_rho_sd", "err_angle", "err_angle_sd"],
              [[r.epsilon, r.err_rho, r.err_rho_sd, r.err_angle, r.err_angle_sd] for r in rows])
    for k, r in enumerate(rows):
        _write_moments(out, k, r.moments, {"kind": "kinetic", "epsilon": _fmt17(r.epsilon),
                                           "time": _fmt17(config["kinetic.t_end"]),
                                           "columns": "x,rho," + ",".join(f"omega_{i + 1}" for i in range(params.dim))
                                           + ",samples", "config_digest": config.digest()})
        log(f"eps {r.epsilon:g}: L1(rho) {r.err_rho:.4e} +- {r.err_rho_sd:.1e}, "
            f"angle {r.err_angle:.4e} +- {r.err_angle_sd:.1e}")
    return 0


def verification_report(config):
    """Invariant suite of the equilibrium, profile and coefficient modules."""
    from .coefficients import compute_c1, compute_c2, tilde_coefficients
    from .equilibrium import first_moment, make_table, pressure_tensor
    from .gci_chi import CheckReport, verify_adjoint_kernel, verify_gci_equivalence
    from .quadrature import ZeroPotential

    params = config.model_params()
    d = params.dim
    grid = _grid(config, params)
    table = make_table(params, grid)
    report = CheckReport()
    rng = np.random.default_rng(config["run.seed"])
    omega = rng.standard_normal(d)
    omega /= np.linalg.norm(omega)

    if isinstance(params.potential, ZeroPotential):
        gauss = (2 * np.pi * params.sigma) ** (d / 2)
        report.add("Z = (2 pi sigma)^(d/2)", abs(table.Z - gauss) / gauss, 1e-9)
        report.add("c1 = 1", abs(table.c1 - 1.0), 1e-9)
    else:
        report.add("Z finite and positive", 0.0 if (np.isfinite(table.Z) and table.Z > 0) else 1.0, 0.5)
    c1 = compute_c1(params, grid)
    report.add("c1: two quadrature routes agree", abs(c1 - table.c1) / c1, 1e-10)
    report.add("int v M = c1 Omega", np.linalg.norm(first_moment(omega, table) - c1 * omega), 1e-9)
    P = pressure_tensor(omega, table)
    target = params.sigma * c1 * (np.eye(d) - np.outer(omega, omega))
    report.add("pressure tensor = sigma c1 (I - Omega Omega)",
               np.abs(P - target).max() / (params.sigma * c1), 1e-8)

    chi = _chi(config, grid)
    report.add("chi: solver relative residual", chi.solver_residual, config["grid.chi_tol"] * (1 + 1e-9))
    report.extend(verify_adjoint_kernel(chi, table, n_test=config["verify.n_test"], seed=config["run.seed"]))
    report.extend(verify_gci_equivalence(chi, table, n_densities=config["verify.n_densities"],
                                         seed=config["run.seed"] + 1))
    c2 = compute_c2(chi, params)
    t1, t2 = tilde_coefficients(chi)
    report.add("c2 = c2~ / c1~", abs(c2 - t2 / t1) / max(abs(c2), 1e-300), 1e-10)
    return report


def cmd_verify(config, out, log):
    report = verification_report(config)
    text = report.table()
    (out / "verify_report.txt").write_text(text + "\n", encoding="utf-8")
    log(text)
    return 0 if report.passed else 1


HANDLERS = {"coeffs": cmd_coeffs, "chi": cmd_chi, "hydro": cmd_hydro, "kinetic": cmd_kinetic,
            "verify": cmd_verify, "compare": cmd_compare}


def dispatch(config, log=None, err=None):
    """Run the configured command; 0 on success, 1 on numerical failure, 2 on configuration error."""
    log = log or (lambda msg: print(msg))
    err = err or (lambda msg: print(msg, file=sys.stderr))
    try:
        out = _outdir(config)
        return HANDLERS[config.command](config, out, log)
    except FlockHydroError as exc:
        err(f"error [{type(exc).__name__}]: {exc}")
        return exc.exit_code
    except (OSError, MemoryError) as exc:
        err(f"error [{type(exc).__name__}]: {exc}")
        return 1


def _flag_pairs(extra):
    flags = {}
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or len(token) <= 2:
            raise ConfigError(token, "expected --key value")
        body = token[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(body, "missing value")
            key, value = body, extra[i + 1]
            i += 2
        flags[key] = value
    return flags


def main(argv=None):
    parser = argparse.ArgumentParser(prog="flockhydro", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="INI configuration file")
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        config = parse_config(args.config, _flag_pairs(extra), command=args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return dispatch(config)


if __name__ == "__main__":
    sys.exit(main())
