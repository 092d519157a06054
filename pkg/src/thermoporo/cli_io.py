"""Configuration files, output tables and the ``thermoporo`` command line.

Configuration is INI-style ``key = value`` text. Every key has a default;
unknown sections or keys, duplicates and malformed values are rejected with
a message naming the offending ``section.key``. Example::

    [mesh]
    n = 8

    [time]
    T_f = 0.1
    dt = 0.01

    [params]
    alpha = 0.1
    K = 1, 0, 1

Exit codes: 0 success, 1 failed check or solver error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .mesh import build_structured
from .params import ConstraintWarning, MaterialParams, check_constraints

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

OUTPUT_DIR_ENV = "THERMOPORO_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


# section -> key -> (type tag, default)
SCHEMA = {
    "mesh": {"n": ("int", 8)},
    "time": {"T_f": ("float", 0.1), "dt": ("float", 0.01)},
    "params": {
        "a0": ("float", 1.0),
        "b0": ("float", 0.05),
        "c0": ("float", 1.0),
        "alpha": ("float", 0.1),
        "beta": ("float", 0.1),
        "mu": ("float", 1.0),
        "lam": ("float", 1.0),
        "K": ("floats", (1.0, 0.0, 1.0)),
        "Theta": ("floats", (1.0, 0.0, 1.0)),
    },
    "solver": {
        "tol": ("float", 1e-10),
        "max_iters": ("int", 25),
        "convection": ("str", "picard"),
        "initial_guess": ("str", "previous"),
        "linear_solver": ("str", "reuse"),
        "stress_element": ("str", "bdm"),
    },
    "case": {"name": ("str", "default"), "amplitude": ("float", 1.0)},
    "output": {"dir": ("str", "thermoporo-out")},
    "pencil": {"s": ("floats", (-4.0, -2.0, -1.0, 1.0, 2.0)), "eta": ("floats", (0.0, 0.0))},
    "mms": {"levels": ("ints", (4, 8, 16, 32)), "dt_factor": ("float", 0.25), "T_f": ("float", 0.5)},
    "biot": {"n": ("int", 4), "T_f": ("float", 0.2), "dt": ("float", 0.05), "tol": ("float", 1e-10)},
}

_PARSERS = {"int": int, "float": float, "str": str.strip, "floats": _floats, "ints": _ints}


@dataclass
class RunConfig:
    n: int = 8
    T_f: float = 0.1
    dt: float = 0.01
    params: MaterialParams = field(default_factory=MaterialParams)
    tol: float = 1e-10
    max_iters: int = 25
    convection: str = "picard"
    initial_guess: str = "previous"
    linear_solver: str = "reuse"
    stress_element: str = "bdm"
    case: str = "default"
    amplitude: float = 1.0
    output_dir: str = "thermoporo-out"
    pencil_s: tuple = (-4.0, -2.0, -1.0, 1.0, 2.0)
    pencil_eta: tuple = (0.0, 0.0)
    mms_levels: tuple = (4, 8, 16, 32)
    mms_dt_factor: float = 0.25
    mms_T_f: float = 0.5
    biot_n: int = 4
    biot_T_f: float = 0.2
    biot_dt: float = 0.05
    biot_tol: float = 1e-10
    seed: int = 0

    def to_dict(self) -> dict:
        out = asdict(self)
        P = self.params
        out["params"] = {
            k: (getattr(P, k).tolist() if k in ("K", "Theta") else getattr(P, k))
            for k in P.__dataclass_fields__
        }
        return out

    def header(self) -> str:
        """One-line JSON echo of the resolved configuration."""
        return "config " + json.dumps(self.to_dict(), sort_keys=True)


def _raw_values(text: str) -> dict:
    parser = configparser.ConfigParser(strict=True, interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str  # keys are case-sensitive (T_f, K)
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.section}.{exc.option}") from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            kind = SCHEMA[section][key][0]
            try:
                values[(section, key)] = _PARSERS[kind](raw)
            except ValueError as exc:
                raise ConfigError(f"malformed value for {section}.{key}: {raw!r}") from exc
    return values


def _value(values: dict, section: str, key: str):
    return values.get((section, key), SCHEMA[section][key][1])


def parse_config(text: str = "", overrides: Sequence[str] = ()) -> RunConfig:
    """Build a :class:`RunConfig` from config text plus ``section.key=value`` overrides.

    A parameter set violating the coefficient constraints only triggers a
    :class:`ConstraintWarning`.
    """
    values = _raw_values(text)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        values.update(_raw_values(f"[{section}]\n{key} = {raw}\n"))

    v = lambda s, k: _value(values, s, k)  # noqa: E731

    def positive(name, x):
        if not (isinstance(x, (int, float)) and math.isfinite(x) and x > 0):
            raise ConfigError(f"{name} must be positive, got {x!r}")
        return x

    n = v("mesh", "n")
    if n < 1:
        raise ConfigError(f"mesh.n must be at least 1, got {n}")
    for name in ("time.T_f", "time.dt", "solver.tol", "mms.dt_factor", "mms.T_f", "biot.T_f", "biot.dt", "biot.tol"):
        positive(name, v(*name.split(".")))
    if v("solver", "max_iters") < 1:
        raise ConfigError("solver.max_iters must be at least 1")
    if v("biot", "n") < 1:
        raise ConfigError("biot.n must be at least 1")
    choices = {
        ("solver", "convection"): ("picard", "off"),
        ("solver", "initial_guess"): ("previous", "zero", "extrapolated"),
        ("solver", "linear_solver"): ("reuse", "direct"),
        ("solver", "stress_element"): ("bdm", "rt"),
        ("case", "name"): ("default", "zero"),
    }
    for (s, k), allowed in choices.items():
        if v(s, k) not in allowed:
            raise ConfigError(f"{s}.{k} must be one of {allowed}, got {v(s, k)!r}")
    levels = v("mms", "levels")
    if not levels or min(levels) < 1:
        raise ConfigError("mms.levels must be a non-empty list of positive integers")
    eta = v("pencil", "eta")
    if len(eta) != 2:
        raise ConfigError("pencil.eta must have two components")
    if not v("pencil", "s"):
        raise ConfigError("pencil.s must list at least one value")

    pkw = {}
    for key in SCHEMA["params"]:
        val = v("params", key)
        if key in ("K", "Theta") and len(val) != 3:
            raise ConfigError(f"params.{key} must be a (k11, k12, k22) triple")
        pkw[key] = np.array(val) if key in ("K", "Theta") else val
    try:
        params = MaterialParams(**pkw)
    except ValueError as exc:
        raise ConfigError(f"params: {exc}") from exc
    check_constraints(params, warn=True)

    return RunConfig(
        n=n, T_f=v("time", "T_f"), dt=v("time", "dt"), params=params,
        tol=v("solver", "tol"), max_iters=v("solver", "max_iters"),
        convection=v("solver", "convection"), initial_guess=v("solver", "initial_guess"),
        linear_solver=v("solver", "linear_solver"), stress_element=v("solver", "stress_element"),
        case=v("case", "name"), amplitude=v("case", "amplitude"),
        output_dir=os.environ.get(OUTPUT_DIR_ENV) or v("output", "dir"),
        pencil_s=v("pencil", "s"), pencil_eta=eta,
        mms_levels=tuple(levels), mms_dt_factor=v("mms", "dt_factor"), mms_T_f=v("mms", "T_f"),
        biot_n=v("biot", "n"), biot_T_f=v("biot", "T_f"), biot_dt=v("biot", "dt"),
        biot_tol=v("biot", "tol"),
    )


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------


STEP_COLUMNS = (
    "step", "time", "dt", "iterations", "norm_T", "norm_p", "norm_w", "norm_r",
    "norm_sigma", "norm_u", "last_e_r", "max_ratio", "gamma_eta",
)


def write_step_csv(path: Path, header: str, rows: list) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        writer = csv.DictWriter(fh, fieldnames=STEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})


def write_field_dumps(directory: Path, header: str, mesh, state) -> tuple[Path, Path]:
    """Per-triangle and per-edge plain-text tables of a state."""
    F, E = mesh.num_triangles, mesh.num_edges
    tri = directory / "fields_triangles.txt"
    edge = directory / "fields_edges.txt"
    with tri.open("w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n# t = {state.t:.17g}\n")
        fh.write("triangle cx cy T p ux uy rho\n")
        for k in range(F):
            cx, cy = mesh.centroids[k]
            fh.write(
                f"{k} {cx:.17g} {cy:.17g} {state.T[k]:.17g} {state.p[k]:.17g} "
                f"{state.u[k]:.17g} {state.u[F + k]:.17g} {state.rho[k]:.17g}\n"
            )
    # one column per stress coefficient stored on the edge, row by row
    row = len(state.sigma) // 2
    sig_cols = state.sigma.reshape(2, row // E, E).reshape(-1, E).T
    names = (
        "sigma0_flux sigma0_linear sigma1_flux sigma1_linear" if row == 2 * E else "sigma0_flux sigma1_flux"
    )
    with edge.open("w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n# t = {state.t:.17g}\n")
        fh.write(f"edge v0 v1 r w {names}\n")
        for e in range(E):
            a, b = mesh.edges[e]
            fh.write(
                f"{e} {a} {b} {state.r[e]:.17g} {state.w[e]:.17g} "
                + " ".join(f"{v:.17g}" for v in sig_cols[e])
                + "\n"
            )
    return tri, edge


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _case(cfg: RunConfig, params: Optional[MaterialParams] = None):
    from .verification import default_case, zero_case

    P = params or cfg.params
    return zero_case(P) if cfg.case == "zero" else default_case(P, cfg.amplitude)


def _outdir(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_check_params(cfg: RunConfig, out) -> int:
    from .diagnostics import norm_equivalence_check
    from .params import derived_coeffs

    report = check_constraints(cfg.params)
    d = derived_coeffs(cfg.params)
    print(f"c_r = {d.c_r:.12g}, b_r = {d.b_r:.12g}, a_r = {d.a_r:.12g}, xi = {d.xi:.12g}", file=out)
    print(report.summary(), file=out)
    ne = norm_equivalence_check(cfg.params, samples=1000, seed=cfg.seed)
    print(
        f"compliance norm equivalence: {'pass' if ne.passed else 'FAIL'} "
        f"(ratios in [{ne.min_ratio:.6g}, {ne.max_ratio:.6g}], bounds [{ne.lower:.6g}, {ne.upper:.6g}])",
        file=out,
    )
    return EXIT_OK if report.passed and ne.passed else EXIT_FAILURE


def cmd_pencil_check(cfg: RunConfig, out) -> int:
    from .diagnostics import pencil_check

    mesh = build_structured(cfg.n)
    reports = [
        pencil_check(mesh, cfg.params, np.array(cfg.pencil_eta), s, seed=cfg.seed, stress_element=cfg.stress_element)
        for s in cfg.pencil_s
    ]
    for rep in reports:
        print(rep.summary(), file=out)
    return EXIT_OK if all(r.success and r.sigma_min > 1e-10 for r in reports) else EXIT_FAILURE


def cmd_run(cfg: RunConfig, out) -> int:
    from .diagnostics import contraction_report
    from .solver import Stepper, run_simulation

    case = _case(cfg)
    mesh = build_structured(cfg.n)
    stepper = Stepper(
        mesh, cfg.params, case.sources, convection=cfg.convection,
        initial_guess=cfg.initial_guess, warn=False, linear_solver=cfg.linear_solver,
        stress_element=cfg.stress_element,
    )
    init = stepper.consistent_init(case.at(case.p, 0.0), case.at(case.T, 0.0), case.at(case.u, 0.0))
    rows = []

    def record(state, log):
        ratios = log.ratios()
        prev = rows[-1]["time"] if rows else init.t
        rows.append({
            "step": len(rows) + 1, "time": state.t, "dt": state.t - prev,
            "iterations": log.iterations,
            "norm_T": stepper.l2_scalar(state.T), "norm_p": stepper.l2_scalar(state.p),
            "norm_w": stepper.l2_flux(state.w), "norm_r": stepper.l2_flux(state.r),
            "norm_sigma": math.sqrt(max(float(state.sigma @ (stepper.asm.stress_mass @ state.sigma)), 0.0)),
            "norm_u": math.sqrt(float(np.dot(np.tile(mesh.areas, 2), state.u**2))),
            "last_e_r": log.e_r[-1], "max_ratio": max(ratios) if ratios else 0.0,
            "gamma_eta": max(log.gamma_eta),
        })

    result = run_simulation(stepper, init, cfg.T_f, cfg.dt, cfg.tol, cfg.max_iters, callback=record)
    outdir = _outdir(cfg)
    header = cfg.header()
    write_step_csv(outdir / "steps.csv", header, rows)
    tri, edge = write_field_dumps(outdir, header, mesh, result.final)
    rep = contraction_report(result.logs, cfg.params, cfg.T_f)
    print(f"{len(result.logs)} steps to t = {result.final.t:.6g}; wrote {outdir / 'steps.csv'}, {tri}, {edge}", file=out)
    print(rep.summary(), file=out)
    return EXIT_OK


def cmd_mms(cfg: RunConfig, out) -> int:
    from .verification import StudyAborted, convergence_study

    path = _outdir(cfg) / "mms_errors.csv"
    try:
        table = convergence_study(
            _case(cfg), levels=cfg.mms_levels, T_f=cfg.mms_T_f, dt_factor=cfg.mms_dt_factor,
            tol=cfg.tol, max_iters=cfg.max_iters, convection=cfg.convection,
            stress_element=cfg.stress_element,
        )
    except StudyAborted as exc:
        exc.table.write_csv(path, cfg.header())
        print(exc.table.format(), file=out)
        print(f"error: {exc}; partial table written to {path}", file=sys.stderr)
        return EXIT_FAILURE
    table.write_csv(path, cfg.header())
    print(table.format(), file=out)
    print(f"wrote {path}", file=out)
    ok = all(r >= 0.8 for key in ("eT", "ep", "etrace") for r in table.rates(key)[-1:])
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_biot_check(cfg: RunConfig, out) -> int:
    from .verification import biot_recovery_test

    params = cfg.params.replace(beta=0.0, b0=0.0)
    gap = biot_recovery_test(
        _case(cfg, params), n=cfg.biot_n, T_f=cfg.biot_T_f, dt=cfg.biot_dt,
        convection=cfg.convection, tol=cfg.biot_tol,
    )
    ok = gap <= 1e-10
    print(
        f"beta = b0 = 0: max |coupled - Biot-only| over (p, w, sigma, u) = {gap:.3e}  "
        f"{'pass' if ok else 'FAIL'}",
        file=out,
    )
    return EXIT_OK if ok else EXIT_FAILURE


COMMANDS = {
    "check-params": cmd_check_params,
    "pencil-check": cmd_pencil_check,
    "run": cmd_run,
    "mms": cmd_mms,
    "biot-check": cmd_biot_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thermoporo", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("-c", "--config", type=Path, help="configuration file")
    parser.add_argument(
        "-s", "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one configuration value (repeatable)",
    )
    parser.add_argument("-o", "--output-dir", help=f"output directory (overrides ${OUTPUT_DIR_ENV})")
    parser.add_argument("--seed", type=int, default=0, help="seed for randomised checks")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConstraintWarning)
        try:
            cfg = parse_config(text, args.set)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    for w in caught:
        print(f"warning: {w.message}", file=out)
    cfg.seed = args.seed
    if args.output_dir:
        cfg.output_dir = args.output_dir
    from .solver import SolverError

    try:
        return COMMANDS[args.command](cfg, out)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
