"""Manufactured solutions, convergence studies and the Biot-limit check."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Sources, SystemAssembler
from .diagnostics import trace_identity_residual
from .mesh import TriMesh, build_structured
from .params import MaterialParams, passing_preset
from .solver import SimulationResult, State, Stepper, run_simulation
from .spaces import (
    DUNAVANT4,
    project_P0,
    project_P0_vector,
    quadrature_points,
    rt_divergence,
    rt_evaluate,
    stress_divergence,
    stress_element_of,
    stress_evaluate,
)

PI = math.pi


def _s(x, y):
    return np.sin(PI * x) * np.sin(PI * y)


def _grad_s(x, y):
    return (
        PI * np.cos(PI * x) * np.sin(PI * y),
        PI * np.sin(PI * x) * np.cos(PI * y),
    )


def _hess_s(x, y):
    sxx = -PI**2 * _s(x, y)
    sxy = PI**2 * np.cos(PI * x) * np.cos(PI * y)
    return sxx, sxy, sxx


@dataclass
class ManufacturedCase:
    """Closed-form ``T``, ``p``, ``u`` with their induced fluxes, stress and sources.

    Every callable takes ``(x, y, t)``; vector and tensor callables return
    tuples of components (tensors in row-major order).
    """

    params: MaterialParams
    T: Callable
    p: Callable
    u: Callable
    div_u: Callable
    w: Callable
    r: Callable
    sigma: Callable
    f: Callable
    g: Callable
    h: Callable
    f_t: Callable
    grad_p: Callable
    grad_T: Callable
    name: str = "manufactured"
    is_zero: bool = False

    @property
    def sources(self) -> Sources:
        return Sources(f=self.f, g=self.g, h=self.h)

    def at(self, fn: Callable, t: float) -> Callable:
        return lambda x, y: fn(x, y, t)


def default_case(params: Optional[MaterialParams] = None, amplitude: float = 1.0) -> ManufacturedCase:
    """``T = p = t S``, ``u = t (S, S)`` with ``S = sin(pi x) sin(pi y)``."""
    P = params or passing_preset()
    K, Th = P.K, P.Theta
    a = float(amplitude)

    def T(x, y, t):
        return a * t * _s(x, y)

    p = T

    def u(x, y, t):
        v = a * t * _s(x, y)
        return v, v

    def grad(x, y, t):
        sx, sy = _grad_s(x, y)
        return a * t * sx, a * t * sy

    def div_u(x, y, t):
        sx, sy = _grad_s(x, y)
        return a * t * (sx + sy)

    def flux(M):
        def fn(x, y, t):
            gx, gy = grad(x, y, t)
            return -(M[0, 0] * gx + M[0, 1] * gy), -(M[1, 0] * gx + M[1, 1] * gy)

        return fn

    def sigma(x, y, t):
        sx, sy = _grad_s(x, y)
        du = a * t * (sx + sy)
        iso = P.lam * du - (P.alpha + P.beta) * a * t * _s(x, y)
        s11 = 2 * P.mu * a * t * sx + iso
        s22 = 2 * P.mu * a * t * sy + iso
        s12 = P.mu * a * t * (sx + sy)
        return s11, s12, s12, s22

    def div_M_grad(M, x, y):
        sxx, sxy, syy = _hess_s(x, y)
        return M[0, 0] * sxx + (M[0, 1] + M[1, 0]) * sxy + M[1, 1] * syy

    def g(x, y, t):
        sx, sy = _grad_s(x, y)
        return a * (
            (P.c0 - P.b0) * _s(x, y) + P.alpha * (sx + sy) - t * div_M_grad(K, x, y)
        )

    def h(x, y, t):
        sx, sy = _grad_s(x, y)
        convect = sx * (K[0, 0] * sx + K[0, 1] * sy) + sy * (K[1, 0] * sx + K[1, 1] * sy)
        return (
            a * ((P.a0 - P.b0) * _s(x, y) + P.beta * (sx + sy) - t * div_M_grad(Th, x, y))
            - a * a * t * t * convect
        )

    def f_t(x, y, t):
        sxx, sxy, syy = _hess_s(x, y)
        sx, sy = _grad_s(x, y)
        s = _s(x, y)
        ml = P.lam + P.mu
        fx = -ml * (sxx + sxy) + 2 * P.mu * PI**2 * s + (P.alpha + P.beta) * sx
        fy = -ml * (sxy + syy) + 2 * P.mu * PI**2 * s + (P.alpha + P.beta) * sy
        return a * fx, a * fy

    def f(x, y, t):
        fx, fy = f_t(x, y, t)
        return t * fx, t * fy

    return ManufacturedCase(
        params=P, T=T, p=p, u=u, div_u=div_u, w=flux(K), r=flux(Th), sigma=sigma,
        f=f, g=g, h=h, f_t=f_t, grad_p=grad, grad_T=grad, name="default",
    )


def zero_case(params: Optional[MaterialParams] = None) -> ManufacturedCase:
    P = params or passing_preset()

    def z(x, y, t):
        return np.zeros(np.broadcast(x, y).shape)

    def z2(x, y, t):
        return z(x, y, t), z(x, y, t)

    def z4(x, y, t):
        return (z(x, y, t),) * 4

    return ManufacturedCase(
        params=P, T=z, p=z, u=z2, div_u=z, w=z2, r=z2, sigma=z4, f=z2, g=z, h=z,
        f_t=z2, grad_p=z2, grad_T=z2, name="zero", is_zero=True,
    )


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------


def _l2_scalar(mesh, coeff, exact, rule=DUNAVANT4) -> float:
    pts, wts = quadrature_points(mesh, rule)
    ex = np.broadcast_to(exact(pts[..., 0], pts[..., 1]), wts.shape)
    return math.sqrt(float(((coeff[:, None] - ex) ** 2 * wts).sum()))


def _l2_vector_p0(mesh, coeff, exact, rule=DUNAVANT4) -> float:
    F = mesh.num_triangles
    ex, ey = exact
    return math.hypot(_l2_scalar(mesh, coeff[:F], ex, rule), _l2_scalar(mesh, coeff[F:], ey, rule))


def _l2_flux(mesh, coeff, exact, rule=DUNAVANT4) -> float:
    pts, wts = quadrature_points(mesh, rule)
    vals = rt_evaluate(mesh, coeff, rule.bary)
    ex, ey = exact(pts[..., 0], pts[..., 1])
    diff = (vals[..., 0] - ex) ** 2 + (vals[..., 1] - ey) ** 2
    return math.sqrt(float((diff * wts).sum()))


def field_errors(mesh: TriMesh, state: State, case: ManufacturedCase, t: float) -> dict:
    """L2 errors at time ``t`` against the analytic fields (degree-4 quadrature)."""
    at = case.at
    E = mesh.num_edges
    pts, wts = quadrature_points(mesh, DUNAVANT4)
    sig = stress_evaluate(mesh, state.sigma, DUNAVANT4.bary)
    ex = case.sigma(pts[..., 0], pts[..., 1], t)
    es = sum(
        ((sig[..., i, j] - np.broadcast_to(ex[2 * i + j], wts.shape)) ** 2 * wts).sum()
        for i in range(2) for j in range(2)
    )
    div_w_exact = _divergence_exact(case.w, t)
    div_r_exact = _divergence_exact(case.r, t)
    div_sigma_exact = (lambda x, y: -np.asarray(case.f(x, y, t)[0]),
                       lambda x, y: -np.asarray(case.f(x, y, t)[1]))
    div_sig = stress_divergence(mesh, state.sigma)
    return {
        "T": _l2_scalar(mesh, state.T, at(case.T, t)),
        "p": _l2_scalar(mesh, state.p, at(case.p, t)),
        "u": _l2_vector_p0(mesh, state.u, tuple(
            (lambda x, y, k=k: case.u(x, y, t)[k]) for k in range(2))),
        "w": _l2_flux(mesh, state.w, at(case.w, t)),
        "r": _l2_flux(mesh, state.r, at(case.r, t)),
        "sigma": math.sqrt(float(es)),
        "div_w": _l2_scalar(mesh, rt_divergence(mesh, state.w), div_w_exact),
        "div_r": _l2_scalar(mesh, rt_divergence(mesh, state.r), div_r_exact),
        "div_sigma": _l2_vector_p0(mesh, div_sig, div_sigma_exact),
    }


def _divergence_exact(flux: Callable, t: float, h: float = 1e-6) -> Callable:
    # Central differences; the ~1e-10 rounding error is far below the discretisation errors reported.
    def fn(x, y):
        return (
            (flux(x + h, y, t)[0] - flux(x - h, y, t)[0])
            + (flux(x, y + h, t)[1] - flux(x, y - h, t)[1])
        ) / (2 * h)

    return fn


def interpolated_state(
    mesh: TriMesh, case: ManufacturedCase, t: float, stress_element: str = "bdm"
) -> State:
    """Exact fields injected into the discrete spaces (projections / edge interpolants)."""
    from .spaces import interpolate_Hdiv, interpolate_stress

    F = mesh.num_triangles
    return State(
        T=project_P0(mesh, case.at(case.T, t)),
        r=interpolate_Hdiv(mesh, case.at(case.r, t)),
        p=project_P0(mesh, case.at(case.p, t)),
        w=interpolate_Hdiv(mesh, case.at(case.w, t)),
        sigma=interpolate_stress(mesh, case.at(case.sigma, t), element=stress_element),
        u=project_P0_vector(mesh, case.at(case.u, t)),
        rho=np.zeros(F),
        t=t,
    )


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------

ERROR_COLUMNS = ("eT", "ep", "eu", "ew", "er", "esigma", "etrace")
_FIELD_FOR = {"eT": "T", "ep": "p", "eu": "u", "ew": "w", "er": "r", "esigma": "sigma"}


@dataclass
class ErrorTable:
    levels: list
    h: list
    dt: list
    errors: list  # one dict per level, keys ERROR_COLUMNS
    spacetime: list = field(default_factory=list)
    results: list = field(default_factory=list, repr=False)

    def rates(self, key: str) -> list:
        out = []
        for a, b in zip(self.errors[:-1], self.errors[1:]):
            ea, eb = a[key], b[key]
            out.append(math.log2(ea / eb) if ea > 0 and eb > 0 else math.nan)
        return out

    def rows(self) -> list:
        rows = []
        for i, n in enumerate(self.levels):
            row = {"level": n, "h": self.h[i], "dt": self.dt[i]}
            row.update(self.errors[i])
            for key in ERROR_COLUMNS:
                row[f"rate_{key}"] = self.rates(key)[i - 1] if i > 0 else math.nan
            rows.append(row)
        return rows

    def write_csv(self, path: str | Path, header: str = "") -> None:
        rows = self.rows()
        fields = ["level", "h", "dt", *ERROR_COLUMNS] + [f"rate_{k}" for k in ERROR_COLUMNS]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header:
                fh.write(f"# {header}\n")
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})

    def format(self) -> str:
        lines = ["level        h       dt " + " ".join(f"{k:>10s}" for k in ERROR_COLUMNS)]
        for row in self.rows():
            lines.append(
                f"{row['level']:5d} {row['h']:8.4g} {row['dt']:8.4g} "
                + " ".join(f"{row[k]:10.3e}" for k in ERROR_COLUMNS)
            )
            if not math.isnan(row["rate_eT"]):
                lines.append(
                    " " * 24 + " ".join(f"{row['rate_' + k]:10.3f}" for k in ERROR_COLUMNS)
                )
        return "\n".join(lines)


class StudyAborted(RuntimeError):
    def __init__(self, message: str, table: ErrorTable):
        super().__init__(message)
        self.table = table


def simulate_case(
    case: ManufacturedCase,
    n: int,
    T_f: float,
    dt: float,
    tol: float = 1e-10,
    max_iters: int = 25,
    convection: str = "picard",
    eta=None,
    num_steps: Optional[int] = None,
    stress_element: str = "bdm",
) -> tuple[TriMesh, Stepper, SimulationResult]:
    mesh = build_structured(n)
    stepper = Stepper(
        mesh, case.params, case.sources, convection=convection, eta=eta, warn=False,
        stress_element=stress_element,
    )
    init = stepper.consistent_init(case.at(case.p, 0.0), case.at(case.T, 0.0), case.at(case.u, 0.0))
    result = run_simulation(stepper, init, T_f, dt, tol=tol, max_iters=max_iters, num_steps=num_steps)
    return mesh, stepper, result


def convergence_study(
    case: ManufacturedCase,
    levels=(4, 8, 16, 32),
    T_f: float = 0.5,
    dt_factor: float = 0.25,
    tol: float = 1e-10,
    max_iters: int = 25,
    convection: str = "picard",
    keep_results: bool = False,
    stress_element: str = "bdm",
) -> ErrorTable:
    """Run the solver per level with ``dt = dt_factor * h`` and tabulate final-time errors."""
    levels = list(levels)
    for a, b in zip(levels[:-1], levels[1:]):
        if b != 2 * a:
            raise ValueError("levels must be nested by doubling")
    table = ErrorTable(levels=[], h=[], dt=[], errors=[])
    for n in levels:
        h = 1.0 / n
        dt = dt_factor * h
        try:
            mesh, stepper, result = simulate_case(
                case, n, T_f, dt, tol, max_iters, convection, stress_element=stress_element
            )
        except RuntimeError as exc:
            raise StudyAborted(f"level n={n} failed: {exc}", table) from exc
        final = result.final
        errs = field_errors(mesh, final, case, final.t)
        row = {key: errs[name] for key, name in _FIELD_FOR.items()}
        row["etrace"] = trace_identity_residual(mesh, final, case.params, case.at(case.div_u, final.t))
        table.levels.append(n)
        table.h.append(h)
        table.dt.append(dt)
        table.errors.append(row)
        table.spacetime.append(spacetime_errors(mesh, result, case))
        if keep_results:
            table.results.append((mesh, stepper, result))
    return table


def spacetime_errors(mesh: TriMesh, result: SimulationResult, case: ManufacturedCase) -> dict:
    """Trapezoid-in-time L2(L2) errors for T and p."""
    eT, ep = [], []
    for s in result.states:
        eT.append(_l2_scalar(mesh, s.T, case.at(case.T, s.t)) ** 2)
        ep.append(_l2_scalar(mesh, s.p, case.at(case.p, s.t)) ** 2)
    t = result.times
    return {"T": math.sqrt(float(np.trapezoid(eT, t))), "p": math.sqrt(float(np.trapezoid(ep, t)))}


# ---------------------------------------------------------------------------
# Biot limit
# ---------------------------------------------------------------------------


def biot_only_solve(
    mesh: TriMesh,
    params: MaterialParams,
    sources: Sources,
    p_init: np.ndarray,
    sigma_init: np.ndarray,
    steps: list,
) -> list:
    """Four-field Biot march (pressure, stress, Darcy flux, displacement, rotation).

    Assembled independently of the coupled system, with the thermal rows absent.
    """
    element = stress_element_of(mesh, sigma_init)
    asm = SystemAssembler(mesh, params, warn=False, stress_element=element)
    B = asm.blocks
    F, E = mesh.num_triangles, mesh.num_edges
    S = len(sigma_init)
    Z = lambda r, c: sp.csr_matrix((r, c))  # noqa: E731
    # ordering: p (F), sigma (S), w (E), u (2F), rho (F)
    Phi = sp.bmat(
        [
            [B["A_pp"], B["A_psigma"], Z(F, E), Z(F, 2 * F), Z(F, F)],
            [Z(S, F), Z(S, S), Z(S, E), Z(S, 2 * F), Z(S, F)],
            [Z(E, F), Z(E, S), Z(E, E), Z(E, 2 * F), Z(E, F)],
            [Z(2 * F, F), Z(2 * F, S), Z(2 * F, E), Z(2 * F, 2 * F), Z(2 * F, F)],
            [Z(F, F), Z(F, S), Z(F, E), Z(F, 2 * F), Z(F, F)],
        ],
        format="csr",
    )
    Psi = sp.bmat(
        [
            [None, None, B["A_wp"].T, None, None],
            [B["A_psigma"].T, B["A_sigmasigma"], None, B["A_usigma"].T, B["A_rhosigma"].T],
            [-B["A_wp"], None, B["A_ww"], None, None],
            [None, -B["A_usigma"], None, Z(2 * F, 2 * F), None],
            [None, -B["A_rhosigma"], None, None, Z(F, F)],
        ],
        format="csr",
    )
    x = np.concatenate([p_init, sigma_init, np.zeros(E + 2 * F + F)])
    out = []
    t = 0.0
    for dt in steps:
        t += dt
        loads = asm.load(sources, t)
        L = np.zeros(len(x))
        L[:F] = loads[asm.offsets["p"] : asm.offsets["p"] + F]
        L[F + S + E : F + S + E + 2 * F] = loads[asm.offsets["u"] : asm.offsets["u"] + 2 * F]
        A = (Phi / dt + Psi).tocsc()
        x = spla.splu(A).solve(L + Phi @ x / dt)
        out.append(
            {
                "p": x[:F],
                "sigma": x[F : F + S],
                "w": x[F + S : F + S + E],
                "u": x[F + S + E : F + S + E + 2 * F],
            }
        )
    return out


def biot_recovery_test(
    case: ManufacturedCase,
    n: int = 4,
    T_f: float = 0.2,
    dt: float = 0.05,
    convection: str = "picard",
    tol: float = 1e-12,
) -> float:
    """Max discrepancy in ``(p, w, sigma, u)`` between the coupled and Biot-only solves.

    ``case.params`` must have ``beta = b0 = 0``.
    """
    P = case.params
    if P.beta != 0 or P.b0 != 0:
        raise ValueError("Biot recovery requires beta = b0 = 0")
    mesh, stepper, result = simulate_case(case, n, T_f, dt, tol=tol, convection=convection)
    init = result.states[0]
    ref = biot_only_solve(mesh, P, case.sources, init.p, init.sigma, result.dts)
    worst = 0.0
    for state, other in zip(result.states[1:], ref):
        for name in ("p", "w", "sigma", "u"):
            worst = max(worst, float(np.abs(getattr(state, name) - other[name]).max(initial=0.0)))
    return worst
