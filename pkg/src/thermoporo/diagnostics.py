"""Numerical checks mirroring the model's analytical properties.

* solvability of the time-step pencil ``s Phi + Psi``;
* a-priori energy bounds, reported as empirical LHS/RHS ratios;
* the fixed-point contraction constant and observed contraction ratios;
* equivalence of the compliance norm with the L2 norm;
* the trace relation between stress, displacement divergence and pressures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import Sources, SystemAssembler
from .mesh import TriMesh
from .params import MaterialParams, compliance_apply, derived_coeffs
from .solver import PicardLog, SimulationResult, Stepper
from .spaces import DUNAVANT4, quadrature_points, rt_divergence, stress_divergence, stress_evaluate

# ---------------------------------------------------------------------------
# pencil
# ---------------------------------------------------------------------------


@dataclass
class PencilReport:
    s: float
    success: bool
    sigma_min: float  # estimate of the smallest singular value (0 on failure)
    dim: int
    gamma: float  # max |eta|
    eps1: float
    eps2: float
    third_constraint: float  # value of the stress-coefficient inequality at (s, eps1, eps2)
    eps2_margin: float  # s (a0 + a_r - b_r) - gamma / (2 k_m)
    message: str = ""

    def summary(self) -> str:
        state = "nonsingular" if self.success else "SINGULAR"
        return (
            f"s = {self.s:g}: {state}, dim = {self.dim}, "
            f"smallest singular value ~ {self.sigma_min:.6e}, gamma = {self.gamma:.6g}, "
            f"eps1 = {self.eps1:.6g}, eps2 = {self.eps2:.6g}, "
            f"third constraint = {self.third_constraint:.6g}, eps2 margin = {self.eps2_margin:.6g}"
            + (f" ({self.message})" if self.message else "")
        )


def pencil_margins(params: MaterialParams, s: float, gamma: float) -> dict:
    """Coercivity parameters of the positivity argument for ``s Phi + Psi``.

    ``eps1``, ``eps2`` saturate the pressure and temperature inequalities;
    ``third_constraint`` is what remains of the stress inequality. The trace
    weights ``c_r/(2 alpha)`` and ``a_r/(2 beta)`` are used in their
    division-free forms, so the values stay defined when a coupling vanishes.
    """
    d = derived_coeffs(params)
    ml = params.mu + params.lam
    wp, wT = params.p_trace_weight, params.T_trace_weight
    A = s * (params.c0 + d.c_r - d.b_r)
    B = s * (params.a0 + d.a_r - d.b_r) - gamma / (2.0 * params.k_m)
    one_s = 1.0 + s
    eps1 = 2.0 * A / (one_s * wp) if one_s * wp != 0 else math.inf
    eps2 = 2.0 * B / (one_s * wT) if one_s * wT != 0 else math.inf
    third = 1.0 / (2.0 * ml)
    for w, eps in ((wp, eps1), (wT, eps2)):
        if w != 0 and math.isfinite(eps) and eps != 0:
            third -= one_s * w / (2.0 * eps)
    return {"eps1": eps1, "eps2": eps2, "third_constraint": third, "eps2_margin": B}


def smallest_singular_value(lu, n: int, iters: int = 300, rtol: float = 1e-10, seed: int = 0) -> float:
    """Inverse power iteration on ``(A^T A)^{-1}`` using an existing LU of ``A``.

    The Rayleigh quotient underestimates the top eigenvalue of the inverse,
    so the returned value is an upper estimate of the smallest singular value
    that tightens as the iteration converges.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = lu.solve(lu.solve(x), trans="T")
        new = float(np.dot(x, y))
        norm = np.linalg.norm(y)
        if not np.isfinite(norm) or norm == 0:
            return 0.0
        x = y / norm
        if abs(new - lam) <= rtol * abs(new):
            lam = new
            break
        lam = new
    return 1.0 / math.sqrt(lam) if lam > 0 else 0.0


def pencil_check(
    mesh: TriMesh,
    params: MaterialParams,
    eta_field: Optional[np.ndarray] = None,
    s: float = -2.0,
    iters: int = 300,
    seed: int = 0,
    stress_element: str = "bdm",
) -> PencilReport:
    """Factorise ``s Phi + Psi`` with frozen convection ``eta`` and estimate its conditioning.

    Never raises: a failed factorisation is reported with ``success=False``.
    """
    asm = SystemAssembler(mesh, params, warn=False, stress_element=stress_element)
    eta = np.zeros(2) if eta_field is None else eta_field
    system = asm.system(eta=eta)
    A = system.pencil(s)
    margins = pencil_margins(params, s, system.gamma)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        return PencilReport(s, False, 0.0, A.shape[0], system.gamma, message=str(exc), **margins)
    smin = smallest_singular_value(lu, A.shape[0], iters=iters, seed=seed)
    return PencilReport(s, smin > 0, smin, A.shape[0], system.gamma, **margins)


def pencil_sweep(mesh, params, s_values: Sequence[float] = (-4, -2, -1, 1, 2), eta_field=None, seed=0):
    return [pencil_check(mesh, params, eta_field, s, seed=seed) for s in s_values]


# ---------------------------------------------------------------------------
# energy estimates
# ---------------------------------------------------------------------------


def _grad_fd(fn: Callable, h: float = 1e-6) -> Callable:
    def g(x, y):
        return (
            (np.asarray(fn(x + h, y)) - np.asarray(fn(x - h, y))) / (2 * h),
            (np.asarray(fn(x, y + h)) - np.asarray(fn(x, y - h))) / (2 * h),
        )

    return g


def _sq_l2(mesh: TriMesh, fn: Callable, vector: bool = False) -> float:
    pts, wts = quadrature_points(mesh, DUNAVANT4)
    vals = fn(pts[..., 0], pts[..., 1])
    comps = vals if vector else (vals,)
    return float(sum((np.broadcast_to(np.asarray(c, float), wts.shape) ** 2 * wts).sum() for c in comps))


@dataclass
class DataFunctional:
    """Squared data norms: ``f`` in ``H1(L2)``, ``g`` and ``h`` in ``L2(L2)``, initial data in ``H1``."""

    f: float = 0.0
    f_t: float = 0.0
    g: float = 0.0
    h: float = 0.0
    p0: float = 0.0
    T0: float = 0.0

    @property
    def total(self) -> float:
        return self.f + self.f_t + self.g + self.h + self.p0 + self.T0


def data_functional(
    mesh: TriMesh,
    sources: Optional[Sources],
    times: Sequence[float],
    p0: Optional[Callable] = None,
    T0: Optional[Callable] = None,
    f_t: Optional[Callable] = None,
    grad_p0: Optional[Callable] = None,
    grad_T0: Optional[Callable] = None,
) -> DataFunctional:
    """Evaluate the data functional by degree-4 quadrature in space and trapezoid in time.

    Missing derivatives (``f_t``, initial gradients) are approximated by
    central differences.
    """
    sources = sources or Sources()
    times = np.asarray(times, dtype=float)
    out = DataFunctional()

    def integrate(fn, vector=False):
        vals = [_sq_l2(mesh, (lambda x, y, t=t: fn(x, y, t)), vector) for t in times]
        return float(np.trapezoid(vals, times)) if len(times) > 1 else 0.0

    if sources.f is not None:
        out.f = integrate(sources.f, vector=True)
        if f_t is None:
            dt = 1e-6

            def f_t(x, y, t, f=sources.f):
                a, b = f(x, y, t + dt), f(x, y, t - dt)
                return tuple((np.asarray(u) - np.asarray(v)) / (2 * dt) for u, v in zip(a, b))

        out.f_t = integrate(f_t, vector=True)
    if sources.g is not None:
        out.g = integrate(sources.g)
    if sources.h is not None:
        out.h = integrate(sources.h)
    for name, fn, grad in (("p0", p0, grad_p0), ("T0", T0, grad_T0)):
        if fn is None:
            continue
        grad = grad or _grad_fd(fn)
        setattr(out, name, _sq_l2(mesh, fn) + _sq_l2(mesh, grad, vector=True))
    return out


ESTIMATES = ("i", "ii", "iii", "iv")


@dataclass
class EnergyReport:
    quantities: dict  # named squared norms
    lhs: dict  # estimate -> left-hand side
    data: DataFunctional
    ratios: dict  # estimate -> lhs / data (0/0 reported as 0)

    @property
    def rhs(self) -> float:
        return self.data.total

    def summary(self) -> str:
        lines = [f"data functional = {self.rhs:.6e}"]
        for k in ESTIMATES:
            lines.append(f"({k}) lhs = {self.lhs[k]:.6e}  ratio = {self.ratios[k]:.6e}")
        return "\n".join(lines)


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 0.0 if a == 0 else math.inf
    return a / b


def energy_report(result: SimulationResult, stepper: Stepper, data: DataFunctional) -> EnergyReport:
    """Discrete analogues of the grouped norms of the a-priori estimates.

    Sup-in-time norms are maxima over the stored states, time integrals use
    the trapezoid rule and time derivatives are backward differences.
    """
    states = result.states
    if not states:
        raise ValueError("empty time series")
    mesh = stepper.mesh
    asm = stepper.asm
    l2s, l2f = stepper.l2_scalar, stepper.l2_flux
    t = result.times

    def stress_sq(sig):
        return float(sig @ (asm.stress_mass @ sig))

    def series(fn):
        return np.array([fn(s) for s in states])

    def trap(values):
        return float(np.trapezoid(values, t)) if len(t) > 1 else 0.0

    def rate_sq(fn):
        total = 0.0
        for a, b, dt in zip(states[:-1], states[1:], result.dts):
            total += fn(b, a) / dt
        return total

    area2 = np.tile(mesh.areas, 2)
    p2 = series(lambda s: l2s(s.p) ** 2)
    T2 = series(lambda s: l2s(s.T) ** 2)
    w2 = series(lambda s: l2f(s.w) ** 2)
    r2 = series(lambda s: l2f(s.r) ** 2)
    s2 = series(lambda s: stress_sq(s.sigma))
    u2 = series(lambda s: float(np.dot(area2, s.u**2)))
    divw2 = series(lambda s: l2s(rt_divergence(mesh, s.w)) ** 2)
    divr2 = series(lambda s: l2s(rt_divergence(mesh, s.r)) ** 2)
    divs2 = series(lambda s: float(np.dot(area2, stress_divergence(mesh, s.sigma) ** 2)))
    sig0 = states[0].sigma
    sig0_A = float(sig0 @ (asm.blocks["A_sigmasigma"] @ sig0))

    q = {
        "sup_p": float(p2.max()),
        "sup_T": float(T2.max()),
        "int_w": trap(w2),
        "int_r": trap(r2),
        "sigma0_A": sig0_A,
        "int_dt_p": rate_sq(lambda b, a: l2s(b.p - a.p) ** 2),
        "int_dt_T": rate_sq(lambda b, a: l2s(b.T - a.T) ** 2),
        "sup_w": float(w2.max()),
        "sup_r": float(r2.max()),
        "sup_sigma": float(s2.max()),
        "int_dt_sigma": rate_sq(lambda b, a: stress_sq(b.sigma - a.sigma)),
        "sup_u": float(u2.max()),
        "int_dt_u": rate_sq(lambda b, a: float(np.dot(area2, (b.u - a.u) ** 2))),
        "int_div_w": trap(divw2),
        "int_div_r": trap(divr2),
        "int_div_sigma": trap(divs2),
        "int_sigma": trap(s2),
    }
    lhs = {
        "i": q["sup_p"] + q["sup_T"] + q["int_w"] + q["int_r"] + q["sigma0_A"],
        "ii": q["int_dt_p"] + q["int_dt_T"] + q["sup_w"] + q["sup_r"],
        "iii": q["sup_sigma"] + q["int_dt_sigma"] + q["sup_u"] + q["int_dt_u"],
        "iv": q["int_w"] + q["int_div_w"] + q["int_r"] + q["int_div_r"] + q["int_sigma"] + q["int_div_sigma"],
    }
    ratios = {k: _ratio(v, data.total) for k, v in lhs.items()}
    return EnergyReport(quantities=q, lhs=lhs, data=data, ratios=ratios)


def dissipation_series(result: SimulationResult, stepper: Stepper) -> dict:
    """Per-state energies for source-free runs.

    ``weighted`` is ``(c0 - b_r)|p|^2 + (a0 - b_r)|T|^2``. ``storage`` is
    the quadratic form whose decrease the implicit Euler step guarantees when
    ``eta = 0``: ``(c0 + c_r)|p|^2 + (a0 + a_r)|T|^2 - 2 b_r (p, T) - |sigma|_A^2``.
    """
    P = stepper.params
    d = derived_coeffs(P)
    A_ss = stepper.asm.blocks["A_sigmasigma"]
    areas = stepper.mesh.areas
    weighted, storage = [], []
    for s in result.states:
        pp = float(np.dot(areas, s.p * s.p))
        TT = float(np.dot(areas, s.T * s.T))
        pT = float(np.dot(areas, s.p * s.T))
        weighted.append((P.c0 - d.b_r) * pp + (P.a0 - d.b_r) * TT)
        storage.append(
            (P.c0 + d.c_r) * pp + (P.a0 + d.a_r) * TT - 2 * d.b_r * pT - float(s.sigma @ (A_ss @ s.sigma))
        )
    return {"weighted": np.array(weighted), "storage": np.array(storage)}


# ---------------------------------------------------------------------------
# contraction
# ---------------------------------------------------------------------------


def contraction_constant(xi: float, gamma1: float, gamma2: float, k_m: float, T_f: float) -> float:
    """``C = (xi gamma2 / 2) exp(xi gamma1 T_f / k_m)``."""
    if gamma2 == 0:
        return 0.0
    return 0.5 * xi * gamma2 * math.exp(xi * gamma1 * T_f / k_m)


def _t1(C: float) -> float:
    return 1.0 / (2.0 * C) if C > 0 else math.inf


@dataclass
class ContractionReading:
    gamma1: float
    gamma2: float
    C_contr: float
    t1: float

    @property
    def degenerate(self) -> bool:
        return self.gamma2 == 0


@dataclass
class ContractionReport:
    xi: float
    k_m: float
    T_f: float
    difference: ContractionReading  # gammas from sup of squared iterate differences
    sup_norm: ContractionReading  # gammas from squared sup norms of r^{m-1} and w^m
    ratios: list  # per time step: squared successive-difference ratios
    flagged: list = field(default_factory=list)  # (step, iteration, ratio) with ratio >= 1

    @property
    def C_contr(self) -> float:
        return self.sup_norm.C_contr

    @property
    def t1(self) -> float:
        return self.sup_norm.t1

    @property
    def degenerate(self) -> bool:
        return self.sup_norm.degenerate

    def summary(self) -> str:
        lines = [f"xi = {self.xi:.6g}, k_m = {self.k_m:.6g}, T_f = {self.T_f:.6g}"]
        for name, r in (("difference reading", self.difference), ("sup-norm reading", self.sup_norm)):
            lines.append(
                f"{name}: gamma1 = {r.gamma1:.6g}, gamma2 = {r.gamma2:.6g}, "
                f"C_contr = {r.C_contr:.6g}, t1 = {r.t1:.6g}" + ("  (degenerate)" if r.degenerate else "")
            )
        worst = max((max(r) for r in self.ratios if r), default=0.0)
        lines.append(f"largest observed ratio = {worst:.6g}; flagged = {len(self.flagged)}")
        return "\n".join(lines)


def contraction_report(logs: Sequence[PicardLog], params: MaterialParams, T_f: float) -> ContractionReport:
    """Evaluate the contraction constant under both readings of its gammas and tabulate ratios."""
    d = derived_coeffs(params)
    k_m = params.k_m

    def sup(values):
        vals = [v for v in values if math.isfinite(v)]
        return max(vals) if vals else 0.0

    g1_diff = sup([v * v for log in logs for v in log.e_w])
    g2_diff = sup([v * v for log in logs for v in log.e_r])
    g1_sup = sup([v * v for log in logs for v in log.gamma_r])
    g2_sup = sup([v * v for log in logs for v in log.gamma_w])

    def reading(g1, g2):
        C = contraction_constant(d.xi, g1, g2, k_m, T_f)
        return ContractionReading(g1, g2, C, _t1(C))

    ratios = [log.ratios() for log in logs]
    flagged = [
        (step, m + 2, q) for step, rs in enumerate(ratios) for m, q in enumerate(rs) if q >= 1.0
    ]
    return ContractionReport(
        xi=d.xi, k_m=k_m, T_f=T_f,
        difference=reading(g1_diff, g2_diff),
        sup_norm=reading(g1_sup, g2_sup),
        ratios=ratios,
        flagged=flagged,
    )


# ---------------------------------------------------------------------------
# compliance norm and trace identity
# ---------------------------------------------------------------------------


@dataclass
class NormEquivalenceReport:
    passed: bool
    lower: float  # 1 / (2 (mu + lam))
    upper: float  # 1 / (2 mu)
    min_ratio: float
    max_ratio: float
    worst_lower_margin: float  # min(ratio - lower), >= -tol when passing
    worst_upper_margin: float  # min(upper - ratio)
    identity_ratio: float
    tracefree_ratio: float


def norm_equivalence_check(
    params: MaterialParams, samples: int = 1000, tol: float = 1e-12, seed: int = 0, cells: int = 16
) -> NormEquivalenceReport:
    """Sample random symmetric piecewise-constant tensor fields and compare ``|tau|_A^2 / |tau|^2``."""
    if samples < 1:
        raise ValueError("sample count must be at least 1")
    rng = np.random.default_rng(seed)
    areas = rng.uniform(0.5, 1.5, size=cells)
    lower = 1.0 / (2.0 * (params.mu + params.lam))
    upper = 1.0 / (2.0 * params.mu)

    def ratio(tau):
        num = float(np.dot(areas, np.einsum("fij,fij->f", compliance_apply(tau, params), tau)))
        den = float(np.dot(areas, np.einsum("fij,fij->f", tau, tau)))
        return num / den

    vals = np.empty(samples)
    for k in range(samples):
        m = rng.standard_normal((cells, 2, 2)) * rng.uniform(0.1, 10.0)
        vals[k] = ratio(0.5 * (m + m.transpose(0, 2, 1)))
    ident = ratio(np.broadcast_to(np.eye(2), (cells, 2, 2)).copy())
    tf = rng.standard_normal((cells, 2, 2))
    tf = 0.5 * (tf + tf.transpose(0, 2, 1))
    tr = 0.5 * (tf[:, 0, 0] + tf[:, 1, 1])
    tf[:, 0, 0] -= tr
    tf[:, 1, 1] -= tr
    tracefree = ratio(tf)
    lo_margin = float((vals - lower).min())
    hi_margin = float((upper - vals).min())
    ok = lo_margin >= -tol and hi_margin >= -tol
    ok = ok and abs(ident - lower) <= tol and abs(tracefree - upper) <= tol
    return NormEquivalenceReport(
        passed=bool(ok), lower=lower, upper=upper,
        min_ratio=float(vals.min()), max_ratio=float(vals.max()),
        worst_lower_margin=lo_margin, worst_upper_margin=hi_margin,
        identity_ratio=ident, tracefree_ratio=tracefree,
    )


def trace_identity_residual(mesh: TriMesh, state, params: MaterialParams, div_u: Callable) -> float:
    """``|| tr(sigma)/(2(mu+lam)) + (alpha p + beta T)/(mu+lam) - div u ||_{L2}``.

    ``div_u(x, y)`` is the exact displacement divergence at the state's time.
    """
    pts, wts = quadrature_points(mesh, DUNAVANT4)
    sig = stress_evaluate(mesh, state.sigma, DUNAVANT4.bary)
    ml = params.mu + params.lam
    tr = sig[..., 0, 0] + sig[..., 1, 1]
    disc = tr / (2 * ml) + ((params.alpha * state.p + params.beta * state.T) / ml)[:, None]
    ex = np.broadcast_to(div_u(pts[..., 0], pts[..., 1]), wts.shape)
    return math.sqrt(float(((disc - ex) ** 2 * wts).sum()))
