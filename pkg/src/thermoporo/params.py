"""Material coefficients, derived quantities and the compliance tensor.

All tensors are 2x2 and constant in space. ``K`` is the permeability divided
by the fluid viscosity, ``Theta`` the effective thermal conductivity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class ConstraintWarning(UserWarning):
    """Raised (as a warning) when the coefficient inequalities fail."""


def _spd(name: str, value) -> np.ndarray:
    m = np.asarray(value, dtype=float)
    if m.shape == (3,):
        m = np.array([[m[0], m[1]], [m[1], m[2]]])
    if m.shape != (2, 2):
        raise ValueError(f"{name} must be 2x2 or a (k11, k12, k22) triple")
    if not np.allclose(m, m.T, rtol=0, atol=1e-14 * max(1.0, np.abs(m).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    return 0.5 * (m + m.T)


def _sym2_eigs(m: np.ndarray) -> tuple[float, float]:
    a, b, d = m[0, 0], m[0, 1], m[1, 1]
    mean = 0.5 * (a + d)
    rad = math.hypot(0.5 * (a - d), b)
    return mean - rad, mean + rad


@dataclass(frozen=True)
class MaterialParams:
    """Physical coefficients of the thermo-poroelastic model.

    ``mu``, ``a0`` and ``c0`` must be strictly positive. The coupling
    coefficients ``alpha``, ``beta``, ``b0`` and ``lam`` may be zero so that
    the decoupled Biot and pure elasticity limits stay reachable; use
    :meth:`strictly_positive` to test the full positivity assumption.
    """

    a0: float = 1.0
    b0: float = 0.05
    c0: float = 1.0
    alpha: float = 0.1
    beta: float = 0.1
    mu: float = 1.0
    lam: float = 1.0
    K: np.ndarray = field(default_factory=lambda: np.eye(2))
    Theta: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        for name in ("a0", "b0", "c0", "alpha", "beta", "mu", "lam"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        for name in ("mu", "a0", "c0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("b0", "alpha", "beta", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        object.__setattr__(self, "K", _spd("K", self.K))
        object.__setattr__(self, "Theta", _spd("Theta", self.Theta))

    def strictly_positive(self) -> bool:
        return all(
            getattr(self, k) > 0 for k in ("a0", "b0", "c0", "alpha", "beta", "mu", "lam")
        )

    def replace(self, **changes) -> "MaterialParams":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return MaterialParams(**values)

    @property
    def K_inv(self) -> np.ndarray:
        return np.linalg.inv(self.K)

    @property
    def Theta_inv(self) -> np.ndarray:
        return np.linalg.inv(self.Theta)

    @property
    def k_bounds(self) -> tuple[float, float]:
        """``(k_m, k_M)``: extreme eigenvalues of ``K^{-1}``."""
        return _sym2_eigs(self.K_inv)

    @property
    def theta_bounds(self) -> tuple[float, float]:
        """``(theta_m, theta_M)``: extreme eigenvalues of ``Theta^{-1}``."""
        return _sym2_eigs(self.Theta_inv)

    @property
    def k_m(self) -> float:
        return self.k_bounds[0]

    @property
    def k_M(self) -> float:
        return self.k_bounds[1]

    @property
    def theta_m(self) -> float:
        return self.theta_bounds[0]

    @property
    def theta_M(self) -> float:
        return self.theta_bounds[1]

    # Trace-coupling weights c_r/(2 alpha) and a_r/(2 beta), written without
    # the division so they stay defined when alpha or beta vanish.
    @property
    def p_trace_weight(self) -> float:
        return self.alpha / (2.0 * (self.mu + self.lam))

    @property
    def T_trace_weight(self) -> float:
        return self.beta / (2.0 * (self.mu + self.lam))


@dataclass(frozen=True)
class DerivedCoeffs:
    c_r: float
    b_r: float
    a_r: float
    xi: float


@dataclass(frozen=True)
class ConstraintReport:
    margin1: float
    margin2: float
    margin3: float

    @property
    def margins(self) -> tuple[float, float, float]:
        return (self.margin1, self.margin2, self.margin3)

    @property
    def flags(self) -> tuple[bool, bool, bool]:
        return tuple(m > 0 for m in self.margins)

    @property
    def passed(self) -> bool:
        return all(self.flags)

    def summary(self) -> str:
        lines = []
        for i, (m, ok) in enumerate(zip(self.margins, self.flags), start=1):
            lines.append(f"constraint {i}: margin = {m:.12g}  {'pass' if ok else 'FAIL'}")
        lines.append(f"overall: {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def derived_coeffs(params: MaterialParams) -> DerivedCoeffs:
    ml = params.mu + params.lam
    c_r = params.alpha**2 / ml
    a_r = params.beta**2 / ml
    b_r = params.b0 - params.alpha * params.beta / ml
    ab = params.alpha * params.beta
    xi = params.theta_M * ml / ab if ab > 0 else math.inf
    return DerivedCoeffs(c_r=c_r, b_r=b_r, a_r=a_r, xi=xi)


def check_constraints(params: MaterialParams, warn: bool = False) -> ConstraintReport:
    """Margins of the three coefficient inequalities (all must be > 0)."""
    d = derived_coeffs(params)
    ml = params.mu + params.lam
    report = ConstraintReport(
        margin1=params.b0 - params.alpha * params.beta / ml,
        margin2=params.c0 - d.c_r / 2 - params.b0 - 1.0 / (6.0 * ml),
        margin3=params.a0 - d.a_r / 2 - params.b0 - 1.0 / (6.0 * ml),
    )
    if warn and not report.passed:
        warnings.warn(
            "coefficient constraints violated: margins "
            + ", ".join(f"{m:.6g}" for m in report.margins),
            ConstraintWarning,
            stacklevel=2,
        )
    return report


def compliance_apply(tau, params: MaterialParams) -> np.ndarray:
    """Apply the 2D compliance tensor to one tensor or a stack ``(..., 2, 2)``."""
    tau = np.asarray(tau, dtype=float)
    tr = tau[..., 0, 0] + tau[..., 1, 1]
    shift = params.lam / (2.0 * (params.mu + params.lam)) * tr
    out = tau.copy()
    out[..., 0, 0] -= shift
    out[..., 1, 1] -= shift
    return out / (2.0 * params.mu)


def compliance_inner(tau1, tau2, mesh, params: MaterialParams) -> float:
    """``int A tau1 : tau2`` for piecewise-constant tensor fields ``(F, 2, 2)``."""
    tau1 = np.asarray(tau1, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    F = mesh.num_triangles
    if tau1.shape != (F, 2, 2) or tau2.shape != (F, 2, 2):
        raise ValueError(
            f"tensor fields must have shape ({F}, 2, 2) on this mesh, "
            f"got {tau1.shape} and {tau2.shape}"
        )
    local = np.einsum("fij,fij->f", compliance_apply(tau1, params), tau2)
    return float(np.dot(mesh.areas, local))


def passing_preset() -> MaterialParams:
    """Constraint-satisfying parameter set used as the default everywhere."""
    return MaterialParams()
