"""Implicit Euler time stepping with fixed-point resolution of the convection.

At each time level the heat flux ``r^{m-1}`` of the previous iterate freezes
the convective coefficient ``eta = Theta^{-1} r^{m-1}``; the resulting linear
system is solved by sparse LU until successive heat fluxes agree.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import DAE_ORDER, Sources, SystemAssembler
from .mesh import TriMesh
from .params import MaterialParams
from .spaces import project_P0, project_P0_vector, rt_vertex_values, stress_row_size

logger = logging.getLogger(__name__)

CONVECTION_MODES = ("picard", "frozen", "off")
INITIAL_GUESSES = ("previous", "zero", "extrapolated")
LINEAR_SOLVERS = ("reuse", "direct")


class SolverError(RuntimeError):
    pass


class SingularSystemError(SolverError):
    """Sparse factorisation failed; run the pencil diagnostic on this setup."""


class PicardNonConvergence(SolverError):
    def __init__(self, message: str, log: "PicardLog"):
        super().__init__(message)
        self.log = log


@dataclass
class State:
    T: np.ndarray
    r: np.ndarray
    p: np.ndarray
    w: np.ndarray
    sigma: np.ndarray
    u: np.ndarray
    rho: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, mesh: TriMesh, t: float = 0.0, stress_element: str = "bdm") -> "State":
        F, E = mesh.num_triangles, mesh.num_edges
        return cls(
            T=np.zeros(F), r=np.zeros(E), p=np.zeros(F), w=np.zeros(E),
            sigma=np.zeros(2 * stress_row_size(mesh, stress_element)), u=np.zeros(2 * F), rho=np.zeros(F), t=t,
        )

    def to_vector(self) -> np.ndarray:
        """Concatenate in the DAE ordering ``(p, sigma, T, w, u, r, rho)``."""
        return np.concatenate([getattr(self, name) for name in DAE_ORDER])

    @classmethod
    def from_vector(cls, x: np.ndarray, assembler: SystemAssembler, t: float) -> "State":
        parts = {}
        for name in DAE_ORDER:
            start = assembler.offsets[name]
            parts[name] = np.array(x[start : start + assembler.counts[name]])
        return cls(t=t, **parts)

    def fields(self) -> dict:
        return {name: getattr(self, name) for name in ("T", "r", "p", "w", "sigma", "u", "rho")}

    def max_abs(self) -> float:
        return max(float(np.abs(v).max(initial=0.0)) for v in self.fields().values())

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.fields().values())

    def scaled(self, c: float) -> "State":
        return replace(self, **{k: c * v for k, v in self.fields().items()})


@dataclass
class PicardLog:
    t: float
    e_r: list = field(default_factory=list)
    e_w: list = field(default_factory=list)
    e_p: list = field(default_factory=list)
    e_T: list = field(default_factory=list)
    r_norm: list = field(default_factory=list)
    gamma_eta: list = field(default_factory=list)  # max_K |Theta^{-1} r^{m-1}(c_K)|
    gamma_r: list = field(default_factory=list)  # sup |r^{m-1}|
    gamma_w: list = field(default_factory=list)  # sup |w^m|
    sigma_bound: list = field(default_factory=list)  # (lhs, rhs) of the stress-difference bound
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.e_r)

    def ratios(self) -> list:
        """Squared successive-difference ratios ``|e_r^m|^2 / |e_r^{m-1}|^2``."""
        out = []
        for a, b in zip(self.e_r[:-1], self.e_r[1:]):
            out.append(b * b / (a * a) if a > 0 else 0.0)
        return out

    def sigma_bound_violations(self, rtol: float = 1e-10) -> list:
        return [
            m for m, (lhs, rhs) in enumerate(self.sigma_bound, start=1)
            if lhs > rhs * (1 + rtol) + 1e-300
        ]


class Stepper:
    """Holds the assembled operators for one mesh and parameter set."""

    def __init__(
        self,
        mesh: TriMesh,
        params: MaterialParams,
        sources: Optional[Sources] = None,
        convection: str = "picard",
        eta: Optional[np.ndarray] = None,
        initial_guess: str = "previous",
        warn: bool = True,
        linear_solver: str = "reuse",
        stress_element: str = "bdm",
    ):
        if convection not in CONVECTION_MODES:
            raise ValueError(f"convection must be one of {CONVECTION_MODES}")
        if initial_guess not in INITIAL_GUESSES:
            raise ValueError(f"initial_guess must be one of {INITIAL_GUESSES}")
        if linear_solver not in LINEAR_SOLVERS:
            raise ValueError(f"linear_solver must be one of {LINEAR_SOLVERS}")
        if convection == "frozen" and eta is None:
            raise ValueError("frozen convection needs an eta field")
        self.mesh = mesh
        self.params = params
        self.sources = sources or Sources()
        self.convection = convection
        self.eta = None if eta is None else np.broadcast_to(
            np.asarray(eta, dtype=float), (mesh.num_triangles, 2)
        )
        self.initial_guess = initial_guess
        self.asm = SystemAssembler(mesh, params, warn=warn, stress_element=stress_element)
        self.linear_solver = linear_solver
        self._prev_r: Optional[np.ndarray] = None
        self._base_lu: dict = {}

    # -- norms -------------------------------------------------------------

    def l2_scalar(self, v: np.ndarray) -> float:
        return math.sqrt(float(np.dot(self.mesh.areas, v * v)))

    def l2_flux(self, v: np.ndarray) -> float:
        return math.sqrt(max(float(v @ (self.asm.rt_mass @ v)), 0.0))

    def sup_flux(self, v: np.ndarray) -> float:
        vals = rt_vertex_values(self.mesh, v)
        return float(np.sqrt((vals**2).sum(axis=-1)).max(initial=0.0))

    # -- initial data --------------------------------------------------------

    def consistent_init(
        self,
        p0: Optional[Callable] = None,
        T0: Optional[Callable] = None,
        u0: Optional[Callable] = None,
        t0: float = 0.0,
    ) -> State:
        """Project ``p0``, ``T0`` and solve the algebraic rows for the rest.

        The displacement has no time derivative in the semi-discrete system,
        so it is recovered together with the stress and rotation from the
        mechanical rows. ``u0`` is only compared against that solution.
        """
        mesh, B = self.mesh, self.asm.blocks
        p = project_P0(mesh, p0) if p0 is not None else np.zeros(mesh.num_triangles)
        T = project_P0(mesh, T0) if T0 is not None else np.zeros(mesh.num_triangles)
        try:
            w = spla.spsolve(B["A_ww"].tocsc(), B["A_wp"] @ p)
            r = spla.spsolve(B["A_rr"].tocsc(), B["A_rT"] @ T)
        except RuntimeError as exc:
            raise SingularSystemError(f"flux mass matrix singular: {exc}") from exc
        sigma, u, rho = self.solve_mechanics(p, T, t0)
        if u0 is not None:
            u_proj = project_P0_vector(mesh, u0)
            mismatch = math.sqrt(float(np.dot(np.tile(mesh.areas, 2), (u - u_proj) ** 2)))
            logger.info("initial displacement differs from equilibrium by %.3e (L2)", mismatch)
        state = State(T=T, r=np.asarray(r), p=p, w=np.asarray(w), sigma=sigma, u=u, rho=rho, t=t0)
        self._prev_r = None
        return state

    def solve_mechanics(self, p: np.ndarray, T: np.ndarray, t: float):
        """Stress, displacement and rotation in equilibrium with ``p``, ``T`` and ``f(t)``."""
        import scipy.sparse as sp

        B = self.asm.blocks
        F = self.mesh.num_triangles
        K = sp.bmat(
            [
                [B["A_sigmasigma"], B["A_usigma"].T, B["A_rhosigma"].T],
                [-B["A_usigma"], None, None],
                [-B["A_rhosigma"], None, sp.csr_matrix((F, F))],
            ],
            format="csc",
        )
        loads = self.asm.load(self.sources, t)
        L1 = loads[self.asm.offsets["u"] : self.asm.offsets["u"] + 2 * F]
        rhs = np.concatenate(
            [-(B["A_psigma"].T @ p + B["A_Tsigma"].T @ T), L1, np.zeros(F)]
        )
        try:
            x = spla.splu(K).solve(rhs)
        except RuntimeError as exc:
            raise SingularSystemError(
                f"mechanical subsystem singular ({exc}); check the stress/rotation pairing"
            ) from exc
        ns = B["A_sigmasigma"].shape[0]
        return x[:ns], x[ns : ns + 2 * F], x[ns + 2 * F :]

    # -- one linear solve ----------------------------------------------------

    def picard_step(
        self, state_prev: State, r_frozen: Optional[np.ndarray], dt: float, t: float
    ) -> tuple[State, float]:
        """Solve one linearised implicit Euler system; returns the iterate and ``gamma_h``."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        if self.convection == "picard":
            system = self.asm.system(r_frozen=r_frozen, sources=self.sources, t=t)
        elif self.convection == "frozen":
            system = self.asm.system(eta=self.eta, sources=self.sources, t=t)
        else:
            system = self.asm.system(eta=np.zeros(2), sources=self.sources, t=t)
        A = (system.Phi / dt + system.Psi).tocsc()
        rhs = system.L + system.Phi @ state_prev.to_vector() / dt
        x = None
        if self.linear_solver == "reuse":
            x = self._solve_preconditioned(A, rhs, dt)
        if x is None:
            x = self._factor(A, t).solve(rhs)
        return State.from_vector(x, self.asm, t), system.gamma

    def _factor(self, A, t: float):
        try:
            return spla.splu(A)
        except RuntimeError as exc:
            raise SingularSystemError(
                f"time-step matrix singular at t={t:.6g} ({exc}); "
                "run pencil-check on this configuration"
            ) from exc

    def _solve_preconditioned(self, A, rhs: np.ndarray, dt: float) -> Optional[np.ndarray]:
        """GMRES on the full matrix, preconditioned by the cached LU of the convection-free one.

        Only the convective block changes between fixed-point iterates and
        time steps, so one factorisation per step size serves the whole run.
        Returns ``None`` when GMRES stalls; the caller then factorises directly.
        """
        lu = self._base_lu.get(dt)
        if lu is None:
            A0 = (self.asm.Phi / dt + self.asm.Psi0).tocsc()
            try:
                lu = spla.splu(A0)
            except RuntimeError:
                return None
            if len(self._base_lu) >= 4:
                self._base_lu.pop(next(iter(self._base_lu)))
            self._base_lu[dt] = lu
        M = spla.LinearOperator(A.shape, lu.solve)
        x, info = spla.gmres(A, rhs, M=M, rtol=1e-14, atol=1e-300, restart=40, maxiter=3)
        if info != 0 or not np.all(np.isfinite(x)):
            return None
        res = np.linalg.norm(A @ x - rhs)
        if res > 1e-11 * max(np.linalg.norm(rhs), 1e-300):
            return None
        return x

    # -- full time step ------------------------------------------------------

    def _initial_flux(self, state_prev: State) -> np.ndarray:
        if self.initial_guess == "zero":
            return np.zeros_like(state_prev.r)
        if self.initial_guess == "extrapolated" and self._prev_r is not None:
            return 2.0 * state_prev.r - self._prev_r
        return state_prev.r.copy()

    def backward_euler_step(
        self,
        state_prev: State,
        dt: float,
        tol: float = 1e-10,
        max_iters: int = 25,
    ) -> tuple[State, PicardLog]:
        if not tol > 0:
            raise ValueError("tol must be positive")
        if max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        t = state_prev.t + dt
        log = PicardLog(t=t)
        r_old = self._initial_flux(state_prev)
        prev: Optional[State] = None
        A_ss = self.asm.blocks["A_sigmasigma"]
        d = self.asm.coeffs
        for m in range(1, max_iters + 1):
            state, gamma = self.picard_step(state_prev, r_old, dt, t)
            e_r = state.r - r_old
            log.e_r.append(self.l2_flux(e_r))
            log.r_norm.append(self.l2_flux(state.r))
            log.gamma_eta.append(gamma)
            log.gamma_r.append(self.sup_flux(r_old))
            log.gamma_w.append(self.sup_flux(state.w))
            if prev is not None:
                e_w = state.w - prev.w
                e_p = state.p - prev.p
                e_T = state.T - prev.T
                e_s = state.sigma - prev.sigma
                log.e_w.append(self.l2_flux(e_w))
                log.e_p.append(self.l2_scalar(e_p))
                log.e_T.append(self.l2_scalar(e_T))
                lhs = float(e_s @ (A_ss @ e_s))
                rhs = d.c_r * log.e_p[-1] ** 2 + d.a_r * log.e_T[-1] ** 2
                log.sigma_bound.append((lhs, rhs))
            else:
                for lst in (log.e_w, log.e_p, log.e_T):
                    lst.append(math.nan)
                log.sigma_bound.append((math.nan, math.nan))
            if not state.is_finite():
                raise PicardNonConvergence(f"non-finite iterate at t={t:.6g}", log)
            if log.e_r[-1] <= tol * (1.0 + log.r_norm[-1]):
                log.converged = True
                break
            r_old = state.r
            prev = state
        if not log.converged:
            ratios = ", ".join(f"{q:.3g}" for q in log.ratios()[-3:])
            raise PicardNonConvergence(
                f"fixed-point iteration did not converge at t={t:.6g} after {max_iters} "
                f"iterations (last squared ratios: {ratios}); try halving dt",
                log,
            )
        self._prev_r = state_prev.r.copy()
        return state, log


@dataclass
class SimulationResult:
    states: list
    logs: list
    dts: list

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def final(self) -> State:
        return self.states[-1]


def time_steps(T_f: float, dt: float) -> list:
    """Step sizes covering ``(0, T_f]``; the last one is shortened if needed."""
    if not T_f > 0 or not dt > 0:
        raise ValueError("T_f and dt must be positive")
    n = int(math.floor(T_f / dt + 1e-9))
    steps = [dt] * n
    rest = T_f - n * dt
    if rest > 1e-12 * T_f:
        steps.append(rest)
    return steps


def run_simulation(
    stepper: Stepper,
    initial: State,
    T_f: float,
    dt: float,
    tol: float = 1e-10,
    max_iters: int = 25,
    num_steps: Optional[int] = None,
    callback: Optional[Callable] = None,
) -> SimulationResult:
    """March from ``initial`` over ``(t0, t0 + T_f]`` with fixed steps.

    ``num_steps`` truncates the march (``0`` returns the initial state only).
    ``callback(state, log)`` is invoked after every step.
    """
    steps = time_steps(T_f, dt)
    if num_steps is not None:
        steps = steps[:num_steps]
    states, logs = [initial], []
    state = initial
    for h in steps:
        state, log = stepper.backward_euler_step(state, h, tol=tol, max_iters=max_iters)
        states.append(state)
        logs.append(log)
        if callback is not None:
            callback(state, log)
    return SimulationResult(states=states, logs=logs, dts=list(steps))


# module-level conveniences mirroring the stepper methods


def consistent_init(p0, T0, u0, params: MaterialParams, mesh: TriMesh, sources=None) -> State:
    return Stepper(mesh, params, sources, warn=False).consistent_init(p0, T0, u0)


def picard_step(stepper: Stepper, state_prev: State, iterate_prev: State, dt: float) -> State:
    return stepper.picard_step(state_prev, iterate_prev.r, dt, state_prev.t + dt)[0]


def backward_euler_step(stepper: Stepper, state_prev: State, dt: float, tol=1e-10, max_iters=25):
    return stepper.backward_euler_step(state_prev, dt, tol=tol, max_iters=max_iters)
