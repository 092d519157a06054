"""Time the parts of one implicit Euler step on the manufactured case.

Usage: python3 benchmarks/bench_step.py [n ...]

Reports the cost of the per-iterate assembly (convective block plus loads)
against a sparse LU factorisation and a GMRES solve preconditioned by the
cached convection-free factorisation.
"""

import sys
import time

import scipy.sparse.linalg as spla

from thermoporo.params import passing_preset
from thermoporo.solver import Stepper
from thermoporo.verification import default_case


def best_of(fn, repeat=3):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def bench(n: int) -> None:
    from thermoporo.mesh import build_structured

    case = default_case(passing_preset())
    mesh = build_structured(n)
    dt = 0.25 / n
    stepper = Stepper(mesh, case.params, case.sources, warn=False)
    init = stepper.consistent_init(case.at(case.p, 0.0), case.at(case.T, 0.0))
    t_asm, system = best_of(lambda: stepper.asm.system(r_frozen=init.r, sources=case.sources, t=dt))
    A = (system.Phi / dt + system.Psi).tocsc()
    rhs = system.L + system.Phi @ init.to_vector() / dt
    t_lu, lu = best_of(lambda: spla.splu(A))
    t_solve, _ = best_of(lambda: lu.solve(rhs))
    stepper._solve_preconditioned(A, rhs, dt)  # warm the cached factorisation
    t_gmres, _ = best_of(lambda: stepper._solve_preconditioned(A, rhs, dt))
    t_step, (_, log) = best_of(lambda: stepper.backward_euler_step(init, dt), repeat=1)
    print(
        f"n={n:3d} dim={A.shape[0]:7d}  assembly {t_asm * 1e3:8.2f} ms  "
        f"LU {t_lu * 1e3:8.2f} ms  LU solve {t_solve * 1e3:7.2f} ms  "
        f"reuse solve {t_gmres * 1e3:7.2f} ms  step ({log.iterations} its) {t_step * 1e3:8.1f} ms"
    )


if __name__ == "__main__":
    for n in [int(a) for a in sys.argv[1:]] or [8, 16, 32]:
        bench(n)
