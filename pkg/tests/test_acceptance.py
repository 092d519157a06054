"""Acceptance criteria 1-9, one summary line each (see the "acceptance criteria" section of the report)."""

import math
import time
from fractions import Fraction as Fr

import numpy as np
import pytest

from thermoporo.diagnostics import (
    ESTIMATES,
    contraction_report,
    data_functional,
    dissipation_series,
    energy_report,
    norm_equivalence_check,
    pencil_check,
)
from thermoporo.mesh import build_structured
from thermoporo.params import MaterialParams, check_constraints, passing_preset
from thermoporo.solver import State, Stepper, run_simulation
from thermoporo.verification import biot_recovery_test, default_case, simulate_case


def test_criterion_1_constraint_checker(acceptance):
    start = time.perf_counter()
    examples = [
        (dict(alpha=0.1, beta=0.1, b0=0.05, c0=1.0), True),
        (dict(alpha=1.0, beta=1.0, b0=0.1, c0=1.0), False),
        (dict(alpha=0.1, beta=0.1, b0=0.05, c0=0.14), True),
    ]
    worst, verdicts = 0.0, []
    for kw, expected in examples:
        rep = check_constraints(MaterialParams(mu=1.0, lam=1.0, a0=1.0, **kw))
        mu, lam = Fr(1), Fr(1)
        a, b, b0, c0, a0 = (Fr(kw["alpha"]), Fr(kw["beta"]), Fr(kw["b0"]), Fr(kw["c0"]), Fr(1))
        ml = mu + lam
        exact = (
            b0 - a * b / ml,
            c0 - a * a / ml / 2 - b0 - 1 / (6 * ml),
            a0 - b * b / ml / 2 - b0 - 1 / (6 * ml),
        )
        worst = max(worst, max(abs(g - float(e)) for g, e in zip(rep.margins, exact)))
        verdicts.append(rep.passed == expected)
    elapsed = time.perf_counter() - start
    ok = all(verdicts) and worst <= 1e-14 and elapsed < 1.0
    acceptance(1, ok, f"pass/fail verdicts {verdicts}, max margin error {worst:.1e}, {elapsed:.3f} s")
    assert ok


def test_criterion_2_norm_equivalence(acceptance, seed):
    start = time.perf_counter()
    rep = norm_equivalence_check(passing_preset(), samples=1000, tol=1e-12, seed=seed)
    elapsed = time.perf_counter() - start
    ok = rep.passed and elapsed < 5.0
    acceptance(
        2, ok,
        f"ratios in [{rep.min_ratio:.6f}, {rep.max_ratio:.6f}] within [{rep.lower}, {rep.upper}], "
        f"tau=I -> {rep.identity_ratio}, trace-free -> {rep.tracefree_ratio}, {elapsed:.2f} s",
    )
    assert ok


def test_criterion_3_pencil(acceptance, seed):
    start = time.perf_counter()
    P = passing_preset()
    smallest = math.inf
    for n in (1, 2, 4):
        for eta in (None, np.array([0.7, -0.4])):
            rep = pencil_check(build_structured(n), P, eta, s=-2.0, seed=seed)
            assert rep.success
            smallest = min(smallest, rep.sigma_min)
    elapsed = time.perf_counter() - start
    ok = smallest > 1e-10 and elapsed < 30.0
    acceptance(3, ok, f"s=-2, n in (1,2,4), eta 0 and (0.7,-0.4): min singular value {smallest:.3e}, {elapsed:.1f} s")
    assert ok


def test_criterion_4_zero_data(acceptance):
    mesh = build_structured(4)
    stepper = Stepper(mesh, passing_preset(), None, warn=False)
    res = run_simulation(stepper, State.zeros(mesh), 1.0, 0.05)
    worst = max(s.max_abs() for s in res.states)
    ok = len(res.logs) == 20 and worst < 1e-12
    acceptance(4, ok, f"{len(res.logs)} steps, max |coefficient| = {worst:.1e}")
    assert ok


def test_criterion_5_dissipation(acceptance):
    P = passing_preset()
    assert check_constraints(P).passed
    mesh = build_structured(8)
    stepper = Stepper(mesh, P, None, warn=False)
    S = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)  # noqa: E731
    init = stepper.consistent_init(S, lambda x, y: np.sin(2 * np.pi * x) * np.sin(np.pi * y))
    res = run_simulation(stepper, init, 1.0, 0.05)
    energy = dissipation_series(res, stepper)["weighted"]
    jumps = np.diff(energy)
    ok = bool(np.all(jumps <= 1e-12))
    acceptance(
        5, ok,
        f"(c0-b_r)|p|^2+(a0-b_r)|T|^2 over {len(jumps)} steps: {energy[0]:.4e} -> {energy[-1]:.4e}, "
        f"largest step change {jumps.max():.2e}",
    )
    assert ok


def test_criterion_6_picard_contraction(acceptance, mms_case):
    start = time.perf_counter()
    _, _, res = simulate_case(mms_case, 8, T_f=0.1, dt=0.01, tol=1e-10, num_steps=10)
    logs = res.logs
    monotone = all(all(b < a for a, b in zip(log.e_r[:-1], log.e_r[1:])) for log in logs)
    last_first = max(log.e_r[-1] / log.e_r[0] for log in logs)
    iters = max(log.iterations for log in logs)
    rep = contraction_report(logs, mms_case.params, 0.1)
    finite = all(math.isfinite(v) and v > 0 for v in (rep.C_contr, rep.t1))
    elapsed = time.perf_counter() - start
    ok = len(logs) == 10 and monotone and last_first < 1 and iters <= 10 and finite and elapsed < 120
    acceptance(
        6, ok,
        f"10 steps, strictly decreasing e_r: {monotone}, max last/first {last_first:.1e}, "
        f"max iterations {iters}, C_contr {rep.C_contr:.4g}, t1 {rep.t1:.4g}, {elapsed:.1f} s",
    )
    assert ok


def test_criterion_7_mms_convergence(acceptance, mms_study):
    rates = {k: mms_study.rates(k) for k in ("eT", "ep", "etrace")}
    ok = all(r >= 0.8 for rs in rates.values() for r in rs) and mms_study.elapsed < 300
    text = ", ".join(f"{k} rates " + "/".join(f"{r:.2f}" for r in rs) for k, rs in rates.items())
    acceptance(7, ok, f"levels {mms_study.levels}, dt = h/4: {text}, {mms_study.elapsed:.0f} s")
    assert ok


def test_criterion_8_biot_recovery(acceptance):
    P = passing_preset().replace(beta=0.0, b0=0.0)
    gaps = [biot_recovery_test(default_case(P), n=n, T_f=0.2, dt=0.05) for n in (2, 4, 8)]
    ok = max(gaps) <= 1e-10
    acceptance(8, ok, f"beta=b0=0, n in (2,4,8): max |coupled - Biot-only| in (p,w,sigma,u) = {max(gaps):.1e}")
    assert ok


def test_criterion_9_energy_stability(acceptance, mms_study, mms_case):
    ratios = {k: [] for k in ESTIMATES}
    for n, (mesh, stepper, result) in zip(mms_study.levels, mms_study.results):
        if n not in (8, 16, 32):
            continue
        c = mms_case
        data = data_functional(
            mesh, c.sources, result.times, c.at(c.p, 0.0), c.at(c.T, 0.0), f_t=c.f_t,
            grad_p0=c.at(c.grad_p, 0.0), grad_T0=c.at(c.grad_T, 0.0),
        )
        rep = energy_report(result, stepper, data)
        for k in ESTIMATES:
            ratios[k].append(rep.ratios[k])
    spread = {k: max(v) / min(v) for k, v in ratios.items()}
    bounded = all(math.isfinite(x) and x > 0 for v in ratios.values() for x in v)
    ok = bounded and len(ratios["i"]) == 3 and all(s < 2 for s in spread.values())
    text = "; ".join(f"({k}) " + "/".join(f"{x:.3e}" for x in ratios[k]) + f" spread {spread[k]:.3f}" for k in ESTIMATES)
    acceptance(9, ok, f"n = 8/16/32: {text}")
    assert ok
