"""Acceptance suite: one pass/fail line per criterion.

Each test records its line in RESULTS (printed in the terminal summary by
conftest) and then asserts, so a failing criterion also fails the run.
"""
import time

import numpy as np
import pytest

from uvnflash import bench, eos
from uvnflash.eos import StateTVN
from uvnflash.flash import FlashConfig, FlashConvergenceError, TVNProblem, constraint, flash
from uvnflash.solver import SolverConfig
from uvnflash.stability import run_stability

from oracles import fd_gradient_adaptive, fd_jacobian_adaptive, random_tvn_point, rel_error, roundoff_floor_at

RESULTS = {}
PASSED = {}

ALL = ["P1", "P2", "P3", "P4", "P5", "P6", "P-CO2"]
GLOBS = ("linesearch", "trustregion")
TIGHT = 1e-10  # solver tolerance for checks on converged equilibria

# published TVN outer iteration counts at rel_tol 1e-6 (P6 spans two values)
TVN_ITERATIONS = {"P1": (9,), "P2": (4,), "P3": (4,), "P4": (7,), "P5": (10,), "P6": (4, 5)}
ITER_SLACK = 2


def record(key, passed, detail, extra=()):
    line = f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}"
    RESULTS[key] = "\n".join([line, *("    " + e for e in extra)])
    PASSED[key] = passed
    print(RESULTS[key])


@pytest.fixture(scope="module")
def problems():
    out = {}
    for pid in ALL:
        p = bench.get_problem(pid)
        mix = p.mixture()
        out[pid] = (p, mix, run_stability(mix, p.spec.stability_spec()))
    return out


def _flash(mix, spec, outcome, form, glob, tol, scaled=False):
    cfg = FlashConfig(form, SolverConfig(rel_tol=tol, globalization=glob, scaling=scaled))
    try:
        return flash(mix, spec, cfg, outcome=outcome)
    except FlashConvergenceError:
        return None


# ---------------------------------------------------------------------------
# 1. property suite

def test_criterion_1_property_suite(problems):
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240601)
    notes, ok = [], {}

    # (a) derivatives of both Lagrangians against central differences
    n_states, worst_g, worst_h = 0, 0.0, 0.0
    for form in ("scl", "acl"):
        for pid in ALL:
            p, mix, _ = problems[pid]
            pr = TVNProblem(mix, p.spec, form)
            for _ in range(15):
                x = random_tvn_point(pr, p.spec, rng)
                L, g, H = pr.value(x), pr.gradient(x), pr.hessian(x)
                gf, h = fd_gradient_adaptive(pr.value, x)
                eg = rel_error(g, gf, roundoff_floor_at(abs(L), h))
                scale = np.abs(g)[:, None] / np.abs(x)[None, :]
                eh = rel_error(H, fd_jacobian_adaptive(pr.gradient, x), 1e-6 * scale)
                worst_g, worst_h = max(worst_g, eg), max(worst_h, eh)
                n_states += 1
    per_form = n_states // 2
    ok["a"] = per_form >= 100 and worst_g < 1e-6 and worst_h < 1e-5
    notes.append(f"(a) {per_form} states per Lagrangian: gradient err {worst_g:.1e} (<1e-6), Hessian err {worst_h:.1e} (<1e-5)")

    # (b) the two Lagrangians coincide
    worst = 0.0
    for i in range(1000):
        p, mix, _ = problems[ALL[i % len(ALL)]]
        acl = TVNProblem(mix, p.spec, "acl")
        scl = TVNProblem(mix, p.spec, "scl")
        x = random_tvn_point(acl, p.spec, rng)
        a, s = acl.value(x), scl.value(x)
        worst = max(worst, abs(a - s) / abs(a))
    ok["b"] = worst < 1e-10
    notes.append(f"(b) 1000 states: max |L_scl - L_acl| / |L| = {worst:.1e} (<1e-10)")

    # (c) T^2 dL/dT equals the energy constraint
    worst = 0.0
    for form in ("scl", "acl"):
        for pid in ALL:
            p, mix, _ = problems[pid]
            pr = TVNProblem(mix, p.spec, form)
            for _ in range(15):
                x = random_tvn_point(pr, p.spec, rng)
                C = constraint(x, p.spec, mix)
                lhs = x[-1] ** 2 * pr.gradient(x)[-1]
                worst = max(worst, abs(lhs - C) / max(abs(C), abs(p.spec.total_u)))
    ok["c"] = worst < 1e-9
    notes.append(f"(c) max |T^2 dL/dT - C| / max(|C|, |U*|) = {worst:.1e} (<1e-9)")

    # (d) thermodynamic identities at random single-phase states
    worst = 0.0
    for i in range(300):
        p, mix, _ = problems[ALL[i % len(ALL)]]
        T = rng.uniform(150.0, 600.0)
        frac = rng.uniform(0.05, 1.0, mix.n)
        N = 10.0 * frac / frac.sum()
        V = (N @ mix.b) / rng.uniform(0.01, 0.85)
        A, gA, _ = eos.helmholtz_derivatives(mix, T, V, N)
        S, gS, _ = eos.entropy_derivatives(mix, T, V, N)
        U, gU, _ = eos.energy_derivatives(mix, T, V, N)
        b = eos.properties(mix, StateTVN(T, V, N))
        errs = [
            abs(A - (U - T * S)) / max(abs(A), abs(U), abs(T * S)),
            abs(gS[1] - b.dp_dT) / abs(b.dp_dT),
            abs(gU[1] - (T * b.dp_dT - b.pressure)) / max(abs(T * b.dp_dT), abs(b.pressure)),
        ]
        worst = max(worst, *errs)
    ok["d"] = worst < 1e-6
    notes.append(f"(d) A = U - TS, Maxwell, dU/dV identities over 300 states: max rel err {worst:.1e} (<1e-6)")

    # (e) converged flashes satisfy equilibrium and raise the entropy
    n_conv, bad = 0, []
    for pid in ALL:
        p, mix, outcome = problems[pid]
        for form in ("scl", "acl", "uvn"):
            for glob in GLOBS:
                sol = _flash(mix, p.spec, outcome, form, glob, TIGHT)
                if sol is None or sol.stable:
                    continue
                n_conv += 1
                r = sol.residuals
                good = (
                    r["dP"] <= 1e-6 * abs(r["P"])
                    and r["dmu"] <= 1e-6 * r["mu"]
                    and abs(r["C"]) <= 1e-6 * abs(p.spec.total_u)
                    and sol.s_two >= sol.s_single
                )
                if not good:
                    bad.append(f"{pid}/{form}/{glob}")
    ok["e"] = n_conv > 0 and not bad
    notes.append(f"(e) {n_conv} converged flashes at rel_tol {TIGHT:g}: residual/entropy violations {bad or 'none'}")

    elapsed = time.perf_counter() - t0
    ok["time"] = elapsed < 30.0
    passed = all(ok.values())
    record("1", passed, f"property suite, {elapsed:.1f} s (<30 s)", notes)
    assert passed


# ---------------------------------------------------------------------------
# 2. stability reproduction

def test_criterion_2_stability_reproduction():
    t0 = time.perf_counter()
    checks = []
    for pid in ALL:
        p = bench.get_problem(pid)
        mix = p.mixture()
        checks += bench.compare_stability(p, run_stability(mix, p.spec.stability_spec()))
    elapsed = time.perf_counter() - t0
    failed = [c for c in checks if not c.passed]
    passed = not failed and elapsed < 5.0
    record(
        "2", passed,
        f"stability reproduction, {len(checks) - len(failed)}/{len(checks)} checks, {elapsed:.2f} s (<5 s)",
        [c.line() for c in failed],
    )
    assert passed


# ---------------------------------------------------------------------------
# 3. flash reproduction, or the formulation-agreement fallback

def _sorted_phases(sol):
    o = np.argsort(sol.split.volumes)
    return sol.split.volumes[o], sol.split.moles[o], sol.split.temperatures[o]


def _disagreement(a, b):
    pa, pb = _sorted_phases(a), _sorted_phases(b)
    d = max(float(np.max(np.abs(x - y) / np.abs(x))) for x, y in zip(pa, pb))
    return max(d, abs(a.s_two - b.s_two) / abs(a.s_two))


def test_criterion_3_flash_reproduction(problems):
    checks = []
    for pid in ALL:
        p, mix, outcome = problems[pid]
        sol = _flash(mix, p.spec, outcome, "scl", "linesearch", 1e-8)
        if sol is None:
            checks.append(bench.Check(pid, "flash converged", 0.0, 1.0, 0.0, "abs", "published:flash", False))
            continue
        checks += bench.compare_flash(p, sol)
    failed = [c for c in checks if not c.passed]
    if not failed:
        record("3", True, f"flash reproduction, full branch: {len(checks)}/{len(checks)} checks")
        return

    # fallback: TVN and UVN agree to 1e-6 relative, and criterion 1 holds
    notes = [f"full branch unmet: {len(failed)}/{len(checks)} checks outside tolerance"]
    notes += ["  " + c.line() for c in failed]
    worst, missing = 0.0, []
    for pid in ALL:
        p, mix, outcome = problems[pid]
        ref = _flash(mix, p.spec, outcome, "acl", "linesearch", TIGHT)
        best = None
        for glob in GLOBS:
            for scaled in (False, True):
                u = _flash(mix, p.spec, outcome, "uvn", glob, TIGHT, scaled)
                tag = f"uvn{'-scaled' if scaled else ''}/{glob}"
                if u is None:
                    notes.append(f"{pid} {tag}: not converged at rel_tol {TIGHT:g}")
                    continue
                d = _disagreement(ref, u)
                notes.append(f"{pid} {tag}: max rel difference to TVN {d:.1e}")
                best = d if best is None else min(best, d)
        if ref is None or best is None:
            missing.append(pid)
        else:
            worst = max(worst, best)
    agree = not missing and worst <= 1e-6
    c1 = PASSED.get("1")
    passed = agree and bool(c1)
    record(
        "3", passed,
        f"flash reproduction, downgraded branch: TVN/UVN agreement {worst:.1e} (<=1e-6), "
        f"problems without a converged pair {missing or 'none'}, criterion 1 {'holds' if c1 else 'not satisfied'}",
        notes,
    )
    assert passed


# ---------------------------------------------------------------------------
# 4. solver behaviour

def test_criterion_4_solver_behaviour(problems):
    t0 = time.perf_counter()
    notes, bad = [], []
    for pid in ALL:
        p, mix, outcome = problems[pid]
        for glob in GLOBS:
            for form in ("scl", "acl"):
                sol = _flash(mix, p.spec, outcome, form, glob, 1e-6)
                if sol is None:
                    bad.append(f"{pid} {form}/{glob} did not converge")
                    continue
                if sol.inner_iterations != 0:
                    bad.append(f"{pid} {form}/{glob} inner iterations {sol.inner_iterations}")
                if pid in TVN_ITERATIONS:
                    target = TVN_ITERATIONS[pid]
                    dev = min(abs(sol.outer_iterations - t) for t in target)
                    line = f"{pid} {form}/{glob} outer {sol.outer_iterations} vs {'-'.join(map(str, target))}"
                    notes.append(line)
                    if dev > ITER_SLACK:
                        bad.append(line)
            u = _flash(mix, p.spec, outcome, "uvn", glob, 1e-6)
            if pid == "P4":
                expect_fail = glob == "linesearch"
                if (u is None) != expect_fail:
                    bad.append(f"P4 uvn/{glob} {'converged' if u else 'failed'}")
                notes.append(f"P4 uvn/{glob} {'converged' if u else 'failed'}")
            elif u is None:
                bad.append(f"{pid} uvn/{glob} did not converge")
            if u is not None and u.inner_iterations <= 0:
                bad.append(f"{pid} uvn/{glob} has no inner iterations")
    elapsed = time.perf_counter() - t0
    if elapsed >= 10.0:
        bad.append(f"runtime {elapsed:.1f} s")
    passed = not bad
    record("4", passed, f"solver behaviour, {elapsed:.2f} s (<10 s)", (["violations: " + "; ".join(bad)] if bad else []) + notes)
    assert passed


# ---------------------------------------------------------------------------
# 5. performance ordering

def test_criterion_5_performance_ordering():
    t0 = time.perf_counter()
    rep = bench.run_benchmark(formulations=("scl", "acl", "uvn"), scaling=(False,), repeats=100)
    elapsed = time.perf_counter() - t0
    notes, bad = [], []
    for pr in rep.problems:
        for glob in GLOBS:
            cell = {f: rep.run(pr.problem, f, glob) for f in ("acl", "scl", "uvn")}
            if not all(r is not None and r.converged for r in cell.values()):
                notes.append(f"{pr.problem} {glob}: not mutually converged, skipped")
                continue
            acl, scl, uvn = (cell[f].mean_ms for f in ("acl", "scl", "uvn"))
            good = acl <= scl <= uvn
            line = f"{pr.problem} {glob}: acl {acl:.3f} ms, scl {scl:.3f} ms, uvn {uvn:.3f} ms"
            notes.append(("ok   " if good else "FAIL ") + line)
            if not good:
                bad.append(f"{pr.problem}/{glob}")
    if elapsed >= 120.0:
        bad.append(f"runtime {elapsed:.0f} s")
    passed = not bad
    record("5", passed, f"ACL <= SCL <= UVN over 100 repeats, {elapsed:.0f} s (<120 s), violations {bad or 'none'}", notes)
    assert passed
