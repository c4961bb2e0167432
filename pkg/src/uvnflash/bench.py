"""Benchmark problems, problem files, the run matrix and report emission."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import eos
from .eos import EOSDomainError, Mixture, TemperatureSolveError
from .flash import (
    FlashConfig,
    FlashConvergenceError,
    FlashSolution,
    FlashSpec,
    InfeasiblePointError,
    InitialGuessError,
    flash,
    initial_split,
    residuals_ok,
)
from .solver import SolverConfig
from .stability import StabilityOutcome, TrialPhase, run_stability

GLOBALIZATIONS = ("linesearch", "trustregion")
DEFAULT_REPEATS = 100
BENCH_REL_TOL = 1e-6

# comparator tolerances
TOL_T = 0.01  # K, absolute
TOL_REL = 1e-3  # volumes, mole numbers, concentrations, entropy gaps
TOL_D = 5e-3  # relative
TOL_D_ZERO = 1e-8  # |D| bound when the expected D is numerically zero
TOL_ITER_ABS = 2
TOL_ITER_REL = 0.25


class ConfigurationError(ValueError):
    """Bad problem file, unknown problem id or missing component."""


@dataclass(frozen=True)
class Tagged:
    """An expected value with its provenance tag."""

    value: Any
    source: str


@dataclass(frozen=True)
class ProblemDef:
    id: str
    spec: FlashSpec
    mixture_ref: str | Sequence[str]
    expected: Optional[dict] = None

    def mixture(self, db: dict | None = None) -> Mixture:
        db = eos.load_database() if db is None else db
        try:
            return eos.mixture_from_database(db, self.mixture_ref)
        except KeyError as exc:
            raise ConfigurationError(str(exc.args[0])) from None


# ---------------------------------------------------------------------------
# built-in problems

_STAB = "published:stability"
_FLASH = "published:flash"
_ITER = "published:iterations"
_GAP = "derived:flash-entropy-difference"

_C1H2S = ["C1", "H2S"]
_C2C5 = ["C2", "C3H6", "C3", "iC4", "nC4", "C5"]
_N56 = [10.8, 360.8, 146.5, 233.0, 233.0, 15.9]


def _iters(scl_ls, scl_tr, acl_ls, acl_tr, uvn_ls, uvn_tr):
    """Outer iteration counts; UVN entries are (outer, inner) or None for a failure."""
    return {
        ("scl", "linesearch"): Tagged(scl_ls, _ITER),
        ("scl", "trustregion"): Tagged(scl_tr, _ITER),
        ("acl", "linesearch"): Tagged(acl_ls, _ITER),
        ("acl", "trustregion"): Tagged(acl_tr, _ITER),
        ("uvn", "linesearch"): Tagged(uvn_ls, _ITER),
        ("uvn", "trustregion"): Tagged(uvn_tr, _ITER),
    }


def _expected(T, conc, D, V_cm3, N, s1, s2, iters):
    return {
        "stability": {"T": Tagged(T, _STAB), "conc": Tagged(conc, _STAB), "D": Tagged(D, _STAB)},
        "flash": {
            # the larger (residual) phase as tabulated
            "V": Tagged(cm3_to_m3(V_cm3), _FLASH),
            "N": Tagged(N, _FLASH),
            "s_single": Tagged(s1, _FLASH),
            "s_two": Tagged(s2, _FLASH),
            "entropy_gap": Tagged(float(f"{s2 - s1:.6f}"), _GAP),
        },
        "iterations": iters,
    }


def cm3_to_m3(v) -> float:
    """Decimal shift of a cm^3 value (correctly rounded, unlike v * 1e-6)."""
    return float(f"{float(v)!r}e-6")


def builtin_problems() -> list[ProblemDef]:
    return [
        ProblemDef(
            "P1", FlashSpec(-756500.8, cm3_to_m3(52869), [10.0, 90.0]), "C1-H2S",
            _expected(151.83, [104.12, 564.35], 875.45, 51366.638597, [9.664319, 54.315976],
                      -4847.824867, -4335.499558, _iters(9, 9, 10, 10, (9, 65), (9, 64))),
        ),
        ProblemDef(
            "P2", FlashSpec(-1511407.6, cm3_to_m3(4268.1), [0.95, 99.05]), "C1-H2S",
            _expected(291.91, [146.18, 736.58], 26722.0, 4165.674425, [0.930730, 98.941685],
                      -7391.709647, -7390.326837, _iters(4, 4, 4, 4, (4, 20), (4, 20))),
        ),
        ProblemDef(
            "P3", FlashSpec(-331083.7, cm3_to_m3(80258.1), [15.1, 84.9]), "C1-H2S",
            _expected(297.84, [188.14, 1057.84], 2.08e-12, 80256.537579, [15.099651, 84.862889],
                      -2613.988418, -2613.988023, _iters(4, 4, 4, 4, (4, 30), (5, 30))),
        ),
        ProblemDef(
            "P4", FlashSpec(-636468.0, cm3_to_m3(9926.71), [10.0, 90.0]), "C1-H2S",
            _expected(361.80, [1011.36, 10037.91], 0.467, 6414.415486, [6.448928, 56.394270],
                      -4579.403289, -4579.402679, _iters(7, 7, 8, 8, None, (15, 81))),
        ),
        ProblemDef(
            "P5", FlashSpec(-16272506.4, cm3_to_m3(479845), _N56), "C2-C5",
            _expected(122.97, [0.3294, 3.10, 0.9066, 0.3860, 0.2934, 0.0038], 35298.74, 401192.630291,
                      [4.242459, 68.231202, 24.419097, 18.531724, 13.887650, 0.325674],
                      -73640.643944, -54937.804163, _iters(10, 10, 10, 10, (10, 71), (10, 68))),
        ),
        ProblemDef(
            "P6", FlashSpec(24858.2, cm3_to_m3(289380.3), _N56), "C2-C5",
            _expected(394.54, [46.41, 1738.53, 718.79, 1261.59, 1304.69, 101.00], 16.10, 273150.189814,
                      [10.066498, 333.715455, 135.327702, 213.668936, 213.122442, 14.391459],
                      -9052.541673, -9052.420341, _iters(4, 5, 5, 5, (5, 60), (5, 60))),
        ),
        ProblemDef(
            "P-CO2", FlashSpec(-87211375.744478, 1.0, [10000.0]), "CO2",
            _expected(280.0, [19487.12], 4608.27, 481283.486064, [2818.038719],
                      -584388.23982, -583476.346351,
                      _iters(32, 117, 33, 117, (77, 964), (175, 987))),
        ),
    ]


def get_problem(name: str) -> ProblemDef:
    for p in builtin_problems():
        if p.id.lower() == name.lower():
            return p
    raise ConfigurationError(f"unknown problem {name!r}")


# ---------------------------------------------------------------------------
# problem files (JSON)

def problem_to_dict(problem: ProblemDef, db: dict | None = None) -> dict:
    mix = problem.mixture(db)
    out = {
        "id": problem.id,
        "u_J": float(problem.spec.total_u),
        "v_m3": float(problem.spec.total_v),
        "moles": {nm: float(v) for nm, v in zip(mix.names, problem.spec.total_moles)},
    }
    if isinstance(problem.mixture_ref, str):
        out["mixture"] = problem.mixture_ref
    if problem.spec.phases != 2:
        out["phases"] = problem.spec.phases
    return out


def problem_from_dict(d: dict) -> ProblemDef:
    try:
        u = float(d["u_J"])
        if "v_m3" in d:
            v = float(d["v_m3"])
        elif "v_cm3" in d:
            v = cm3_to_m3(d["v_cm3"])
        else:
            raise ConfigurationError("problem needs v_m3 or v_cm3")
        moles = d["moles"]
        if not isinstance(moles, dict) or not moles:
            raise ConfigurationError("moles must be a non-empty map name -> mol")
        spec = FlashSpec(u, v, [float(x) for x in moles.values()], int(d.get("phases", 2)))
    except KeyError as exc:
        raise ConfigurationError(f"problem file missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from None
    ref = d.get("mixture", list(moles.keys()))
    return ProblemDef(str(d.get("id", "file")), spec, ref)


def write_problem_file(problem: ProblemDef, path, db: dict | None = None) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem, db), indent=2) + "\n")


def read_problem_file(path) -> ProblemDef:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read problem file {path}: {exc}") from None
    return problem_from_dict(d)


def resolve_problem(name_or_path: str) -> ProblemDef:
    p = Path(name_or_path)
    if p.suffix == ".json" or p.exists():
        return read_problem_file(p)
    return get_problem(name_or_path)


def check_problem_mixture(problem: ProblemDef, mix: Mixture) -> None:
    """A problem file names its components; they must match the mixture order."""
    if not isinstance(problem.mixture_ref, str) and list(problem.mixture_ref) != mix.names:
        raise ConfigurationError("component order does not match the mixture")
    if problem.spec.n != mix.n:
        raise ConfigurationError(f"{problem.spec.n} mole numbers for {mix.n} components")


# ---------------------------------------------------------------------------
# comparisons

@dataclass
class Check:
    problem: str
    name: str
    value: float
    expected: float
    tol: float
    kind: str  # "abs", "rel" or "iter"
    source: str
    passed: bool

    def line(self) -> str:
        flag = "ok  " if self.passed else "FAIL"
        tol = f"+-{self.tol:g}" if self.kind != "rel" else f"{self.tol:.2%} rel"
        return (
            f"{flag} {self.problem:6s} {self.name:28s} got {self.value:<16.8g} "
            f"expected {self.expected:<16.8g} tol {tol} [{self.source}]"
        )


def _rel_ok(v, e, tol):
    return abs(v - e) <= tol * abs(e)


def iteration_tolerance(expected: int) -> int:
    return max(TOL_ITER_ABS, int(np.ceil(TOL_ITER_REL * expected)))


def nearest_trial(outcome: StabilityOutcome, conc) -> TrialPhase | None:
    """Converged trial (trivial included) closest in relative concentration."""
    c = np.asarray(conc, dtype=float)
    best, dist = None, np.inf
    for t in outcome.trials:
        if not t.converged:
            continue
        d = np.max(np.abs(t.conc - c) / np.maximum(np.abs(c), 1e-12))
        if d < dist:
            best, dist = t, d
    return best


def compare_stability(problem: ProblemDef, outcome: StabilityOutcome) -> list[Check]:
    exp = (problem.expected or {}).get("stability")
    if not exp:
        return []
    pid = problem.id
    checks = []
    T_e = exp["T"]
    checks.append(Check(pid, "stability T", outcome.reference_t, T_e.value, TOL_T, "abs", T_e.source,
                        abs(outcome.reference_t - T_e.value) <= TOL_T))
    trial = nearest_trial(outcome, exp["conc"].value)
    if trial is None:
        checks.append(Check(pid, "stability trial found", 0.0, 1.0, 0.0, "abs", exp["conc"].source, False))
        return checks
    for i, (v, e) in enumerate(zip(trial.conc, exp["conc"].value)):
        checks.append(Check(pid, f"trial c'[{i}]", float(v), e, TOL_REL, "rel", exp["conc"].source,
                            _rel_ok(v, e, TOL_REL)))
    D_e = exp["D"]
    if abs(D_e.value) < TOL_D_ZERO:
        checks.append(Check(pid, "trial D", trial.tpd, D_e.value, TOL_D_ZERO, "abs", D_e.source,
                            abs(trial.tpd) < TOL_D_ZERO))
    else:
        checks.append(Check(pid, "trial D", trial.tpd, D_e.value, TOL_D, "rel", D_e.source,
                            _rel_ok(trial.tpd, D_e.value, TOL_D)))
    return checks


def compare_flash(problem: ProblemDef, sol: FlashSolution) -> list[Check]:
    exp = (problem.expected or {}).get("flash")
    if not exp or sol.stable:
        return []
    pid = problem.id
    k = int(np.argmin(np.abs(sol.split.volumes - exp["V"].value)))
    checks = [Check(pid, "flash V [m3]", float(sol.split.volumes[k]), exp["V"].value, TOL_REL, "rel",
                    exp["V"].source, _rel_ok(sol.split.volumes[k], exp["V"].value, TOL_REL))]
    for i, (v, e) in enumerate(zip(sol.split.moles[k], exp["N"].value)):
        checks.append(Check(pid, f"flash N[{i}]", float(v), e, TOL_REL, "rel", exp["N"].source,
                            _rel_ok(v, e, TOL_REL)))
    g = exp["entropy_gap"]
    checks.append(Check(pid, "entropy gain S2 - S1", sol.entropy_gain, g.value, TOL_REL, "rel", g.source,
                        _rel_ok(sol.entropy_gain, g.value, TOL_REL)))
    return checks


def compare_iterations(problem: ProblemDef, formulation: str, globalization: str, outer, inner) -> list[Check]:
    exp = (problem.expected or {}).get("iterations", {}).get((formulation, globalization))
    if exp is None:
        return []
    name = f"{formulation}/{globalization} outer"
    if exp.value is None:  # published as a failure
        return [Check(problem.id, name + " (fails)", -1.0 if outer is None else float(outer), -1.0, 0.0,
                      "iter", exp.source, outer is None)]
    if formulation == "uvn":
        e_out, e_in = exp.value
    else:
        e_out, e_in = exp.value, 0
    if outer is None:
        return [Check(problem.id, name, -1.0, float(e_out), iteration_tolerance(e_out), "iter", exp.source, False)]
    checks = [Check(problem.id, name, float(outer), float(e_out), iteration_tolerance(e_out), "iter",
                    exp.source, abs(outer - e_out) <= iteration_tolerance(e_out))]
    if formulation == "uvn":
        checks.append(Check(problem.id, f"{formulation}/{globalization} inner", float(inner), float(e_in),
                            iteration_tolerance(e_in), "iter", exp.source,
                            abs(inner - e_in) <= iteration_tolerance(e_in)))
    return checks


# ---------------------------------------------------------------------------
# run matrix

@dataclass
class RunRecord:
    problem: str
    formulation: str
    globalization: str
    scaled: bool
    converged: bool
    outer_iterations: Optional[int] = None
    inner_iterations: Optional[int] = None
    mean_ms: Optional[float] = None
    repeats: int = 0
    temperature: Optional[float] = None
    entropy_gain: Optional[float] = None
    residuals_ok: Optional[bool] = None
    failure: Optional[str] = None

    @property
    def label(self) -> str:
        return self.formulation + ("-scaled" if self.scaled else "")


@dataclass
class ProblemReport:
    problem: str
    reference_t: float
    stable: bool
    best_tpd: Optional[float]
    best_conc: Optional[list]
    runs: list[RunRecord] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class BenchReport:
    problems: list[ProblemReport]
    rel_tol: float
    repeats: int

    @property
    def checks(self) -> list[Check]:
        return [c for p in self.problems for c in p.checks]

    @property
    def runs(self) -> list[RunRecord]:
        return [r for p in self.problems for r in p.runs]

    def run(self, problem, formulation, globalization, scaled=False) -> RunRecord | None:
        for r in self.runs:
            if (r.problem, r.formulation, r.globalization, r.scaled) == (problem, formulation, globalization, scaled):
                return r
        return None


def _matrix(formulations, globalizations, scaling):
    cells = []
    for form in formulations:
        for glob in globalizations:
            for scaled in (scaling if form == "uvn" else (False,)):
                cells.append((form, glob, scaled))
    return cells


def time_cells(mix, spec, cells: dict, outcome, initial, repeats: int) -> dict:
    """Mean solve time in ms per converging cell.

    Each cell gets one excluded warm-up solve; the timed repeats then go
    round-robin over the cells so that drifting machine load affects all
    of them alike.
    """
    total = {k: 0.0 for k in cells}
    for _ in range(repeats):
        for k, cfg in cells.items():
            total[k] += flash(mix, spec, cfg, outcome=outcome, initial=initial).wall_time
    return {k: 1e3 * v / repeats for k, v in total.items()}


def run_problem(
    problem: ProblemDef,
    *,
    formulations: Sequence[str] = ("scl", "acl", "uvn"),
    globalizations: Sequence[str] = GLOBALIZATIONS,
    scaling: Sequence[bool] = (False, True),
    rel_tol: float = BENCH_REL_TOL,
    repeats: int = DEFAULT_REPEATS,
    db: dict | None = None,
    check_tol: float = 1e-8,
) -> ProblemReport:
    mix = problem.mixture(db)
    check_problem_mixture(problem, mix)
    spec = problem.spec
    outcome = run_stability(mix, spec.stability_spec())
    best = outcome.best_trial
    rep = ProblemReport(
        problem.id, outcome.reference_t, outcome.is_stable,
        None if best is None else best.tpd, None if best is None else best.conc.tolist(),
    )
    rep.checks += compare_stability(problem, outcome)
    try:
        initial = initial_split(spec, outcome, mix)
    except InitialGuessError as exc:
        rep.error = str(exc)
        return rep

    # tabulated flash values are compared at a tight tolerance
    ref = flash(mix, spec, FlashConfig("scl", SolverConfig(rel_tol=check_tol)), outcome=outcome, initial=initial)
    rep.checks += compare_flash(problem, ref)

    for glob in globalizations:
        converged = {}
        for form, _, scaled in _matrix(formulations, (glob,), scaling):
            cfg = FlashConfig(form, SolverConfig(rel_tol=rel_tol, globalization=glob, scaling=scaled))
            rec = RunRecord(problem.id, form, glob, scaled, False)
            try:
                # doubles as the warm-up run
                sol = flash(mix, spec, cfg, outcome=outcome, initial=initial)
            except FlashConvergenceError as exc:
                rec.failure = str(exc)
            except (InfeasiblePointError, EOSDomainError, TemperatureSolveError, np.linalg.LinAlgError) as exc:
                rec.failure = f"{type(exc).__name__}: {exc}"
            else:
                rec.converged = True
                rec.outer_iterations = sol.outer_iterations
                rec.inner_iterations = sol.inner_iterations
                rec.temperature = sol.split.temperature
                rec.entropy_gain = sol.entropy_gain
                rec.residuals_ok = residuals_ok(sol.residuals, spec)
                converged[len(rep.runs)] = cfg
            rep.runs.append(rec)
            if not scaled:
                rep.checks += compare_iterations(problem, form, glob, rec.outer_iterations, rec.inner_iterations)
        if repeats > 0:
            for i, ms in time_cells(mix, spec, converged, outcome, initial, repeats).items():
                rep.runs[i].mean_ms = ms
                rep.runs[i].repeats = repeats
    return rep


def run_benchmark(
    selection: Iterable[str | ProblemDef] | None = None,
    *,
    formulations: Sequence[str] = ("scl", "acl", "uvn"),
    globalizations: Sequence[str] = GLOBALIZATIONS,
    scaling: Sequence[bool] = (False, True),
    rel_tol: float = BENCH_REL_TOL,
    repeats: int = DEFAULT_REPEATS,
    db: dict | None = None,
) -> BenchReport:
    """Run the (formulation x globalization x scaling) matrix over the selected problems.

    A nonconverging cell is recorded and the matrix continues.
    """
    probs = builtin_problems() if selection is None else [
        p if isinstance(p, ProblemDef) else resolve_problem(p) for p in selection
    ]
    reports = [
        run_problem(p, formulations=formulations, globalizations=globalizations, scaling=scaling,
                    rel_tol=rel_tol, repeats=repeats, db=db)
        for p in probs
    ]
    return BenchReport(reports, rel_tol, repeats)


# ---------------------------------------------------------------------------
# output

def _cell(r: RunRecord | None, what: str) -> str:
    if r is None:
        return "-"
    if not r.converged:
        return "x"
    if what == "iters":
        return f"{r.outer_iterations}" + (f"/{r.inner_iterations}" if r.formulation == "uvn" else "")
    return f"{r.mean_ms:.3f}" if r.mean_ms == r.mean_ms else "-"


def format_table(report: BenchReport) -> str:
    out = io.StringIO()
    labels = []
    for r in report.runs:
        key = (r.label, r.globalization)
        if key not in labels:
            labels.append(key)
    short = {"linesearch": "LS", "trustregion": "TR"}
    head = [f"{lab}/{short[g]}" for lab, g in labels]
    for what, title in (("iters", "outer[/inner] iterations"), ("ms", f"mean solve time [ms], {report.repeats} repeats")):
        out.write(f"\n{title}\n")
        out.write(f"{'problem':8s}" + "".join(f"{h:>18s}" for h in head) + "\n")
        for p in report.problems:
            row = [
                _cell(report.run(p.problem, lab.split("-")[0], g, lab.endswith("scaled")), what)
                for lab, g in labels
            ]
            out.write(f"{p.problem:8s}" + "".join(f"{c:>18s}" for c in row) + "\n")
    out.write("\nstability\n")
    for p in report.problems:
        verdict = "stable" if p.stable else "unstable"
        d = "-" if p.best_tpd is None else f"{p.best_tpd:.6g}"
        out.write(f"{p.problem:8s} T* = {p.reference_t:.4f} K  {verdict}  max D = {d} Pa/K\n")
        if p.error:
            out.write(f"{p.problem:8s} error: {p.error}\n")
    checks = report.checks
    if checks:
        out.write(f"\ncomparisons ({sum(c.passed for c in checks)}/{len(checks)} within tolerance)\n")
        for c in checks:
            out.write(c.line() + "\n")
    return out.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def report_to_dict(report: BenchReport) -> dict:
    return _jsonable({
        "rel_tol": report.rel_tol,
        "repeats": report.repeats,
        "problems": [asdict(p) for p in report.problems],
    })


def format_json(report: BenchReport) -> str:
    return json.dumps(report_to_dict(report), indent=2)


def format_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    cols = [f.name for f in RunRecord.__dataclass_fields__.values()]
    w = csv.DictWriter(buf, fieldnames=cols)
    w.writeheader()
    for r in report.runs:
        w.writerow(_jsonable(asdict(r)))
    return buf.getvalue()


def emit(report: BenchReport, fmt: str = "table") -> str:
    if fmt == "table":
        return format_table(report)
    if fmt == "json":
        return format_json(report)
    if fmt == "csv":
        return format_csv(report)
    raise ConfigurationError(f"unknown output format {fmt!r}")
