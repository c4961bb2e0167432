"""Command-line interface: ``uvnflash {stability,flash,bench}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, eos
from .bench import ConfigurationError
from .eos import EOSDomainError, TemperatureSolveError
from .flash import FlashConfig, FlashConvergenceError, FlashSolution, InitialGuessError, flash
from .solver import SolverConfig
from .stability import StabilityOutcome, run_stability

EXIT_OK = 0
EXIT_NONCONVERGENCE = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--components", help="component database (JSON)")
    p.add_argument("--output", choices=("table", "json", "csv"), default="table")
    p.add_argument("--out", help="write the report to this file instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uvnflash", description="UVN flash and stability calculations")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stability", help="stability test of the single-phase state")
    p.add_argument("problem", help="built-in problem id (P1..P6, P-CO2) or problem file")
    _common(p)

    p = sub.add_parser("flash", help="stability test followed by the phase split")
    p.add_argument("problem", help="built-in problem id (P1..P6, P-CO2) or problem file")
    p.add_argument("--formulation", choices=("uvn", "scl", "acl"), default="acl")
    p.add_argument("--globalization", choices=("linesearch", "trustregion"), default="linesearch")
    p.add_argument("--tol", type=float, default=1e-8, help="relative gradient tolerance")
    p.add_argument("--scale-uvn", action="store_true", help="scale UVN unknowns by the totals")
    p.add_argument("--force-split", action="store_true", help="split even if the state tests stable")
    _common(p)

    p = sub.add_parser("bench", help="run the benchmark matrix")
    p.add_argument("--problems", nargs="+", help="problem ids or files (default: all built-in)")
    p.add_argument("--tol", type=float, default=bench.BENCH_REL_TOL)
    p.add_argument("--repeats", type=int, default=bench.DEFAULT_REPEATS)
    _common(p)
    return parser


def _load(args):
    try:
        db = eos.load_database(args.components)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigurationError(f"cannot load component database: {exc}") from None
    return db


def _resolve(args, db):
    problem = bench.resolve_problem(args.problem)
    mix = problem.mixture(db)
    bench.check_problem_mixture(problem, mix)
    return problem, mix


# ---------------------------------------------------------------------------
# formatting

def stability_rows(outcome: StabilityOutcome, names) -> list[dict]:
    """Distinct converged stationary points, sorted by decreasing D."""
    rows, seen = [], []
    for t in sorted((t for t in outcome.trials if t.converged), key=lambda t: -t.tpd):
        if any(np.allclose(t.conc, c, rtol=1e-6) for c in seen):
            continue
        seen.append(t.conc)
        row = {"trivial": t.trivial, "D_Pa_per_K": t.tpd}
        row.update({f"c_{nm}_mol_m3": float(c) for nm, c in zip(names, t.conc)})
        rows.append(row)
    return rows


def format_stability(problem_id, outcome: StabilityOutcome, names, fmt: str) -> str:
    rows = stability_rows(outcome, names)
    summary = {
        "problem": problem_id,
        "T_K": outcome.reference_t,
        "stable": outcome.is_stable,
        "max_D_Pa_per_K": None if outcome.best_trial is None else outcome.best_trial.tpd,
        "stationary_points": rows,
    }
    if fmt == "json":
        return json.dumps(summary, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        if rows:
            w = csv.DictWriter(buf, fieldnames=["problem", "T_K", *rows[0].keys()])
            w.writeheader()
            for r in rows:
                w.writerow({"problem": problem_id, "T_K": outcome.reference_t, **r})
        return buf.getvalue()
    out = [
        f"problem {problem_id}: T* = {outcome.reference_t:.6f} K, "
        f"{'stable' if outcome.is_stable else 'unstable'}",
        f"{'D [Pa/K]':>16s}  " + "  ".join(f"{'c_' + nm:>14s}" for nm in names),
    ]
    for r in rows:
        conc = [r[f"c_{nm}_mol_m3"] for nm in names]
        tag = "  (trivial)" if r["trivial"] else ""
        out.append(f"{r['D_Pa_per_K']:16.8g}  " + "  ".join(f"{c:14.8g}" for c in conc) + tag)
    return "\n".join(out) + "\n"


def flash_summary(problem_id, sol: FlashSolution, names) -> dict:
    phases = []
    sp = sol.split
    for k in range(sp.p):
        ph = {"T_K": float(sp.temperatures[k]), "V_m3": float(sp.volumes[k]), "U_J": float(sp.energies[k])}
        ph.update({f"N_{nm}_mol": float(v) for nm, v in zip(names, sp.moles[k])})
        phases.append(ph)
    return {
        "problem": problem_id,
        "formulation": sol.formulation,
        "stable": sol.stable,
        "reference_T_K": sol.reference_t,
        "S_single_J_per_K": sol.s_single,
        "S_split_J_per_K": sol.s_two,
        "entropy_gain_J_per_K": sol.entropy_gain,
        "outer_iterations": sol.outer_iterations,
        "inner_iterations": sol.inner_iterations,
        "solve_time_ms": 1e3 * sol.wall_time,
        "residuals": sol.residuals,
        "phases": phases,
    }


def format_flash(problem_id, sol: FlashSolution, names, fmt: str) -> str:
    d = flash_summary(problem_id, sol, names)
    if fmt == "json":
        return json.dumps(d, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["problem", "phase", *d["phases"][0].keys()])
        w.writeheader()
        for k, ph in enumerate(d["phases"]):
            w.writerow({"problem": problem_id, "phase": k + 1, **ph})
        return buf.getvalue()
    out = [f"problem {problem_id} ({sol.formulation}): "
           + ("single phase is stable" if sol.stable else f"{sol.split.p} phases")]
    keys = list(d["phases"][0].keys())
    out.append(f"{'':14s}" + "".join(f"{'phase ' + str(k + 1):>20s}" for k in range(len(d["phases"]))))
    for key in keys:
        out.append(f"{key:14s}" + "".join(f"{ph[key]:20.10g}" for ph in d["phases"]))
    out.append(f"S single  {sol.s_single:.6f} J/K")
    out.append(f"S split   {sol.s_two:.6f} J/K  (gain {sol.entropy_gain:.6g})")
    out.append(f"iterations: outer {sol.outer_iterations}, inner {sol.inner_iterations}")
    return "\n".join(out) + "\n"


def _write(text: str, path) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands

def cmd_stability(args) -> int:
    db = _load(args)
    problem, mix = _resolve(args, db)
    outcome = run_stability(mix, problem.spec.stability_spec())
    _write(format_stability(problem.id, outcome, mix.names, args.output), args.out)
    return EXIT_OK


def cmd_flash(args) -> int:
    db = _load(args)
    problem, mix = _resolve(args, db)
    if not args.tol > 0:
        raise ConfigurationError("--tol must be positive")
    cfg = FlashConfig(
        args.formulation,
        SolverConfig(rel_tol=args.tol, globalization=args.globalization, scaling=args.scale_uvn),
        force_split=args.force_split,
    )
    try:
        sol = flash(mix, problem.spec, cfg)
    except (FlashConvergenceError, InitialGuessError) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    _write(format_flash(problem.id, sol, mix.names, args.output), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    db = _load(args)
    if args.repeats < 0:
        raise ConfigurationError("--repeats must be >= 0")
    if not args.tol > 0:
        raise ConfigurationError("--tol must be positive")
    selection = args.problems or None
    if selection:
        selection = [bench.resolve_problem(p) for p in selection]
    report = bench.run_benchmark(selection, rel_tol=args.tol, repeats=args.repeats, db=db)
    _write(bench.emit(report, args.output), args.out)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    handler = {"stability": cmd_stability, "flash": cmd_flash, "bench": cmd_bench}[args.command]
    try:
        return handler(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EOSDomainError, TemperatureSolveError) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
