"""Run the benchmark matrix and write table, JSON and CSV reports.

    python3 scripts/reproduce_tables.py --out results/ --repeats 100
"""
import argparse
from pathlib import Path

from uvnflash import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--repeats", type=int, default=bench.DEFAULT_REPEATS)
    ap.add_argument("--tol", type=float, default=bench.BENCH_REL_TOL)
    ap.add_argument("--problems", nargs="+", help="problem ids or files (default: all built-in)")
    args = ap.parse_args()

    report = bench.run_benchmark(args.problems, rel_tol=args.tol, repeats=args.repeats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fmt, ext in (("table", "txt"), ("json", "json"), ("csv", "csv")):
        (out / f"bench.{ext}").write_text(bench.emit(report, fmt))
    print(bench.emit(report, "table"))
    failed = [c for c in report.checks if not c.passed]
    print(f"{len(report.checks) - len(failed)}/{len(report.checks)} comparisons within tolerance; reports in {out}/")


if __name__ == "__main__":
    main()
