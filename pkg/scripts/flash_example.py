"""Stability test and UVN flash of a methane/hydrogen sulfide mixture.

    python3 scripts/flash_example.py
"""
import numpy as np

from uvnflash import eos
from uvnflash.flash import FlashConfig, FlashSpec, flash
from uvnflash.solver import SolverConfig
from uvnflash.stability import run_stability


def main():
    mix = eos.mixture_from_database(eos.load_database(), "C1-H2S")
    spec = FlashSpec(total_u=-1511407.6, total_v=4268.1e-6, total_moles=[0.95, 99.05])

    outcome = run_stability(mix, spec.stability_spec())
    best = outcome.best_trial
    print(f"T* = {outcome.reference_t:.4f} K, stable: {outcome.is_stable}")
    print(f"best trial c' = {np.round(best.conc, 4)} mol/m3, D = {best.tpd:.4f} Pa/K")

    for form in ("acl", "scl", "uvn"):
        sol = flash(mix, spec, FlashConfig(form, SolverConfig(rel_tol=1e-8)), outcome=outcome)
        sp = sol.split
        print(f"\n{form}: {sol.outer_iterations} outer / {sol.inner_iterations} inner iterations, "
              f"{1e3 * sol.wall_time:.2f} ms")
        for k in range(sp.p):
            print(f"  phase {k + 1}: T = {sp.temperatures[k]:.6f} K, V = {sp.volumes[k]:.6e} m3, "
                  f"N = {np.round(sp.moles[k], 6)} mol")
        print(f"  S gain = {sol.entropy_gain:.6f} J/K")


if __name__ == "__main__":
    main()
