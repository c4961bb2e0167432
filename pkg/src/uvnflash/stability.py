"""Stability of a (U, V, N) state, tested at the temperature that the state implies.

Fixing T' = T* turns the test into a concentration-space (VTN) tangent-plane
problem: find c' with equal chemical potentials at T*, then evaluate the
tangent-plane distance D (Pa/K). D > 0 means the single phase is unstable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import eos
from .eos import EOSDomainError, Mixture, PropertyBundle, StateTVN

FEAS_EPS = 1e-9
RESIDUAL_TOL = 1e-10
MAX_ITER = 200
SS_SWEEPS = 5
MAX_HALVINGS = 40
TRIVIAL_TOL = 1e-5
D_TOL = 1e-8


@dataclass(frozen=True)
class StabilitySpec:
    total_u: float
    total_v: float
    total_moles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "total_moles", np.asarray(self.total_moles, dtype=float))
        if not self.total_v > 0:
            raise ValueError("total volume must be positive")
        if np.any(self.total_moles < 0) or not self.total_moles.sum() > 0:
            raise ValueError("mole numbers must be nonnegative with a positive total")

    @property
    def concentration(self) -> np.ndarray:
        return self.total_moles / self.total_v


@dataclass
class TrialPhase:
    conc: np.ndarray
    temperature: float
    energy_density: float = float("nan")
    tpd: float = float("nan")
    converged: bool = False
    iterations: int = 0
    trivial: bool = False
    residual_norm: float = float("inf")
    guess: np.ndarray | None = None
    method: str = "log-ss"


@dataclass
class StabilityOutcome:
    reference_t: float
    reference_props: PropertyBundle
    trials: list[TrialPhase]
    best: int | None
    is_stable: bool
    d_tol: float = D_TOL
    reference_conc: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def best_trial(self) -> TrialPhase | None:
        return None if self.best is None else self.trials[self.best]

    def classify(self, d_tol: float) -> bool:
        """Stability verdict under a different D threshold."""
        return not any(t.converged and not t.trivial and t.tpd > d_tol for t in self.trials)


def is_feasible(mix: Mixture, conc, eps: float = FEAS_EPS) -> bool:
    c = np.asarray(conc)
    return bool(np.all(c >= 0) and c @ mix.b < 1.0 - eps)


def simplex_guesses(mix: Mixture) -> list[np.ndarray]:
    """Barycenter of {c >= 0, sum c_i b_i <= 1} and its midpoints with each vertex."""
    n = mix.n
    vertices = [np.zeros(n)] + [np.eye(n)[i] / mix.b[i] for i in range(n)]
    center = sum(vertices) / (n + 1)
    return [center] + [0.5 * (center + v) for v in vertices]


def _mu_res_scaled(mix, T, c):
    mu, jac = eos.residual_chemical_potential(mix, T, 1.0, c)
    RT = mix.gas_constant * T
    return mu / RT, jac / RT


def tpd(mix: Mixture, T: float, ref_conc, trial_conc) -> float:
    """Tangent-plane distance with T' = T*:  D = (P' - P*)/T - sum (mu'_i - mu*_i) c'_i / T."""
    c = np.asarray(ref_conc, dtype=float)
    cp = np.asarray(trial_conc, dtype=float)
    if np.array_equal(c, cp):
        return 0.0
    RT = mix.gas_constant * T
    p_ref = eos.pressure(mix, StateTVN(T, 1.0, c))
    p_tr = eos.pressure(mix, StateTVN(T, 1.0, cp))
    mu_ref = eos.residual_chemical_potential(mix, T, 1.0, c)[0]
    mu_tr = eos.residual_chemical_potential(mix, T, 1.0, cp)[0]
    mask = cp > 0
    dmu = mu_tr - mu_ref
    dmu[mask] += RT * (np.log(cp[mask]) - np.log(c[mask]))
    return float((p_tr - p_ref) / T - (dmu[mask] @ cp[mask]) / T)


def c_collapsed(y, b) -> bool:
    """Trial phase has collapsed onto the empty phase."""
    return bool(np.exp(np.minimum(y, 700.0)) @ b < 1e-14)


def solve_trial_phase(
    mix: Mixture,
    T: float,
    ref_conc,
    guess,
    *,
    max_iter: int = MAX_ITER,
    ss_sweeps: int = SS_SWEEPS,
    space: str = "log",
) -> TrialPhase:
    """Solve ln c'_i + mu_res_i(c')/RT = ln c_i + mu_res_i(c)/RT.

    ``ss_sweeps`` successive-substitution sweeps, then Newton with the analytic
    Jacobian, taken in ln c' (``space="log"``) or in c' itself (``"linear"``).
    Steps are halved until the iterate stays in the feasible simplex.
    """
    if space not in ("log", "linear"):
        raise ValueError(f"unknown space {space!r}")
    c_ref = np.asarray(ref_conc, dtype=float)
    if np.any(c_ref <= 0):
        raise EOSDomainError("reference concentrations must be strictly positive")
    g0 = np.asarray(guess, dtype=float)
    if not is_feasible(mix, g0) or np.any(g0 <= 0):
        raise EOSDomainError("initial guess outside the admissible simplex")
    target = np.log(c_ref) + _mu_res_scaled(mix, T, c_ref)[0]
    y = np.log(g0)
    method = f"{space}-ss{ss_sweeps}" if ss_sweeps else f"{space}-newton"
    trial = TrialPhase(conc=g0.copy(), temperature=T, guess=g0.copy(), method=method)

    def resid(y):
        with np.errstate(over="ignore"):
            c = np.exp(y)
        m, jac = _mu_res_scaled(mix, T, c)
        return y + m - target, jac, c

    r, jac, c = resid(y)
    it = 0
    while it < max_iter:
        rn = float(np.max(np.abs(r)))
        if rn <= RESIDUAL_TOL:
            break
        it += 1
        if it <= ss_sweeps:
            step = -r  # y_new = target - mu_res(c)/RT
        else:
            try:
                if space == "log":
                    step = np.linalg.solve(np.eye(mix.n) + jac * c[None, :], -r)
                else:
                    dc = np.linalg.solve(np.diag(1.0 / c) + jac, -r)
            except np.linalg.LinAlgError:
                break
        lam = 1.0
        for _ in range(MAX_HALVINGS):
            if space == "log" or it <= ss_sweeps:
                y_try = y + lam * step
            else:
                c_try = c + lam * dc
                y_try = np.log(c_try) if np.all(c_try > 0) else None
            with np.errstate(over="ignore"):
                ok = y_try is not None and is_feasible(mix, np.exp(y_try))
            if ok:
                break
            lam *= 0.5
        else:
            break
        y = y_try
        if c_collapsed(y, mix.b):  # collapsed onto the empty phase
            break
        r, jac, c = resid(y)
    trial.iterations = it
    trial.conc = c
    trial.residual_norm = float(np.max(np.abs(r)))
    trial.converged = trial.residual_norm <= RESIDUAL_TOL
    if trial.converged:
        trial.trivial = bool(np.linalg.norm(c - c_ref) < TRIVIAL_TOL * np.linalg.norm(c_ref))
        trial.tpd = 0.0 if trial.trivial else tpd(mix, T, c_ref, c)
        trial.energy_density = eos.energy_and_cv(mix, T, 1.0, c)[0]
    return trial


# Each guess is solved along several paths. The equations have up to four
# roots at a fixed T, and which one a guess reaches depends on the iteration
# (substitution warm-up, Newton in ln c, Newton in c). Trying all of them makes
# the max-D search far less dependent on basin geometry.
SOLVE_PATHS = (
    {"space": "log", "ss_sweeps": SS_SWEEPS},
    {"space": "log", "ss_sweeps": 0},
    {"space": "linear", "ss_sweeps": 0},
)


def reference_temperature(mix: Mixture, spec: StabilitySpec, t_init: float | None = None) -> float:
    return eos.solve_temperature(mix, spec.total_u, spec.total_v, spec.total_moles, t_init)


def run_stability(
    mix: Mixture,
    spec: StabilitySpec,
    *,
    d_tol: float = D_TOL,
    t_init: float | None = None,
) -> StabilityOutcome:
    T = reference_temperature(mix, spec, t_init)
    c_ref = spec.concentration
    props = eos.properties(mix, StateTVN(T, spec.total_v, spec.total_moles))
    trials = [
        solve_trial_phase(mix, T, c_ref, g, **path)
        for g in simplex_guesses(mix)
        for path in SOLVE_PATHS
    ]
    best = None
    for i, t in enumerate(trials):
        if t.converged and not t.trivial and (best is None or t.tpd > trials[best].tpd):
            best = i
    is_stable = best is None or not trials[best].tpd > d_tol
    return StabilityOutcome(T, props, trials, best, is_stable, d_tol, c_ref)
