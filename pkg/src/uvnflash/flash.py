"""UVN phase split by entropy maximization.

Two formulations share the driver:

* ``uvn``: unknowns (N, V, U) per non-residual phase; every evaluation inverts
  the EOS for each phase temperature.
* ``scl`` / ``acl``: unknowns (V, N) per non-residual phase plus one shared T.
  The energy balance enters through the multiplier -1/T, giving
      L_SCL = sum S - (sum U - U*) / T
      L_ACL = (U* - sum A) / T
  which are equal as functions. Stationary points satisfy equal pressure,
  equal chemical potentials and sum U = U*.

The last phase is the residual phase: its V and N follow from the totals.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from . import eos
from .eos import EOSDomainError, Mixture, TemperatureSolveError
from .solver import SolverConfig, SolverResult, newton
from .stability import StabilityOutcome, StabilitySpec, run_stability

Formulation = Literal["uvn", "scl", "acl"]
FORMULATIONS = ("uvn", "scl", "acl")

MIN_VOLUME_FRACTION = 1e-8
MAX_SPLIT_HALVINGS = 64
# Inner EOS inversions inside the UVN loop are solved well below the default
# tolerance; otherwise the temperature error shows up as gradient noise.
UVN_INVERSION_RTOL = 1e-13


class InfeasiblePointError(ValueError):
    """A packed vector decodes to a phase outside the EOS domain."""

    def __init__(self, message, *, phase=None, bound=None):
        super().__init__(message)
        self.phase = phase
        self.bound = bound


class InitialGuessError(RuntimeError):
    """Algorithm 1 found no feasible split with an entropy gain."""


class FlashConvergenceError(RuntimeError):
    def __init__(self, message, *, result: SolverResult | None = None, solution=None):
        super().__init__(message)
        self.result = result
        self.solution = solution


@dataclass(frozen=True)
class FlashSpec:
    total_u: float
    total_v: float
    total_moles: np.ndarray
    phases: int = 2

    def __post_init__(self):
        object.__setattr__(self, "total_moles", np.asarray(self.total_moles, dtype=float))
        if self.phases < 2:
            raise ValueError("a phase split needs at least two phases")
        if not self.total_v > 0:
            raise ValueError("total volume must be positive")
        if np.any(self.total_moles < 0) or not self.total_moles.sum() > 0:
            raise ValueError("mole numbers must be nonnegative with a positive total")

    @property
    def n(self) -> int:
        return self.total_moles.size

    def stability_spec(self) -> StabilitySpec:
        return StabilitySpec(self.total_u, self.total_v, self.total_moles)


@dataclass
class PhaseSplit:
    """Per-phase states; the last phase is the residual phase."""

    temperatures: np.ndarray
    volumes: np.ndarray
    moles: np.ndarray
    energies: np.ndarray

    @property
    def p(self) -> int:
        return self.volumes.size

    @property
    def temperature(self) -> float:
        """Shared temperature (TVN) or the residual-phase temperature (UVN)."""
        return float(self.temperatures[-1])


@dataclass
class FlashSolution:
    split: PhaseSplit
    s_single: float
    s_two: float
    residuals: dict
    outer_iterations: int
    inner_iterations: int
    wall_time: float
    formulation: str
    reference_t: float
    stable: bool = False
    solver: Optional[SolverResult] = None
    stability: Optional[StabilityOutcome] = None
    initial: Optional[PhaseSplit] = None

    @property
    def entropy_gain(self) -> float:
        return self.s_two - self.s_single


@dataclass(frozen=True)
class FlashConfig:
    formulation: Formulation = "acl"
    solver: SolverConfig = field(default_factory=SolverConfig)
    force_split: bool = False
    d_tol: float = 1e-8
    residual_tol: float = 1e-6

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"unknown formulation {self.formulation!r}")


# ---------------------------------------------------------------------------
# packing

def _tvn_layout(n: int, p: int):
    m = (p - 1) * (n + 1) + 1
    maps = []
    for k in range(p - 1):
        M = np.zeros((n + 2, m))
        o = k * (n + 1)
        M[0, m - 1] = 1.0
        M[1, o] = 1.0
        M[2:, o + 1 : o + 1 + n] = np.eye(n)
        maps.append(M)
    R = np.zeros((n + 2, m))
    R[0, m - 1] = 1.0
    for M in maps:
        R[1:] -= M[1:]
    maps.append(R)
    return m, maps


def _uvn_layout(n: int, p: int):
    m = (p - 1) * (n + 2)
    maps = []
    for k in range(p - 1):
        M = np.zeros((n + 2, m))
        o = k * (n + 2)
        M[0, o + n + 1] = 1.0  # U
        M[1, o + n] = 1.0  # V
        M[2:, o : o + n] = np.eye(n)  # N
        maps.append(M)
    R = -sum(maps)
    maps.append(R)
    return m, maps


def encode(split: PhaseSplit, formulation: Formulation) -> np.ndarray:
    parts = []
    for k in range(split.p - 1):
        if formulation == "uvn":
            parts += [split.moles[k], [split.volumes[k], split.energies[k]]]
        else:
            parts += [[split.volumes[k]], split.moles[k]]
    if formulation != "uvn":
        parts.append([split.temperature])
    return np.concatenate([np.asarray(q, dtype=float) for q in parts])


def _unpack(x, spec: FlashSpec, formulation):
    n, p = spec.n, spec.phases
    x = np.asarray(x, dtype=float)
    V = np.empty(p)
    N = np.empty((p, n))
    U = np.full(p, np.nan)
    T = None
    if formulation == "uvn":
        if x.size != (p - 1) * (n + 2):
            raise ValueError(f"expected {(p - 1) * (n + 2)} unknowns, got {x.size}")
        blocks = x.reshape(p - 1, n + 2)
        N[:-1], V[:-1], U[:-1] = blocks[:, :n], blocks[:, n], blocks[:, n + 1]
        U[-1] = spec.total_u - U[:-1].sum()
    else:
        if x.size != (p - 1) * (n + 1) + 1:
            raise ValueError(f"expected {(p - 1) * (n + 1) + 1} unknowns, got {x.size}")
        blocks = x[:-1].reshape(p - 1, n + 1)
        V[:-1], N[:-1] = blocks[:, 0], blocks[:, 1:]
        T = float(x[-1])
    V[-1] = spec.total_v - V[:-1].sum()
    N[-1] = spec.total_moles - N[:-1].sum(axis=0)
    return T, V, N, U


def _check_phases(mix: Mixture, V, N, T=None):
    if T is not None and not T > 0:
        raise InfeasiblePointError(f"temperature {T} is not positive", bound="T>0")
    for k in range(V.size):
        if not np.all(N[k] > 0):
            raise InfeasiblePointError(f"phase {k} has a non-positive mole number", phase=k, bound="N>0")
        B = N[k] @ mix.b
        if not V[k] > B:
            raise InfeasiblePointError(f"phase {k} volume below its covolume", phase=k, bound="V>Nb")


def decode(x, spec: FlashSpec, mix: Mixture, formulation: Formulation = "acl", t_init=None) -> PhaseSplit:
    """Unpack x, rebuild the residual phase, and fill in T and U for every phase."""
    T, V, N, U = _unpack(x, spec, formulation)
    _check_phases(mix, V, N, T)
    p = spec.phases
    if formulation == "uvn":
        temps = np.empty(p)
        for k in range(p):
            guess = None if t_init is None else t_init[k]
            try:
                temps[k] = eos.solve_temperature(mix, U[k], V[k], N[k], guess)
            except TemperatureSolveError as exc:
                raise InfeasiblePointError(f"phase {k}: {exc}", phase=k, bound="U range") from exc
    else:
        temps = np.full(p, T)
        U = np.array([eos.energy_and_cv(mix, T, V[k], N[k])[0] for k in range(p)])
    return PhaseSplit(temps, V, N, U)


# ---------------------------------------------------------------------------
# formulations

class TVNProblem:
    """Lagrangian in x = (V_1, N_1, ..., V_{p-1}, N_{p-1}, T)."""

    def __init__(self, mix: Mixture, spec: FlashSpec, form: Literal["scl", "acl"] = "acl"):
        if form not in ("scl", "acl"):
            raise ValueError(f"TVN form must be 'scl' or 'acl', got {form!r}")
        self.mix, self.spec, self.form = mix, spec, form
        self.m, self.maps = _tvn_layout(spec.n, spec.phases)
        self.inner_iterations = 0
        self._key = None
        self._cache = None

    def states(self, x):
        T, V, N, _ = _unpack(x, self.spec, "tvn")
        _check_phases(self.mix, V, N, T)
        return T, V, N

    def feasible(self, x) -> bool:
        try:
            self.states(x)
        except (InfeasiblePointError, EOSDomainError):
            return False
        return True

    def value(self, x) -> float:
        T, V, N = self.states(x)
        mix, U_star = self.mix, self.spec.total_u
        if self.form == "acl":
            A = sum(eos.helmholtz_value(mix, T, V[k], N[k]) for k in range(V.size))
            return (U_star - A) / T
        S = sum(eos.entropy_value(mix, T, V[k], N[k]) for k in range(V.size))
        U = sum(eos.energy_and_cv(mix, T, V[k], N[k])[0] for k in range(V.size))
        return S - (U - U_star) / T

    def constraint(self, x) -> float:
        T, V, N = self.states(x)
        return sum(eos.energy_and_cv(self.mix, T, V[k], N[k])[0] for k in range(V.size)) - self.spec.total_u

    def _evaluate(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        if key == self._key:
            return self._cache
        T, V, N = self.states(x)
        mix, U_star, m = self.mix, self.spec.total_u, self.m
        iT = m - 1
        if self.form == "acl":
            psi, psi_g, psi_H = 0.0, np.zeros(m), np.zeros((m, m))
            for k, M in enumerate(self.maps):
                a, ga, Ha = eos.helmholtz_derivatives(mix, T, V[k], N[k])
                psi += a
                psi_g += M.T @ ga
                psi_H += M.T @ Ha @ M
            rest = U_star - psi
            g = -psi_g / T
            g[iT] -= rest / T**2
            H = -psi_H / T
            H[iT, :] += psi_g / T**2
            H[:, iT] += psi_g / T**2
            H[iT, iT] += 2.0 * rest / T**3
            val = rest / T
        else:
            S, S_g, S_H = 0.0, np.zeros(m), np.zeros((m, m))
            U, U_g, U_H = 0.0, np.zeros(m), np.zeros((m, m))
            for k, M in enumerate(self.maps):
                (s, gs, Hs), (u, gu, Hu) = eos.entropy_energy_derivatives(mix, T, V[k], N[k])
                S += s
                S_g += M.T @ gs
                S_H += M.T @ Hs @ M
                U += u
                U_g += M.T @ gu
                U_H += M.T @ Hu @ M
            C = U - U_star
            g = S_g - U_g / T
            g[iT] += C / T**2
            H = S_H - U_H / T
            H[iT, :] += U_g / T**2
            H[:, iT] += U_g / T**2
            H[iT, iT] -= 2.0 * C / T**3
            val = S - C / T
        self._key, self._cache = key, (val, g, H)
        return self._cache

    def gradient(self, x) -> np.ndarray:
        return self._evaluate(x)[1].copy()

    def hessian(self, x) -> np.ndarray:
        return self._evaluate(x)[2].copy()

    def x0(self, split: PhaseSplit) -> np.ndarray:
        return encode(split, "tvn")

    def decode(self, x) -> PhaseSplit:
        return decode(x, self.spec, self.mix, "tvn")


class UVNProblem:
    """Reduced entropy S_red in x = (N_1, V_1, U_1, ..., N_{p-1}, V_{p-1}, U_{p-1}).

    With ``scale`` the unknowns are divided by (N*, V*, |U*|), so the solver
    sees y = x / s; gradient and Hessian transform as s*g and s H s.
    """

    def __init__(self, mix: Mixture, spec: FlashSpec, scale: bool = False):
        self.mix, self.spec = mix, spec
        self.m, self.maps = _uvn_layout(spec.n, spec.phases)
        n = spec.n
        block = np.concatenate([spec.total_moles, [spec.total_v, abs(spec.total_u) or 1.0]])
        self.s = np.tile(block, spec.phases - 1) if scale else np.ones(self.m)
        self.s[self.s == 0] = 1.0
        self.inner_iterations = 0
        self._temps = None
        self._key = None
        self._cache = None

    def _x(self, y):
        return np.asarray(y, dtype=float) * self.s

    def states(self, y):
        """Unpack and invert every phase; returns (T, V, N, U) arrays."""
        _, V, N, U = _unpack(self._x(y), self.spec, "uvn")
        _check_phases(self.mix, V, N)
        T = np.empty(V.size)
        for k in range(V.size):
            guess = None if self._temps is None else self._temps[k]
            try:
                T[k], it = eos.solve_temperature(
                    self.mix, U[k], V[k], N[k], guess, return_iterations=True,
                    atol=max(UVN_INVERSION_RTOL * abs(U[k]), 1e-9),
                )
            except TemperatureSolveError as exc:
                raise InfeasiblePointError(f"phase {k}: {exc}", phase=k, bound="U range") from exc
            self.inner_iterations += it
        self._temps = T.copy()
        return T, V, N, U

    def _evaluate(self, y):
        key = np.asarray(y, dtype=float).tobytes()
        if key == self._key:
            return self._cache
        T, V, N, U = self.states(y)
        m = self.m
        val, g, H = 0.0, np.zeros(m), np.zeros((m, m))
        n = self.spec.n
        for k, M in enumerate(self.maps):
            Tk = T[k]
            a, ga, Ha = eos.helmholtz_derivatives(self.mix, Tk, V[k], N[k])
            S = -ga[0]
            Cv = -Tk * Ha[0, 0]
            # U_y = A_y - T A_Ty over y = (V, N)
            U_y = ga[1:] - Tk * Ha[0, 1:]
            gw = np.empty(n + 2)
            gw[0] = 1.0 / Tk
            gw[1:] = -ga[1:] / Tk
            q = np.concatenate([[-1.0], U_y])
            Hw = -np.outer(q, q) / (Cv * Tk**2)
            Hw[1:, 1:] -= Ha[1:, 1:] / Tk
            val += S
            g += M.T @ gw
            H += M.T @ Hw @ M
        g = g * self.s
        H = H * np.outer(self.s, self.s)
        self._key, self._cache = key, (val, g, H)
        return self._cache

    def feasible(self, y) -> bool:
        try:
            self._evaluate(y)
        except (InfeasiblePointError, EOSDomainError):
            return False
        return True

    def value(self, y) -> float:
        return self._evaluate(y)[0]

    def gradient(self, y) -> np.ndarray:
        return self._evaluate(y)[1].copy()

    def hessian(self, y) -> np.ndarray:
        return self._evaluate(y)[2].copy()

    def x0(self, split: PhaseSplit) -> np.ndarray:
        return encode(split, "uvn") / self.s

    def decode(self, y) -> PhaseSplit:
        T, V, N, U = self.states(y)
        return PhaseSplit(T, V, N, U)


def make_problem(mix: Mixture, spec: FlashSpec, formulation: Formulation, scale_uvn: bool = False):
    if formulation == "uvn":
        return UVNProblem(mix, spec, scale=scale_uvn)
    return TVNProblem(mix, spec, formulation)


# functional wrappers -------------------------------------------------------

def objective_uvn(x, spec: FlashSpec, mix: Mixture) -> float:
    return UVNProblem(mix, spec).value(x)


def constraint(x, spec: FlashSpec, mix: Mixture) -> float:
    return TVNProblem(mix, spec).constraint(x)


def lagrangian(x, spec: FlashSpec, mix: Mixture, form: Literal["scl", "acl"] = "acl") -> float:
    return TVNProblem(mix, spec, form).value(x)


def gradient(x, spec: FlashSpec, mix: Mixture, form: Formulation = "acl") -> np.ndarray:
    return make_problem(mix, spec, form).gradient(x)


def hessian(x, spec: FlashSpec, mix: Mixture, form: Formulation = "acl") -> np.ndarray:
    return make_problem(mix, spec, form).hessian(x)


# ---------------------------------------------------------------------------
# initial guess (Algorithm 1)

def single_phase_entropy(mix: Mixture, spec: FlashSpec, T: float) -> float:
    return eos.entropy_value(mix, T, spec.total_v, spec.total_moles)


def initial_split(spec: FlashSpec, outcome: StabilityOutcome, mix: Mixture, *, trial=None) -> PhaseSplit:
    """Place a trial-phase bubble of volume V* / 2^k and keep halving until the
    split is feasible and raises the entropy."""
    trial = outcome.best_trial if trial is None else trial
    if trial is None or not trial.converged:
        raise InitialGuessError("no converged trial phase to seed the split")
    if spec.phases != 2:
        raise NotImplementedError("initial split generation covers two phases")
    T_star = outcome.reference_t
    s_star = single_phase_entropy(mix, spec, T_star)
    c, u = trial.conc, trial.energy_density
    V1 = 0.5 * spec.total_v
    halvings = 0
    while V1 / spec.total_v >= MIN_VOLUME_FRACTION and halvings < MAX_SPLIT_HALVINGS:
        N1 = V1 * c
        U1 = u * V1
        V2 = spec.total_v - V1
        N2 = spec.total_moles - N1
        U2 = spec.total_u - U1
        try:
            _check_phases(mix, np.array([V1, V2]), np.vstack([N1, N2]))
            T1 = eos.solve_temperature(mix, U1, V1, N1, T_star)
            T2 = eos.solve_temperature(mix, U2, V2, N2, T_star)
            gain = (
                eos.entropy_value(mix, T1, V1, N1)
                + eos.entropy_value(mix, T2, V2, N2)
                - s_star
            )
        except (InfeasiblePointError, EOSDomainError, TemperatureSolveError):
            gain = -np.inf
        if gain > 0:
            return PhaseSplit(
                np.array([T1, T2]), np.array([V1, V2]), np.vstack([N1, N2]), np.array([U1, U2])
            )
        V1 *= 0.5
        halvings += 1
    raise InitialGuessError("No feasible solution found")


def _tvn_split_from(split: PhaseSplit, mix: Mixture) -> PhaseSplit:
    # TVN starts at the residual (majority) phase temperature
    T = split.temperature
    U = np.array([eos.energy_and_cv(mix, T, v, nk)[0] for v, nk in zip(split.volumes, split.moles)])
    return PhaseSplit(np.full(split.p, T), split.volumes.copy(), split.moles.copy(), U)


# ---------------------------------------------------------------------------
# driver

def equilibrium_residuals(mix: Mixture, split: PhaseSplit, spec: FlashSpec) -> dict:
    props = [
        eos.properties(mix, eos.StateTVN(T, V, N))
        for T, V, N in zip(split.temperatures, split.volumes, split.moles)
    ]
    P = np.array([b.pressure for b in props])
    mu = np.array([b.chem_potential for b in props])
    U = sum(b.internal_energy for b in props)
    return {
        "dT": float(np.ptp(split.temperatures)),
        "dP": float(np.ptp(P)),
        "P": float(np.max(np.abs(P))),
        "dmu": float(np.max(np.ptp(mu, axis=0))),
        "mu": float(np.max(np.abs(mu))),
        "C": float(U - spec.total_u),
    }


def residuals_ok(res: dict, spec: FlashSpec, tol: float = 1e-6) -> bool:
    return (
        res["dP"] <= tol * max(res["P"], 1.0)
        and res["dmu"] <= tol * res["mu"]
        and abs(res["C"]) <= tol * abs(spec.total_u)
        and res["dT"] <= tol * 1.0
    )


def flash(
    mix: Mixture,
    spec: FlashSpec,
    config: FlashConfig | None = None,
    *,
    outcome: StabilityOutcome | None = None,
    initial: PhaseSplit | None = None,
) -> FlashSolution:
    """Stability test, initial split, Newton solve and verification.

    ``wall_time`` covers the Newton solve only (problem setup and iteration).
    """
    cfg = FlashConfig() if config is None else config
    if outcome is None:
        outcome = run_stability(mix, spec.stability_spec(), d_tol=cfg.d_tol)
    T_star = outcome.reference_t
    s_single = single_phase_entropy(mix, spec, T_star)

    if outcome.is_stable and not cfg.force_split and initial is None:
        split = PhaseSplit(
            np.array([T_star]), np.array([spec.total_v]), spec.total_moles[None, :].copy(),
            np.array([spec.total_u]),
        )
        return FlashSolution(
            split, s_single, s_single, {"dT": 0.0, "dP": 0.0, "P": 0.0, "dmu": 0.0, "mu": 0.0, "C": 0.0},
            0, 0, 0.0, cfg.formulation, T_star, stable=True, stability=outcome,
        )

    if initial is None:
        initial = initial_split(spec, outcome, mix)
    t0 = time.perf_counter()
    problem = make_problem(mix, spec, cfg.formulation, cfg.solver.scaling)
    start = initial if cfg.formulation == "uvn" else _tvn_split_from(initial, mix)
    if cfg.formulation == "uvn":
        problem._temps = initial.temperatures.copy()
    x0 = problem.x0(start)
    result = newton(problem.gradient, problem.hessian, problem.feasible, x0, cfg.solver)
    wall = time.perf_counter() - t0
    inner = problem.inner_iterations
    if not result.converged:
        raise FlashConvergenceError(
            f"{cfg.formulation} solve did not converge: {result.failure_reason}", result=result
        )
    split = problem.decode(result.x_final)
    s_two = sum(
        eos.entropy_value(mix, T, V, N) for T, V, N in zip(split.temperatures, split.volumes, split.moles)
    )
    res = equilibrium_residuals(mix, split, spec)
    sol = FlashSolution(
        split, s_single, s_two, res, result.outer_iterations, inner, wall, cfg.formulation, T_star,
        solver=result, stability=outcome, initial=initial,
    )
    return sol
