"""Peng-Robinson equation of state written as a Helmholtz function of (T, V, N).

All quantities are SI: K, m^3, mol, Pa, J. Derivative arrays returned by the
``*_derivatives`` engines are ordered ``z = (T, V, N_1, ..., N_n)``.

The attraction term is handled through ``D(T, N) = sum_ij N_i N_j a_ij(T)``
(``= N^2 a``) and the covolume through ``B(N) = sum_i N_i b_i`` (``= N b``),
which keeps every mixing-rule derivative polynomial in N.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

GAS_CONSTANT = 8.31446261815324
OMEGA_A = 0.45724
OMEGA_B = 0.0778
SQRT2 = math.sqrt(2.0)
DELTA1 = 1.0 + SQRT2
DELTA2 = 1.0 - SQRT2

T_BRACKET = (10.0, 2000.0)

DATA_DIR = Path(__file__).parent / "data"
DEFAULT_DATABASE = DATA_DIR / "components.json"


class EOSDomainError(ValueError):
    """State outside the physical branch of the EOS (covolume, log argument, T <= 0)."""


class TemperatureSolveError(RuntimeError):
    """U(T, V, N) = U_target has no root in the search bracket."""

    def __init__(self, message, *, target_u=None, bracket=None, u_bracket=None):
        super().__init__(message)
        self.target_u = target_u
        self.bracket = bracket
        self.u_bracket = u_bracket


@dataclass(frozen=True)
class Component:
    name: str
    t_crit: float
    p_crit: float
    acentric: float
    cp_coeffs: tuple[float, float, float, float]
    u0: float = 0.0

    def __post_init__(self):
        if not (self.t_crit > 0 and self.p_crit > 0):
            raise ValueError(f"{self.name}: critical temperature and pressure must be positive")
        if len(self.cp_coeffs) != 4:
            raise ValueError(f"{self.name}: cp_coeffs needs exactly 4 coefficients")
        object.__setattr__(self, "cp_coeffs", tuple(float(c) for c in self.cp_coeffs))

    @property
    def m(self) -> float:
        w = self.acentric
        if w < 0.5:
            return 0.37464 + 1.54226 * w - 0.26992 * w**2
        return 0.3796 + 1.485 * w - 0.1644 * w**2 + 0.01667 * w**3

    def covolume(self, gas_constant: float = GAS_CONSTANT) -> float:
        return OMEGA_B * gas_constant * self.t_crit / self.p_crit

    def attraction_crit(self, gas_constant: float = GAS_CONSTANT) -> float:
        return OMEGA_A * (gas_constant * self.t_crit) ** 2 / self.p_crit


@dataclass(frozen=True)
class Mixture:
    """Immutable set of components plus mixture-level constants.

    ``kij`` is a binary interaction matrix (symmetric, zero diagonal);
    ``a_ij = (1 - k_ij) sqrt(a_i a_j)``.
    """

    components: tuple[Component, ...]
    kij: np.ndarray | None = None
    t_ref: float = 298.15
    p_ref: float = 101325.0
    gas_constant: float = GAS_CONSTANT

    # cached arrays
    b: np.ndarray = field(init=False, repr=False, compare=False)
    ac: np.ndarray = field(init=False, repr=False, compare=False)
    m: np.ndarray = field(init=False, repr=False, compare=False)
    tc: np.ndarray = field(init=False, repr=False, compare=False)
    cp: np.ndarray = field(init=False, repr=False, compare=False)
    u0: np.ndarray = field(init=False, repr=False, compare=False)
    k_mat: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise ValueError("a mixture needs at least one component")
        n = len(comps)
        kij = np.zeros((n, n)) if self.kij is None else np.array(self.kij, dtype=float)
        if kij.shape != (n, n):
            raise ValueError(f"kij must be {n}x{n}, got {kij.shape}")
        if not np.allclose(kij, kij.T, rtol=0, atol=1e-14):
            raise ValueError("kij must be symmetric")
        if np.any(np.diag(kij) != 0.0):
            raise ValueError("kij must have a zero diagonal")
        kij.setflags(write=False)
        R = self.gas_constant
        sets = {
            "components": comps,
            "kij": kij,
            "b": np.array([c.covolume(R) for c in comps]),
            "ac": np.array([c.attraction_crit(R) for c in comps]),
            "m": np.array([c.m for c in comps]),
            "tc": np.array([c.t_crit for c in comps]),
            "cp": np.array([c.cp_coeffs for c in comps]),
            "u0": np.array([c.u0 for c in comps]),
            "k_mat": 1.0 - kij,
        }
        for key, val in sets.items():
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, key, val)
        if np.any(self.b <= 0):
            raise ValueError("covolumes must be positive")

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.components]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def subset(self, names: Sequence[str]) -> "Mixture":
        idx = [self.index(nm) for nm in names]
        return Mixture(
            tuple(self.components[i] for i in idx),
            self.kij[np.ix_(idx, idx)],
            t_ref=self.t_ref,
            p_ref=self.p_ref,
            gas_constant=self.gas_constant,
        )

    def with_reference(self, *, t_ref=None, p_ref=None, u0_shift=None) -> "Mixture":
        comps = self.components
        if u0_shift is not None:
            shift = np.broadcast_to(np.asarray(u0_shift, dtype=float), (self.n,))
            comps = tuple(
                Component(c.name, c.t_crit, c.p_crit, c.acentric, c.cp_coeffs, c.u0 + float(s))
                for c, s in zip(comps, shift)
            )
        return Mixture(
            comps,
            self.kij,
            t_ref=self.t_ref if t_ref is None else t_ref,
            p_ref=self.p_ref if p_ref is None else p_ref,
            gas_constant=self.gas_constant,
        )


@dataclass(frozen=True)
class StateTVN:
    temperature: float
    volume: float
    moles: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "moles", np.asarray(self.moles, dtype=float))


@dataclass(frozen=True)
class PropertyBundle:
    pressure: float
    internal_energy: float
    entropy: float
    helmholtz: float
    heat_capacity_v: float
    chem_potential: np.ndarray
    dmu_dT: np.ndarray
    dp_dT: float


# ---------------------------------------------------------------------------
# database

def load_database(path=None) -> dict:
    """Read the component database (JSON) into ``{"components": {...}, "mixtures": {...}}``."""
    path = DEFAULT_DATABASE if path is None else Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    comps = {}
    for entry in raw["components"]:
        comps[entry["name"]] = Component(
            name=entry["name"],
            t_crit=float(entry["t_crit_K"]),
            p_crit=float(entry["p_crit_Pa"]),
            acentric=float(entry["acentric"]),
            cp_coeffs=tuple(entry["cp_coeffs"]),
            u0=float(entry.get("u0_J_per_mol", 0.0)),
        )
    return {"components": comps, "mixtures": raw.get("mixtures", {}), "raw": raw}


def mixture_from_database(db: dict, key_or_names, *, kij=None, t_ref=None, p_ref=None) -> Mixture:
    """Build a Mixture either from a named mixture entry or from a list of component names."""
    if isinstance(key_or_names, str):
        entry = db["mixtures"][key_or_names]
        names = entry["components"]
        kij = entry.get("kij") if kij is None else kij
        t_ref = entry.get("t_ref_K", 298.15) if t_ref is None else t_ref
        p_ref = entry.get("p_ref_Pa", 101325.0) if p_ref is None else p_ref
    else:
        names = list(key_or_names)
    try:
        comps = tuple(db["components"][nm] for nm in names)
    except KeyError as exc:
        raise KeyError(f"component {exc.args[0]!r} missing from database") from None
    return Mixture(
        comps,
        None if kij is None else np.asarray(kij, dtype=float),
        t_ref=298.15 if t_ref is None else float(t_ref),
        p_ref=101325.0 if p_ref is None else float(p_ref),
    )


def mixture_to_dict(mix: Mixture) -> dict:
    return {
        "components": [
            {
                "name": c.name,
                "t_crit_K": c.t_crit,
                "p_crit_Pa": c.p_crit,
                "acentric": c.acentric,
                "cp_coeffs": list(c.cp_coeffs),
                "u0_J_per_mol": c.u0,
            }
            for c in mix.components
        ],
        "kij": mix.kij.tolist(),
        "t_ref_K": mix.t_ref,
        "p_ref_Pa": mix.p_ref,
    }


# ---------------------------------------------------------------------------
# building blocks

def _sqrt_a(mix: Mixture, T: float, order: int = 3):
    """sqrt(a_i(T)) and its first `order` T-derivatives.

    sqrt(a_i) = sqrt(ac_i) (1 + m_i (1 - sqrt(T/Tc_i))) is affine in sqrt(T); the signed
    form is the analytic continuation past the (T_r > 10) zero of the bracket.
    """
    k = np.sqrt(mix.ac)
    km = k * mix.m / np.sqrt(mix.tc)
    st = math.sqrt(T)
    out = [k * (1.0 + mix.m) - km * st]
    if order >= 1:
        out.append(-0.5 * km / st)
    if order >= 2:
        out.append(0.25 * km / (st * T))
    if order >= 3:
        out.append(-0.375 * km / (st * T * T))
    return out


def mixture_params(mix: Mixture, moles, T: float) -> dict:
    """Mixture attraction a(T), its first two T-derivatives, and covolume b (molar)."""
    N = np.asarray(moles, dtype=float)
    Ntot = N.sum()
    if not Ntot > 0:
        raise EOSDomainError("mole vector must contain at least one positive entry")
    if T <= 0:
        raise EOSDomainError(f"temperature must be positive, got {T}")
    x = N / Ntot
    al = _sqrt_a(mix, T, 2)
    K = mix.k_mat
    y0, y1, y2 = (a * x for a in al)
    a = y0 @ K @ y0
    da = 2.0 * (y1 @ K @ y0)
    d2a = 2.0 * (y2 @ K @ y0 + y1 @ K @ y1)
    return {"a": a, "da_dT": da, "d2a_dT2": d2a, "b": float(x @ mix.b)}


class _Attraction:
    """D(T, N) = sum N_i N_j (1-k_ij) sqrt(a_i a_j) with T-derivatives up to third order."""

    __slots__ = ("D", "D_T", "D_TT", "D_TTT", "g", "g_T", "g_TT", "H", "H_T")

    def __init__(self, mix: Mixture, T: float, N: np.ndarray, order: int):
        al = _sqrt_a(mix, T, order + 1)
        K = mix.k_mat
        y = [a * N for a in al]
        Ky = [K @ v for v in y]
        a0, a1 = al[0], al[1]
        self.D = y[0] @ Ky[0]
        self.D_T = 2.0 * (y[1] @ Ky[0])
        self.D_TT = 2.0 * (y[2] @ Ky[0] + y[1] @ Ky[1])
        self.g = 2.0 * a0 * Ky[0]
        self.g_T = 2.0 * (a1 * Ky[0] + a0 * Ky[1])
        self.H = 2.0 * np.outer(a0, a0) * K
        self.D_TTT = self.g_TT = self.H_T = None
        if order >= 3:
            a2 = al[2]
            self.D_TTT = 2.0 * (y[3] @ Ky[0] + 3.0 * (y[2] @ Ky[1]))
            self.g_TT = 2.0 * (a2 * Ky[0] + 2.0 * a1 * Ky[1] + a0 * Ky[2])
            M = np.outer(a1, a0) * K
            self.H_T = 2.0 * (M + M.T)


def _check_state(mix: Mixture, T: float, V: float, N: np.ndarray) -> float:
    if not T > 0:
        raise EOSDomainError(f"temperature must be positive, got {T}")
    if not V > 0:
        raise EOSDomainError(f"volume must be positive, got {V}")
    if np.any(N < 0):
        raise EOSDomainError("negative mole number")
    B = float(N @ mix.b)
    if not B > 0:
        raise EOSDomainError("total moles must be positive")
    if not V > B:
        raise EOSDomainError(f"volume {V:.6g} m3 does not exceed covolume {B:.6g} m3")
    return B


def _log_terms(V: float, B: float):
    """F(V, B) = ln((V + d1 B)/(V + d2 B)) / (2 sqrt2 B) and its 2nd-order derivatives."""
    v1 = V + DELTA1 * B
    v2 = V + DELTA2 * B
    if not (v1 > 0 and v2 > 0):
        raise EOSDomainError("log argument of the attraction term is not positive")
    t = B / V
    if t < _SERIES_T:
        return _log_terms_series(V, B, t)
    q = math.log(v1 / v2)
    c = 2.0 * SQRT2
    q_V = 1.0 / v1 - 1.0 / v2
    q_B = DELTA1 / v1 - DELTA2 / v2
    q_VV = -1.0 / v1**2 + 1.0 / v2**2
    q_VB = -DELTA1 / v1**2 + DELTA2 / v2**2
    q_BB = -(DELTA1**2) / v1**2 + DELTA2**2 / v2**2
    cB = c * B
    F = q / cB
    F_V = q_V / cB
    F_B = q_B / cB - q / (cB * B)
    F_VV = q_VV / cB
    F_VB = q_VB / cB - q_V / (cB * B)
    F_BB = q_BB / cB - 2.0 * q_B / (cB * B) + 2.0 * q / (cB * B * B)
    return F, F_V, F_B, F_VV, F_VB, F_BB


_SERIES_T = 1e-3
_SERIES_K = np.arange(1, 16)
_SERIES_A = (-1.0) ** (_SERIES_K + 1) * (DELTA1**_SERIES_K - DELTA2**_SERIES_K) / _SERIES_K / (2.0 * SQRT2)


def _log_terms_series(V: float, B: float, t: float):
    # F = f(t)/V with f(t) = sum a_k t^(k-1); avoids the 1/B^3 cancellation at small B/V
    k = _SERIES_K
    a = _SERIES_A
    f = float(a @ t ** (k - 1))
    f1 = float(a[1:] @ ((k[1:] - 1) * t ** (k[1:] - 2)))
    f2 = float(a[2:] @ ((k[2:] - 1) * (k[2:] - 2) * t ** (k[2:] - 3)))
    F = f / V
    F_V = -f / V**2 - B * f1 / V**3
    F_B = f1 / V**2
    F_VV = 2.0 * f / V**3 + 4.0 * B * f1 / V**4 + B * B * f2 / V**5
    F_VB = -2.0 * f1 / V**3 - B * f2 / V**4
    F_BB = f2 / V**3
    return F, F_V, F_B, F_VV, F_VB, F_BB


def _xlogx(N: np.ndarray) -> np.ndarray:
    out = np.zeros_like(N)
    pos = N > 0
    out[pos] = N[pos] * np.log(N[pos])
    return out


def _ideal_parts(mix: Mixture, T: float):
    """Per-component ideal-gas functions: cp, cp', integral cp dT, integral cp/T dT."""
    c = mix.cp
    T0 = mix.t_ref
    cp = c[:, 0] + T * (c[:, 1] + T * (c[:, 2] + T * c[:, 3]))
    dcp = c[:, 1] + T * (2.0 * c[:, 2] + 3.0 * T * c[:, 3])
    h = (
        c[:, 0] * (T - T0)
        + c[:, 1] * (T**2 - T0**2) / 2.0
        + c[:, 2] * (T**3 - T0**3) / 3.0
        + c[:, 3] * (T**4 - T0**4) / 4.0
    )
    s = (
        c[:, 0] * math.log(T / T0)
        + c[:, 1] * (T - T0)
        + c[:, 2] * (T**2 - T0**2) / 2.0
        + c[:, 3] * (T**3 - T0**3) / 3.0
    )
    return cp, dcp, h, s


# ---------------------------------------------------------------------------
# scalar evaluations (cheap paths)

def pressure(mix: Mixture, s: StateTVN) -> float:
    """P = NRT/(V - Nb) - a N^2 / (V^2 + 2bNV - N^2 b^2)."""
    T, V, N = s.temperature, s.volume, s.moles
    B = _check_state(mix, T, V, N)
    Ntot = N.sum()
    al = _sqrt_a(mix, T, 0)[0] * N
    D = al @ mix.k_mat @ al
    return Ntot * mix.gas_constant * T / (V - B) - D / (V * V + 2.0 * B * V - B * B)


def energy_and_cv(mix: Mixture, T: float, V: float, N: np.ndarray) -> tuple[float, float]:
    """U(T, V, N) and Cv = dU/dT at constant (V, N); the EOS-inversion inner kernel."""
    B = _check_state(mix, T, V, N)
    R = mix.gas_constant
    al = _sqrt_a(mix, T, 2)
    K = mix.k_mat
    y0, y1, y2 = (a * N for a in al)
    Ky0 = K @ y0
    D = y0 @ Ky0
    D_T = 2.0 * (y1 @ Ky0)
    D_TT = 2.0 * (y2 @ Ky0 + y1 @ K @ y1)
    v1 = V + DELTA1 * B
    v2 = V + DELTA2 * B
    F = math.log(v1 / v2) / (2.0 * SQRT2 * B)
    cp, _, h, _ = _ideal_parts(mix, T)
    Ntot = N.sum()
    U = (T * D_T - D) * F + N @ (h + mix.u0) - Ntot * R * (T - mix.t_ref)
    Cv = T * D_TT * F + N @ cp - Ntot * R
    return float(U), float(Cv)


def internal_energy(mix: Mixture, s: StateTVN) -> float:
    return energy_and_cv(mix, s.temperature, s.volume, s.moles)[0]


def entropy_value(mix: Mixture, T: float, V: float, N: np.ndarray) -> float:
    B = _check_state(mix, T, V, N)
    R = mix.gas_constant
    al = _sqrt_a(mix, T, 1)
    K = mix.k_mat
    y0, y1 = al[0] * N, al[1] * N
    D_T = 2.0 * (y1 @ K @ y0)
    F = math.log((V + DELTA1 * B) / (V + DELTA2 * B)) / (2.0 * SQRT2 * B)
    _, _, _, s = _ideal_parts(mix, T)
    Ntot = N.sum()
    S_res = R * Ntot * math.log1p(-B / V) + D_T * F
    S_ig = R * (Ntot * math.log(V * mix.p_ref / (R * T)) - _xlogx(N).sum()) + N @ s
    return float(S_res + S_ig)


def helmholtz_value(mix: Mixture, T: float, V: float, N: np.ndarray) -> float:
    B = _check_state(mix, T, V, N)
    R = mix.gas_constant
    al = _sqrt_a(mix, T, 0)[0] * N
    D = al @ mix.k_mat @ al
    F = math.log((V + DELTA1 * B) / (V + DELTA2 * B)) / (2.0 * SQRT2 * B)
    _, _, h, s = _ideal_parts(mix, T)
    Ntot = N.sum()
    A_res = -R * T * Ntot * math.log1p(-B / V) - D * F
    A_ig = (
        N @ (h + mix.u0 - T * s)
        - Ntot * R * (T - mix.t_ref)
        - R * T * (Ntot * math.log(V * mix.p_ref / (R * T)) - _xlogx(N).sum())
    )
    return float(A_res + A_ig)


# ---------------------------------------------------------------------------
# second-order derivative engines

def _assemble(n, T, V, N, B, b, c0, W, ideal, F_terms, R):
    """Value/gradient/Hessian of c0(T) N ln(1-B/V) + W(T,N) F(V,B) + ideal(T,V,N).

    ``c0`` = (c, c_T, c_TT); ``W`` = (W, W_T, W_TT, gW, gW_T, HW).
    """
    F, F_V, F_B, F_VV, F_VB, F_BB = F_terms
    Ntot = N.sum()
    c, c_T, c_TT = c0
    Wv, W_T, W_TT, gW, gW_T, HW = W
    d = 2 + n
    grad = np.empty(d)
    H = np.empty((d, d))

    # repulsive G(V, N) = N ln(1 - B/V)
    L1 = math.log1p(-B / V)
    vb = V - B
    G = Ntot * L1
    G_V = Ntot * (1.0 / vb - 1.0 / V)
    G_N = L1 - Ntot * b / vb
    G_VV = Ntot * (1.0 / V**2 - 1.0 / vb**2)
    G_VN = (1.0 / vb - 1.0 / V) + Ntot * b / vb**2
    G_NN = -(b[:, None] + b[None, :]) / vb - Ntot * np.outer(b, b) / vb**2

    value = c * G + Wv * F + ideal[0]
    grad[0] = c_T * G + W_T * F
    grad[1] = c * G_V + Wv * F_V
    grad[2:] = c * G_N + gW * F + Wv * F_B * b
    H[0, 0] = c_TT * G + W_TT * F
    H[0, 1] = c_T * G_V + W_T * F_V
    H[0, 2:] = c_T * G_N + gW_T * F + W_T * F_B * b
    H[1, 1] = c * G_VV + Wv * F_VV
    H[1, 2:] = c * G_VN + gW * F_V + Wv * F_VB * b
    bgW = np.outer(b, gW)
    H[2:, 2:] = c * G_NN + HW * F + F_B * (bgW + bgW.T) + Wv * F_BB * np.outer(b, b)
    H[1:, 0] = H[0, 1:]
    H[2:, 1] = H[1, 2:]
    grad += ideal[1]
    H += ideal[2]
    return value, grad, H


def helmholtz_derivatives(mix: Mixture, T: float, V: float, N):
    """A and its gradient/Hessian in z = (T, V, N)."""
    N = np.asarray(N, dtype=float)
    B = _check_state(mix, T, V, N)
    if np.any(N <= 0):
        raise EOSDomainError("chemical-potential derivatives need strictly positive moles")
    n = N.size
    R = mix.gas_constant
    at = _Attraction(mix, T, N, 2)
    F_terms = _log_terms(V, B)
    cp, dcp, h, s = _ideal_parts(mix, T)
    Ntot = N.sum()
    lnv = math.log(V * mix.p_ref / (R * T))
    lnN = np.log(N)
    # ideal part: sum N_i [h_i + u0_i - R(T - T0) - T s_i] - RT sum N_i [ln(V P0/(R T)) - ln N_i]
    psi = h + mix.u0 - R * (T - mix.t_ref) - T * s
    iv = N @ psi - R * T * (Ntot * lnv - N @ lnN)
    ig = np.empty(n + 2)
    ig[0] = -(N @ s) - R * (Ntot * lnv - N @ lnN)
    ig[1] = -R * T * Ntot / V
    ig[2:] = psi - R * T * (lnv - lnN) + R * T
    iH = np.zeros((n + 2, n + 2))
    iH[0, 0] = -(N @ (cp - R)) / T
    iH[0, 1] = iH[1, 0] = -R * Ntot / V
    iH[0, 2:] = iH[2:, 0] = -s - R * (lnv - lnN) + R
    iH[1, 1] = R * T * Ntot / V**2
    iH[1, 2:] = iH[2:, 1] = -R * T / V
    iH[2:, 2:] = np.diag(R * T / N)
    W = (-at.D, -at.D_T, -at.D_TT, -at.g, -at.g_T, -at.H)
    c0 = (-R * T, -R, 0.0)
    return _assemble(n, T, V, N, B, mix.b, c0, W, (iv, ig, iH), F_terms, R)


def _su_pieces(mix: Mixture, T: float, V: float, N):
    N = np.asarray(N, dtype=float)
    B = _check_state(mix, T, V, N)
    return N, B, _Attraction(mix, T, N, 3), _log_terms(V, B), _ideal_parts(mix, T)


def _entropy_from(mix, T, V, N, B, at, F_terms, ideal_parts):
    n = N.size
    R = mix.gas_constant
    cp, dcp, h, s = ideal_parts
    Ntot = N.sum()
    lnv = math.log(V * mix.p_ref / (R * T))
    lnN = np.log(N)
    iv = R * (Ntot * lnv - N @ lnN) + N @ s
    ig = np.empty(n + 2)
    ig[0] = N @ (cp - R) / T
    ig[1] = R * Ntot / V
    ig[2:] = R * (lnv - lnN - 1.0) + s
    iH = np.zeros((n + 2, n + 2))
    iH[0, 0] = N @ (dcp * T - cp + R) / T**2
    iH[0, 2:] = iH[2:, 0] = (cp - R) / T
    iH[1, 1] = -R * Ntot / V**2
    iH[1, 2:] = iH[2:, 1] = R / V
    iH[2:, 2:] = np.diag(-R / N)
    W = (at.D_T, at.D_TT, at.D_TTT, at.g_T, at.g_TT, at.H_T)
    c0 = (R, 0.0, 0.0)
    return _assemble(n, T, V, N, B, mix.b, c0, W, (iv, ig, iH), F_terms, R)


def _energy_from(mix, T, V, N, B, at, F_terms, ideal_parts):
    n = N.size
    R = mix.gas_constant
    cp, dcp, h, s = ideal_parts
    Ntot = N.sum()
    iv = N @ (h + mix.u0) - Ntot * R * (T - mix.t_ref)
    ig = np.zeros(n + 2)
    ig[0] = N @ (cp - R)
    ig[2:] = h + mix.u0 - R * (T - mix.t_ref)
    iH = np.zeros((n + 2, n + 2))
    iH[0, 0] = N @ dcp
    iH[0, 2:] = iH[2:, 0] = cp - R
    # W = T D_T - D
    W = (
        T * at.D_T - at.D,
        T * at.D_TT,
        at.D_TT + T * at.D_TTT,
        T * at.g_T - at.g,
        T * at.g_TT,
        T * at.H_T - at.H,
    )
    return _assemble(n, T, V, N, B, mix.b, (0.0, 0.0, 0.0), W, (iv, ig, iH), F_terms, R)


def entropy_derivatives(mix: Mixture, T: float, V: float, N):
    """S and its gradient/Hessian in z = (T, V, N), from the explicit entropy expression."""
    N, B, at, F_terms, ideal = _su_pieces(mix, T, V, N)
    if np.any(N <= 0):
        raise EOSDomainError("entropy derivatives need strictly positive moles")
    return _entropy_from(mix, T, V, N, B, at, F_terms, ideal)


def energy_derivatives(mix: Mixture, T: float, V: float, N):
    """U and its gradient/Hessian in z = (T, V, N), from the explicit energy expression."""
    N, B, at, F_terms, ideal = _su_pieces(mix, T, V, N)
    return _energy_from(mix, T, V, N, B, at, F_terms, ideal)


def entropy_energy_derivatives(mix: Mixture, T: float, V: float, N):
    """(S, U) derivative triples sharing one evaluation of the common terms."""
    N, B, at, F_terms, ideal = _su_pieces(mix, T, V, N)
    if np.any(N <= 0):
        raise EOSDomainError("entropy derivatives need strictly positive moles")
    return (
        _entropy_from(mix, T, V, N, B, at, F_terms, ideal),
        _energy_from(mix, T, V, N, B, at, F_terms, ideal),
    )


# ---------------------------------------------------------------------------
# property bundle and derived quantities

def properties(mix: Mixture, s: StateTVN) -> PropertyBundle:
    T, V, N = s.temperature, s.volume, s.moles
    A, g, H = helmholtz_derivatives(mix, T, V, N)
    S = -g[0]
    U = A + T * S
    return PropertyBundle(
        pressure=float(-g[1]),
        internal_energy=float(U),
        entropy=float(S),
        helmholtz=float(U - T * S),
        heat_capacity_v=float(-T * H[0, 0]),
        chem_potential=g[2:].copy(),
        dmu_dT=H[0, 2:].copy(),
        dp_dT=float(-H[0, 1]),
    )


def chemical_potential(mix: Mixture, T: float, V: float, N) -> np.ndarray:
    return helmholtz_derivatives(mix, T, V, N)[1][2:]


def residual_chemical_potential(mix: Mixture, T: float, V: float, N):
    """dA_res/dN_i at (T, V) and its N-Jacobian, A_res = A - A_idealgas(T, V, N)."""
    N = np.asarray(N, dtype=float)
    B = _check_state(mix, T, V, N)
    R = mix.gas_constant
    b = mix.b
    Ntot = N.sum()
    al = _sqrt_a(mix, T, 0)[0]
    K = mix.k_mat
    Ky = K @ (al * N)
    D = (al * N) @ Ky
    gD = 2.0 * al * Ky
    HD = 2.0 * np.outer(al, al) * K
    F, F_V, F_B, F_VV, F_VB, F_BB = _log_terms(V, B)
    vb = V - B
    L1 = math.log1p(-B / V)
    mu = -R * T * (L1 - Ntot * b / vb) - gD * F - D * F_B * b
    G_NN = -(b[:, None] + b[None, :]) / vb - Ntot * np.outer(b, b) / vb**2
    bg = np.outer(b, gD)
    jac = -R * T * G_NN - HD * F - F_B * (bg + bg.T) - D * F_BB * np.outer(b, b)
    return mu, jac


def ln_volume_function(mix: Mixture, T: float, conc) -> np.ndarray:
    """ln Phi_i = -ln(Z phi_i) at concentration ``conc`` (unit-volume state)."""
    c = np.asarray(conc, dtype=float)
    if np.any(c < 0) or not c @ mix.b < 1.0:
        raise EOSDomainError("concentration outside the admissible simplex")
    mu_res, _ = residual_chemical_potential(mix, T, 1.0, c)
    return -mu_res / (mix.gas_constant * T)


# ---------------------------------------------------------------------------
# EOS inversion

def solve_temperature(
    mix: Mixture,
    target_u: float,
    V: float,
    moles,
    t_init: float | None = None,
    *,
    bracket: tuple[float, float] = T_BRACKET,
    max_iter: int = 100,
    return_iterations: bool = False,
    atol: float | None = None,
):
    """Solve U(T, V, N) = target_u for T (safeguarded Newton, Cv as slope).

    Cv > 0 on the physical branch makes U monotone in T, so the root is unique.
    """
    N = np.asarray(moles, dtype=float)
    if atol is None:
        atol = max(1e-8 * abs(target_u), 1e-6)
    lo, hi = bracket
    checked = False

    def check_bracket():
        u_lo = energy_and_cv(mix, bracket[0], V, N)[0] - target_u
        u_hi = energy_and_cv(mix, bracket[1], V, N)[0] - target_u
        if u_lo > 0 or u_hi < 0:
            raise TemperatureSolveError(
                f"U={target_u:.6g} J not bracketed on [{bracket[0]}, {bracket[1]}] K "
                f"(U-U*: {u_lo:.4g}, {u_hi:.4g})",
                target_u=target_u,
                bracket=bracket,
                u_bracket=(u_lo + target_u, u_hi + target_u),
            )

    # A warm start skips the endpoint evaluations unless Newton leaves the bracket.
    if t_init is None or not lo < t_init < hi:
        check_bracket()
        checked = True
        T = 0.5 * (lo + hi)
    else:
        T = float(t_init)
    it = 0
    r = np.inf
    while it < max_iter:
        it += 1
        U, Cv = energy_and_cv(mix, T, V, N)
        r = U - target_u
        if abs(r) <= atol:
            break
        if r > 0:
            hi = T
        else:
            lo = T
        T_new = T - r / Cv if Cv > 0 else 0.5 * (lo + hi)
        if not lo < T_new < hi:
            if not checked:
                check_bracket()
                checked = True
            T_new = 0.5 * (lo + hi)
        T = T_new
    else:
        raise TemperatureSolveError(
            f"EOS inversion did not converge in {max_iter} iterations (T={T:.6g} K, residual {r:.3g} J)",
            target_u=target_u,
            bracket=bracket,
        )
    if return_iterations:
        return T, it
    return T
