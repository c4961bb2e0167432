"""Damped Newton iteration for g(x) = 0 with line-search or trust-region globalization."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
import scipy.linalg as sla

Array = np.ndarray

SUFFICIENT_DECREASE = 1e-4
ALPHA_MIN = 1e-12
MAX_FEASIBILITY_CUTS = 40
MAX_DAMPING_DOUBLINGS = 80
TR_SHRINK_BELOW = 0.1
TR_KEEP_ABOVE = 0.5
TR_EXPAND_ABOVE = 0.9


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-8
    max_outer: int = 200
    globalization: Literal["linesearch", "trustregion"] = "linesearch"
    initial_tr_radius: float = 1.0
    scaling: bool = False

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if self.globalization not in ("linesearch", "trustregion"):
            raise ValueError(f"unknown globalization {self.globalization!r}")
        if not self.initial_tr_radius > 0:
            raise ValueError("initial_tr_radius must be positive")


@dataclass
class SolverResult:
    x_final: Array
    converged: bool
    outer_iterations: int
    residual_norm_history: list[float] = field(default_factory=list)
    failure_reason: Optional[str] = None
    n_gradient_evals: int = 0
    n_regularized: int = 0


class _Counted:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.fn(x)


def newton_direction(H: Array, g: Array) -> tuple[Array, bool]:
    """Solve H p = -g by a pivoted symmetric factorization.

    Falls back to Levenberg damping H + lam*I, lam = 1e-8*||H||_inf doubled
    until the factorization is usable. Returns (p, regularized).
    """
    Hs = 0.5 * (H + H.T)
    lam = 0.0
    scale = max(np.linalg.norm(Hs, np.inf), np.finfo(float).tiny)
    eye = np.eye(len(g))
    for k in range(MAX_DAMPING_DOUBLINGS + 1):
        try:
            # Ill-conditioning warnings are expected for badly scaled but
            # well-posed systems; only an actual breakdown triggers damping.
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                p = sla.solve(Hs + lam * eye, -g, assume_a="sym")
            if np.all(np.isfinite(p)):
                return p, lam > 0
        except (np.linalg.LinAlgError, ValueError):
            pass
        lam = 1e-8 * scale if lam == 0.0 else 2.0 * lam
    raise np.linalg.LinAlgError("Hessian could not be regularized")


def _cubic_step(alpha, alpha_prev, f0, df0, f_a, f_prev):
    """Minimizer of the cubic (or quadratic on the first cut) merit model."""
    if alpha_prev is None:
        denom = 2.0 * (f_a - f0 - df0 * alpha)
        return -df0 * alpha**2 / denom if denom > 0 else 0.5 * alpha
    r1 = f_a - f0 - df0 * alpha
    r2 = f_prev - f0 - df0 * alpha_prev
    d = alpha - alpha_prev
    a = (r1 / alpha**2 - r2 / alpha_prev**2) / d
    b = (-alpha_prev * r1 / alpha**2 + alpha * r2 / alpha_prev**2) / d
    if a == 0.0:
        return -df0 / (2.0 * b) if b != 0 else 0.5 * alpha
    disc = b * b - 3.0 * a * df0
    if disc < 0:
        return 0.5 * alpha
    return (-b + np.sqrt(disc)) / (3.0 * a)


def _line_search(gfun, feasible, x, gx, f0, p, Hx):
    """Cubic backtracking on 0.5*||g||^2. Returns (x_new, g_new) or None."""
    df0 = float(gx @ (Hx @ p))
    if df0 >= 0.0:
        # Newton direction is not a descent direction of the merit (damped or
        # inconsistent Hessian); fall back to steepest descent on the merit.
        p = -(Hx.T @ gx)
        df0 = -float(p @ p)
        if df0 == 0.0:
            return None
    alpha = 1.0
    cuts = 0
    while not feasible(x + alpha * p):
        alpha *= 0.5
        cuts += 1
        if cuts > MAX_FEASIBILITY_CUTS:
            return None
    alpha_prev = f_prev = None
    while alpha >= ALPHA_MIN:
        x_new = x + alpha * p
        g_new = gfun(x_new)
        f_new = 0.5 * float(g_new @ g_new)
        if np.isfinite(f_new) and f_new <= f0 + SUFFICIENT_DECREASE * alpha * df0:
            return x_new, g_new
        if not np.isfinite(f_new):
            a_next = 0.5 * alpha
        else:
            a_next = _cubic_step(alpha, alpha_prev, f0, df0, f_new, f_prev)
        a_next = min(max(a_next, 0.1 * alpha), 0.5 * alpha)
        alpha_prev, f_prev = alpha, f_new
        alpha = a_next
    return None


def _dogleg(p_newton, grad_m, Hx, radius):
    """Dogleg step for the Gauss-Newton model m(p) = 0.5*||g + H p||^2."""
    nn = np.linalg.norm(p_newton)
    if nn <= radius:
        return p_newton
    Hg = Hx @ grad_m
    gg = float(grad_m @ grad_m)
    hh = float(Hg @ Hg)
    if gg == 0.0 or hh == 0.0:
        return p_newton * (radius / nn)
    p_c = -(gg / hh) * grad_m
    nc = np.linalg.norm(p_c)
    if nc >= radius:
        return p_c * (radius / nc)
    d = p_newton - p_c
    a = float(d @ d)
    b = 2.0 * float(p_c @ d)
    c = nc**2 - radius**2
    tau = (-b + np.sqrt(b * b - 4 * a * c)) / (2 * a)
    return p_c + tau * d


def _col_norms(H: Array) -> Array:
    c = np.linalg.norm(H, axis=0)
    c[c == 0] = 1.0
    return c


def newton(
    g: Callable[[Array], Array],
    H: Callable[[Array], Array],
    feasible: Callable[[Array], bool],
    x0,
    cfg: SolverConfig | None = None,
) -> SolverResult:
    """Newton iteration on g(x) = 0 with merit 0.5*||g||^2.

    Convergence: ||g||_inf <= rel_tol * max(||g(x0)||_inf, 1).
    """
    cfg = SolverConfig() if cfg is None else cfg
    gfun = _Counted(g)
    x = np.array(x0, dtype=float)
    if not feasible(x):
        raise ValueError("initial point is infeasible")
    gx = gfun(x)
    g0 = float(np.max(np.abs(gx))) if gx.size else 0.0
    target = cfg.rel_tol * max(g0, 1.0)
    history = [g0]
    n_reg = 0
    radius = None
    d_scale = np.zeros_like(x)

    def result(conv, it, reason=None):
        return SolverResult(x, conv, it, history, reason, gfun.calls, n_reg)

    if not np.all(np.isfinite(gx)):
        return result(False, 0, "non-finite gradient at the initial point")
    if g0 <= target:
        return result(True, 0)

    it = 0
    while it < cfg.max_outer:
        Hx = H(x)
        f0 = 0.5 * float(gx @ gx)
        try:
            p, reg = newton_direction(Hx, gx)
        except np.linalg.LinAlgError as exc:
            return result(False, it, str(exc))
        n_reg += reg
        if cfg.globalization == "linesearch":
            step = _line_search(gfun, feasible, x, gx, f0, p, Hx)
            if step is None:
                return result(False, it, "line search failed")
            x, gx = step
        else:
            # Trust region in the norm ||D p|| with D from the column norms of H
            # (slowly decaying running max), so badly scaled unknowns do not pin
            # the dogleg to the Cauchy direction. Radius rules follow the
            # MINPACK-style hybrid method.
            d_scale = np.maximum(0.1 * d_scale, _col_norms(Hx))
            if radius is None:
                radius = cfg.initial_tr_radius * max(np.linalg.norm(d_scale * x), 1.0)
            Js = Hx / d_scale[None, :]
            q_newton = d_scale * p
            grad_m = Js.T @ gx
            accepted = False
            for _ in range(200):
                q = _dogleg(q_newton, grad_m, Js, radius)
                s = q / d_scale
                x_try = x + s
                if not feasible(x_try):
                    radius *= 0.25
                    continue
                g_try = gfun(x_try)
                f_try = 0.5 * float(g_try @ g_try)
                r_pred = gx + Hx @ s
                pred = f0 - 0.5 * float(r_pred @ r_pred)
                rho = (f0 - f_try) / pred if pred > 0 else -1.0
                if not np.isfinite(f_try):
                    rho = -1.0
                if rho < TR_SHRINK_BELOW:
                    radius *= 0.5
                elif rho >= TR_EXPAND_ABOVE:
                    radius = 2.0 * np.linalg.norm(q)
                elif rho >= TR_KEEP_ABOVE:
                    radius = max(radius, 2.0 * np.linalg.norm(q))
                if rho > SUFFICIENT_DECREASE:
                    x, gx = x_try, g_try
                    accepted = True
                    break
                if radius < ALPHA_MIN * max(np.linalg.norm(d_scale * x), 1.0):
                    break
            if not accepted:
                return result(False, it, "trust region collapsed")
        it += 1
        gn = float(np.max(np.abs(gx)))
        history.append(gn)
        if gn <= target:
            return result(True, it)
    return result(False, it, "maximum outer iterations reached")
