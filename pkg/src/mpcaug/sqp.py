"""Line-search SQP for exact solves of ``Pi(p)``.

Each iteration solves the QP

    min_d  0.5 d'B d + grad J'd   s.t.  c + A_c d = 0,  g + A_g d <= 0

with a primal active-set method whose inner steps are equality-constrained
QPs (:func:`solve_eqp`).  ``B`` is the Lagrangian Hessian, shifted by
``tau*I`` when needed so that the QP is strictly convex on the null space
of the equality constraints.  Steps are globalized with an l1 merit
function, Armijo backtracking and a second-order correction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .kkt import LDLFactorization, SingularKKT, factorize_kkt
from .nlp import (ACTIVITY_TOL, COMP_MARGIN, EXACT_ANCHOR, ParametricNLP, PrimalDualPoint,
                  RegularityFailure, check_regularity, detect_active_set, kkt_residual)

log = logging.getLogger(__name__)


class MaxIterationsExceeded(RuntimeError):
    """The solver hit ``max_iter``; ``best`` holds the best iterate (not converged)."""

    def __init__(self, message: str, best: PrimalDualPoint | None = None):
        super().__init__(message)
        self.best = best


class InfeasibleSubproblem(RuntimeError):
    """The linearized constraints admit no feasible step."""


@dataclass(frozen=True)
class SolverConfig:
    kkt_tol: float = 1e-8
    max_iter: int = 100
    merit_penalty: float = 10.0
    regularization_floor: float = 1e-8
    linesearch_backtrack: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-10
    activity_tol: float = ACTIVITY_TOL
    comp_margin: float = COMP_MARGIN

    def __post_init__(self):
        if not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0.0 < self.linesearch_backtrack < 1.0:
            raise ValueError("linesearch_backtrack must lie in (0, 1)")


def solve_eqp(H, A, gradient, residuals, regularization_floor: float = 1e-8,
              return_regularization: bool = False):
    """Solve the equality-constrained QP ``min 0.5 d'Hd + gradient'd s.t. A d + residuals = 0``.

    Solves the saddle-point system ``[[H, A^T], [A, 0]] [d; y] = -[gradient; residuals]``.
    The multipliers ``y`` follow the sign convention ``L = q + y'(A d + r)``.
    ``H`` is shifted by ``tau*I`` when the KKT matrix lacks the inertia of a
    strictly convex problem; with ``return_regularization=True`` the applied
    ``tau`` is returned as a third element.

    Raises
    ------
    SingularKKT
        No admissible shift exists (e.g. linearly dependent rows of ``A``).
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = H.shape[0]
    A = np.asarray(A, dtype=float).reshape(-1, n)
    gradient = np.asarray(gradient, dtype=float).ravel()
    residuals = np.asarray(residuals, dtype=float).ravel()
    fac = factorize_kkt(H, A, floor=regularization_floor)
    sol = fac.solve(-np.concatenate([gradient, residuals]))
    step, mult = sol[:n], sol[n:]
    if return_regularization:
        return step, mult, fac.regularization
    return step, mult


# -- QP subproblem --------------------------------------------------------------


@dataclass
class _QPResult:
    d: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    working: list
    iterations: int


def _eqp_kkt(B, rows, grad, resid):
    fac = LDLFactorization(np.block([[B, rows.T], [rows, np.zeros((rows.shape[0],) * 2)]]),
                           B.shape[0])
    if fac.inertia != (B.shape[0], rows.shape[0], 0):
        raise SingularKKT(f"working-set KKT inertia {fac.inertia}")
    sol = fac.solve(-np.concatenate([grad, resid]))
    return sol[:B.shape[0]], sol[B.shape[0]:]


def _phase_one(Ac, c, Ag, g):
    """Feasible point of the linearized constraints via an elastic LP."""
    n = Ac.shape[1] if Ac.size else Ag.shape[1]
    q = Ag.shape[0]
    cost = np.concatenate([np.zeros(n), np.ones(q)])
    A_ub = np.hstack([Ag, -np.eye(q)])
    A_eq = np.hstack([Ac, np.zeros((Ac.shape[0], q))]) if Ac.shape[0] else None
    bounds = [(None, None)] * n + [(0, None)] * q
    res = linprog(cost, A_ub=A_ub, b_ub=-g, A_eq=A_eq, b_eq=-c if A_eq is not None else None,
                  bounds=bounds, method="highs")
    if res.status != 0 or res.fun > 1e-9 * max(1.0, np.abs(g).max(initial=0.0)):
        raise InfeasibleSubproblem(f"linearized constraints infeasible ({res.message})")
    return res.x[:n]


def solve_qp(B, grad, Ac, c, Ag, g, working_guess=(), max_iter: int | None = None) -> _QPResult:
    """Primal active-set method for the convex QP of one SQP iteration."""
    n = B.shape[0]
    q = Ag.shape[0]
    feas_tol = 1e-10 * max(1.0, np.abs(g).max(initial=0.0))
    if max_iter is None:
        max_iter = 10 * (q + n) + 50

    def solve_on(W, d):
        rows = np.vstack([Ac, Ag[W]]) if W else Ac
        return _eqp_kkt(B, rows, B @ d + grad, np.zeros(rows.shape[0]))

    # guess-and-check with the predicted working set; exact optimum in one solve when right
    W = sorted(working_guess)
    rows = np.vstack([Ac, Ag[W]])
    try:
        d, y = _eqp_kkt(B, rows, grad, np.concatenate([c, g[W]]))
        nc = Ac.shape[0]
        if (np.all(Ag @ d + g <= feas_tol)
                and np.all(y[nc:] >= -1e-12 * max(1.0, np.abs(y).max(initial=0.0)))):
            mu = np.zeros(q)
            mu[W] = np.maximum(y[nc:], 0.0)
            return _QPResult(d, y[:nc], mu, W, 1)
    except SingularKKT:
        pass

    # feasible starting point: equality-only EQP, else LP phase one
    d, y = _eqp_kkt(B, Ac, grad, c)
    if not np.all(Ag @ d + g <= feas_tol):
        d = _phase_one(Ac, c, Ag, g)
    W = []
    for it in range(1, max_iter + 1):
        step, y = solve_on(W, d)
        if np.abs(step).max(initial=0.0) <= 1e-12 * max(1.0, np.abs(d).max(initial=0.0)):
            nc = Ac.shape[0]
            muW = y[nc:]
            if not W or muW.min() >= -1e-12 * max(1.0, np.abs(muW).max()):
                mu = np.zeros(q)
                mu[W] = np.maximum(muW, 0.0)
                return _QPResult(d, y[:nc], mu, W, it)
            W.pop(int(np.argmin(muW)))
            continue
        alpha, blocking = 1.0, None
        slope = Ag @ step
        slack = -(g + Ag @ d)
        for j in range(q):
            if j in W or slope[j] <= 1e-14:
                continue
            a = max(slack[j], 0.0) / slope[j]
            if a < alpha:
                alpha, blocking = a, j
        d = d + alpha * step
        if blocking is not None:
            W.append(blocking)
    raise InfeasibleSubproblem("active-set QP did not terminate")


# -- outer SQP loop -----------------------------------------------------------


def _violation(c, g) -> float:
    return float(np.abs(c).sum() + np.maximum(g, 0.0).sum())


def _full_residual(nlp, w, p, lam, mu, cfg):
    """Infinity norm of the complete KKT conditions with active-set cleanup."""
    g = nlp.g(w, p)
    A = np.flatnonzero(g >= -cfg.activity_tol)
    mu_clean = np.zeros(nlp.n_g)
    mu_clean[A] = mu[A]
    grad_L = nlp.grad_lagrangian(w, p, lam, mu_clean)
    c = nlp.c(w, p)
    parts = [np.abs(grad_L).max(initial=0.0), np.abs(c).max(initial=0.0),
             np.maximum(g, 0.0).max(initial=0.0), np.maximum(-mu_clean, 0.0).max(initial=0.0),
             np.abs(g[A]).max(initial=0.0)]
    return max(parts), mu_clean


def solve(nlp: ParametricNLP, p, warm_start: PrimalDualPoint | None = None,
          cfg: SolverConfig | None = None, require_regular: bool = True) -> PrimalDualPoint:
    """Solve ``Pi(p)`` to ``cfg.kkt_tol`` and return an exact anchor point.

    Raises
    ------
    MaxIterationsExceeded
        No convergence within ``cfg.max_iter``; the exception carries the
        best iterate.
    InfeasibleSubproblem
        A QP subproblem has no feasible point.
    RegularityFailure
        Converged, but LICQ/SOSC/strict complementarity failed (only when
        ``require_regular``); the exception carries the converged point.
    """
    cfg = cfg or SolverConfig()
    p = np.asarray(p, dtype=float).ravel()
    if p.shape != (nlp.n_p,):
        raise ValueError(f"p has shape {p.shape}, expected ({nlp.n_p},)")
    if warm_start is not None:
        w = warm_start.w.copy()
        lam = warm_start.lam.copy()
        mu = warm_start.mu.copy()
        if w.shape != (nlp.n_w,) or lam.shape != (nlp.n_c,) or mu.shape != (nlp.n_g,):
            raise ValueError("warm start has incompatible dimensions")
    else:
        w = nlp.initial_guess(p)
        lam = np.zeros(nlp.n_c)
        mu = np.zeros(nlp.n_g)

    nu = cfg.merit_penalty
    working = list(np.flatnonzero(mu > 0))
    best = None
    tau_last = 0.0
    for it in range(cfg.max_iter + 1):
        res, mu_clean = _full_residual(nlp, w, p, lam, mu, cfg)
        if best is None or res < best[0]:
            best = (res, w.copy(), lam.copy(), mu_clean.copy())
        if res <= cfg.kkt_tol:
            return _finish(nlp, p, w, lam, mu_clean, it, cfg, require_regular)
        if it == cfg.max_iter:
            break
        gJ = nlp.gradient(w, p)
        c = nlp.c(w, p)
        g = nlp.g(w, p)
        Ac = nlp.jac_c(w, p)
        Ag = nlp.jac_g(w, p)
        H = nlp.hessian(w, p, lam, mu)
        B, tau_last = _convexify(H, Ac, cfg, tau_last)
        guess = sorted(set(working) | set(np.flatnonzero(g >= -cfg.activity_tol)))
        qp = solve_qp(B, gJ, Ac, c, Ag, g, working_guess=guess)
        working = qp.working
        d = qp.d

        nu = max(nu, 1.1 * max(np.abs(qp.lam).max(initial=0.0), qp.mu.max(initial=0.0)))
        merit0 = nlp.J(w, p) + nu * _violation(c, g)
        slope = gJ @ d - nu * _violation(c, g)
        if slope >= 0.0:
            slope = -abs(d @ B @ d)
        alpha = 1.0
        accepted = False
        while alpha >= cfg.min_step:
            w_try = w + alpha * d
            merit = nlp.J(w_try, p) + nu * _violation(nlp.c(w_try, p), nlp.g(w_try, p))
            if merit <= merit0 + cfg.armijo * alpha * slope:
                accepted = True
                break
            if alpha == 1.0:
                w_soc = _second_order_correction(nlp, w_try, p, Ac, Ag, working)
                if w_soc is not None:
                    merit_soc = nlp.J(w_soc, p) + nu * _violation(nlp.c(w_soc, p), nlp.g(w_soc, p))
                    if merit_soc <= merit0 + cfg.armijo * slope:
                        w_try = w_soc
                        accepted = True
                        break
            alpha *= cfg.linesearch_backtrack
        if not accepted:
            log.debug("line search failed at iteration %d", it)
            break
        w = w_try
        lam = lam + alpha * (qp.lam - lam)
        mu = mu + alpha * (qp.mu - mu)

    _, w_b, lam_b, mu_b = best
    point = PrimalDualPoint(w_b, lam_b, mu_b, p, kind=EXACT_ANCHOR,
                            info={"converged": False, "iterations": it, "residual": best[0]})
    point.active_set = detect_active_set(nlp, point, cfg.activity_tol)
    raise MaxIterationsExceeded(f"SQP did not converge (residual {best[0]:.3e})", point)


def _convexify(H, Ac, cfg, tau_last):
    """Shift ``H`` so the reduced Hessian on ``null(Ac)`` is positive definite."""
    n = H.shape[0]
    try:
        factorize_kkt(H, Ac, regularize=False)
        return H, 0.0
    except SingularKKT:
        pass
    fac = factorize_kkt(H, Ac, floor=max(cfg.regularization_floor, tau_last / 3.0))
    return H + fac.regularization * np.eye(n), fac.regularization


def _second_order_correction(nlp, w_try, p, Ac, Ag, working):
    rows = np.vstack([Ac, Ag[working]]) if working else Ac
    if rows.shape[0] == 0:
        return None
    r = np.concatenate([nlp.c(w_try, p), nlp.g(w_try, p)[working]])
    try:
        corr = -rows.T @ np.linalg.solve(rows @ rows.T, r)
    except np.linalg.LinAlgError:
        return None
    return w_try + corr


def _finish(nlp, p, w, lam, mu, it, cfg, require_regular):
    point = PrimalDualPoint(w.copy(), lam.copy(), mu.copy(), p.copy(), kind=EXACT_ANCHOR)
    point.active_set = detect_active_set(nlp, point, cfg.activity_tol)
    phi = kkt_residual(nlp, point)
    report = check_regularity(nlp, point, cfg.comp_margin)
    point.info.update(converged=True, iterations=it,
                      residual=float(np.abs(phi).max(initial=0.0)), regularity=report)
    if require_regular and not report.ok:
        raise RegularityFailure(
            f"converged point fails {', '.join(report.failures())} at p={p}", point, report)
    return point
