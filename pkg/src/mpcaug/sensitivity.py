"""Parametric sensitivities, linear predictor and fixed-active-set corrector.

At a regular KKT point ``s*`` of ``Pi(p)`` the implicit function theorem
gives ``ds*/dp = -M^{-1} dphi/dp`` with ``M`` the KKT matrix of the active
constraints.  :func:`predict` applies the first-order update and
:func:`correct` iterates Newton steps on ``phi`` with the active set held
fixed until the residual meets a tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kkt import LDLFactorization, SingularKKT, factorize_kkt, kkt_matrix
from .nlp import (ACTIVITY_TOL, AUGMENTED, COMP_MARGIN, ParametricNLP, PrimalDualPoint,
                  RegularityFailure, active_constraint_jacobian, check_regularity)

VALID = "valid"
CHANGED = "changed"


class CorrectorDiverged(RuntimeError):
    """The KKT residual increased on two consecutive corrector iterations."""


class MaxCorrectorIters(RuntimeError):
    """The corrector did not reach ``eps_tol`` within its iteration budget."""


class ActiveSetChanged(RuntimeError):
    """The corrected point is inconsistent with the frozen active set."""


@dataclass(frozen=True)
class CorrectorConfig:
    eps_tol: float = 1e-6
    max_corrector_iters: int = 10
    chord: bool = False
    activity_tol: float = ACTIVITY_TOL
    check_active_set: bool = True

    def __post_init__(self):
        if not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive")
        if self.max_corrector_iters < 0:
            raise ValueError("max_corrector_iters must be non-negative")


@dataclass
class SensitivityMatrix:
    """``H = ds*/dp`` at an anchor, rows ordered ``[dw; dlam; dmu_A]``."""

    H: np.ndarray
    anchor: PrimalDualPoint
    active_set: tuple[int, ...]
    kkt_factorization: LDLFactorization
    n_w: int
    n_c: int


def assemble_kkt(nlp: ParametricNLP, s: PrimalDualPoint, active_set=None):
    """KKT matrix ``[[H_L, A^T], [A, 0]]`` with ``A = [grad c^T; grad g_A^T]`` at ``s``.

    Returns ``(M, factorization)``.  Raises :class:`SingularKKT` when ``M``
    does not have the inertia ``(n_w, n_c + |A|, 0)``.
    """
    A = list(s.active_set if active_set is None else active_set)
    mu = np.zeros(nlp.n_g)
    mu[A] = s.mu[A]
    H = nlp.hessian(s.w, s.p, s.lam, mu)
    Jact = active_constraint_jacobian(nlp, s.w, s.p, A)
    fac = factorize_kkt(H, Jact, regularize=False)
    return fac.matrix, fac


def parametric_jacobian(nlp: ParametricNLP, s: PrimalDualPoint, active_set=None) -> np.ndarray:
    """``dphi/dp = [grad2_wp L; grad_p c; grad_p g_A]``."""
    A = list(s.active_set if active_set is None else active_set)
    mu = np.zeros(nlp.n_g)
    mu[A] = s.mu[A]
    return np.vstack([nlp.hess_wp(s.w, s.p, s.lam, mu), nlp.jac_c_p(s.w, s.p),
                      nlp.jac_g_p(s.w, s.p)[A]])


def sensitivity_matrix(nlp: ParametricNLP, s: PrimalDualPoint,
                       comp_margin: float = COMP_MARGIN) -> SensitivityMatrix:
    """Solve ``M H = -dphi/dp`` once; the factorization is kept for later solves.

    Raises
    ------
    RegularityFailure
        ``s`` fails LICQ, SOSC or strict complementarity.
    SingularKKT
        The KKT matrix is singular at ``s``.
    """
    report = check_regularity(nlp, s, comp_margin)
    if not report.ok:
        raise RegularityFailure(f"anchor fails {', '.join(report.failures())}", s, report)
    _, fac = assemble_kkt(nlp, s)
    H = fac.solve(-parametric_jacobian(nlp, s))
    return SensitivityMatrix(H, s, s.active_set, fac, nlp.n_w, nlp.n_c)


def predict(anchor: PrimalDualPoint, sens: SensitivityMatrix, dp) -> PrimalDualPoint:
    """First-order update ``s_hat(p + dp) = s*(p) + H dp``."""
    dp = np.asarray(dp, dtype=float).ravel()
    ds = sens.H @ dp
    n_w, n_c = sens.n_w, sens.n_c
    A = list(sens.active_set)
    mu = np.zeros_like(anchor.mu)
    mu[A] = anchor.mu[A] + ds[n_w + n_c:]
    return PrimalDualPoint(anchor.w + ds[:n_w], anchor.lam + ds[n_w:n_w + n_c], mu,
                           anchor.p + dp, active_set=sens.active_set, kind=AUGMENTED,
                           info={"corrector_iters": 0})


def _phi(nlp, w, p, lam, mu_A, A):
    mu = np.zeros(nlp.n_g)
    mu[A] = mu_A
    gJ = nlp.gradient(w, p)
    Jc = nlp.jac_c(w, p)
    Jg = nlp.jac_g(w, p)[A]
    grad_L = gJ + Jc.T @ lam + Jg.T @ mu_A
    c = nlp.c(w, p)
    gA = nlp.g(w, p)[A]
    return grad_L, c, gA, gJ, np.vstack([Jc, Jg]), mu


def _newton_factorization(H, Jact) -> LDLFactorization:
    # Newton on phi needs a nonsingular M, not SOSC inertia
    fac = LDLFactorization(kkt_matrix(H, Jact), H.shape[0])
    if fac.inertia[2]:
        raise SingularKKT(f"singular KKT matrix, inertia {fac.inertia}")
    return fac


def correct(nlp: ParametricNLP, s_hat: PrimalDualPoint, cfg: CorrectorConfig | None = None,
            sens: SensitivityMatrix | None = None) -> PrimalDualPoint:
    """Newton iterations on ``phi`` with the active set of ``s_hat`` frozen.

    Each step replaces ``[w; lam; mu_A]`` by ``[w; 0; 0] - M^{-1} [grad J; c; g_A]``
    with every block evaluated at the current iterate.  Iteration stops once
    ``max(|grad_w L|, |c|, |g_A|) <= cfg.eps_tol`` (infinity norms).  With
    ``cfg.chord`` the anchor factorization in ``sens`` is reused instead of
    refactorizing.

    The residual history is stored in ``info["residuals"]``.

    Raises
    ------
    CorrectorDiverged, MaxCorrectorIters, SingularKKT, ActiveSetChanged
    """
    cfg = cfg or CorrectorConfig()
    A = list(s_hat.active_set)
    n_w, n_c = nlp.n_w, nlp.n_c
    w, lam, mu_A, p = s_hat.w.copy(), s_hat.lam.copy(), s_hat.mu[A].copy(), s_hat.p
    history = []
    increases = 0
    it = 0
    while True:
        grad_L, c, gA, gJ, Jact, mu = _phi(nlp, w, p, lam, mu_A, A)
        stat = float(np.abs(grad_L).max(initial=0.0))
        res = max(stat, float(np.abs(c).max(initial=0.0)), float(np.abs(gA).max(initial=0.0)))
        if not np.isfinite(res):
            raise CorrectorDiverged("non-finite KKT residual")
        history.append(res)
        if res <= cfg.eps_tol:
            break
        if len(history) > 1 and res > history[-2]:
            increases += 1
            if increases >= 2:
                raise CorrectorDiverged(f"residual increased twice (now {res:.3e})")
        else:
            increases = 0
        if it >= cfg.max_corrector_iters:
            raise MaxCorrectorIters(f"residual {res:.3e} after {it} corrector iterations")
        if cfg.chord and sens is not None:
            # anchor matrix applied to the full residual
            delta = sens.kkt_factorization.solve(-np.concatenate([grad_L, c, gA]))
            w, lam, mu_A = w + delta[:n_w], lam + delta[n_w:n_w + n_c], mu_A + delta[n_w + n_c:]
        else:
            fac = _newton_factorization(nlp.hessian(w, p, lam, mu), Jact)
            sol = fac.solve(-np.concatenate([gJ, c, gA]))
            w = w + sol[:n_w]
            lam = sol[n_w:n_w + n_c]
            mu_A = sol[n_w + n_c:]
        it += 1
    mu_full = np.zeros(nlp.n_g)
    mu_full[A] = mu_A
    out = PrimalDualPoint(w, lam, mu_full, p, active_set=tuple(A), stationarity_norm=stat,
                          kind=AUGMENTED, info=dict(s_hat.info))
    out.info.update(corrector_iters=it, residuals=history, residual=history[-1])
    if cfg.check_active_set and validate_active_set(nlp, out, cfg.activity_tol) == CHANGED:
        err = ActiveSetChanged("active set changed during correction")
        err.point = out
        raise err
    return out


def validate_active_set(nlp: ParametricNLP, s: PrimalDualPoint,
                        activity_tol: float = ACTIVITY_TOL) -> str:
    """``"changed"`` if a frozen-active multiplier is negative or a frozen-inactive
    constraint is violated by more than ``activity_tol``; ``"valid"`` otherwise."""
    A = list(s.active_set)
    if A and np.any(s.mu[A] < 0.0):
        return CHANGED
    inactive = np.ones(nlp.n_g, dtype=bool)
    inactive[A] = False
    if np.any(nlp.g(s.w, s.p)[inactive] > activity_tol):
        return CHANGED
    return VALID
