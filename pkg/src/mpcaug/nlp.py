"""Parametric NLPs, primal-dual points, KKT residuals and regularity checks.

The problem form is::

    min_w  J(w, p)   s.t.  c(w, p) = 0,  g(w, p) <= 0

with Lagrangian ``L = J + lam.c + mu.g``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .adgraph import ExprGraph, hessian_lagrangian, jacobian
from .kkt import LDLFactorization, kkt_matrix

ACTIVITY_TOL = 1e-6
COMP_MARGIN = 1e-8

EXACT_ANCHOR = "exact_anchor"
AUGMENTED = "augmented"


class RegularityFailure(RuntimeError):
    """LICQ, SOSC or strict complementarity does not hold at a point."""

    def __init__(self, message: str, point: "PrimalDualPoint | None" = None,
                 report: "RegularityReport | None" = None):
        super().__init__(message)
        self.point = point
        self.report = report


class ParametricNLP:
    """The problem ``min J s.t. c = 0, g <= 0`` parametrized by ``p``.

    Parameters
    ----------
    objective : ExprGraph
        Scalar objective.
    equalities, inequalities : ExprGraph or None
        Constraint vectors; ``None`` means no constraints of that kind.
    action_indices : sequence of int
        Positions of the control action ``u`` inside ``w``.
    initial_guess : callable, optional
        ``p -> w0`` used when a solve has no warm start.  Defaults to zeros.
    name : str
        Label used in reports.
    """

    def __init__(self, objective: ExprGraph, equalities: ExprGraph | None = None,
                 inequalities: ExprGraph | None = None,
                 action_indices: Sequence[int] = (),
                 initial_guess: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 name: str = "nlp"):
        if objective.n_out != 1:
            raise ValueError("objective must have exactly one output")
        w, p = objective.w, objective.p
        if equalities is None:
            equalities = ExprGraph([], w, p)
        if inequalities is None:
            inequalities = ExprGraph([], w, p)
        for graph in (equalities, inequalities):
            if graph.w != w or graph.p != p:
                raise ValueError("objective and constraints must share the w and p blocks")
        action_indices = tuple(int(i) for i in action_indices)
        if len(set(action_indices)) != len(action_indices) or any(
                i < 0 or i >= len(w) for i in action_indices):
            raise ValueError("action_indices must be distinct indices into w")
        self.objective = objective
        self.equalities = equalities
        self.inequalities = inequalities
        self.action_indices = action_indices
        self._initial_guess = initial_guess
        self.name = name

    n_w = property(lambda self: self.objective.n_w)
    n_p = property(lambda self: self.objective.n_p)
    n_c = property(lambda self: self.equalities.n_out)
    n_g = property(lambda self: self.inequalities.n_out)

    def initial_guess(self, p) -> np.ndarray:
        if self._initial_guess is None:
            return np.zeros(self.n_w)
        return np.asarray(self._initial_guess(np.asarray(p, dtype=float)), dtype=float)

    # -- evaluators (built lazily; graph compilation is the expensive part) --

    @cached_property
    def grad_J(self):
        return jacobian(self.objective, "w")

    @cached_property
    def jac_c(self):
        return jacobian(self.equalities, "w")

    @cached_property
    def jac_c_p(self):
        return jacobian(self.equalities, "p")

    @cached_property
    def jac_g(self):
        return jacobian(self.inequalities, "w")

    @cached_property
    def jac_g_p(self):
        return jacobian(self.inequalities, "p")

    @cached_property
    def hess_ww(self):
        return hessian_lagrangian(self.objective, self.equalities, self.inequalities, "ww")

    @cached_property
    def hess_wp(self):
        return hessian_lagrangian(self.objective, self.equalities, self.inequalities, "wp")

    def J(self, w, p) -> float:
        return float(self.objective(w, p)[0])

    def gradient(self, w, p) -> np.ndarray:
        return self.grad_J(w, p)[0]

    def c(self, w, p) -> np.ndarray:
        return self.equalities(w, p)

    def g(self, w, p) -> np.ndarray:
        return self.inequalities(w, p)

    def grad_lagrangian(self, w, p, lam, mu) -> np.ndarray:
        return (self.gradient(w, p) + self.jac_c(w, p).T @ lam
                + self.jac_g(w, p).T @ mu)

    def hessian(self, w, p, lam, mu) -> np.ndarray:
        return self.hess_ww(w, p, lam, mu)

    def action(self, w) -> np.ndarray:
        return np.asarray(w)[list(self.action_indices)]

    def __getstate__(self):
        state = self.__dict__.copy()
        for key in ("grad_J", "jac_c", "jac_c_p", "jac_g", "jac_g_p", "hess_ww", "hess_wp"):
            state.pop(key, None)
        return state


@dataclass
class PrimalDualPoint:
    """A primal-dual vector ``s = [w, lam, mu]`` at parameter ``p``.

    ``info`` carries solver/corrector metadata (iterations, regularity
    report, corrector residual history, ...).
    """

    w: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    p: np.ndarray
    active_set: tuple[int, ...] = ()
    stationarity_norm: float = float("nan")
    kind: str = EXACT_ANCHOR
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.active_set = tuple(sorted(int(j) for j in self.active_set))

    @property
    def mu_active(self) -> np.ndarray:
        return self.mu[list(self.active_set)]

    def copy(self, **changes) -> "PrimalDualPoint":
        base = dict(w=self.w.copy(), lam=self.lam.copy(), mu=self.mu.copy(),
                    p=self.p.copy(), info=dict(self.info))
        base.update(changes)
        return replace(self, **base)


def _check_dims(nlp: ParametricNLP, s: PrimalDualPoint) -> None:
    dims = [(s.w, nlp.n_w, "w"), (s.lam, nlp.n_c, "lam"), (s.mu, nlp.n_g, "mu"), (s.p, nlp.n_p, "p")]
    for arr, n, name in dims:
        if arr.shape != (n,):
            raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
    if any(j < 0 or j >= nlp.n_g for j in s.active_set):
        raise ValueError("active set index out of range")


def kkt_residual(nlp: ParametricNLP, s: PrimalDualPoint) -> np.ndarray:
    """``phi = [grad_w L; c; g_A]`` at ``s`` using ``s.active_set``.

    Multipliers of inequalities outside the active set are treated as
    zero.  Stores the infinity norm of ``grad_w L`` in
    ``s.stationarity_norm``.
    """
    _check_dims(nlp, s)
    A = list(s.active_set)
    mu = np.zeros(nlp.n_g)
    mu[A] = s.mu[A]
    grad_L = nlp.grad_lagrangian(s.w, s.p, s.lam, mu)
    g = nlp.g(s.w, s.p)
    s.stationarity_norm = float(np.abs(grad_L).max(initial=0.0))
    return np.concatenate([grad_L, nlp.c(s.w, s.p), g[A]])


def detect_active_set(nlp: ParametricNLP, s: PrimalDualPoint,
                      activity_tol: float = ACTIVITY_TOL) -> tuple[int, ...]:
    """Indices ``j`` with ``g_j(w, p) >= -activity_tol``."""
    g = nlp.g(s.w, s.p)
    return tuple(int(j) for j in np.flatnonzero(g >= -activity_tol))


@dataclass
class RegularityReport:
    """Pass/fail per regularity condition at a candidate KKT point.

    ``sosc`` is ``None`` when the KKT factorization failed (indeterminate).
    """

    licq: bool
    strict_complementarity: bool
    sosc: Optional[bool]
    constraint_rank: int
    n_constraints: int
    min_active_multiplier: float
    inertia: Optional[tuple[int, int, int]]

    @property
    def ok(self) -> bool:
        return bool(self.licq and self.strict_complementarity and self.sosc)

    def failures(self) -> list[str]:
        out = []
        if not self.licq:
            out.append("LICQ")
        if not self.strict_complementarity:
            out.append("strict complementarity")
        if self.sosc is None:
            out.append("SOSC indeterminate")
        elif not self.sosc:
            out.append("SOSC")
        return out


def active_constraint_jacobian(nlp: ParametricNLP, w, p, active_set) -> np.ndarray:
    """Rows ``[grad c^T; grad g_A^T]`` (shape ``(n_c + |A|) x n_w``)."""
    return np.vstack([nlp.jac_c(w, p), nlp.jac_g(w, p)[list(active_set)]])


def check_regularity(nlp: ParametricNLP, s: PrimalDualPoint,
                     comp_margin: float = COMP_MARGIN) -> RegularityReport:
    """Check LICQ, strict complementarity and SOSC (via KKT inertia) at ``s``."""
    _check_dims(nlp, s)
    A = list(s.active_set)
    Jact = active_constraint_jacobian(nlp, s.w, s.p, A)
    m = Jact.shape[0]
    rank = int(np.linalg.matrix_rank(Jact)) if m else 0
    licq = rank == m
    mu_A = s.mu[A]
    min_mu = float(mu_A.min()) if A else float("inf")
    strict = bool(min_mu >= comp_margin)
    mu = np.zeros(nlp.n_g)
    mu[A] = mu_A
    H = nlp.hessian(s.w, s.p, s.lam, mu)
    try:
        fac = LDLFactorization(kkt_matrix(H, Jact), nlp.n_w)
        inertia = fac.inertia
        sosc: Optional[bool] = inertia == (nlp.n_w, m, 0)
    except (ValueError, np.linalg.LinAlgError):
        inertia, sosc = None, None
    return RegularityReport(licq, strict, sosc, rank, m, min_mu, inertia)
