"""Small NLPs with closed-form solutions, used as test oracles and CLI problems."""
from __future__ import annotations

from . import adgraph as ad
from .nlp import ParametricNLP


def oracle_eqp() -> ParametricNLP:
    """``min 0.5 (w1^2 + w2^2)  s.t.  w1 + w2 = p``; solution ``w = (p/2, p/2)``, ``lam = -p/2``."""
    w1, w2, p = ad.symbols("eqp_w1 eqp_w2 eqp_p")
    W, P = [w1, w2], [p]
    return ParametricNLP(ad.ExprGraph(0.5 * (w1 ** 2 + w2 ** 2), W, P),
                         ad.ExprGraph([w1 + w2 - p], W, P), None,
                         action_indices=[0], name="oracle-eqp")


def oracle_ineq() -> ParametricNLP:
    """``min (w - p)^2  s.t.  w <= 1``; ``w* = min(p, 1)``, ``mu* = max(2(p - 1), 0)``."""
    w, p = ad.symbols("ineq_w ineq_p")
    return ParametricNLP(ad.ExprGraph((w - p) ** 2, [w], [p]), None,
                         ad.ExprGraph([w - 1.0], [w], [p]), action_indices=[0],
                         name="oracle-ineq")


def degenerate() -> ParametricNLP:
    """``min w^2  s.t.  w <= 0, w >= 0``: both constraints active with parallel gradients."""
    w, p = ad.symbols("deg_w deg_p")
    return ParametricNLP(ad.ExprGraph(w ** 2, [w], [p]), None,
                         ad.ExprGraph([w, -w], [w], [p]), action_indices=[0], name="degenerate")


PROBLEMS = {"oracle-eqp": oracle_eqp, "oracle-ineq": oracle_ineq}
