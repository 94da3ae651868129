import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpcaug import adgraph as ad
from mpcaug.nlp import ParametricNLP, RegularityFailure, kkt_residual
from mpcaug.oracles import degenerate, oracle_eqp, oracle_ineq
from mpcaug.sqp import (InfeasibleSubproblem, MaxIterationsExceeded, SolverConfig, solve,
                        solve_eqp, solve_qp)


def test_eqp_oracle():
    s = solve(oracle_eqp(), [1.0])
    np.testing.assert_allclose(s.w, [0.5, 0.5], atol=1e-10)
    np.testing.assert_allclose(s.lam, [-0.5], atol=1e-10)


def test_ineq_oracle_interior():
    s = solve(oracle_ineq(), [0.3])
    assert s.w[0] == pytest.approx(0.3, abs=1e-10)
    assert s.mu[0] == pytest.approx(0.0, abs=1e-12)
    assert s.active_set == ()


def test_ineq_oracle_active():
    s = solve(oracle_ineq(), [2.0])
    assert s.w[0] == pytest.approx(1.0, abs=1e-10)
    assert s.mu[0] == pytest.approx(2.0, abs=1e-10)
    assert s.active_set == (0,)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3.0, 3.0).filter(lambda p: abs(p - 1.0) > 1e-3))
def test_ineq_oracle_closed_form(p):
    s = solve(oracle_ineq(), [p])
    assert s.w[0] == pytest.approx(min(p, 1.0), abs=1e-9)
    assert s.mu[0] == pytest.approx(max(2 * (p - 1.0), 0.0), abs=1e-9)


def test_eqp_kernel_examples():
    step, mult = solve_eqp(np.eye(2), [[1.0, 1.0]], [1.0, 1.0], [-2.0])
    np.testing.assert_allclose(step, [1.0, 1.0], atol=1e-14)
    assert step.sum() == pytest.approx(2.0)
    step, mult = solve_eqp(np.eye(1), np.zeros((0, 1)), [4.0], [])
    np.testing.assert_allclose(step, [-4.0])
    step, mult, tau = solve_eqp([[0.0, 1.0], [1.0, 0.0]], [[1.0, 0.0]], [1.0, 1.0], [0.0],
                                return_regularization=True)
    assert tau > 0 and np.isfinite(step).all()
    assert step[0] == pytest.approx(0.0, abs=1e-14)


def test_qp_with_inequalities():
    # min 0.5|d|^2 - d1 - d2  s.t.  d1 <= 0.25
    r = solve_qp(np.eye(2), np.array([-1.0, -1.0]), np.zeros((0, 2)), np.zeros(0),
                 np.array([[1.0, 0.0]]), np.array([-0.25]))
    np.testing.assert_allclose(r.d, [0.25, 1.0], atol=1e-12)
    assert r.mu[0] == pytest.approx(0.75)


def test_infeasible_qp():
    with pytest.raises(InfeasibleSubproblem):
        solve_qp(np.eye(1), np.zeros(1), np.zeros((0, 1)), np.zeros(0),
                 np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))


def test_max_iterations_carries_best_iterate():
    w, p = ad.symbols("mi_w mi_p")
    nlp = ParametricNLP(ad.ExprGraph(ad.exp(w) - w * p + ad.cos(3.0 * w), [w], [p]),
                        initial_guess=lambda _: np.array([4.0]))
    with pytest.raises(MaxIterationsExceeded) as err:
        solve(nlp, [0.5], cfg=SolverConfig(max_iter=1))
    assert err.value.best is not None


def test_regularity_failure_reported():
    with pytest.raises(RegularityFailure) as err:
        solve(degenerate(), [0.0])
    assert not err.value.report.licq


def test_warm_start_matches_cold_start(pendulum):
    cold = solve(pendulum, [1.0, 0.5])
    warm = solve(pendulum, [1.02, 0.5], warm_start=cold)
    again = solve(pendulum, [1.02, 0.5])
    np.testing.assert_allclose(warm.w, again.w, atol=1e-6)
    assert warm.info["iterations"] <= again.info["iterations"]


def test_converged_solve_meets_tolerances(pendulum):
    cfg = SolverConfig()
    s = solve(pendulum, [4.0, -2.0], cfg=cfg)
    assert np.abs(kkt_residual(pendulum, s)).max() <= cfg.kkt_tol
    viol = max(np.abs(pendulum.c(s.w, s.p)).max(), np.maximum(pendulum.g(s.w, s.p), 0).max())
    assert viol <= cfg.kkt_tol


def test_deterministic(pendulum):
    a = solve(pendulum, [2.0, 1.0])
    b = solve(pendulum, [2.0, 1.0])
    np.testing.assert_array_equal(a.w, b.w)
    assert a.info["iterations"] == b.info["iterations"]


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(kkt_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(linesearch_backtrack=1.5)
