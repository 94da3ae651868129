import math

import numpy as np
import pytest

from mpcaug.nlp import check_regularity, detect_active_set
from mpcaug.pendulum import (PARAM_BOX, MpcSpec, PendulumBenchmark, PendulumParams, build_nlp,
                             dynamics, energy, plant_step)
from mpcaug.sqp import solve


def test_dimensions():
    nlp = build_nlp(spec=MpcSpec(N=7))
    assert (nlp.n_w, nlp.n_c, nlp.n_g, nlp.n_p) == (21, 14, 14, 2)
    assert nlp.action_indices == (14,) or list(nlp.action_indices) == [14]


def test_plant_equilibria():
    prm = PendulumParams()
    np.testing.assert_array_equal(plant_step(prm, (0.0, 0.0), 0.0, 0.05), [0.0, 0.0])
    np.testing.assert_allclose(plant_step(prm, (math.pi, 0.0), 0.0, 0.05), [math.pi, 0.0],
                               atol=1e-15)


def test_damping_only_acceleration():
    assert dynamics((0.0, 1.0), 0.0, PendulumParams())[1] == pytest.approx(-0.1)
    x = plant_step(PendulumParams(), (0.0, 1.0), 0.0, 1e-6)
    assert (x[1] - 1.0) / 1e-6 == pytest.approx(-0.1, rel=1e-4)


def test_plant_rejects_bad_dt():
    with pytest.raises(ValueError):
        plant_step(PendulumParams(), (0.0, 0.0), 0.0, 0.0)


def test_undamped_energy_nearly_conserved():
    prm = PendulumParams(b=1e-12)
    x = np.array([1.0, 0.0])
    e0 = energy(prm, x)
    for _ in range(200):
        x = plant_step(prm, x, 0.0, 0.01)
    assert energy(prm, x) == pytest.approx(e0, rel=1e-6)


def test_upright_needs_little_torque(pendulum):
    s = solve(pendulum, [3.14, 0.0])
    u0 = pendulum.action(s.w)[0]
    # holding 3.14 (not pi) costs mgl*sin(3.14) ~ 0.016; the optimizer settles near it
    assert abs(u0) < 0.05


def test_pi_state(pendulum):
    s = solve(pendulum, [math.pi, 0.0])
    assert abs(pendulum.action(s.w)[0]) < 1e-2


def test_defects_consistent_with_plant(pendulum):
    s = solve(pendulum, [1.0, -1.0])
    N = pendulum.spec.N
    states = s.w[:2 * N].reshape(N, 2)
    u = s.w[2 * N:]
    x = np.array([1.0, -1.0])
    for k in range(N):
        x = plant_step(pendulum.params, x, u[k], pendulum.spec.dt)
        np.testing.assert_allclose(states[k], x, atol=1e-7)
        x = states[k]


def test_anchor_regularity_on_grid(pendulum):
    lo = [b[0] for b in PARAM_BOX]
    hi = [b[1] for b in PARAM_BOX]
    for om in np.linspace(lo[0], hi[0], 5):
        for omd in np.linspace(lo[1], hi[1], 5):
            s = solve(pendulum, [om, omd])
            assert check_regularity(pendulum, s).ok
            assert detect_active_set(pendulum, s) == ()


def test_benchmark_from_dict():
    b = PendulumBenchmark.from_dict({"params": {"u_max": 30.0}, "mpc": {"N": 10, "Q": [1, 2]}})
    assert b.params.u_max == 30.0 and b.spec.N == 10 and b.spec.Q == (1, 2)
    with pytest.raises(TypeError):
        PendulumBenchmark.from_dict({"params": {"mass": 2.0}})
    with pytest.raises(ValueError):
        PendulumParams(m=-1.0)
