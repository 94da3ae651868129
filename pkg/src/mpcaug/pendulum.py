"""Inverted-pendulum swing-up NMPC as a parametric NLP in the initial state.

Dynamics: ``m l^2 omega'' = u - b omega' - m g l sin(omega)``, integrated
with one RK4 step per shooting interval.  The decision vector is
``w = (x_1, ..., x_N, u_0, ..., u_{N-1})`` with ``x_k = (omega_k, omegadot_k)``
and the parameter is the measured state ``p = x_0``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import adgraph as ad
from .nlp import ParametricNLP

PARAM_BOX = ((0.0, 2.0 * math.pi), (-5.0, 5.0))


@dataclass(frozen=True)
class PendulumParams:
    m: float = 1.0
    l: float = 1.0
    b: float = 0.1
    grav: float = 9.81
    u_max: float = 50.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class MpcSpec:
    N: int = 40
    dt: float = 0.05
    Q: tuple[float, float] = (10.0, 0.1)
    R: float = 0.1
    P_term: tuple[float, float] = (10.0, 0.1)
    x_ref: tuple[float, float] = (3.14, 0.0)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if min(*self.Q, self.R, *self.P_term) < 0:
            raise ValueError("weights must be non-negative")


def dynamics(x, u, params: PendulumParams, sin=math.sin):
    """Right-hand side ``(omegadot, omegaddot)``; works on floats or expressions."""
    omega, omegadot = x
    ml2 = params.m * params.l ** 2
    mgl = params.m * params.grav * params.l
    return omegadot, (u - params.b * omegadot - mgl * sin(omega)) / ml2


def rk4(x, u, dt: float, params: PendulumParams, sin=math.sin):
    f = lambda z: dynamics(z, u, params, sin)  # noqa: E731
    k1 = f(x)
    k2 = f([xi + 0.5 * dt * ki for xi, ki in zip(x, k1)])
    k3 = f([xi + 0.5 * dt * ki for xi, ki in zip(x, k2)])
    k4 = f([xi + dt * ki for xi, ki in zip(x, k3)])
    return [xi + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
            for xi, a, b, c, d in zip(x, k1, k2, k3, k4)]


def plant_step(params: PendulumParams, x, u: float, dt: float) -> np.ndarray:
    """Advance the plant one RK4 step of length ``dt`` under constant torque ``u``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return np.array(rk4([float(x[0]), float(x[1])], float(u), dt, params))


def energy(params: PendulumParams, x) -> float:
    """Kinetic plus potential energy (zero at the hanging rest state)."""
    return (0.5 * params.m * params.l ** 2 * x[1] ** 2
            + params.m * params.grav * params.l * (1.0 - math.cos(x[0])))


def _stage(x, u, spec: MpcSpec):
    return (spec.Q[0] * (x[0] - spec.x_ref[0]) ** 2 + spec.Q[1] * (x[1] - spec.x_ref[1]) ** 2
            + spec.R * u ** 2)


def build_nlp(params: PendulumParams | None = None, spec: MpcSpec | None = None) -> ParametricNLP:
    """Multiple-shooting transcription with ``p = x_0``.

    ``n_w = 3N``, ``n_c = 2N`` (RK4 defects ``x_{k+1} - F(x_k, u_k)``),
    ``n_g = 2N`` (``u_k - u_max <= 0`` then ``-u_k - u_max <= 0`` for each
    ``k``); the action is ``u_0`` at index ``2N``.
    """
    params = params or PendulumParams()
    spec = spec or MpcSpec()
    N = spec.N
    p = ad.symbols("omega_0 omegadot_0")
    xs = [[ad.symbol(f"omega_{k}"), ad.symbol(f"omegadot_{k}")] for k in range(1, N + 1)]
    us = [ad.symbol(f"u_{k}") for k in range(N)]
    w = [v for x in xs for v in x] + us
    traj = [p] + xs
    cost = ad.const(0.0)
    defects, bounds = [], []
    for k in range(N):
        cost = cost + _stage(traj[k], us[k], spec)
        nxt = rk4(traj[k], us[k], spec.dt, params, sin=ad.sin)
        defects += [traj[k + 1][0] - nxt[0], traj[k + 1][1] - nxt[1]]
        bounds += [us[k] - params.u_max, -us[k] - params.u_max]
    xN = traj[N]
    cost = cost + spec.P_term[0] * (xN[0] - spec.x_ref[0]) ** 2 \
        + spec.P_term[1] * (xN[1] - spec.x_ref[1]) ** 2

    def initial_guess(p0):
        x = np.asarray(p0, dtype=float)
        states = []
        for _ in range(N):
            x = plant_step(params, x, 0.0, spec.dt)
            states.append(x)
        return np.concatenate([np.ravel(states), np.zeros(N)])

    nlp = ParametricNLP(ad.ExprGraph(cost, w, p), ad.ExprGraph(defects, w, p),
                        ad.ExprGraph(bounds, w, p), action_indices=[2 * N],
                        initial_guess=initial_guess, name="pendulum")
    nlp.params = params
    nlp.spec = spec
    return nlp


@dataclass(frozen=True)
class PendulumBenchmark:
    """Convenience bundle of plant parameters and MPC settings."""

    params: PendulumParams = field(default_factory=PendulumParams)
    spec: MpcSpec = field(default_factory=MpcSpec)

    @classmethod
    def from_dict(cls, cfg: dict) -> "PendulumBenchmark":
        cfg = dict(cfg)
        spec = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg.pop("mpc", {}).items()}
        return cls(PendulumParams(**cfg.pop("params", {})), MpcSpec(**spec))

    def build(self) -> ParametricNLP:
        return build_nlp(self.params, self.spec)
