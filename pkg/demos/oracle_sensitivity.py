"""Sensitivities on the two toy problems with closed-form solutions.

Run with ``python demos/oracle_sensitivity.py``.
"""
import numpy as np

from mpcaug.augment import AugmentConfig, Sampler, generate
from mpcaug.oracles import oracle_eqp, oracle_ineq
from mpcaug.sensitivity import predict, sensitivity_matrix
from mpcaug.sqp import solve

# equality-constrained QP: the solution is affine in p, so the predictor is exact
nlp = oracle_eqp()
anchor = solve(nlp, [1.0])
sens = sensitivity_matrix(nlp, anchor)
print("dw/dp, dlam/dp =", sens.H[:, 0])
for dp in (0.5, 3.0, -8.0):
    s = predict(anchor, sens, [dp])
    print(f"p={1 + dp:5.1f}  predicted w={s.w}  exact w={(1 + dp) / 2:.4f}")

# w <= 1 becomes active at p = 1: samples beyond the kink are discarded
cfg = AugmentConfig(anchor_sampler=Sampler.at([0.5]), neighborhood_sampler=Sampler.grid(7),
                    neighborhood_box=((0.0, 1.5),))
ds = generate(oracle_ineq(), [(0.0, 1.5)], cfg)
for s in ds.augmented:
    w = s.point.w[0]
    print(f"p={s.p[0]:.3f}  w={w:.6f}  discarded={s.discarded} {s.reason}")
