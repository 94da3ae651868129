"""Fit a GRNN on an augmented dataset and swing the pendulum up with it.

Writes ``demo_out/policy_rollout.csv`` and ``demo_out/expert_rollout.csv``
with matching gnuplot scripts.  ``python demos/swing_up.py``
"""
from mpcaug.augment import AugmentConfig, Sampler, generate
from mpcaug.harness import ExpertPolicy, closed_loop, write_rollout
from mpcaug.pendulum import PARAM_BOX, build_nlp
from mpcaug.policy import fit

nlp = build_nlp()
cfg = AugmentConfig(anchor_sampler=Sampler.grid(10, 10), neighborhood_sampler=Sampler.grid(5, 5))
ds = generate(nlp, PARAM_BOX, cfg)
print(f"{len(ds.anchors)} exact + {len(ds.augmented)} augmented samples "
      f"({ds.n_discarded} discarded) in {ds.t_exact_s + ds.t_augment_s:.1f}s")

policy = fit(ds)
for name, pol in (("policy", policy), ("expert", ExpertPolicy(nlp))):
    trace = closed_loop(pol, (0.0, 0.0), 10.0)
    write_rollout(trace, "demo_out", f"{name}_rollout")
    print(f"{name}: reached={trace.reached} t_reached={trace.t_reached}")
