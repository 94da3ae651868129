"""Interactive imitation learning with and without sensitivity augmentation.

Starts from the linear controller u = -11 w - 7 wdot + 35 and prints the
per-rollout table of both runs.  ``python demos/imitation.py``
"""
from mpcaug.harness import imitation_loop
from mpcaug.pendulum import build_nlp

nlp = build_nlp()
for n_aug in (25, 0):
    result = imitation_loop(rollouts=25, feedback_augment=n_aug, nlp=nlp)
    print(f"\naugmented samples per feedback: {n_aug}")
    for row in result.table():
        print(f"  rollout {row['rollout']:2d}  success={row['success']!s:5}  "
              f"labels={row['n_feedback']:3d}  dataset={row['dataset_size']}")
    print(f"  first success: {result.first_success}")
