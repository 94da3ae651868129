"""Predictor-only vs predictor-corrector augmentation on the pendulum NMPC.

Runs one of the three benchmark cases at desk scale and writes datasets and a
JSON report to ``demo_out/``.  ``python demos/case_study.py 2``
"""
import json
import logging
import sys

from mpcaug.harness import run_case

logging.basicConfig(level=logging.INFO, format="%(message)s")
case_id = int(sys.argv[1]) if len(sys.argv) > 1 else 2
report = run_case(case_id, out_dir="demo_out")
print(json.dumps(report.to_dict(), indent=2))
