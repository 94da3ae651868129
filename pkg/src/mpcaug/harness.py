"""Benchmark cases, closed-loop rollouts and the imitation-learning loop."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .augment import (PREDICTOR_CORRECTOR, PREDICTOR_ONLY, AugmentConfig, Dataset, ExactCache,
                      Sampler, _augment_one, generate, probe_policy_error, write_report)
from .kkt import SingularKKT
from .nlp import RegularityFailure
from .pendulum import PARAM_BOX, PendulumBenchmark, plant_step
from .policy import PolicyModel, fit
from .sensitivity import sensitivity_matrix
from .sqp import InfeasibleSubproblem, MaxIterationsExceeded, SolverConfig, solve

log = logging.getLogger(__name__)

TARGET = (3.14, 0.0)
BAND = (0.15, 0.2)
HOLD_S = 1.0

# desk-scale defaults: (anchor grid, per-anchor neighborhood grid)
CASES = {
    1: {"anchors": (10, 10), "neighborhood": (5, 5)},
    2: {"anchors": (3, 3), "neighborhood": (11, 11)},
    3: {"anchors": (1, 1), "neighborhood": (40, 40)},
}
# sizes used in the original benchmark study
FULL_CASES = {
    1: {"anchors": (10, 10), "neighborhood": (10, 10)},
    2: {"anchors": (3, 3), "neighborhood": (33, 33)},
    3: {"anchors": (1, 1), "neighborhood": (100, 100)},
}

CASE_KEYS = {"anchors", "neighborhood", "eps_tol", "chaining", "probe_count", "seed",
             "resolve_all", "workers", "pendulum", "solver", "max_corrector_iters"}


@dataclass
class CaseReport:
    case_id: int
    n_anchors: int
    samples_per_anchor: int
    n_exact: int
    n_augmented: int
    n_discarded: int
    n_discarded_predictor_only: int
    n_discarded_predictor_corrector: int
    t_exact_s: float
    t_augment_s: float
    t_augment_predictor_only_s: float
    t_exact_resolve_s: float
    t_exact_resolve_estimated: bool
    max_error_predictor_only: float
    max_error_predictor_corrector: float
    mean_corrector_iters: float
    probe_count: int
    seeds: dict
    datasets: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("datasets")
        for key in ("t_exact_s", "t_augment_s", "t_augment_predictor_only_s", "t_exact_resolve_s"):
            out[key] = round(out[key], 3)
        pc = self.max_error_predictor_corrector
        out["error_ratio"] = self.max_error_predictor_only / pc if pc > 0 else None
        return out


def case_config(case_id: int, overrides: dict | None = None) -> dict:
    if case_id not in CASES:
        raise ValueError(f"unknown case {case_id}; expected one of {sorted(CASES)}")
    overrides = dict(overrides or {})
    unknown = set(overrides) - CASE_KEYS
    if unknown:
        raise ValueError(f"unknown case option(s): {', '.join(sorted(unknown))}")
    cfg = {"eps_tol": 1e-6, "chaining": "from_anchor", "probe_count": 200, "seed": 0,
           "resolve_all": False, "workers": 1, "pendulum": {}, "solver": {},
           "max_corrector_iters": 10, **CASES[case_id]}
    cfg.update(overrides)
    return cfg


def run_case(case_id: int, overrides: dict | None = None, out_dir=None, nlp=None) -> CaseReport:
    """Run one benchmark case in both predictor-only and predictor-corrector mode.

    Both modes share anchors and neighborhood samples.  Policy errors are
    measured against exact re-solves at ``probe_count`` random augmented
    samples, or at all of them when ``resolve_all`` is set (which also makes
    ``t_exact_resolve_s`` a measurement instead of an extrapolation).
    """
    cfg = case_config(case_id, overrides)
    if nlp is None:
        nlp = PendulumBenchmark.from_dict(cfg["pendulum"]).build()
    solver_cfg = SolverConfig(**cfg["solver"])
    datasets = {}
    for mode in (PREDICTOR_ONLY, PREDICTOR_CORRECTOR):
        acfg = AugmentConfig(anchor_sampler=Sampler.grid(*cfg["anchors"]),
                             neighborhood_sampler=Sampler.grid(*cfg["neighborhood"]),
                             eps_tol=cfg["eps_tol"], mode=mode, chaining=cfg["chaining"],
                             max_corrector_iters=cfg["max_corrector_iters"],
                             workers=cfg["workers"])
        datasets[mode] = generate(nlp, PARAM_BOX, acfg, solver_cfg)
    cache = ExactCache(nlp, solver_cfg)
    subsample = None if cfg["resolve_all"] else cfg["probe_count"]
    probes = {m: probe_policy_error(ds, nlp, solver_cfg, subsample, cfg["seed"], cache)
              for m, ds in datasets.items()}
    pc = datasets[PREDICTOR_CORRECTOR]
    po = datasets[PREDICTOR_ONLY]
    n_aug = len(pc.augmented)
    probe = probes[PREDICTOR_CORRECTOR]
    if cfg["resolve_all"] and probe.n_skipped == 0:
        t_resolve, estimated = probe.t_resolve_s, False
    else:
        t_resolve, estimated = probe.mean_resolve_s * n_aug, True
    iters = [s.corrector_iters for s in pc.augmented if not s.discarded]
    report = CaseReport(
        case_id=case_id, n_anchors=int(np.prod(cfg["anchors"])),
        samples_per_anchor=int(np.prod(cfg["neighborhood"])), n_exact=len(pc.anchors),
        n_augmented=n_aug, n_discarded=pc.n_discarded, n_discarded_predictor_only=po.n_discarded,
        n_discarded_predictor_corrector=pc.n_discarded, t_exact_s=pc.t_exact_s,
        t_augment_s=pc.t_augment_s, t_augment_predictor_only_s=po.t_augment_s,
        t_exact_resolve_s=t_resolve, t_exact_resolve_estimated=estimated,
        max_error_predictor_only=probes[PREDICTOR_ONLY].max_error,
        max_error_predictor_corrector=probe.max_error,
        mean_corrector_iters=float(np.mean(iters)) if iters else float("nan"),
        probe_count=len(probe.errors), seeds={"probe": cfg["seed"]}, datasets=datasets)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for mode, ds in datasets.items():
            ds.to_csv(out / f"case{case_id}_{mode}.csv")
        pc.write_primal_dual(out / f"case{case_id}_{PREDICTOR_CORRECTOR}_primal_dual.csv")
        write_report(out / f"case{case_id}_report.json", report.to_dict())
    return report


# -- closed loop ---------------------------------------------------------------------


@dataclass
class RolloutTrace:
    t: np.ndarray
    x: np.ndarray  # (K + 1, 2)
    u: np.ndarray  # (K,)
    reached: bool
    t_reached: Optional[float]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(["t", "omega", "omegadot", "u"])
            for k, tk in enumerate(self.t):
                u = self.u[k] if k < len(self.u) else float("nan")
                writer.writerow([format(v, ".17g") for v in (tk, *self.x[k], u)])

    def write_gnuplot(self, path, csv_name: str) -> None:
        Path(path).write_text(
            "set datafile separator ','\n"
            "set key autotitle columnhead\n"
            "set xlabel 't [s]'\n"
            f"plot '{csv_name}' using 1:2 with lines, '' using 1:3 with lines, "
            "'' using 1:4 with steps\n")


def in_band(x, target=TARGET, band=BAND) -> bool:
    return abs(x[0] - target[0]) <= band[0] and abs(x[1] - target[1]) <= band[1]


def first_hold(t, x, hold: float = HOLD_S) -> Optional[float]:
    """Time from which the state stays in the target band until the end of the trace.

    Returns ``None`` unless that final in-band stretch lasts at least
    ``hold`` seconds.  A slow transit through the band does not count.
    """
    ok = np.array([in_band(xi) for xi in x])
    if not ok[-1]:
        return None
    outside = np.flatnonzero(~ok)
    k = int(outside[-1]) + 1 if outside.size else 0
    if t[-1] - t[k] < hold - 1e-9:
        return None
    return float(t[k])


class LinearPolicy:
    """``u = k_omega * omega + k_omegadot * omegadot + k_0``."""

    def __init__(self, gains=(-11.0, -7.0, 35.0)):
        self.gains = tuple(float(g) for g in gains)

    def __call__(self, x) -> np.ndarray:
        return np.array([self.gains[0] * x[0] + self.gains[1] * x[1] + self.gains[2]])


class ExpertPolicy:
    """Exact NMPC: solves the NLP at every state, warm-started from the last solution."""

    def __init__(self, nlp, solver_cfg: SolverConfig | None = None):
        self.nlp = nlp
        self.solver_cfg = solver_cfg or SolverConfig()
        self.last = None
        self.failures = 0

    def solve(self, x):
        try:
            pt = solve(self.nlp, np.asarray(x, float), warm_start=self.last, cfg=self.solver_cfg,
                       require_regular=False)
        except (MaxIterationsExceeded, InfeasibleSubproblem, SingularKKT):
            try:
                pt = solve(self.nlp, np.asarray(x, float), cfg=self.solver_cfg,
                           require_regular=False)
            except (MaxIterationsExceeded, InfeasibleSubproblem, SingularKKT):
                self.failures += 1
                return None
        self.last = pt
        return pt

    def __call__(self, x) -> np.ndarray:
        pt = self.solve(x)
        if pt is None:
            return np.zeros(len(self.nlp.action_indices))
        return self.nlp.action(pt.w)


def closed_loop(policy: Callable, x0=(0.0, 0.0), T: float = 10.0, dt: float | None = None,
                bench: PendulumBenchmark | None = None, on_step=None) -> RolloutTrace:
    """Simulate the plant under ``policy`` (torques clipped to ``+-u_max``).

    ``on_step(k, x)`` is called with every visited state before the action is
    applied.
    """
    bench = bench or PendulumBenchmark()
    dt = bench.spec.dt if dt is None else dt
    if not dt > 0 or not T > 0:
        raise ValueError("T and dt must be positive")
    K = int(round(T / dt))
    x = np.asarray(x0, dtype=float)
    xs, us = [x], []
    umax = bench.params.u_max
    for k in range(K):
        if on_step is not None:
            on_step(k, x)
        u = float(np.clip(np.ravel(policy(x))[0], -umax, umax))
        x = plant_step(bench.params, x, u, dt)
        xs.append(x)
        us.append(u)
    t = dt * np.arange(K + 1)
    X = np.array(xs)
    t_hit = first_hold(t, X)
    return RolloutTrace(t, X, np.array(us), t_hit is not None, t_hit)


def write_rollout(trace: RolloutTrace, out_dir, stem: str = "rollout") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / f"{stem}.csv")
    trace.write_gnuplot(out / f"{stem}.gp", f"{stem}.csv")


# -- imitation learning ----------------------------------------------------------------


@dataclass(frozen=True)
class ImitationConfig:
    x0: tuple[float, float] = (0.0, 0.0)
    T: float = 5.0
    half_widths: tuple[float, float] = (0.1, 0.25)
    eps_tol: float = 1e-6
    seed: int = 0
    stop_on_success: bool = True


@dataclass
class RolloutRecord:
    rollout: int
    success: bool
    t_reached: Optional[float]
    n_feedback: int
    n_augmented: int
    dataset_size: int
    max_abs_omegadot: float
    n_outside_box: int = 0
    n_expert_failures: int = 0


@dataclass
class ImitationResult:
    records: list[RolloutRecord]
    policy: object
    dataset_P: np.ndarray
    dataset_U: np.ndarray

    @property
    def first_success(self) -> Optional[int]:
        return next((r.rollout for r in self.records if r.success), None)

    def table(self) -> list[dict]:
        return [asdict(r) for r in self.records]


def imitation_loop(initial_policy=(-11.0, -7.0, 35.0), rollouts: int = 25,
                   feedback_augment: int = 25, cfg: ImitationConfig | None = None,
                   bench: PendulumBenchmark | None = None, nlp=None,
                   solver_cfg: SolverConfig | None = None) -> ImitationResult:
    """DAgger-style loop: roll out, label visited states with the expert, augment, refit.

    Rollout 1 uses the linear ``initial_policy``.  Every visited state inside
    ``PARAM_BOX`` is labeled by the exact NMPC (states outside it are counted
    and skipped) and, when ``feedback_augment > 0``, that many
    extra samples are drawn uniformly in a box of ``cfg.half_widths`` around
    it and labeled by predictor-corrector.
    """
    cfg = cfg or ImitationConfig()
    bench = bench or PendulumBenchmark()
    nlp = nlp or bench.build()
    solver_cfg = solver_cfg or SolverConfig()
    if rollouts < 1 or feedback_augment < 0:
        raise ValueError("rollouts must be >= 1 and feedback_augment >= 0")
    expert = ExpertPolicy(nlp, solver_cfg)
    corr_cfg = AugmentConfig(eps_tol=cfg.eps_tol).corrector(solver_cfg.activity_tol)
    rng = np.random.default_rng(cfg.seed)
    half = np.asarray(cfg.half_widths, dtype=float)
    P, U = [], []
    policy = LinearPolicy(initial_policy)
    records = []
    for r in range(1, rollouts + 1):
        trace = closed_loop(policy, cfg.x0, cfg.T, bench=bench)
        n_fb = n_aug = n_out = 0
        fails0 = expert.failures
        expert.last = None
        for x in trace.x[:-1]:
            if not all(lo <= xi <= hi for xi, (lo, hi) in zip(x, PARAM_BOX)):
                n_out += 1
                continue
            pt = expert.solve(x)
            if pt is None:
                log.warning("expert solve failed at %s; skipped", x)
                continue
            P.append(pt.p.copy())
            U.append(nlp.action(pt.w))
            n_fb += 1
            if feedback_augment == 0:
                continue
            offsets = rng.uniform(-half, half, size=(feedback_augment, half.size))
            try:
                sens = sensitivity_matrix(nlp, pt, solver_cfg.comp_margin)
            except (RegularityFailure, SingularKKT):
                continue
            for dp in offsets:
                point, reason = _augment_one(nlp, pt, sens, pt.p + dp, PREDICTOR_CORRECTOR,
                                             corr_cfg, solver_cfg.activity_tol)
                if not reason:
                    P.append(point.p.copy())
                    U.append(nlp.action(point.w))
                    n_aug += 1
        records.append(RolloutRecord(r, trace.reached, trace.t_reached, n_fb, n_aug, len(P),
                                     float(np.abs(trace.x[:, 1]).max()), n_out,
                                     expert.failures - fails0))
        log.info("rollout %d: success=%s dataset=%d", r, trace.reached, len(P))
        if trace.reached and cfg.stop_on_success:
            break
        if r < rollouts:
            policy = fit(np.array(P), np.array(U))
    return ImitationResult(records, policy, np.array(P), np.array(U))
