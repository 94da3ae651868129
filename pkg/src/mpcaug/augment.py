"""Predictor-corrector data augmentation over a parameter box.

For every anchor ``p_i`` the NLP is solved exactly, the sensitivity matrix
is computed once, and each neighborhood offset ``dp_j`` yields a predicted
sample (``predictor_only``) or a predicted-then-corrected sample
(``predictor_corrector``).  Samples whose active set changes, or whose
corrector fails, are kept in the dataset flagged as discarded.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context
from typing import Optional, Sequence

import numpy as np

from .kkt import SingularKKT
from .nlp import (AUGMENTED, EXACT_ANCHOR, ParametricNLP, PrimalDualPoint, RegularityFailure,
                  kkt_residual)
from .sensitivity import (CHANGED, ActiveSetChanged, CorrectorConfig, CorrectorDiverged,
                          MaxCorrectorIters, correct, predict, sensitivity_matrix,
                          validate_active_set)
from .sqp import InfeasibleSubproblem, MaxIterationsExceeded, SolverConfig, solve

log = logging.getLogger(__name__)

PREDICTOR_ONLY = "predictor_only"
PREDICTOR_CORRECTOR = "predictor_corrector"
FROM_ANCHOR = "from_anchor"
PATH_FOLLOWING = "path_following"

ACTIVE_SET_CHANGED = "active_set_changed"
CORRECTOR_DIVERGED = "corrector_diverged"
MAX_ITERS = "max_iters"
SINGULAR_KKT = "singular_kkt"


class AugmentationError(RuntimeError):
    """No anchor could be solved."""


@dataclass(frozen=True)
class Sampler:
    """``grid`` (cell-centered, ``dims`` points per axis), ``uniform_random``
    (``count`` points, ``seed``) or ``points`` (explicit list, anchors only)."""

    kind: str = "grid"
    dims: tuple[int, ...] = ()
    count: int = 0
    seed: int = 0
    points: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        if self.kind == "grid":
            if not self.dims or min(self.dims) < 1:
                raise ValueError("grid sampler needs positive dims")
        elif self.kind == "uniform_random":
            if self.count < 1:
                raise ValueError("uniform_random sampler needs count >= 1")
        elif self.kind == "points":
            if not self.points:
                raise ValueError("points sampler needs at least one point")
        else:
            raise ValueError(f"unknown sampler kind {self.kind!r}")

    @classmethod
    def grid(cls, *dims: int) -> "Sampler":
        return cls("grid", dims=tuple(int(d) for d in dims))

    @classmethod
    def uniform_random(cls, count: int, seed: int = 0) -> "Sampler":
        return cls("uniform_random", count=int(count), seed=int(seed))

    @classmethod
    def at(cls, *points) -> "Sampler":
        return cls("points", points=tuple(tuple(float(v) for v in np.ravel(p)) for p in points))

    def sample(self, lo: np.ndarray, hi: np.ndarray, salt: int = 0) -> np.ndarray:
        """Points inside the box ``[lo, hi]``, shape ``(n, dim)``."""
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        if self.kind == "points":
            return np.array(self.points, dtype=float).reshape(len(self.points), -1)
        if self.kind == "uniform_random":
            rng = np.random.default_rng([self.seed, salt])
            return lo + (hi - lo) * rng.random((self.count, lo.size))
        if len(self.dims) != lo.size:
            raise ValueError(f"grid dims {self.dims} do not match box dimension {lo.size}")
        axes = [l + (h - l) * (np.arange(n) + 0.5) / n for l, h, n in zip(lo, hi, self.dims)]
        return np.array(list(itertools.product(*axes)), dtype=float)


@dataclass(frozen=True)
class AugmentConfig:
    anchor_sampler: Sampler = field(default_factory=lambda: Sampler.grid(3, 3))
    neighborhood_sampler: Sampler = field(default_factory=lambda: Sampler.grid(11, 11))
    neighborhood: Optional[tuple[float, ...]] = None
    neighborhood_box: Optional[tuple[tuple[float, float], ...]] = None
    eps_tol: float = 1e-6
    mode: str = PREDICTOR_CORRECTOR
    chaining: str = FROM_ANCHOR
    max_corrector_iters: int = 10
    chord: bool = False
    anchor_retries: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.mode not in (PREDICTOR_ONLY, PREDICTOR_CORRECTOR):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.chaining not in (FROM_ANCHOR, PATH_FOLLOWING):
            raise ValueError(f"unknown chaining {self.chaining!r}")
        if not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive")
        if self.neighborhood is not None and min(self.neighborhood) <= 0:
            raise ValueError("neighborhood half-widths must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def corrector(self, activity_tol: float) -> CorrectorConfig:
        return CorrectorConfig(eps_tol=self.eps_tol, max_corrector_iters=self.max_corrector_iters,
                               chord=self.chord, activity_tol=activity_tol,
                               check_active_set=False)

    def echo(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


@dataclass
class Sample:
    p: np.ndarray
    u: np.ndarray
    kind: str
    anchor_id: int
    index: int
    stationarity_norm: float
    corrector_iters: int = 0
    discarded: bool = False
    reason: str = ""
    residual: float = float("nan")
    point: Optional[PrimalDualPoint] = None


@dataclass
class Dataset:
    """Labeled samples plus run metadata.

    ``t_exact_s`` is the wall-clock spent in anchor solves and
    ``t_augment_s`` the time spent in sensitivities, predictor and corrector
    steps.
    """

    samples: list[Sample]
    n_p: int
    n_u: int
    mode: str = PREDICTOR_CORRECTOR
    eps_tol: float = 1e-6
    t_exact_s: float = 0.0
    t_augment_s: float = 0.0
    sensitivity_calls: dict = field(default_factory=dict)
    skipped_anchors: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def anchors(self) -> list[Sample]:
        return [s for s in self.samples if s.kind == EXACT_ANCHOR]

    @property
    def augmented(self) -> list[Sample]:
        return [s for s in self.samples if s.kind == AUGMENTED]

    @property
    def valid(self) -> list[Sample]:
        return [s for s in self.samples if not s.discarded]

    @property
    def n_discarded(self) -> int:
        return sum(s.discarded for s in self.samples)

    def arrays(self, include_discarded: bool = False) -> tuple[np.ndarray, np.ndarray]:
        rows = self.samples if include_discarded else self.valid
        P = np.array([s.p for s in rows], dtype=float).reshape(len(rows), self.n_p)
        U = np.array([s.u for s in rows], dtype=float).reshape(len(rows), self.n_u)
        return P, U

    # -- serialization ----------------------------------------------------------

    def header(self) -> list[str]:
        return ([f"p_{i}" for i in range(self.n_p)] + [f"u_{i}" for i in range(self.n_u)]
                + ["kind", "anchor_id", "stationarity_norm", "corrector_iters", "discarded",
                   "reason"])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
            writer.writerow(self.header())
            for s in self.samples:
                writer.writerow([_fmt(v) for v in s.p] + [_fmt(v) for v in s.u]
                                + [s.kind, s.anchor_id, _fmt(s.stationarity_norm),
                                   s.corrector_iters, "true" if s.discarded else "false", s.reason])

    def write_primal_dual(self, path) -> None:
        """Full primal-dual vectors of every sample, for independent residual checks."""
        first = next((s.point for s in self.samples if s.point is not None), None)
        if first is None:
            raise ValueError("dataset carries no primal-dual points")
        n_w, n_c, n_g = first.w.size, first.lam.size, first.mu.size
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(["row", "anchor_id"] + [f"p_{i}" for i in range(self.n_p)]
                            + [f"w_{i}" for i in range(n_w)] + [f"lam_{i}" for i in range(n_c)]
                            + [f"mu_{i}" for i in range(n_g)] + ["active_set"])
            for row, s in enumerate(self.samples):
                if s.point is None:
                    continue
                pt = s.point
                writer.writerow([row, s.anchor_id] + [_fmt(v) for v in pt.p]
                                + [_fmt(v) for v in pt.w] + [_fmt(v) for v in pt.lam]
                                + [_fmt(v) for v in pt.mu]
                                + [" ".join(str(j) for j in pt.active_set)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        """Read a dataset CSV; raises ``ValueError`` naming the offending row."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError("row 1: empty dataset file") from None
            n_p = sum(1 for h in header if h.startswith("p_"))
            n_u = sum(1 for h in header if h.startswith("u_"))
            expected = ([f"p_{i}" for i in range(n_p)] + [f"u_{i}" for i in range(n_u)]
                        + ["kind", "anchor_id", "stationarity_norm", "corrector_iters",
                           "discarded", "reason"])
            if n_p == 0 or n_u == 0 or header != expected:
                raise ValueError("row 1: unexpected header")
            samples = []
            counters: dict[int, int] = {}
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise ValueError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
                try:
                    vals = [float(v) for v in row[:n_p + n_u]]
                    kind = row[n_p + n_u]
                    if kind not in (EXACT_ANCHOR, AUGMENTED):
                        raise ValueError(f"unknown kind {kind!r}")
                    anchor_id = int(row[n_p + n_u + 1])
                    stat = float(row[n_p + n_u + 2])
                    iters = int(row[n_p + n_u + 3])
                    disc = row[n_p + n_u + 4]
                    if disc not in ("true", "false"):
                        raise ValueError(f"bad discarded flag {disc!r}")
                except ValueError as err:
                    raise ValueError(f"row {lineno}: {err}") from None
                idx = counters.get(anchor_id, 0)
                counters[anchor_id] = idx + 1
                samples.append(Sample(np.array(vals[:n_p]), np.array(vals[n_p:]), kind,
                                      anchor_id, idx, stat, iters, disc == "true",
                                      row[n_p + n_u + 5]))
        return cls(samples, n_p, n_u)

    def report(self, max_error: float | None = None, extra: dict | None = None) -> dict:
        out = {
            "n_anchors": len(self.anchors),
            "n_augmented": len(self.augmented),
            "n_discarded": self.n_discarded,
            "t_exact_s": round(self.t_exact_s, 3),
            "t_augment_s": round(self.t_augment_s, 3),
        }
        if max_error is not None:
            out["max_error"] = max_error
        out["discard_reasons"] = _count_reasons(self.samples)
        out["skipped_anchors"] = self.skipped_anchors
        out["config"] = self.config
        if extra:
            out.update(extra)
        return out


def _count_reasons(samples) -> dict:
    counts: dict[str, int] = {}
    for s in samples:
        if s.discarded:
            counts[s.reason] = counts.get(s.reason, 0) + 1
    return dict(sorted(counts.items()))


def _fmt(v) -> str:
    return format(float(v), ".17g")


# -- generation -----------------------------------------------------------------


def anchor_layout(pbox, cfg: AugmentConfig):
    """Anchor parameters and the neighborhood box around each one."""
    lo = np.array([b[0] for b in pbox], dtype=float)
    hi = np.array([b[1] for b in pbox], dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(hi >= lo)):
        raise ValueError("parameter box bounds must be finite with lo <= hi")
    anchors = cfg.anchor_sampler.sample(lo, hi)
    if cfg.neighborhood is not None:
        half = np.broadcast_to(np.asarray(cfg.neighborhood, dtype=float), lo.shape)
    elif cfg.anchor_sampler.kind == "grid":
        half = (hi - lo) / (2.0 * np.asarray(cfg.anchor_sampler.dims, dtype=float))
    else:
        half = None
    boxes = []
    for a in anchors:
        if cfg.neighborhood_box is not None:
            boxes.append(np.array(cfg.neighborhood_box, dtype=float).T)
        elif half is not None:
            boxes.append(np.stack([a - half, a + half]))
        else:
            raise ValueError("neighborhood half-widths are required for non-grid anchors")
    return anchors, boxes


def _snake_order(points: np.ndarray, sampler: Sampler, anchor: np.ndarray) -> list[int]:
    if sampler.kind == "grid" and len(sampler.dims) >= 1:
        dims = sampler.dims
        order = []
        for flat in range(len(points)):
            idx = np.unravel_index(flat, dims)
            order.append(idx)
        # boustrophedon over the last axis
        keyed = []
        for flat, idx in enumerate(order):
            key = list(idx)
            if sum(idx[:-1]) % 2 == 1:
                key[-1] = dims[-1] - 1 - key[-1]
            keyed.append((tuple(key), flat))
        return [flat for _, flat in sorted(keyed)]
    dist = np.linalg.norm(points - anchor, axis=1)
    return list(np.argsort(dist, kind="stable"))


def _solve_anchor(nlp, p, solver_cfg, retries, scale, anchor_id):
    rng = np.random.default_rng([977, anchor_id])
    last_err = None
    for attempt in range(retries + 1):
        trial = p if attempt == 0 else p + 1e-3 * scale * rng.uniform(-1.0, 1.0, size=p.shape)
        try:
            pt = solve(nlp, trial, cfg=solver_cfg)
            pt.info["jittered"] = attempt > 0
            return pt, None
        except RegularityFailure as err:
            log.info("anchor %d at %s weakly regular (%s), jittering", anchor_id, trial, err)
            last_err = err
        except (MaxIterationsExceeded, InfeasibleSubproblem, SingularKKT) as err:
            return None, f"{type(err).__name__}: {err}"
    return None, f"RegularityFailure: {last_err}"


def _augment_one(nlp, source, sens, target_p, mode, corr_cfg, activity_tol):
    """Returns (point, discarded_reason or '')."""
    pred = predict(source, sens, target_p - source.p)
    if mode == PREDICTOR_ONLY:
        kkt_residual(nlp, pred)
        reason = ACTIVE_SET_CHANGED if validate_active_set(nlp, pred, activity_tol) == CHANGED else ""
        return pred, reason
    try:
        out = correct(nlp, pred, corr_cfg, sens=sens)
    except CorrectorDiverged:
        return pred, CORRECTOR_DIVERGED
    except MaxCorrectorIters:
        return pred, MAX_ITERS
    except SingularKKT:
        return pred, SINGULAR_KKT
    if validate_active_set(nlp, out, activity_tol) == CHANGED:
        return out, ACTIVE_SET_CHANGED
    return out, ""


def _process_anchor(nlp: ParametricNLP, anchor_id: int, p_anchor, box, cfg: AugmentConfig,
                    solver_cfg: SolverConfig):
    t0 = time.perf_counter()
    scale = box[1] - box[0]
    anchor, err = _solve_anchor(nlp, np.asarray(p_anchor, float), solver_cfg,
                                cfg.anchor_retries, scale, anchor_id)
    t_exact = time.perf_counter() - t0
    if anchor is None:
        return anchor_id, [], t_exact, 0.0, 0, err
    samples = [Sample(anchor.p.copy(), nlp.action(anchor.w), EXACT_ANCHOR, anchor_id, 0,
                      float(anchor.stationarity_norm), 0, False, "",
                      float(anchor.info.get("residual", 0.0)), anchor)]
    t1 = time.perf_counter()
    corr_cfg = cfg.corrector(solver_cfg.activity_tol)
    sens_calls = 0
    try:
        sens = sensitivity_matrix(nlp, anchor, solver_cfg.comp_margin)
        sens_calls += 1
    except (RegularityFailure, SingularKKT) as err:
        return anchor_id, samples, t_exact, time.perf_counter() - t1, sens_calls, \
            f"sensitivity failed: {err}"
    offsets = cfg.neighborhood_sampler.sample(box[0], box[1], salt=anchor_id)
    results: dict[int, tuple] = {}
    if cfg.chaining == FROM_ANCHOR:
        for j, target in enumerate(offsets):
            results[j] = _augment_one(nlp, anchor, sens, target, cfg.mode, corr_cfg,
                                      solver_cfg.activity_tol)
    else:
        sources = [(anchor, sens)]
        for j in _snake_order(offsets, cfg.neighborhood_sampler, anchor.p):
            target = offsets[j]
            weights = 1.0 / np.where(scale > 0, scale, 1.0)
            dists = [np.linalg.norm((s.p - target) * weights) for s, _ in sources]
            src, src_sens = sources[int(np.argmin(dists))]
            point, reason = _augment_one(nlp, src, src_sens, target, cfg.mode, corr_cfg,
                                         solver_cfg.activity_tol)
            results[j] = (point, reason)
            if not reason and cfg.mode == PREDICTOR_CORRECTOR:
                try:
                    sources.append((point, sensitivity_matrix(nlp, point, solver_cfg.comp_margin)))
                    sens_calls += 1
                except (RegularityFailure, SingularKKT):
                    pass
    for j in range(len(offsets)):
        point, reason = results[j]
        samples.append(Sample(point.p.copy(), nlp.action(point.w), AUGMENTED, anchor_id, j + 1,
                              float(point.stationarity_norm), int(point.info.get("corrector_iters", 0)),
                              bool(reason), reason, float(point.info.get("residual", float("nan"))),
                              point))
    return anchor_id, samples, t_exact, time.perf_counter() - t1, sens_calls, None


_WORKER_STATE: dict = {}


def _worker(args):
    nlp, cfg, solver_cfg = _WORKER_STATE["job"]
    return _process_anchor(nlp, *args, cfg, solver_cfg)


def generate(nlp: ParametricNLP, pbox, cfg: AugmentConfig | None = None,
             solver_cfg: SolverConfig | None = None, keep_points: bool = True) -> Dataset:
    """Run predictor(-corrector) augmentation over ``pbox``.

    Parameters
    ----------
    nlp : ParametricNLP
    pbox : sequence of (lo, hi)
        Parameter box; anchors are placed inside it by ``cfg.anchor_sampler``.
    cfg, solver_cfg
        Augmentation and exact-solver settings.
    keep_points : bool
        Keep full primal-dual vectors on the samples (needed for
        :meth:`Dataset.write_primal_dual`).

    Raises
    ------
    AugmentationError
        Every anchor failed.
    """
    cfg = cfg or AugmentConfig()
    solver_cfg = solver_cfg or SolverConfig()
    anchors, boxes = anchor_layout(pbox, cfg)
    jobs = [(i, a, b) for i, (a, b) in enumerate(zip(anchors, boxes))]
    if cfg.workers > 1 and len(jobs) > 1:
        _WORKER_STATE["job"] = (nlp, cfg, solver_cfg)
        try:
            with ProcessPoolExecutor(max_workers=cfg.workers, mp_context=get_context("fork")) as ex:
                outputs = list(ex.map(_worker, jobs))
        finally:
            _WORKER_STATE.clear()
    else:
        outputs = [_process_anchor(nlp, *job, cfg, solver_cfg) for job in jobs]

    samples, t_exact, t_aug, calls, skipped = [], 0.0, 0.0, {}, []
    for anchor_id, anchor_samples, te, ta, n_sens, err in sorted(outputs, key=lambda o: o[0]):
        t_exact += te
        t_aug += ta
        if err is not None:
            log.warning("anchor %d: %s", anchor_id, err)
            skipped.append({"anchor_id": anchor_id, "p": [float(v) for v in anchors[anchor_id]],
                            "error": err})
        if anchor_samples:
            calls[anchor_id] = n_sens
        samples.extend(anchor_samples)
    if not any(s.kind == EXACT_ANCHOR for s in samples):
        raise AugmentationError("no anchor could be solved")
    if not keep_points:
        for s in samples:
            s.point = None
    samples.sort(key=lambda s: (s.anchor_id, s.index))
    return Dataset(samples, nlp.n_p, len(nlp.action_indices), cfg.mode, cfg.eps_tol, t_exact,
                   t_aug, calls, skipped, {"augment": cfg.echo(), "solver": asdict(solver_cfg),
                                           "pbox": [[float(a), float(b)] for a, b in pbox]})


# -- benchmarking against exact re-solves ------------------------------------------


@dataclass
class ProbeReport:
    max_error: float
    errors: np.ndarray
    probe_rows: list
    n_skipped: int
    t_resolve_s: float

    @property
    def mean_resolve_s(self) -> float:
        n = len(self.errors)
        return self.t_resolve_s / n if n else float("nan")


class ExactCache:
    """Memoized exact solves keyed by the parameter bytes (shared between datasets)."""

    def __init__(self, nlp: ParametricNLP, solver_cfg: SolverConfig | None = None):
        self.nlp = nlp
        self.solver_cfg = solver_cfg or SolverConfig()
        self._cache: dict[bytes, tuple] = {}
        self.solve_time = 0.0
        self.n_solves = 0

    def action(self, p) -> np.ndarray:
        """Exact optimal action at ``p`` (cold start); raises on solver failure."""
        key = np.asarray(p, dtype=float).tobytes()
        if key not in self._cache:
            t0 = time.perf_counter()
            try:
                pt = solve(self.nlp, p, cfg=self.solver_cfg, require_regular=False)
                value = (self.nlp.action(pt.w), None)
            except (MaxIterationsExceeded, InfeasibleSubproblem, SingularKKT) as err:
                value = (None, err)
            dt = time.perf_counter() - t0
            self.solve_time += dt
            self.n_solves += 1
            self._cache[key] = value + (dt,)
        u, err, _ = self._cache[key]
        if err is not None:
            raise err
        return u

    def elapsed(self, p) -> float:
        return self._cache[np.asarray(p, dtype=float).tobytes()][2]


def probe_policy_error(ds: Dataset, nlp: ParametricNLP, solver_cfg: SolverConfig | None = None,
                       subsample: int | None = 200, seed: int = 0,
                       cache: ExactCache | None = None) -> ProbeReport:
    """Re-solve ``Pi(p)`` at augmented samples and compare actions.

    ``subsample=None`` probes every non-discarded augmented sample.
    """
    cache = cache or ExactCache(nlp, solver_cfg)
    rows = [i for i, s in enumerate(ds.samples) if s.kind == AUGMENTED and not s.discarded]
    if not rows:
        rows = [i for i, s in enumerate(ds.samples) if not s.discarded]
    if not rows:
        raise ValueError("dataset has no usable samples")
    if subsample is not None and subsample < len(rows):
        rng = np.random.default_rng(seed)
        rows = sorted(rng.choice(rows, size=subsample, replace=False).tolist())
    errors, used, skipped, t = [], [], 0, 0.0
    for i in rows:
        s = ds.samples[i]
        try:
            u_star = cache.action(s.p)
        except (MaxIterationsExceeded, InfeasibleSubproblem, SingularKKT):
            skipped += 1
            continue
        t += cache.elapsed(s.p)
        errors.append(float(np.linalg.norm(np.asarray(s.u) - u_star)))
        used.append(i)
    errors = np.array(errors)
    return ProbeReport(float(errors.max()) if errors.size else float("nan"), errors, used,
                       skipped, t)


def max_policy_error(ds: Dataset, nlp: ParametricNLP, solver_cfg: SolverConfig | None = None,
                     subsample: int = 200, seed: int = 0) -> float:
    """Largest ``|u_hat - u*|`` over ``subsample`` randomly chosen augmented samples."""
    return probe_policy_error(ds, nlp, solver_cfg, subsample, seed).max_error


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
