"""Command-line entry point: ``mpcaug {generate,fit,case,rollout,imitate}``.

Structured settings come from JSON config files; flags carry only paths,
case numbers and a few scalars.  Exit status is 0 on success, 1 on runtime
failure and 2 on configuration errors; failures print one JSON object on
stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import harness
from .augment import AugmentConfig, Dataset, Sampler, probe_policy_error, generate, write_report
from .oracles import PROBLEMS
from .pendulum import PARAM_BOX, PendulumBenchmark
from .policy import PolicyModel, fit
from .sqp import SolverConfig

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_pos_int = {"type": "integer", "minimum": 1}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_box = {"type": "array", "items": _pair, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SAMPLER = {"oneOf": [
    _obj({"kind": {"const": "grid"}, "dims": {"type": "array", "items": _pos_int, "minItems": 1}},
         ["kind", "dims"]),
    _obj({"kind": {"const": "uniform_random"}, "count": _pos_int,
          "seed": {"type": "integer"}}, ["kind", "count"]),
    _obj({"kind": {"const": "points"},
          "points": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 1},
                     "minItems": 1}}, ["kind", "points"]),
]}

PENDULUM = _obj({
    "params": _obj({k: _pos for k in ("m", "l", "b", "grav", "u_max")}),
    "mpc": _obj({"N": _pos_int, "dt": _pos, "Q": _pair, "R": {"type": "number", "minimum": 0},
                 "P_term": _pair, "x_ref": _pair}),
})

SOLVER = _obj({"kkt_tol": _pos, "max_iter": _pos_int, "merit_penalty": _pos,
               "regularization_floor": _pos, "linesearch_backtrack": _pos, "armijo": _pos,
               "min_step": _pos, "activity_tol": _pos, "comp_margin": _pos})

GENERATE_SCHEMA = _obj({
    "problem": {"enum": ["pendulum", *PROBLEMS]},
    "pendulum": PENDULUM,
    "pbox": _box,
    "solver": SOLVER,
    "augment": _obj({
        "anchors": SAMPLER, "neighborhood": SAMPLER,
        "half_widths": {"type": "array", "items": _pos, "minItems": 1},
        "box": _box,
        "eps_tol": _pos,
        "mode": {"enum": ["predictor_only", "predictor_corrector"]},
        "chaining": {"enum": ["from_anchor", "path_following"]},
        "max_corrector_iters": {"type": "integer", "minimum": 0},
        "chord": {"type": "boolean"},
        "anchor_retries": {"type": "integer", "minimum": 0},
    }),
    "probe": _obj({"subsample": _pos_int, "seed": {"type": "integer"}}),
    "workers": _pos_int,
    "output_dir": {"type": "string"},
    "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
}, ["problem"])

CASE_SCHEMA = _obj({
    "anchors": {"type": "array", "items": _pos_int, "minItems": 2, "maxItems": 2},
    "neighborhood": {"type": "array", "items": _pos_int, "minItems": 2, "maxItems": 2},
    "eps_tol": _pos, "chaining": {"enum": ["from_anchor", "path_following"]},
    "probe_count": _pos_int, "seed": {"type": "integer"}, "resolve_all": {"type": "boolean"},
    "workers": _pos_int, "pendulum": PENDULUM, "solver": SOLVER,
    "max_corrector_iters": {"type": "integer", "minimum": 0},
})

IMITATE_SCHEMA = _obj({
    "pendulum": PENDULUM, "solver": SOLVER, "x0": _pair, "T": _pos,
    "half_widths": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
    "eps_tol": _pos, "seed": {"type": "integer"}, "stop_on_success": {"type": "boolean"},
    "initial_policy": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
})

ROLLOUT_SCHEMA = _obj({"pendulum": PENDULUM, "solver": SOLVER})


def load_config(path, schema: dict) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON: {err}") from None
    validate(cfg, schema)
    return cfg


def validate(cfg, schema: dict) -> None:
    errors = list(jsonschema.Draft202012Validator(schema).iter_errors(cfg))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        field = ".".join(str(part) for part in err.absolute_path)
        raise ConfigError(f"{field or '<root>'}: {err.message}", field)


def _sampler(d: dict) -> Sampler:
    kind = d["kind"]
    if kind == "grid":
        return Sampler.grid(*d["dims"])
    if kind == "uniform_random":
        return Sampler.uniform_random(d["count"], d.get("seed", 0))
    return Sampler.at(*d["points"])


def _problem(cfg: dict):
    name = cfg["problem"]
    if name == "pendulum":
        return PendulumBenchmark.from_dict(cfg.get("pendulum", {})).build(), PARAM_BOX
    if "pendulum" in cfg:
        raise ConfigError("pendulum settings given for a non-pendulum problem", "pendulum")
    if "pbox" not in cfg:
        raise ConfigError(f"pbox is required for problem {name!r}", "pbox")
    return PROBLEMS[name](), None


def augment_config(cfg: dict, n_p: int) -> AugmentConfig:
    a = dict(cfg.get("augment", {}))
    kwargs = {"workers": cfg.get("workers", os.cpu_count() or 1)}
    if "anchors" in a:
        kwargs["anchor_sampler"] = _sampler(a.pop("anchors"))
    if "neighborhood" in a:
        kwargs["neighborhood_sampler"] = _sampler(a.pop("neighborhood"))
    if "half_widths" in a:
        kwargs["neighborhood"] = tuple(a.pop("half_widths"))
    if "box" in a:
        kwargs["neighborhood_box"] = tuple(tuple(b) for b in a.pop("box"))
    kwargs.update(a)
    for key, sampler in (("anchors", kwargs.get("anchor_sampler")),
                         ("neighborhood", kwargs.get("neighborhood_sampler"))):
        if sampler is not None and sampler.kind == "grid" and len(sampler.dims) != n_p:
            raise ConfigError(f"grid dims must have {n_p} entries", f"augment.{key}.dims")
    if kwargs.get("anchor_sampler") is None:
        kwargs["anchor_sampler"] = Sampler.grid(*([3] * n_p))
    if kwargs.get("neighborhood_sampler") is None:
        kwargs["neighborhood_sampler"] = Sampler.grid(*([11] * n_p))
    try:
        return AugmentConfig(**kwargs)
    except ValueError as err:
        raise ConfigError(str(err), "augment") from None


def _solver(cfg: dict) -> SolverConfig:
    try:
        return SolverConfig(**cfg.get("solver", {}))
    except ValueError as err:
        raise ConfigError(str(err), "solver") from None


def cmd_generate(args) -> int:
    cfg = load_config(args.config, GENERATE_SCHEMA)
    nlp, default_box = _problem(cfg)
    pbox = cfg.get("pbox", default_box)
    if len(pbox) != nlp.n_p:
        raise ConfigError(f"pbox must have {nlp.n_p} rows", "pbox")
    acfg = augment_config(cfg, nlp.n_p)
    solver_cfg = _solver(cfg)
    out = Path(args.out or cfg.get("output_dir", "."))
    name = cfg.get("name", "dataset")
    ds = generate(nlp, pbox, acfg, solver_cfg)
    extra = {"problem": cfg["problem"]}
    max_error = None
    if "probe" in cfg:
        probe = probe_policy_error(ds, nlp, solver_cfg, cfg["probe"].get("subsample", 200),
                                   cfg["probe"].get("seed", 0))
        max_error = probe.max_error
        extra["probe_count"] = len(probe.errors)
    out.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out / f"{name}.csv")
    ds.write_primal_dual(out / f"{name}_primal_dual.csv")
    write_report(out / f"{name}_report.json", ds.report(max_error, extra))
    print(json.dumps({"dataset": str(out / f"{name}.csv"), "samples": len(ds),
                      "discarded": ds.n_discarded}))
    return EXIT_OK


def cmd_fit(args) -> int:
    ds = Dataset.from_csv(args.dataset)
    model = fit(ds, bandwidth=args.bandwidth)
    Path(args.model).parent.mkdir(parents=True, exist_ok=True)
    model.save(args.model)
    print(json.dumps({"model": args.model, "centers": len(model.centers),
                      "bandwidth": model.bandwidth}))
    return EXIT_OK


def cmd_case(args) -> int:
    overrides = load_config(args.config, CASE_SCHEMA) if args.config else {}
    if args.full:
        overrides = {**harness.FULL_CASES[args.case], **overrides}
    report = harness.run_case(args.case, overrides, out_dir=args.out)
    summary = report.to_dict()
    print(json.dumps({k: summary[k] for k in ("case_id", "max_error_predictor_only",
                                              "max_error_predictor_corrector", "error_ratio")}))
    return EXIT_OK


def _bench(cfg: dict) -> PendulumBenchmark:
    return PendulumBenchmark.from_dict(cfg.get("pendulum", {}))


def cmd_rollout(args) -> int:
    cfg = load_config(args.config, ROLLOUT_SCHEMA) if args.config else {}
    try:
        x0 = tuple(float(v) for v in args.x0.split(","))
    except ValueError:
        raise ConfigError(f"x0 must be two comma-separated numbers, got {args.x0!r}", "x0") from None
    if len(x0) != 2:
        raise ConfigError("x0 must have two entries", "x0")
    if not args.T > 0:
        raise ConfigError("T must be positive", "T")
    bench = _bench(cfg)
    if args.model == "expert":
        policy = harness.ExpertPolicy(bench.build(), _solver(cfg))
    else:
        policy = PolicyModel.load(args.model)
    trace = harness.closed_loop(policy, x0, args.T, bench=bench)
    harness.write_rollout(trace, args.out)
    summary = {"reached": trace.reached, "t_reached": trace.t_reached,
               "final_state": trace.x[-1].tolist()}
    write_report(Path(args.out) / "rollout_summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_imitate(args) -> int:
    cfg = load_config(args.config, IMITATE_SCHEMA) if args.config else {}
    bench = _bench(cfg)
    icfg = harness.ImitationConfig(**{k: tuple(v) if isinstance(v, list) else v
                                      for k, v in cfg.items()
                                      if k in ("x0", "T", "half_widths", "eps_tol", "seed",
                                               "stop_on_success")})
    if args.all:
        icfg = harness.ImitationConfig(**{**icfg.__dict__, "stop_on_success": False})
    res = harness.imitation_loop(tuple(cfg.get("initial_policy", (-11.0, -7.0, 35.0))),
                                 args.rollouts, args.augment, icfg, bench,
                                 solver_cfg=_solver(cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "imitation_report.json",
                 {"rollouts": res.table(), "first_success": res.first_success,
                  "feedback_augment": args.augment})
    if isinstance(res.policy, PolicyModel):
        res.policy.save(out / "imitation_policy.json")
    print(json.dumps({"first_success": res.first_success, "rollouts_run": len(res.records)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpcaug", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="augment a dataset from a JSON config")
    g.add_argument("config")
    g.add_argument("--out", help="output directory (overrides output_dir)")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit a GRNN policy to a dataset CSV")
    f.add_argument("dataset")
    f.add_argument("model", help="output model JSON")
    f.add_argument("--bandwidth", type=float, default=None)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("case", help="run benchmark case 1, 2 or 3")
    c.add_argument("case", type=int, choices=sorted(harness.CASES))
    c.add_argument("--config", help="JSON overrides")
    c.add_argument("--out", default="out")
    c.add_argument("--full", action="store_true", help="use the full-scale sample counts")
    c.set_defaults(func=cmd_case)

    r = sub.add_parser("rollout", help="closed-loop simulation of a policy model or 'expert'")
    r.add_argument("model")
    r.add_argument("--x0", default="0,0")
    r.add_argument("--T", type=float, default=10.0)
    r.add_argument("--config")
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_rollout)

    i = sub.add_parser("imitate", help="imitation learning with an exact-MPC expert")
    i.add_argument("--rollouts", type=int, default=25)
    i.add_argument("--augment", type=int, default=25)
    i.add_argument("--config")
    i.add_argument("--out", default="out")
    i.add_argument("--all", action="store_true", help="keep going after the first success")
    i.set_defaults(func=cmd_imitate)
    return parser


def _fail(code: int, kind: str, err: Exception, **extra) -> int:
    payload = {"error": kind, "type": type(err).__name__, "message": str(err), **extra}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "rollouts", 1) < 1 or getattr(args, "augment", 0) < 0:
        return _fail(EXIT_CONFIG, "config", ValueError("rollouts must be >= 1, augment >= 0"))
    try:
        return args.func(args)
    except ConfigError as err:
        return _fail(EXIT_CONFIG, "config", err, field=err.field)
    except (ValueError, ArithmeticError, RuntimeError, OSError, np.linalg.LinAlgError) as err:
        return _fail(EXIT_RUNTIME, "runtime", err)


if __name__ == "__main__":
    sys.exit(main())
