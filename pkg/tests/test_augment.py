import csv

import numpy as np
import pytest

from mpcaug import augment as aug
from mpcaug.augment import (AugmentConfig, Dataset, Sampler, AugmentationError, generate,
                            max_policy_error)
from mpcaug.nlp import AUGMENTED, EXACT_ANCHOR
from mpcaug.oracles import oracle_eqp, oracle_ineq
from mpcaug.pendulum import PARAM_BOX


def test_grid_sampler_tiles_box():
    pts = Sampler.grid(2, 2).sample(np.array([0.0, 0.0]), np.array([2.0, 4.0]))
    np.testing.assert_allclose(sorted(map(tuple, pts)), [(0.5, 1), (0.5, 3), (1.5, 1), (1.5, 3)])


def test_uniform_sampler_is_seeded():
    s = Sampler.uniform_random(5, seed=3)
    a = s.sample(np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(a, s.sample(np.zeros(2), np.ones(2)))
    assert np.all((a >= 0) & (a <= 1))


def test_anchor_boxes_tile_parameter_box():
    anchors, boxes = aug.anchor_layout(PARAM_BOX, AugmentConfig(anchor_sampler=Sampler.grid(3, 3)))
    assert len(anchors) == 9
    area = sum(np.prod(b[1] - b[0]) for b in boxes)
    assert area == pytest.approx(2 * np.pi * 10)
    for a, b in zip(anchors, boxes):
        np.testing.assert_allclose((b[0] + b[1]) / 2, a)


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(eps_tol=0.0)
    with pytest.raises(ValueError):
        AugmentConfig(neighborhood=(0.1, -1.0))
    with pytest.raises(ValueError):
        AugmentConfig(mode="both")
    with pytest.raises(ValueError):
        Sampler("grid", dims=())


def test_ineq_kink_split():
    ds = generate(oracle_ineq(), [(0.0, 2.0)],
                  AugmentConfig(anchor_sampler=Sampler.at([1.0001]),
                                neighborhood_box=((0.0, 2.0),),
                                neighborhood_sampler=Sampler.grid(20)))
    for s in ds.augmented:
        if s.p[0] < 1.0:
            assert s.discarded and s.reason == "active_set_changed"
        else:
            assert not s.discarded
            assert s.u[0] == pytest.approx(1.0, abs=1e-12)


def test_predictor_only_dp_zero_rows():
    ds = generate(oracle_ineq(), [(0.0, 1.0)],
                  AugmentConfig(anchor_sampler=Sampler.grid(2), neighborhood_sampler=Sampler.grid(5),
                                mode="predictor_only"))
    for anchor in ds.anchors:
        centre = [s for s in ds.augmented
                  if s.anchor_id == anchor.anchor_id and np.allclose(s.p, anchor.p)]
        assert centre and centre[0].u[0] == anchor.u[0]


def test_sensitivity_reuse_counter():
    for m in (3, 9):
        ds = generate(oracle_eqp(), [(0.0, 3.0)],
                      AugmentConfig(anchor_sampler=Sampler.grid(3), neighborhood_sampler=Sampler.grid(m)))
        assert ds.sensitivity_calls == {0: 1, 1: 1, 2: 1}


def test_eqp_dataset_is_exact():
    nlp = oracle_eqp()
    for mode in ("predictor_only", "predictor_corrector"):
        ds = generate(nlp, [(-4.0, 4.0)],
                      AugmentConfig(anchor_sampler=Sampler.grid(2), neighborhood_sampler=Sampler.grid(7),
                                    mode=mode))
        assert max_policy_error(ds, nlp) <= 1e-10
        for s in ds.samples:
            assert s.u[0] == pytest.approx(s.p[0] / 2, abs=1e-12)


def test_anchor_only_dataset_error_vanishes():
    nlp = oracle_ineq()
    ds = generate(nlp, [(0.0, 2.0)],
                  AugmentConfig(anchor_sampler=Sampler.grid(4), neighborhood_sampler=Sampler.grid(1),
                                neighborhood=(1e-9,)))
    ds.samples = ds.anchors
    assert max_policy_error(ds, nlp) <= 2e-8


def test_anchor_failure_is_skipped():
    # the anchor at p=1 is weakly active; jittering moves it off the kink
    ds = generate(oracle_ineq(), [(0.0, 2.0)],
                  AugmentConfig(anchor_sampler=Sampler.at([1.0], [0.2]), neighborhood=(0.05,),
                                neighborhood_sampler=Sampler.grid(3)))
    assert len(ds.anchors) == 2
    assert ds.anchors[0].point.info["jittered"]


def test_zero_anchors_raises():
    with pytest.raises(AugmentationError):
        generate(oracle_ineq(), [(0.0, 2.0)],
                 AugmentConfig(anchor_sampler=Sampler.at([1.0]), neighborhood=(0.05,),
                               neighborhood_sampler=Sampler.grid(3), anchor_retries=0))


def test_csv_round_trip(tmp_path):
    ds = generate(oracle_ineq(), [(0.0, 2.0)],
                  AugmentConfig(anchor_sampler=Sampler.grid(2), neighborhood_sampler=Sampler.grid(4)))
    path = tmp_path / "d.csv"
    ds.to_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["p_0", "u_0", "kind", "anchor_id", "stationarity_norm", "corrector_iters",
                       "discarded", "reason"]
    assert len(rows) == 1 + len(ds)
    back = Dataset.from_csv(path)
    assert [s.kind for s in back.samples] == [s.kind for s in ds.samples]
    for a, b in zip(back.samples, ds.samples):
        np.testing.assert_array_equal(a.p, b.p)
        np.testing.assert_array_equal(a.u, b.u)
        assert a.discarded == b.discarded and a.reason == b.reason


def test_csv_floats_round_trip_exactly(tmp_path):
    ds = generate(oracle_eqp(), [(0.0, 1.0)],
                  AugmentConfig(anchor_sampler=Sampler.grid(1), neighborhood_sampler=Sampler.grid(7)))
    ds.to_csv(tmp_path / "a.csv")
    ds2 = Dataset.from_csv(tmp_path / "a.csv")
    for a, b in zip(ds.samples, ds2.samples):
        assert a.p.tobytes() == b.p.tobytes()


def test_csv_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("p_0,u_0,kind,anchor_id,stationarity_norm,corrector_iters,discarded,reason\n"
                   "0.1,0.2,augmented,0,0,0,false,\n0.1,zz,augmented,0,0,0,false,\n")
    with pytest.raises(ValueError, match="row 3"):
        Dataset.from_csv(bad)


def test_every_augmented_sample_references_anchor():
    ds = generate(oracle_ineq(), [(0.0, 2.0)],
                  AugmentConfig(anchor_sampler=Sampler.grid(3), neighborhood_sampler=Sampler.grid(4)))
    ids = {a.anchor_id for a in ds.anchors}
    assert all(s.anchor_id in ids for s in ds.augmented)


@pytest.mark.slow
def test_pendulum_case2_like(pendulum):
    cfg = AugmentConfig(anchor_sampler=Sampler.grid(3, 3), neighborhood_sampler=Sampler.grid(5, 5))
    ds = generate(pendulum, PARAM_BOX, cfg)
    valid = [s for s in ds.augmented if not s.discarded]
    assert len(valid) >= 0.95 * len(ds.augmented)
    assert all(s.stationarity_norm <= cfg.eps_tol and s.residual <= cfg.eps_tol for s in valid)
    assert all(v == 1 for v in ds.sensitivity_calls.values())


@pytest.mark.slow
def test_path_following_meets_tolerance(pendulum):
    cfg = AugmentConfig(anchor_sampler=Sampler.grid(1, 1), neighborhood_sampler=Sampler.grid(4, 4),
                        neighborhood=(0.6, 1.0), chaining="path_following")
    ds = generate(pendulum, [(2.0, 3.2), (-1.0, 1.0)], cfg)
    for s in ds.augmented:
        assert not s.discarded
        assert s.residual <= cfg.eps_tol


@pytest.mark.slow
def test_determinism(pendulum):
    cfg = AugmentConfig(anchor_sampler=Sampler.grid(1, 2),
                        neighborhood_sampler=Sampler.uniform_random(6, seed=9))
    a = generate(pendulum, PARAM_BOX, cfg)
    b = generate(pendulum, PARAM_BOX, cfg)
    for x, y in zip(a.samples, b.samples):
        assert x.p.tobytes() == y.p.tobytes() and x.u.tobytes() == y.u.tobytes()
