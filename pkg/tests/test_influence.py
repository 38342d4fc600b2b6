import numpy as np
import pytest

from softunlearn.errors import StaleSnapshotError
from softunlearn.influence import (
    influence_param,
    influence_scores,
    prepare,
    scores_for,
    weighted_influence,
)
from softunlearn.metrics import craft_adversarial, metric_gradient
from softunlearn.model import ModelParams, TrainConfig, hessian, sample_gradients
from softunlearn.oracle import loo_retrain


def test_param_influence_is_explicit_formula(small_ds, small_model, cfg):
    X, y = small_ds.train_arrays()
    H = hessian(X, y, small_model, cfg)
    G = sample_gradients(X, y, small_model, cfg.l2_reg)
    for j in (0, 17, 99):
        want = np.linalg.solve(H, G[j]) / len(y)
        np.testing.assert_allclose(influence_param(j, X, y, small_model, cfg), want, rtol=1e-10, atol=1e-14)


def test_param_influence_tracks_leave_one_out(small_ds, small_model, cfg):
    X, y = small_ds.train_arrays()
    ctx = prepare(X, y, small_model, cfg)
    # first-order estimate: relative error is a few percent at n=100, never above 20%
    for j in range(len(y)):
        est = influence_param(j, X, y, small_model, cfg, ctx)
        actual = loo_retrain(X, y, j, cfg, warm_start=small_model).vector - small_model.vector
        assert np.linalg.norm(est - actual) <= 0.2 * np.linalg.norm(actual)


def test_scores_match_per_sample_loop(small_prep, small_ds, cfg):
    t = small_prep.table
    X, y = small_ds.train_arrays()
    H = hessian(X, y, small_prep.model, cfg)
    G = sample_gradients(X, y, small_prep.model, cfg.l2_reg)
    v = metric_gradient("dp", small_prep.valset, small_prep.model)
    loop = [v @ np.linalg.solve(H, G[j]) for j in range(len(y))]
    np.testing.assert_allclose(t.i_metric, loop, rtol=1e-9, atol=1e-13)
    assert len(t) == small_ds.sizes()["train"]


def test_robustness_table_needs_adversarial_set(small_ds, small_model, cfg):
    X, y = small_ds.train_arrays()
    val = small_ds.evalset("validation")
    with pytest.raises(ValueError):
        influence_scores(X, y, val, small_model, cfg, "robustness")
    adv = craft_adversarial(val, small_model)
    t = influence_scores(X, y, val, small_model, cfg, "robustness", advset=adv)
    ctx = t.context
    np.testing.assert_allclose(t.i_metric, scores_for(metric_gradient("robustness", adv, small_model), ctx))
    with pytest.raises(ValueError):
        influence_scores(X, y, val, small_model, cfg, "utility")


def test_untrained_model_is_rejected(small_ds, cfg):
    X, y = small_ds.train_arrays()
    with pytest.raises(ValueError, match="not a trained minimizer"):
        prepare(X, y, ModelParams.zeros(X.shape[1]), cfg)


def test_stale_snapshot(small_prep, small_ds, cfg):
    X, y = small_ds.train_arrays()
    other = ModelParams.from_vector(small_prep.model.vector + 1e-3)
    with pytest.raises(StaleSnapshotError):
        influence_param(0, X, y, other, cfg, small_prep.table.context)
    with pytest.raises(IndexError):
        influence_param(len(y), X, y, small_prep.model, cfg, small_prep.table.context)


def test_tables_are_read_only(small_prep):
    with pytest.raises(ValueError):
        small_prep.table.i_util[0] = 1.0


def test_weighted_influence_scaling():
    i = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(weighted_influence(np.array([-1.0, -1.0, -1.0]), i), i)
    np.testing.assert_array_equal(weighted_influence(np.array([0.5, 0.0, 2.0]), i), [-0.5, 0.0, -1.0])


def test_damping_changes_scores(small_ds, small_model):
    X, y = small_ds.train_arrays()
    val = small_ds.evalset("validation")
    a = influence_scores(X, y, val, small_model, TrainConfig(damping=0.0), "dp").i_metric
    b = influence_scores(X, y, val, small_model, TrainConfig(damping=1.0), "dp").i_metric
    assert not np.allclose(a, b)
