import numpy as np
import pytest
from scipy.special import expit

from softunlearn.errors import DataError
from softunlearn.metrics import (
    EvalSet,
    MetricKind,
    craft_adversarial,
    demographic_parity,
    equal_opportunity,
    metric_gradient,
    metric_value,
    robustness_loss,
    utility_loss,
)
from softunlearn.model import ModelParams, Sample


def _evalset(rng, n=60, d=3):
    X = rng.normal(size=(n, d))
    y = (rng.random(n) < 0.5).astype(float)
    g = (rng.random(n) < 0.5).astype(float)
    y[:2], g[:4] = 1, [0, 1, 0, 1]
    return EvalSet(X, y, g)


def _fd(kind, t, m, h=1e-6):
    out = np.empty(m.vector.size)
    for k in range(out.size):
        e = np.zeros(out.size)
        e[k] = h
        out[k] = (metric_value(kind, t, ModelParams.from_vector(m.vector + e))
                  - metric_value(kind, t, ModelParams.from_vector(m.vector - e))) / (2 * h)
    return out


def test_dp_brute_force(rng):
    t = _evalset(rng)
    m = ModelParams(rng.normal(size=3), 0.2)
    p = [expit(x @ m.theta + m.intercept) for x in t.X]
    p0 = np.mean([pi for pi, gi in zip(p, t.g) if gi == 0])
    p1 = np.mean([pi for pi, gi in zip(p, t.g) if gi == 1])
    assert demographic_parity(t, m) == pytest.approx(abs(p0 - p1), rel=1e-13)


def test_eop_uses_positive_labels_only(rng):
    t = _evalset(rng)
    m = ModelParams(rng.normal(size=3), 0.2)
    ell = -np.log(expit(t.X @ m.theta + m.intercept))
    pos = t.y == 1
    want = abs(ell[pos & (t.g == 1)].mean() - ell[pos & (t.g == 0)].mean())
    assert equal_opportunity(t, m) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("kind", ["utility", "dp", "eop"])
def test_gradients_match_finite_differences(rng, kind):
    t = _evalset(rng)
    m = ModelParams(rng.normal(size=3), 0.2)
    np.testing.assert_allclose(metric_gradient(kind, t, m), _fd(kind, t, m), rtol=1e-5, atol=1e-8)


def test_robustness_gradient_holds_adversarial_points_fixed(rng):
    t = _evalset(rng)
    m = ModelParams(rng.normal(size=3), 0.2)
    adv = craft_adversarial(t, m)
    np.testing.assert_allclose(metric_gradient("robustness", adv, m), _fd("robustness", adv, m),
                               rtol=1e-5, atol=1e-7)


def test_dp_tie_has_zero_subgradient():
    X = np.array([[1.0], [1.0]])
    t = EvalSet(X, [1, 0], [0, 1])
    m = ModelParams(np.array([0.7]), 0.1)
    assert demographic_parity(t, m) == 0.0
    assert not np.any(metric_gradient("dp", t, m))


def test_adversarial_margin_is_flipped_and_scaled(rng):
    t = _evalset(rng)
    m = ModelParams(rng.normal(size=3), 0.4)
    for gamma in (1.5, 3.0):
        adv = craft_adversarial(t, m, gamma)
        before = t.X @ m.theta + m.intercept
        after = adv.X @ m.theta + m.intercept
        np.testing.assert_allclose(after, (1 - gamma) * before, atol=1e-12)
        # the displacement is along theta only
        d = adv.X - t.X
        np.testing.assert_allclose(d - np.outer(d @ m.theta / (m.theta @ m.theta), m.theta), 0, atol=1e-12)


def test_adversarial_gamma_validation(rng):
    t = _evalset(rng)
    m = ModelParams(rng.normal(size=3), 0.0)
    with pytest.raises(ValueError):
        craft_adversarial(t, m, 1.0)
    on_plane = craft_adversarial(t, m, 1.0, strict=False)
    np.testing.assert_allclose(on_plane.X @ m.theta + m.intercept, 0, atol=1e-12)
    with pytest.raises(ValueError):
        craft_adversarial(t, ModelParams.zeros(3))


def test_robustness_exceeds_clean_loss(rng):
    X = rng.normal(size=(50, 3))
    t = EvalSet(X, (X[:, 0] > 0).astype(float), np.arange(50) % 2)
    m = ModelParams(np.array([2.0, 0.0, 0.0]), 0.0)
    assert robustness_loss(craft_adversarial(t, m), m) > utility_loss(t, m)


def test_missing_group_raises():
    t = EvalSet(np.ones((3, 1)), [1, 0, 1], [0, 0, 0])
    m = ModelParams.zeros(1)
    with pytest.raises(DataError):
        demographic_parity(t, m)
    t2 = EvalSet(np.ones((3, 1)), [1, 0, 0], [0, 1, 1])
    with pytest.raises(DataError):
        equal_opportunity(t2, m)


def test_evalset_validation_and_parse():
    with pytest.raises(DataError):
        EvalSet(np.ones((2, 1)), [1], [0])
    with pytest.raises(ValueError):
        EvalSet(np.ones((2, 1)), [1, 0], [0, 1], role="train")
    t = EvalSet.from_samples([Sample([1.0], 1, 0), Sample([2.0], 0, 1)])
    assert len(t) == 2
    assert MetricKind.parse("DP") is MetricKind.DP
    with pytest.raises(ValueError):
        MetricKind.parse("accuracy")
    with pytest.raises(TypeError):
        metric_value("robustness", t, ModelParams.zeros(1))
