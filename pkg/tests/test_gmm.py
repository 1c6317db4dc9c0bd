import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pistam.gmm import REG_FLOOR, MixtureBank, MixtureModel, gmm_classify, gmm_density, gmm_fit_em


def mixture(weights, means, covs):
    return MixtureModel(np.asarray(weights, float), np.asarray(means, float), np.asarray(covs, float))


def direct_density(x, m):
    # Straight transcription of the mixture formula, no Cholesky tricks.
    x = np.asarray(x, float)
    total = 0.0
    for w, mu, cov in zip(m.weights, m.means, m.covs):
        d = x - mu
        norm = 1.0 / math.sqrt((2 * math.pi) ** len(x) * np.linalg.det(cov))
        total += w * norm * math.exp(-0.5 * d @ np.linalg.solve(cov, d))
    return total


def random_mixture(rng, k, d):
    means = rng.normal(0, 2, (k, d))
    a = rng.normal(0, 1, (k, d, d))
    covs = a @ a.transpose(0, 2, 1) + 0.3 * np.eye(d)
    w = rng.uniform(0.2, 1, k)
    return mixture(w / w.sum(), means, covs)


def test_standard_normal_peak():
    m = mixture([1.0], [[0.0]], [[[1.0]]])
    assert gmm_density([0.0], m) == pytest.approx(0.398942, abs=1e-6)


def test_symmetric_two_component_value():
    m = mixture([0.5, 0.5], [[-1.0], [1.0]], [[[1.0]], [[1.0]]])
    assert gmm_density([0.0], m) == pytest.approx(0.241971, abs=1e-6)


def test_density_matches_direct_formula():
    rng = np.random.default_rng(11)
    m = random_mixture(rng, 3, 2)
    for x in rng.normal(0, 2, (10, 2)):
        assert gmm_density(x, m) == pytest.approx(direct_density(x, m), rel=1e-9, abs=1e-300)


def test_density_dimension_mismatch():
    m = mixture([1.0], [[0.0, 0.0]], [np.eye(2)])
    with pytest.raises(ValueError):
        gmm_density([0.0], m)


def test_density_integrates_to_one():
    rng = np.random.default_rng(5)
    m = random_mixture(rng, 3, 1)
    sd = np.sqrt(m.covs[:, 0, 0])
    lo = float(np.min(m.means[:, 0] - 6 * sd))
    hi = float(np.max(m.means[:, 0] + 6 * sd))
    xs = rng.uniform(lo, hi, 200_000)
    integral = (hi - lo) * np.exp(m.log_density(xs[:, None])).mean()
    assert 0.97 <= integral <= 1.01


def test_bank_agrees_with_individual_models():
    rng = np.random.default_rng(2)
    models = [random_mixture(rng, k, 3) for k in (1, 2, 3, 2)]
    bank = MixtureBank(models)
    for x in rng.normal(0, 2, (5, 3)):
        expected = [m.log_density(x[None])[0] for m in models]
        np.testing.assert_allclose(bank.log_densities(x), expected, rtol=1e-12)


def test_fit_identical_samples():
    p = np.array([0.3, -1.7, 2.0])
    m = gmm_fit_em(np.tile(p, (12, 1)), n_components=1, seed=0)
    np.testing.assert_array_equal(m.means[0], p)
    np.testing.assert_allclose(m.covs[0], REG_FLOOR * np.eye(3), rtol=0, atol=1e-18)


def test_fit_recovers_two_clusters():
    rng = np.random.default_rng(42)
    X = np.vstack([rng.normal(0, 1, (200, 2)), rng.normal(5, 1, (200, 2))])
    m = gmm_fit_em(X, n_components=2, seed=0)
    truth = np.array([[0.0, 0.0], [5.0, 5.0]])
    for mu in truth:
        assert np.min(np.linalg.norm(m.means - mu, axis=1)) < 0.3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(1, 4))
def test_single_component_mean_is_sample_mean(seed, n, d):
    X = np.random.default_rng(seed).normal(0, 3, (n, d))
    m = gmm_fit_em(X, n_components=1, seed=seed)
    np.testing.assert_allclose(m.means[0], X.mean(axis=0), rtol=0, atol=1e-9)


def test_effective_components_capped_by_sample_count():
    m = gmm_fit_em(np.array([[0.0], [1.0]]), n_components=5, seed=0)
    assert m.n_components <= 2


def test_fit_empty_class():
    with pytest.raises(ValueError, match="empty class"):
        gmm_fit_em(np.zeros((0, 2)))


def test_fit_is_deterministic():
    X = np.random.default_rng(1).normal(size=(80, 3))
    a, b = gmm_fit_em(X, 3, seed=9), gmm_fit_em(X, 3, seed=9)
    np.testing.assert_array_equal(a.means, b.means)
    np.testing.assert_array_equal(a.covs, b.covs)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_em_log_likelihood_is_monotone():
    rng = np.random.default_rng(0)
    for _ in range(20):
        k = int(rng.integers(1, 5))
        X = np.vstack([rng.normal(rng.uniform(-5, 5, 2), rng.uniform(0.2, 2), (30, 2)) for _ in range(3)])
        trace = []
        gmm_fit_em(X, k, seed=int(rng.integers(1 << 30)), trace=trace)
        assert np.all(np.diff(trace) >= -1e-8)


def test_fitted_covariances_are_floored():
    X = np.random.default_rng(4).normal(size=(30, 3))
    X[:, 2] = 1.0
    m = gmm_fit_em(X, 3, seed=0)
    for cov in m.covs:
        np.testing.assert_allclose(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() >= REG_FLOOR * (1 - 1e-6)
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_classify_single_class():
    m = mixture([1.0], [[0.0]], [[[1.0]]])
    for x in (-100.0, 0.0, 7.0):
        assert gmm_classify([x], [(4, m)], [1.0]) == 4


def test_classify_nearer_mode():
    a = mixture([1.0], [[0.0]], [[[1.0]]])
    b = mixture([1.0], [[10.0]], [[[1.0]]])
    assert gmm_classify([1.0], [(0, a), (1, b)], [0.5, 0.5]) == 0


def test_classify_tie_goes_to_lowest_id():
    m = mixture([1.0], [[0.0]], [[[1.0]]])
    assert gmm_classify([0.3], [(7, m), (3, m)], [0.5, 0.5]) == 3


def test_classify_far_query_does_not_underflow():
    a = mixture([1.0], [[0.0]], [[[1e-4]]])
    b = mixture([1.0], [[1.0]], [[[1e-4]]])
    assert gmm_classify([0.9], [(0, a), (1, b)], [0.5, 0.5]) == 1
    assert gmm_classify([500.0], [(0, a), (1, b)], [0.5, 0.5]) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_classify_prior_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    models = [(int(a), random_mixture(rng, 2, 2)) for a in rng.choice(27, 4, replace=False)]
    priors = rng.dirichlet(np.ones(4))
    x = rng.normal(0, 2, 2)
    assert gmm_classify(x, models, priors) == gmm_classify(x, models, priors * c)


def test_json_round_trip():
    m = random_mixture(np.random.default_rng(8), 3, 4)
    doc = json.loads(json.dumps(m.to_json()))
    assert doc["version"] == 1 and doc["dim"] == 4 and len(doc["components"]) == 3
    back = MixtureModel.from_json(doc)
    np.testing.assert_array_equal(back.means, m.means)
    np.testing.assert_array_equal(back.covs, m.covs)
    np.testing.assert_array_equal(back.weights, m.weights)


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        mixture([0.5, 0.4], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
