import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pistam import mdp
from pistam.gmm import MixtureModel
from pistam.mdp import Action, LabeledDataset
from pistam.stam import (DEFAULT_PROJECTION, AffordanceGrid, AffordanceSignature, affordance_value, compose_map,
                         fit_signatures, legal_actions, rasterize, threshold_legal)


def unit_model(mean, var=0.01):
    mean = np.asarray(mean, float)
    return MixtureModel(np.ones(1), mean[None, :], var * np.eye(len(mean))[None])


def toy_signature(means_by_action, projection=(mdp.BODY_X, mdp.BODY_Y)):
    return AffordanceSignature({a: unit_model(m) for a, m in means_by_action.items()}, projection)


def test_threshold_half_of_max():
    out = threshold_legal([0.8, 0.5, 0.3], 0.0, np.random.default_rng(0))
    assert out.lam == pytest.approx(0.4)
    assert out.legal == {0, 1} and out.via_random == frozenset()


def test_all_equal_positive_values_are_all_legal():
    out = threshold_legal(np.full(27, 0.7), 0.0, np.random.default_rng(0))
    assert out.legal == frozenset(range(27)) and out.via_affordance == out.legal


def test_scaling_values_keeps_the_affordance_set():
    v = np.random.default_rng(1).uniform(0, 1, 27)
    a = threshold_legal(v, 0.3, np.random.default_rng(7))
    b = threshold_legal(10 * v, 0.3, np.random.default_rng(7))
    assert a.via_affordance == b.via_affordance and a.via_random == b.via_random


def test_all_zero_values_fall_back_to_everything():
    out = threshold_legal(np.zeros(27), 0.0, np.random.default_rng(0))
    assert out.legal == frozenset(range(27)) and out.via_affordance == out.legal


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e6, allow_subnormal=False), min_size=1, max_size=27), st.floats(0, 1),
       st.integers(0, 2**32))
def test_legality_partition(values, eps, seed):
    out = threshold_legal(values, eps, np.random.default_rng(seed))
    assert out.via_affordance | out.via_random == out.legal
    assert not out.via_affordance & out.via_random
    assert out.lam >= 0
    if max(values) > 0:
        assert int(np.argmax(values)) in out.via_affordance


def test_epsilon_rate_matches_binomial():
    v = np.array([1.0] + [0.1] * 9)
    rng = np.random.default_rng(123)
    sizes = [len(threshold_legal(v, 0.3, rng).via_random) for _ in range(10_000)]
    k, eps = 9, 0.3
    assert abs(np.mean(sizes) - eps * k) <= 4 * math.sqrt(k * eps * (1 - eps) / 10_000)


def test_legal_actions_uses_affordance_values():
    sig = toy_signature({0: [0.2, 0.5], 1: [0.5, 0.5], 2: [0.9, 0.5]})
    s = mdp.make_state(body_x=-0.4, body_y=0.0)  # normalized x = 0.5, y = 0.5
    out = legal_actions(s, sig, 0.0, np.random.default_rng(0))
    assert out.legal == {1}
    peak = 1 / (2 * math.pi * 0.01)
    assert out.lam == pytest.approx(0.5 * peak)


def test_affordance_value_peak_and_oracle():
    sig = toy_signature({4: [0.5, 0.5]})
    s = mdp.make_state(body_x=-0.4)
    assert affordance_value(s, 4, sig) == pytest.approx(1 / (2 * math.pi * 0.01), rel=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(5):
        q = mdp.make_state(body_x=rng.uniform(-0.85, 0.05), body_y=rng.uniform(-0.45, 0.45))
        f = mdp.normalize_state(q)[[mdp.BODY_X, mdp.BODY_Y]]
        oracle = math.exp(-0.5 * np.sum((f - 0.5) ** 2) / 0.01) / (2 * math.pi * 0.01)
        assert affordance_value(q, 4, sig) == pytest.approx(oracle, rel=1e-9)
    with pytest.raises(KeyError):
        affordance_value(s, 5, sig)


def _labeled(rng, action, center, n=30, spread=0.02):
    pairs = []
    for _ in range(n):
        pairs.append((mdp.make_state(body_x=center[0] + rng.normal(0, spread),
                                     body_y=center[1] + rng.normal(0, spread),
                                     target_distance=0.3), action))
    return pairs


def test_fitted_affordance_peaks_at_its_data():
    rng = np.random.default_rng(0)
    d = LabeledDataset.from_pairs(_labeled(rng, 4, (-0.5, 0.1)) + _labeled(rng, 26, (-0.2, -0.2)))
    sig = fit_signatures(d, 1, seed=0)
    at = mdp.make_state(body_x=-0.5, body_y=0.1, target_distance=0.3)
    off = mdp.make_state(body_x=-0.5 + 3 * 0.02, body_y=0.1, target_distance=0.3)
    assert affordance_value(at, 4, sig) >= affordance_value(off, 4, sig)


def test_single_component_fit_mean_is_sample_mean():
    rng = np.random.default_rng(2)
    d = LabeledDataset.from_pairs(_labeled(rng, 7, (-0.1, 0.2)))
    sig = fit_signatures(d, 1, seed=0)
    X = mdp.normalize_state(d.states)[:, list(DEFAULT_PROJECTION)]
    np.testing.assert_allclose(sig.per_action[7].means[0], X.mean(axis=0), rtol=0, atol=1e-9)


def test_unlabeled_actions_get_broad_fallback():
    rng = np.random.default_rng(3)
    d = LabeledDataset.from_pairs(_labeled(rng, 7, (-0.1, 0.2)))
    sig = fit_signatures(d, 3, seed=0)
    assert sig.actions == tuple(range(27))
    fallback = sig.per_action[0]
    assert fallback.n_components == 1
    # Nonzero everywhere: the log density stays finite even where exp() would underflow.
    for x in (-0.8, 0.0):
        logv = sig.log_values(mdp.make_state(body_x=x))
        assert np.all(np.isfinite(logv))
    near = d.states[0]
    assert all(affordance_value(near, a, sig) > 0 for a in (0, 13, 26))


def test_per_action_fit_independence():
    rng = np.random.default_rng(4)
    a_pairs = _labeled(rng, 4, (-0.5, 0.0))
    b_pairs = _labeled(rng, 9, (-0.2, 0.2))
    moved = [(s + 0.01 * (i % 3), a) for i, (s, a) in enumerate(b_pairs)]
    one = fit_signatures(LabeledDataset.from_pairs(a_pairs + b_pairs), 3, seed=5)
    two = fit_signatures(LabeledDataset.from_pairs(a_pairs + moved), 3, seed=5)
    np.testing.assert_array_equal(one.per_action[4].means, two.per_action[4].means)
    np.testing.assert_array_equal(one.per_action[4].covs, two.per_action[4].covs)


def test_fit_signatures_determinism_and_empty():
    rng = np.random.default_rng(5)
    d = LabeledDataset.from_pairs(_labeled(rng, 4, (-0.5, 0.0)) + _labeled(rng, 9, (-0.2, 0.2)))
    a, b = fit_signatures(d, 3, seed=1), fit_signatures(d, 3, seed=1)
    assert a.to_json() == b.to_json()
    with pytest.raises(ValueError):
        fit_signatures(LabeledDataset.empty(), 3, seed=1)


def test_signature_json_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    sig = fit_signatures(LabeledDataset.from_pairs(_labeled(rng, 4, (-0.5, 0.0))), 2, seed=0)
    sig.save(tmp_path / "sig.json")
    back = AffordanceSignature.load(tmp_path / "sig.json")
    assert back.to_json() == sig.to_json()
    s = mdp.make_state(body_x=-0.45)
    assert affordance_value(s, 4, back) == affordance_value(s, 4, sig)


def grid(values, origin=(0.0, 0.0), cell=0.05):
    values = np.asarray(values, float)
    return AffordanceGrid(0, origin, cell, values.shape[1], values.shape[0], values)


def test_compose_identity_and_zero():
    g = grid(np.random.default_rng(0).uniform(size=(4, 5)))
    assert compose_map([g]).values is g.values
    np.testing.assert_array_equal(compose_map([g, grid(np.zeros((4, 5)))]).values, g.values)


def test_compose_max_against_brute_force():
    rng = np.random.default_rng(1)
    grids = [grid(rng.uniform(size=(6, 7))) for _ in range(3)]
    out = compose_map(grids)
    for _ in range(10):
        r, c = rng.integers(6), rng.integers(7)
        assert out.values[r, c] == max(g.values[r, c] for g in grids)
    norm = compose_map(grids, "normalized-sum").values
    assert norm.max() <= 1.0 + 1e-12


def test_compose_geometry_mismatch():
    with pytest.raises(ValueError):
        compose_map([grid(np.zeros((2, 2))), grid(np.zeros((2, 2)), origin=(0.1, 0.0))])


def test_rasterize_single_cell_matches_affordance_value():
    sig = toy_signature({4: [0.4, 0.6]})
    template = mdp.make_state()
    g = rasterize(sig, 4, template, origin=(-0.5, -0.1), cell_size=0.05, width=1, height=1)
    s = mdp.make_state(body_x=-0.475, body_y=-0.075, target_distance=math.hypot(0.475, 0.075))
    assert g.values[0, 0] == pytest.approx(affordance_value(s, 4, sig), rel=1e-12)


def test_rasterize_default_geometry_and_csv(tmp_path):
    sig = toy_signature({4: [0.4, 0.6]})
    g = rasterize(sig, 4, mdp.make_state())
    assert g.cell_size == 0.05 and g.values.shape == (24, 24)
    path = tmp_path / "g.csv"
    g.to_csv(path)
    text = path.read_text()
    assert text.startswith("# action=body_forward origin_x=-0.6 origin_y=-0.6 cell_size=0.05 width=24 height=24")
    assert sum(len(ln.split(",")) for ln in text.splitlines()[1:]) == 576
    back = AffordanceGrid.from_csv(path)
    np.testing.assert_array_equal(back.values, g.values)
    assert back.action == Action.BODY_FORWARD
