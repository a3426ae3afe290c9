import numpy as np
import pytest

from occlearn.bpmeans import (BpProposal, FeatureModel, bp_analyze, bp_objective, bp_validate,
                              optimize_assignment, parallel_bpmeans, serial_bpmeans,
                              update_feature_means)
from occlearn.engine import equivalent_serial_order, partition_epochs

from oracles import naive_coordinate_pass


def test_optimize_assignment_examples():
    assert optimize_assignment([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]], [0, 0]).tolist() == [1, 1]
    assert optimize_assignment([0.0, 3.0], [[1.0, 0.0], [2.0, 0.0]], [0, 0]).tolist() == [0, 0]
    assert optimize_assignment([0.3, -2.0], [[0.3, -2.0]], [0]).tolist() == [1]
    assert optimize_assignment([1.0], np.empty((0, 1)), np.empty(0)).tolist() == []


def test_optimize_assignment_tie_goes_to_zero():
    # 2 r.f == |f|^2 exactly: switching on does not help, so stay off.
    assert optimize_assignment([1.0], [[2.0]], [0]).tolist() == [0]
    assert optimize_assignment([1.0], [[2.0]], [1]).tolist() == [0]


@pytest.mark.parametrize("seed", range(20))
def test_optimize_assignment_matches_naive(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(6, 3))
    x = rng.normal(size=3) * 2
    z0 = rng.integers(0, 2, size=6)
    z_ref, _ = naive_coordinate_pass(x, F, z0)
    assert optimize_assignment(x, F, z0).tolist() == z_ref


def test_analyze_examples():
    z, prop = bp_analyze([1.0, 1.0], [[1.0, 0.0]], 0.5, [0])
    assert z.tolist() == [1]
    assert prop.direction.tolist() == [0.0, 1.0]
    z, prop = bp_analyze([3.0, 4.0], np.empty((0, 2)), 1.0, np.empty(0))
    assert prop.direction.tolist() == [3.0, 4.0]
    # Residual norm exactly lambda: no proposal.
    z, prop = bp_analyze([0.0, 1.0], [[5.0, 0.0]], 1.0, [0])
    assert z.tolist() == [0] and prop is None


def _props(*dirs):
    return [BpProposal(i, np.asarray(d, dtype=float)) for i, d in enumerate(dirs)]


def test_validate_examples():
    F, patches, ok = bp_validate(_props([2.0, 0.0]), 1.0)
    assert F.tolist() == [[2.0, 0.0]] and ok.tolist() == [True] and patches.tolist() == [[1]]
    F, patches, ok = bp_validate(_props([2.0, 0.0], [2.0, 0.1]), 1.0)
    assert ok.tolist() == [True, False]
    assert F.tolist() == [[2.0, 0.0]]
    assert patches.tolist() == [[1], [1]]
    F, patches, ok = bp_validate(_props([2.0, 0.0], [0.0, 2.0]), 1.0)
    assert ok.tolist() == [True, True]
    assert patches.tolist() == [[1, 0], [0, 1]]


def test_validate_partial_cover_proposes_remainder():
    # (2, 2) is explained by (2, 0) except for (0, 2), which becomes a feature.
    F, patches, ok = bp_validate(_props([2.0, 0.0], [2.0, 2.0]), 1.0)
    assert ok.tolist() == [True, True]
    assert F.tolist() == [[2.0, 0.0], [0.0, 2.0]]
    assert patches.tolist() == [[1, 0], [1, 1]]
    F, patches, ok = bp_validate([], 1.0)
    assert len(ok) == 0


def test_update_feature_means_examples():
    Z = [[1, 0], [0, 1], [1, 1]]
    X = [[2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]
    assert np.allclose(update_feature_means(X, Z), [[2.0, 0.0], [0.0, 2.0]])
    X = np.random.default_rng(0).normal(size=(4, 3))
    assert np.allclose(update_feature_means(X, np.eye(4)), X)
    F = update_feature_means([[1.0], [3.0]], [[1, 0], [1, 0]])
    assert F.ravel().tolist() == pytest.approx([2.0, 0.0])
    assert update_feature_means(X, np.zeros((4, 0))).shape == (0, 3)


def test_update_feature_means_spans_chunks(monkeypatch):
    import occlearn.bpmeans as bp
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 2))
    Z = rng.integers(0, 2, size=(50, 3))
    full = update_feature_means(X, Z)
    monkeypatch.setattr(bp, "GRAM_CHUNK", 7)
    assert np.allclose(update_feature_means(X, Z), full)


def test_serial_hand_trace():
    X = np.array([[0.0, 0.0], [2.0, 0.0]])
    sweeps = []
    model = serial_bpmeans(X, 0.5, on_iteration=lambda it, Z: sweeps.append(Z))
    assert sweeps[0].tolist() == [[0, 0], [1, 1]]
    assert np.allclose(model.features, [[1.0, 0.0], [1.0, 0.0]])
    assert model.assignments.tolist() == [[0, 0], [1, 1]]
    assert model.converged
    assert bp_objective(X, model) == pytest.approx(0.5)


def test_serial_trivial_cases():
    X = np.tile([[1.5, -2.0, 0.5]], (7, 1))
    model = serial_bpmeans(X, 0.3)
    assert model.n_features == 1
    assert np.allclose(model.features[0], X[0])
    assert bp_objective(X, model) == pytest.approx(0.09)
    X = np.random.default_rng(0).normal(size=(20, 2))
    # lam exceeds every distance from the mean: one feature forever.
    assert serial_bpmeans(X, 50.0).n_features == 1
    with pytest.raises(ValueError):
        serial_bpmeans(np.empty((0, 2)), 1.0)


def test_objective_examples():
    F = np.array([[1.0, 0.0], [0.0, 1.0]])
    Z = np.array([[1, 0], [0, 1], [1, 1]])
    assert bp_objective(Z @ F, F, Z, 2.0) == 8.0
    X = np.array([[1.0, 2.0], [3.0, 0.0]])
    assert bp_objective(X, np.empty((0, 2)), np.zeros((2, 0)), 1.0) == 14.0
    m = FeatureModel(F, Z, 1.0)
    assert bp_objective(Z @ F + 0.5, m) == pytest.approx(3 * 0.5 + 2.0)


@pytest.mark.parametrize("P,b,boot", [(1, 120, False), (2, 3, False), (4, 16, True), (8, 1, False), (3, 50, True)])
def test_parallel_equals_serial_on_equivalent_order(P, b, boot):
    rng = np.random.default_rng(P * 7 + b)
    X = rng.integers(0, 2, size=(120, 4)) @ rng.normal(size=(4, 5)) + 0.2 * rng.normal(size=(120, 5))
    par, traces = parallel_bpmeans(X, 1.0, partition_epochs(120, P, b), bootstrap=boot)
    ser = serial_bpmeans(X, 1.0, orders=[equivalent_serial_order(t) for t in traces])
    assert par.features.tobytes() == ser.features.tobytes()
    assert np.array_equal(par.assignments, ser.assignments)
    assert par.n_iters == ser.n_iters


def test_column_consistency_after_patching():
    rng = np.random.default_rng(5)
    X = rng.normal(scale=2.0, size=(200, 3))
    seen = []
    model, traces = parallel_bpmeans(X, 1.0, partition_epochs(200, 4, 8),
                                     on_iteration=lambda it, Z: seen.append(Z))
    for Z in seen:
        assert set(np.unique(Z)) <= {0, 1}
    assert model.assignments.shape == (200, model.n_features)
    assert np.all(model.assignments.any(axis=0))


def test_coordinate_flips_decrease_residual():
    rng = np.random.default_rng(3)
    for _ in range(50):
        F = rng.normal(size=(5, 4))
        x = rng.normal(size=4) * 2
        z0 = rng.integers(0, 2, size=5)
        before = x - z0 @ F
        z = optimize_assignment(x, F, z0)
        after = x - z @ F
        if not np.array_equal(z, z0):
            assert after @ after < before @ before


def test_least_squares_update_never_hurts():
    rng = np.random.default_rng(4)
    for _ in range(20):
        X = rng.normal(size=(30, 3))
        Z = rng.integers(0, 2, size=(30, 4))
        F0 = rng.normal(size=(4, 3))
        F = update_feature_means(X, Z)
        assert bp_objective(X, F, Z, 1.0) <= bp_objective(X, F0, Z, 1.0) + 1e-9


def test_skip_validation_is_detected():
    X = np.random.default_rng(3).normal(scale=2.0, size=(100, 2))
    par, traces = parallel_bpmeans(X, 1.0, partition_epochs(100, 4, 8), skip_validation=True, max_iters=1)
    ser = serial_bpmeans(X, 1.0, max_iters=1, orders=[equivalent_serial_order(t) for t in traces])
    assert par.features.shape != ser.features.shape or par.features.tobytes() != ser.features.tobytes()
