import numpy as np
import pytest

from boolclf.errors import (
    DegenerateFeaturesError,
    InsufficientExamplesError,
    ShapeMismatchError,
    SingleClassError,
)
from boolclf.evalkit import PairSet, global_auc
from boolclf.numcore import rng_stream
from boolclf.primitives import (
    BankConfig,
    Classifier,
    PlattParams,
    PrimitiveBank,
    SvmConfig,
    calibrate_bank,
    calibration_holdout,
    platt_apply,
    platt_apply_batch,
    platt_fit,
    train_linear_svm,
    train_primitive_bank,
)


def _blobs(n=200, margin=2.0, spread=0.3, seed=0):
    rng = rng_stream(seed, "blobs")
    x = np.vstack([
        rng.standard_normal((n, 2)) * spread + [margin, 0.0],
        rng.standard_normal((n, 2)) * spread + [-margin, 0.0],
    ])
    y = np.concatenate([np.ones(n), -np.ones(n)])
    return x, y


# ---------------------------------------------------------------------------
# classifier type


def test_classifier_validates_weights():
    with pytest.raises(ShapeMismatchError):
        Classifier(np.ones((2, 2)))
    with pytest.raises(ValueError):
        Classifier(np.array([1.0, np.inf]))


def test_classifier_decision_checks_dim():
    clf = Classifier(np.array([1.0, 0.0, -0.5]))
    assert clf.dim == 2
    with pytest.raises(ShapeMismatchError):
        clf.decision(np.ones((4, 3)))


# ---------------------------------------------------------------------------
# linear SVM


def test_svm_separable_blobs_reach_full_accuracy():
    x, y = _blobs()
    clf = train_linear_svm(x, y, lam=1e-4, epochs=10, rng=rng_stream(1, "svm"))
    assert np.mean(np.sign(clf.decision(x)) == y) == 1.0


def test_svm_label_flip_negates_decisions():
    x, y = _blobs()
    clf = train_linear_svm(x, y, lam=1e-4, epochs=10, rng=rng_stream(1, "svm"))
    flipped = train_linear_svm(x, -y, lam=1e-4, epochs=10, rng=rng_stream(1, "svm"))
    acc = np.mean(np.sign(clf.decision(x)) == y)
    acc_flipped = np.mean(np.sign(flipped.decision(x)) == -y)
    assert acc == acc_flipped
    assert np.max(np.abs(clf.decision(x) + flipped.decision(x))) < 1e-6


def test_svm_huge_regularization_shrinks_weights():
    x, y = _blobs()
    clf = train_linear_svm(x, y, lam=1e6, epochs=5, rng=rng_stream(2, "svm"))
    assert np.linalg.norm(clf.weights[:-1]) < 1e-2


def test_svm_objective_non_increasing_over_epochs():
    x, y = _blobs()
    history = []
    train_linear_svm(x, y, lam=1e-4, epochs=10, rng=rng_stream(1, "svm"),
                     on_epoch=lambda e, obj: history.append(obj))
    assert len(history) == 10
    assert all(history[i + 1] <= history[i] + 1e-12 for i in range(9))


def test_svm_rejects_single_class():
    x, _ = _blobs()
    with pytest.raises(SingleClassError):
        train_linear_svm(x, np.ones(len(x)), rng=rng_stream(0, "x"))


def test_svm_rejects_degenerate_features():
    x = np.ones((10, 3))
    y = np.array([1.0, -1.0] * 5)
    with pytest.raises(DegenerateFeaturesError):
        train_linear_svm(x, y, rng=rng_stream(0, "x"))


def test_svm_rejects_bad_labels():
    x, _ = _blobs(10)
    with pytest.raises(ValueError):
        train_linear_svm(x, np.zeros(len(x)), rng=rng_stream(0, "x"))


# ---------------------------------------------------------------------------
# primitive bank


def test_bank_all_primitives_trained_with_high_train_auc(small_dataset):
    ds = small_dataset
    train_idx = np.arange(1000)
    bank = train_primitive_bank(ds, ds.primitives, BankConfig(seed=3), train_idx)
    assert bank.names == ds.primitives
    assert bank.d == ds.d
    for j, name in enumerate(ds.primitives):
        scores = bank[name].decision(ds.features[train_idx])
        pairs = PairSet(np.zeros(len(train_idx)), np.arange(len(train_idx)),
                        scores, ds.labels[train_idx, j])
        assert global_auc(pairs) > 0.9, name


def test_bank_insufficient_examples_names_primitive(small_dataset):
    ds = small_dataset
    # a split so small that some primitive misses the 5/5 requirement
    tiny = np.arange(8)
    with pytest.raises(InsufficientExamplesError) as err:
        train_primitive_bank(ds, ds.primitives, BankConfig(seed=3), tiny)
    assert "attr" in str(err.value)


def test_bank_training_is_deterministic(small_dataset):
    ds = small_dataset
    idx = np.arange(800)
    b1 = train_primitive_bank(ds, ds.primitives, BankConfig(seed=5), idx)
    b2 = train_primitive_bank(ds, ds.primitives, BankConfig(seed=5), idx)
    for name in ds.primitives:
        assert np.array_equal(b1[name].weights, b2[name].weights)
    b3 = train_primitive_bank(ds, ds.primitives, BankConfig(seed=6), idx)
    assert any(not np.array_equal(b1[name].weights, b3[name].weights) for name in ds.primitives)


def test_bank_rejects_dimension_mismatch():
    with pytest.raises(ShapeMismatchError):
        PrimitiveBank(d=4, names=("a",), classifiers={"a": Classifier(np.ones(3))})


def test_calibration_holdout_splits_consistently():
    cfg = BankConfig(seed=9, calibration_fraction=0.1)
    idx = np.arange(100)
    fit1, hold1 = calibration_holdout(cfg, idx)
    fit2, hold2 = calibration_holdout(cfg, idx)
    assert np.array_equal(fit1, fit2) and np.array_equal(hold1, hold2)
    assert len(hold1) == 10 and len(fit1) == 90
    assert set(fit1) | set(hold1) == set(idx)
    assert not (set(fit1) & set(hold1))


def test_calibrate_bank_fits_every_primitive(small_dataset):
    ds = small_dataset
    idx = np.arange(1000)
    cfg = BankConfig(seed=3)
    bank = train_primitive_bank(ds, ds.primitives, cfg, idx)
    calibrated = calibrate_bank(ds, bank, cfg, idx)
    assert set(calibrated.platt) == set(ds.primitives)
    for name in ds.primitives:
        p = calibrated.platt[name]
        # higher decision value means positive, so the fitted slope is negative
        assert p.a < 0
        assert np.array_equal(calibrated[name].weights, bank[name].weights)


# ---------------------------------------------------------------------------
# Platt calibration


def test_platt_symmetric_scores_give_half_at_zero():
    rng = rng_stream(4, "platt")
    scores = np.concatenate([rng.normal(2.0, 0.5, 500), rng.normal(-2.0, 0.5, 500)])
    labels = np.concatenate([np.ones(500), -np.ones(500)])
    params = platt_fit(scores, labels)
    assert abs(platt_apply(params, 0.0) - 0.5) < 0.02


def test_platt_recovers_logistic_slope():
    rng = rng_stream(5, "platt-slope")
    scores = rng.uniform(-3, 3, 10_000)
    prob_pos = 1.0 / (1.0 + np.exp(-3.0 * scores))
    labels = np.where(rng.uniform(size=scores.shape) < prob_pos, 1.0, -1.0)
    params = platt_fit(scores, labels)
    assert abs(abs(params.a) - 3.0) / 3.0 < 0.15
    assert params.a < 0  # higher score -> higher probability under this fit


def test_platt_single_class_error():
    with pytest.raises(SingleClassError):
        platt_fit(np.array([1.0, 2.0]), np.array([1.0, 1.0]))


def test_platt_apply_midpoint_and_monotonicity():
    params = PlattParams(a=-1.7, b=0.85)
    assert abs(platt_apply(params, -params.b / params.a) - 0.5) < 1e-12
    grid = np.linspace(-10, 10, 100)
    probs = platt_apply_batch(params, grid)
    assert np.all(np.diff(probs) > 0)  # a < 0: increasing in score


def test_platt_apply_matches_definition():
    rng = rng_stream(6, "platt-def")
    for _ in range(50):
        a, b, s = rng.normal(), rng.normal(), rng.normal() * 5
        expected = 1.0 / (1.0 + np.exp(a * s + b))
        assert abs(platt_apply(PlattParams(a, b), s) - expected) < 1e-12


def test_platt_apply_stays_inside_open_interval():
    params = PlattParams(a=-5.0, b=0.0)
    probs = platt_apply_batch(params, np.array([-1e6, -100.0, 0.0, 100.0, 1e6]))
    assert np.all(probs > 0.0) and np.all(probs < 1.0)
