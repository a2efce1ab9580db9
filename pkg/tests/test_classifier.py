import numpy as np
import pytest

from carlab.classifier import (
    ClassifierConfig,
    EvalResult,
    build_classifier,
    confusion,
    evaluate,
    load_weights,
    parameter_count,
    predict,
    predict_proba,
    save_weights,
    train_classifier,
)
from carlab.errors import EmptyTestSet, EvenKernelLength, ShapeArithmeticError, ShapeMismatch

LOW = dict(input_rows=16, input_T=64)


def expected_parameters(F, lt, hidden, rows, T, kh=3):
    return ((F * 2 * kh * lt + F) + (F * F * kh * lt + F)
            + (F * rows * T // 16) * hidden + hidden + hidden + 1)


def test_output_is_a_probability():
    model = build_classifier(ClassifierConfig())
    x = np.random.default_rng(0).normal(size=(3, 256, 64, 2)).astype(np.float32) * 50
    p = predict_proba(model, x)
    assert p.shape == (3,)
    assert np.all((p > 0) & (p < 1))


@pytest.mark.parametrize("F,lt", [(1, 5), (8, 5), (4, 9)])
def test_parameter_count(F, lt):
    cfg = ClassifierConfig(filters=F, kernel_t=lt)
    assert parameter_count(build_classifier(cfg)) == expected_parameters(F, lt, 32, 256, 64)


def test_tie_at_threshold_predicts_los():
    model = build_classifier(ClassifierConfig(**LOW))
    out_layer = model.net.layers[-2]
    out_layer.params["W"][...] = 0.0
    out_layer.params["b"][...] = 0.0
    x = np.random.default_rng(1).normal(size=(4, 16, 64, 2)).astype(np.float32)
    assert np.all(predict_proba(model, x) == 0.5)
    assert predict(model, x).tolist() == [1, 1, 1, 1]


def test_config_validation():
    with pytest.raises(EvenKernelLength):
        ClassifierConfig(kernel_t=6).validate()
    with pytest.raises(ShapeArithmeticError):
        ClassifierConfig(input_rows=18).validate()
    model = build_classifier(ClassifierConfig(**LOW))
    with pytest.raises(ShapeMismatch):
        predict_proba(model, np.zeros((1, 256, 64, 2)))
    with pytest.raises(ShapeMismatch):
        train_classifier(model, np.zeros((2, 16, 64, 2)), np.zeros(3))


def test_overfits_ten_samples(small_dataset):
    # one SGD step per epoch here, so the rate is raised well above the training default
    x, y = small_dataset.low[:10], small_dataset.labels[:10]
    model = build_classifier(ClassifierConfig(**LOW, seed=0))
    trace = train_classifier(model, x, y, epochs=200, learning_rate=0.05)
    assert trace.epoch_accuracies[-1] == 1.0
    assert evaluate(model, x, y).accuracy == 1.0


def test_all_positive_labels():
    x = np.random.default_rng(2).normal(size=(12, 16, 64, 2)).astype(np.float32)
    model = build_classifier(ClassifierConfig(**LOW))
    train_classifier(model, x, np.ones(12, dtype=np.uint8), epochs=100)
    assert np.all(predict_proba(model, x) > 0.5)


def test_training_is_bit_reproducible(small_dataset):
    traces, outs = [], []
    for _ in range(2):
        model = build_classifier(ClassifierConfig(**LOW, seed=7))
        traces.append(train_classifier(model, small_dataset.low, small_dataset.labels, epochs=3))
        outs.append(predict_proba(model, small_dataset.low))
    assert traces[0] == traces[1]
    assert np.array_equal(*outs)


def test_confusion_counts():
    pred = np.array([1, 1, 0, 0, 1])
    truth = np.array([1, 0, 0, 1, 1])
    r = confusion(pred, truth)
    assert (r.tp, r.tn, r.fp, r.fn) == (2, 1, 1, 1)
    assert r.accuracy == 0.6 and r.total == 5
    assert confusion(truth, truth) == EvalResult(1.0, 3, 2, 0, 0)


def test_empty_test_set():
    with pytest.raises(EmptyTestSet):
        confusion([], [])
    model = build_classifier(ClassifierConfig(**LOW))
    with pytest.raises(EmptyTestSet):
        evaluate(model, np.zeros((0, 16, 64, 2), dtype=np.float32), np.zeros(0))


def test_evaluate_ignores_order(small_dataset):
    model = build_classifier(ClassifierConfig(**LOW, seed=2))
    x, y = small_dataset.low, small_dataset.labels
    perm = np.random.default_rng(0).permutation(len(y))
    a, b = evaluate(model, x, y), evaluate(model, x[perm], y[perm])
    assert a == b and a.total == len(y)


def test_coin_flip_is_near_half():
    labels = np.repeat([0, 1], 1000)
    pred = np.random.default_rng(11).integers(0, 2, size=2000)
    assert abs(confusion(pred, labels).accuracy - 0.5) <= 0.03


def test_checkpoint_round_trip(tmp_path, small_dataset):
    model = build_classifier(ClassifierConfig(**LOW, seed=5))
    train_classifier(model, small_dataset.low, small_dataset.labels, epochs=1)
    loaded = load_weights(save_weights(model, tmp_path / "clf.ckpt"))
    assert loaded.cfg == model.cfg
    assert np.array_equal(predict_proba(loaded, small_dataset.low),
                          predict_proba(model, small_dataset.low))
