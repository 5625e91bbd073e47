import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsrefine.classifier import LinearSoftmaxModel, cross_entropy_and_grad, score_video, softmax
from tsrefine.errors import DimensionMismatch, FormatError
from tsrefine.synthdata import VideoStream


def test_first_loss_is_log_k():
    m = LinearSoftmaxModel(5, 3)
    X = np.random.default_rng(0).normal(size=(7, 3))
    assert m.train_batch(X, [0, 1, 2, 3, 4, 0, 1]) == pytest.approx(math.log(5), abs=1e-6)


def test_sgd_reduces_loss_on_separable_batch():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(2, 0.3, (20, 2)), rng.normal(-2, 0.3, (20, 2))])
    y = np.array([0] * 20 + [1] * 20)
    m = LinearSoftmaxModel(2, 2, learning_rate=0.1)
    first = m.train_batch(X, y)
    for _ in range(199):
        last = m.train_batch(X, y)
    assert last < first


def test_dimension_mismatch():
    m = LinearSoftmaxModel(3, 4)
    with pytest.raises(DimensionMismatch):
        m.train_batch(np.zeros((2, 5)), [0, 1])
    with pytest.raises(DimensionMismatch):
        m.predict(np.zeros(5))
    with pytest.raises(DimensionMismatch):
        m.train_batch(np.zeros((2, 4)), [0])


def test_zero_model_predicts_uniform():
    np.testing.assert_allclose(LinearSoftmaxModel(4, 3).predict(np.array([1.0, -2.0, 3.0])), 0.25)


def test_bias_dominates():
    for k in range(2, 11):
        m = LinearSoftmaxModel(k, 3)
        m.bias[0] = 10
        p0 = m.predict(np.ones(3))[0]
        assert p0 == pytest.approx(math.exp(10) / (math.exp(10) + k - 1), abs=1e-12)
        # 1 - p0 = (K-1) / (e^10 + K - 1) stays under 1e-4 only up to K = 3
        assert 1 - p0 < (1e-4 if k <= 3 else 5e-4)


@given(arrays(np.float64, (6, 4), elements=st.floats(-50, 50)))
def test_predict_normalized(X):
    m = LinearSoftmaxModel(3, 4)
    m.weights[:] = np.arange(12, dtype=np.float32).reshape(3, 4) / 7
    p = m.predict(X)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_softmax_stable_for_large_logits():
    p = softmax(np.array([1e4, 0.0, -1e4]))
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)


@settings(max_examples=30)
@given(st.integers(2, 4), st.integers(1, 8), st.integers(1, 10), st.integers(0, 2**31))
def test_gradient_against_central_differences(k, d, n, seed):
    rng = np.random.default_rng(seed)
    W, b = rng.normal(size=(k, d)), rng.normal(size=k)
    X, y = rng.normal(size=(n, d)), rng.integers(0, k, n)
    _, dW, db = cross_entropy_and_grad(W, b, X, y)
    eps = 1e-6
    num_W = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        hi, lo = W.copy(), W.copy()
        hi[idx] += eps
        lo[idx] -= eps
        num_W[idx] = (cross_entropy_and_grad(hi, b, X, y)[0] - cross_entropy_and_grad(lo, b, X, y)[0]) / (2 * eps)
    num_b = np.zeros_like(b)
    for i in range(k):
        hi, lo = b.copy(), b.copy()
        hi[i] += eps
        lo[i] -= eps
        num_b[i] = (cross_entropy_and_grad(W, hi, X, y)[0] - cross_entropy_and_grad(W, lo, X, y)[0]) / (2 * eps)
    scale = max(np.abs(num_W).max(), np.abs(num_b).max(), 1e-8)
    assert np.abs(dW - num_W).max() / scale < 1e-4
    assert np.abs(db - num_b).max() / scale < 1e-4


def test_training_deterministic():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(30, 4)), rng.integers(0, 3, 30)
    a, b = LinearSoftmaxModel(3, 4), LinearSoftmaxModel(3, 4)
    for i in range(0, 30, 5):
        a.train_batch(X[i:i + 5], y[i:i + 5])
        b.train_batch(X[i:i + 5], y[i:i + 5])
    assert a.to_bytes() == b.to_bytes()


def _video(n, d=3, seed=0):
    feats = np.random.default_rng(seed).normal(size=(n, d)).astype(np.float32)
    return VideoStream("v", n, feats)


def test_score_empty_video():
    assert score_video(LinearSoftmaxModel(4, 3), _video(0)).scores.shape == (0, 4)


def test_score_untrained_uniform():
    np.testing.assert_allclose(score_video(LinearSoftmaxModel(4, 3), _video(9)).scores, 0.25)


def test_score_equals_stacked_predict():
    m = LinearSoftmaxModel(3, 3)
    m.weights[:] = np.random.default_rng(2).normal(size=(3, 3))
    v = _video(17, seed=4)
    stacked = np.stack([m.predict(v.features[x]) for x in range(v.length)])
    assert np.array_equal(score_video(m, v).scores, stacked)


def test_bytes_round_trip():
    m = LinearSoftmaxModel(3, 5)
    m.weights[:] = np.random.default_rng(0).normal(size=(3, 5))
    m.bias[:] = [0.5, -1, 2]
    back = LinearSoftmaxModel.from_bytes(m.to_bytes())
    assert np.array_equal(back.weights, m.weights) and np.array_equal(back.bias, m.bias)


def test_checkpoint_layout():
    m = LinearSoftmaxModel(2, 3)
    m.weights[:] = [[1, 2, 3], [4, 5, 6]]
    m.bias[:] = [7, 8]
    data = m.to_bytes()
    assert data[:8] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert np.frombuffer(data[8:], "<f4").tolist() == [1, 2, 3, 4, 5, 6, 7, 8]


def test_bad_checkpoint(tmp_path):
    with pytest.raises(FormatError):
        LinearSoftmaxModel.from_bytes(LinearSoftmaxModel(2, 2).to_bytes()[:-1])
    with pytest.raises(FormatError, match="missing.bin"):
        LinearSoftmaxModel.load(tmp_path / "missing.bin")
