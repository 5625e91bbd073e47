"""Frame classifiers: the pluggable interface and a linear softmax reference model."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import DimensionMismatch, FormatError


class FrameClassifier(Protocol):
    """What the training loop needs from a classifier.

    Any object with these methods can replace :class:`LinearSoftmaxModel`.
    """

    num_classes: int
    feature_dim: int

    def train_batch(self, features: np.ndarray, labels: np.ndarray) -> float: ...

    def predict(self, features: np.ndarray) -> np.ndarray: ...


@dataclass
class ScoreMatrix:
    """Per-frame softmax scores for one video, shape ``(L, K)``."""

    video_id: str
    scores: np.ndarray

    def column(self, k: int) -> np.ndarray:
        return self.scores[:, k]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_and_grad(weights, bias, features, labels):
    """Mean cross-entropy of ``softmax(X W^T + b)`` and its gradients.

    Works in the dtype of the inputs; returns ``(loss, dW, db)``.
    """
    n = features.shape[0]
    probs = softmax(features @ weights.T + bias)
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, np.finfo(probs.dtype).tiny))))
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    return loss, delta.T @ features, delta.sum(axis=0)


class LinearSoftmaxModel:
    """Multinomial logistic regression trained by plain minibatch SGD.

    Parameters are stored as float32 so that checkpoints round-trip exactly;
    each step is computed in float64 and rounded back.
    """

    def __init__(self, num_classes: int, feature_dim: int, learning_rate: float = 0.1, seed: int = 0):
        if num_classes < 1 or feature_dim < 1:
            raise ValueError("num_classes and feature_dim must be positive")
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.learning_rate = learning_rate
        self.seed = seed
        self.weights = np.zeros((num_classes, feature_dim), dtype=np.float32)
        self.bias = np.zeros(num_classes, dtype=np.float32)

    def _check(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features)
        if features.shape[-1] != self.feature_dim:
            raise DimensionMismatch(
                f"feature dimension {features.shape[-1]} does not match model dimension {self.feature_dim}"
            )
        return features

    def train_batch(self, features, labels) -> float:
        """One SGD step on the batch; returns the loss before the step."""
        features = self._check(np.atleast_2d(features)).astype(np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if features.shape[0] == 0 or labels.shape != (features.shape[0],):
            raise DimensionMismatch(f"{features.shape[0]} feature rows but labels of shape {labels.shape}")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        w = self.weights.astype(np.float64)
        b = self.bias.astype(np.float64)
        loss, dw, db = cross_entropy_and_grad(w, b, features, labels)
        self.weights = (w - self.learning_rate * dw).astype(np.float32)
        self.bias = (b - self.learning_rate * db).astype(np.float32)
        return loss

    def predict(self, features) -> np.ndarray:
        """Softmax over classes for one feature vector or a stack of them."""
        features = self._check(features).astype(np.float64)
        # elementwise product + last-axis sum: a row's result does not depend on batch size
        products = features[..., None, :] * self.weights.astype(np.float64)
        return softmax(products.sum(axis=-1) + self.bias.astype(np.float64))

    # checkpoint: u32 K, u32 d, then K*d weights and K biases, all little-endian
    def to_bytes(self) -> bytes:
        header = struct.pack("<II", self.num_classes, self.feature_dim)
        return header + self.weights.astype("<f4").tobytes() + self.bias.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, learning_rate: float = 0.1, seed: int = 0) -> "LinearSoftmaxModel":
        if len(data) < 8:
            raise FormatError(f"model checkpoint truncated: {len(data)} bytes")
        k, d = struct.unpack_from("<II", data)
        expected = 8 + 4 * (k * d + k)
        if k == 0 or d == 0 or len(data) != expected:
            raise FormatError(f"model checkpoint is {len(data)} bytes, header (K={k}, d={d}) implies {expected}")
        model = cls(k, d, learning_rate, seed)
        body = np.frombuffer(data, dtype="<f4", offset=8)
        model.weights = body[: k * d].reshape(k, d).astype(np.float32)
        model.bias = body[k * d:].astype(np.float32)
        return model

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path, **kwargs) -> "LinearSoftmaxModel":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise FormatError(f"{path}: cannot read model checkpoint ({exc.strerror})") from exc
        return cls.from_bytes(data, **kwargs)


def score_video(model: FrameClassifier, video) -> ScoreMatrix:
    """Score every frame of ``video``; rows are independent predictions."""
    if video.length == 0:
        return ScoreMatrix(video.video_id, np.zeros((0, model.num_classes)))
    return ScoreMatrix(video.video_id, np.atleast_2d(model.predict(video.features)))
