"""Feature extractor, linear classifier and the free-embedding stand-in."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .loss import LOG_EPS
from .numkit import as_mat, check_finite, matmul, row_softmax


@dataclass
class MlpExtractor:
    """Fully connected rectifier network; every layer is followed by a ReLU."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "MlpExtractor":
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            ws.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            bs.append(np.zeros((1, fan_out)))
        return cls(ws, bs)

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def with_params(self, params) -> "MlpExtractor":
        k = len(self.weights)
        return MlpExtractor(list(params[:k]), list(params[k:]))

    def copy(self) -> "MlpExtractor":
        return self.with_params([p.copy() for p in self.params()])


@dataclass
class LinearClassifier:
    w: np.ndarray
    b: np.ndarray

    @classmethod
    def init(cls, d: int, n_classes: int, rng: np.random.Generator,
             scale: float | None = None) -> "LinearClassifier":
        sd = np.sqrt(1.0 / d) if scale is None else scale
        return cls(rng.normal(0.0, sd, size=(d, n_classes)), np.zeros((1, n_classes)))

    def params(self) -> list[np.ndarray]:
        return [self.w, self.b]

    def with_params(self, params) -> "LinearClassifier":
        return LinearClassifier(*params)

    def copy(self) -> "LinearClassifier":
        return LinearClassifier(self.w.copy(), self.b.copy())


@dataclass
class FreeEmbeddings:
    """Directly optimised 2-D coordinates; they play the role of the extractor."""

    z: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def params(self) -> list[np.ndarray]:
        return [self.z]

    def with_params(self, params) -> "FreeEmbeddings":
        return FreeEmbeddings(params[0])

    def copy(self) -> "FreeEmbeddings":
        return FreeEmbeddings(self.z.copy())


def extract(x, params: MlpExtractor) -> np.ndarray:
    h = check_finite(as_mat(x), "inputs")
    if h.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"input dim {h.shape[1]} != extractor input {params.weights[0].shape[0]}")
    for w, b in zip(params.weights, params.biases):
        h = np.maximum(matmul(h, w) + b, 0.0)
    return h


def classify(z, params: LinearClassifier) -> np.ndarray:
    z = as_mat(z)
    if z.shape[1] != params.w.shape[0]:
        raise ValueError(f"embedding dim {z.shape[1]} != classifier input {params.w.shape[0]}")
    return row_softmax(matmul(z, params.w) + params.b)


def supervised_loss(probs, y_onehot) -> float:
    p, y = as_mat(probs), as_mat(y_onehot)
    if p.shape != y.shape:
        raise ValueError("probs and labels must have the same shape")
    return float(-np.sum(y * np.log(np.maximum(p, LOG_EPS))) / y.shape[0])


def accuracy(probs, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(as_mat(probs), axis=1) == labels))
