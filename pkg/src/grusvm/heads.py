"""Output layers on top of the final GRU state: L2-SVM and Softmax.

Both heads score with the same affine map ``scores = h @ W.T + b`` over two
classes (0 = normal, 1 = intrusion) and predict by argmax of the raw scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import PROB_FLOOR, softmax

NUM_CLASSES = 2


@dataclass
class HeadParams:
    weights: np.ndarray
    bias: np.ndarray
    C: float = 1.0

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] != NUM_CLASSES:
            raise ValueError(f"head weights must be ({NUM_CLASSES}, cell_size), got {self.weights.shape}")
        if self.bias.shape != (NUM_CLASSES,):
            raise ValueError(f"head bias must be ({NUM_CLASSES},), got {self.bias.shape}")
        if not self.C > 0:
            raise ValueError("penalty C must be positive")

    @property
    def cell_size(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def init(cls, cell_size: int, rng: np.random.Generator, C: float = 1.0,
             scale: float = 0.1) -> "HeadParams":
        return cls(rng.uniform(-scale, scale, (NUM_CLASSES, cell_size)), np.zeros(NUM_CLASSES), C)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"head_W": self.weights, "head_b": self.bias}


@dataclass
class ClassScores:
    scores: np.ndarray
    kind: str = "svm"


def head_scores(h, params: HeadParams, kind: str = "svm") -> ClassScores:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.cell_size:
        raise ValueError(f"hidden state width {h.shape[-1]} != head cell_size {params.cell_size}")
    return ClassScores(h @ params.weights.T + params.bias, kind)


def _check_labels(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if np.any((labels != 0) & (labels != 1)):
        raise ValueError("labels must be 0 or 1")
    return labels.astype(np.int64)


def svm_targets(labels) -> np.ndarray:
    """One-vs-rest targets: +1 in the true class column, -1 elsewhere."""
    y = -np.ones((len(labels), NUM_CLASSES))
    y[np.arange(len(labels)), labels] = 1.0
    return y


def l2_svm_loss(scores, labels, params: HeadParams):
    """Squared-hinge SVM objective.

    ``loss = 0.5 * ||W||_2^2 + C * mean_i sum_k max(0, 1 - y'_ik s_ik)^2``

    Returns ``(loss, dL/dscores, dL/dW from the regulariser)``.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = _check_labels(labels, scores.shape[0])
    n = scores.shape[0]
    y = svm_targets(labels)
    margin = np.maximum(0.0, 1.0 - y * scores)
    data = params.C * (margin ** 2).sum() / n
    reg = 0.5 * float((params.weights ** 2).sum())
    dscores = params.C * (-2.0 * y * margin) / n
    return float(reg + data), dscores, params.weights.copy()


def l1_svm_loss(scores, labels, params: HeadParams) -> float:
    """Plain-hinge SVM objective; reference only, never trained on.

    The regulariser is the squared L1 norm, ``0.5 * (sum |W|)^2``, which is an
    unusual choice but kept verbatim.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = _check_labels(labels, scores.shape[0])
    y = svm_targets(labels)
    data = params.C * np.maximum(0.0, 1.0 - y * scores).sum() / scores.shape[0]
    return float(0.5 * np.abs(params.weights).sum() ** 2 + data)


def softmax_head_loss(scores, labels):
    """Mean cross-entropy of softmax(scores). Returns ``(loss, dL/dscores)``."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = _check_labels(labels, scores.shape[0])
    n = scores.shape[0]
    probs = softmax(scores)
    picked = probs[np.arange(n), labels]
    loss = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    return loss, (probs - onehot) / n


def predict(scores) -> np.ndarray | int:
    """Argmax of the raw scores; ties go to the lower class index."""
    if isinstance(scores, ClassScores):
        scores = scores.scores
    scores = np.asarray(scores)
    out = np.argmax(scores, axis=-1)
    return int(out) if out.ndim == 0 else out
