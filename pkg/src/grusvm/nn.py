"""Small dense numerical kernel: activations, softmax, cross-entropy, dropout, Adam.

Everything works in float64. Each differentiable op has a matching ``*_grad``
helper so callers can chain derivatives by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12


def sigmoid(y):
    """Logistic function, stable for large ``|y|`` (no overflow in ``exp``)."""
    y = np.asarray(y, dtype=np.float64)
    e = np.exp(-np.abs(y))
    out = np.where(y >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def sigmoid_grad(s):
    """Derivative of the sigmoid expressed through its output ``s``."""
    return s * (1.0 - s)


def tanh_grad(t):
    return 1.0 - t * t


def softmax(scores):
    """Row-wise softmax over the last axis with max-subtraction."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_grad(probs, upstream):
    """Vector-Jacobian product of softmax: returns dL/dscores given dL/dprobs."""
    inner = (upstream * probs).sum(axis=-1, keepdims=True)
    return probs * (upstream - inner)


def cross_entropy(probs, true_class: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= true_class < probs.shape[-1]:
        raise IndexError(f"class index {true_class} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[true_class], PROB_FLOOR)))


def cross_entropy_grad(probs, true_class: int):
    """dL/dprobs of ``cross_entropy``. Zero past the floor, where the loss is flat."""
    probs = np.asarray(probs, dtype=np.float64)
    g = np.zeros_like(probs)
    p = probs[true_class]
    if p > PROB_FLOOR:
        g[true_class] = -1.0 / p
    return g


def dropout_mask(shape, keep_prob: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout scaling mask: entries are 0 or ``1/keep_prob``."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return np.ones(shape)
    keep = rng.random(shape) < keep_prob
    return keep / keep_prob


def dropout(v, keep_prob: float, mode: str = "train", rng: np.random.Generator | None = None):
    """Inverted dropout. ``keep_prob`` is the probability of KEEPING a unit.

    In ``eval`` mode the input is returned unchanged.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    v = np.asarray(v, dtype=np.float64)
    if mode == "eval" or keep_prob == 1.0:
        return v
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    return v * dropout_mask(v.shape, keep_prob, rng)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **kw) -> "AdamState":
        st = cls(**kw)
        for k, p in params.items():
            st.m[k] = np.zeros_like(p, dtype=np.float64)
            st.v[k] = np.zeros_like(p, dtype=np.float64)
        return st


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k!r}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        elif state.m[k].shape != p.shape:
            raise ValueError(f"optimizer state shape mismatch for {k!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
