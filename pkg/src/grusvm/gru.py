"""GRU recurrent cell: forward over a feature-group sequence and exact BPTT.

Gate equations, with ``[a, b]`` concatenation and ``*`` elementwise::

    z  = sigmoid(W_z @ [h_prev, x] + b_z)
    r  = sigmoid(W_r @ [h_prev, x] + b_r)
    hc = tanh(W_h @ [r * h_prev, x] + b_h)
    h  = (1 - z) * h_prev + z * hc

The initial state is zero. Biases default to zero at init, which recovers the
bias-free form exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .nn import dropout_mask, sigmoid

PARAM_NAMES = ("W_z", "W_r", "W_h", "b_z", "b_r", "b_h")


@dataclass
class GruParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        H = self.b_z.shape[0]
        if H <= 0:
            raise ValueError("cell_size must be positive")
        for name in ("W_z", "W_r", "W_h"):
            W = getattr(self, name)
            if W.ndim != 2 or W.shape[0] != H or W.shape[1] <= H:
                raise ValueError(f"{name} has shape {W.shape}, expected ({H}, {H} + input_width)")
            if W.shape != self.W_z.shape:
                raise ValueError(f"{name} shape {W.shape} disagrees with W_z {self.W_z.shape}")
        for name in ("b_r", "b_h"):
            if getattr(self, name).shape != (H,):
                raise ValueError(f"{name} must have shape ({H},)")

    @property
    def cell_size(self) -> int:
        return self.b_z.shape[0]

    @property
    def input_width(self) -> int:
        return self.W_z.shape[1] - self.cell_size

    @classmethod
    def init(cls, cell_size: int, input_width: int, rng: np.random.Generator,
             scale: float = 0.1) -> "GruParams":
        """Uniform[-scale, scale] weights, zero biases."""
        shape = (cell_size, cell_size + input_width)
        return cls(
            W_z=rng.uniform(-scale, scale, shape),
            W_r=rng.uniform(-scale, scale, shape),
            W_h=rng.uniform(-scale, scale, shape),
            b_z=np.zeros(cell_size),
            b_r=np.zeros(cell_size),
            b_h=np.zeros(cell_size),
        )

    @classmethod
    def zeros(cls, cell_size: int, input_width: int) -> "GruParams":
        shape = (cell_size, cell_size + input_width)
        return cls(*(np.zeros(shape) for _ in range(3)), *(np.zeros(cell_size) for _ in range(3)))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}


@dataclass
class GruTrace:
    """Cached forward values, batch-major: ``xs (B,T,D)``, ``hs (B,T+1,H)``, gates ``(B,T,H)``.

    ``mask`` is the dropout scaling applied to the final state (ones in eval mode).
    """
    xs: np.ndarray
    hs: np.ndarray
    zs: np.ndarray
    rs: np.ndarray
    hcs: np.ndarray
    mask: np.ndarray
    single: bool = False

    def __len__(self):
        return self.xs.shape[1]


def cell_forward(x_t, h_prev, params: GruParams):
    """One GRU step for a single sample. Returns ``(h_t, (z, r, hc))``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape != (params.input_width,) or h_prev.shape != (params.cell_size,):
        raise ValueError(
            f"expected x_t ({params.input_width},) and h_prev ({params.cell_size},), "
            f"got {x_t.shape} and {h_prev.shape}")
    hx = np.concatenate([h_prev, x_t])
    z = sigmoid(params.W_z @ hx + params.b_z)
    r = sigmoid(params.W_r @ hx + params.b_r)
    hc = np.tanh(params.W_h @ np.concatenate([r * h_prev, x_t]) + params.b_h)
    h = (1.0 - z) * h_prev + z * hc
    return h, (z, r, hc)


def sequence_forward(x, params: GruParams, keep_prob: float = 1.0, mode: str = "eval",
                     rng: np.random.Generator | None = None, backend: str | None = None):
    """Run the GRU over ``x`` of shape ``(T, D)`` or ``(B, T, D)`` from a zero state.

    Dropout (inverted, ``keep_prob`` = keep probability) is applied to the final
    hidden state only, and only in ``train`` mode. Returns ``(h_final, trace)``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"input must be (T, D) or (B, T, D), got shape {x.shape}")
    if x.shape[1] == 0:
        raise ValueError("empty sequence")
    if x.shape[2] != params.input_width:
        raise ValueError(f"input width {x.shape[2]} != params input width {params.input_width}")
    fwd, _ = _kernels.get(backend)
    hs, zs, rs, hcs = fwd(x, params.W_z, params.W_r, params.W_h,
                          params.b_z, params.b_r, params.b_h)
    h = hs[:, -1]
    if mode == "train" and keep_prob < 1.0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        mask = dropout_mask(h.shape, keep_prob, rng)
    elif mode in ("train", "eval"):
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
        mask = np.ones_like(h)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = h * mask
    trace = GruTrace(x, hs, zs, rs, hcs, mask, single)
    return (out[0] if single else out), trace


@dataclass
class GruGrads:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}


def sequence_backward(trace: GruTrace, dh_final, params: GruParams, backend: str | None = None):
    """Backpropagate ``dL/d(output h)`` through dropout and every time step.

    Gradients are summed over the batch. Returns ``(GruGrads, dL/dx)`` where
    ``dL/dx`` has the same shape as the forward input.
    """
    dh_final = np.asarray(dh_final, dtype=np.float64)
    if trace.single:
        dh_final = dh_final[None]
    if trace.hs.shape[2] != params.cell_size or trace.xs.shape[2] != params.input_width:
        raise ValueError("trace shapes do not match params")
    if dh_final.shape != trace.mask.shape:
        raise ValueError(f"dh_final shape {dh_final.shape} != {trace.mask.shape}")
    _, bwd = _kernels.get(backend)
    dWz, dWr, dWh, dbz, dbr, dbh, dX = bwd(
        trace.xs, params.W_z, params.W_r, params.W_h,
        trace.hs, trace.zs, trace.rs, trace.hcs, dh_final * trace.mask)
    grads = GruGrads(dWz, dWr, dWh, dbz, dbr, dbh)
    return grads, (dX[0] if trace.single else dX)


def build_inputs(indices: np.ndarray, widths) -> np.ndarray:
    """Materialise one-hot time steps from compact group indices.

    ``indices`` is ``(N, T)``; step ``t`` becomes a one-hot of width
    ``widths[t]``, zero-padded on the right to ``max(widths)``. One feature per
    time step; changing the sequence layout only touches this function.
    """
    indices = np.asarray(indices)
    widths = np.asarray(widths)
    if indices.ndim != 2 or indices.shape[1] != widths.shape[0]:
        raise ValueError(f"indices shape {indices.shape} does not match {len(widths)} groups")
    if np.any(indices < 0) or np.any(indices >= widths):
        raise ValueError("group index outside its group width")
    N, T = indices.shape
    X = np.zeros((N, T, int(widths.max())))
    X[np.arange(N)[:, None], np.arange(T)[None, :], indices] = 1.0
    return X
