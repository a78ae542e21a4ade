"""Batched GRU forward/backward kernels.

Two interchangeable implementations share one calling convention:

* ``numpy``: vectorised over the batch, one BLAS matmul per gate per step.
* ``numba``: ``@njit`` kernels that fuse the gate arithmetic into compiled
  loops and leave the matrix products to BLAS. Input projections and all
  weight-gradient products are hoisted out of the time loop, so only the
  recurrence itself runs step by step.

``BACKEND`` is chosen at import: numba when it imports cleanly, unless the
environment variable ``GRUSVM_DISABLE_NUMBA`` is set to a non-empty value
other than ``0``.

Layout: each weight matrix is ``(H, H + D)`` and multiplies ``[h_prev, x_t]``.
Traces are ``hs (B, T+1, H)`` with ``hs[:, 0]`` the zero initial state, and
``zs, rs, hcs (B, T, H)``.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .nn import sigmoid, sigmoid_grad, tanh_grad

_flag = os.environ.get("GRUSVM_DISABLE_NUMBA", "")
_disabled = _flag not in ("", "0")

try:
    if _disabled:
        raise ImportError("numba disabled by GRUSVM_DISABLE_NUMBA")
    import numba
    from numba import njit
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the bundled TBB is too old for numba; skip probing it
        numba.config.THREADING_LAYER = "workqueue"
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


def forward_numpy(X, Wz, Wr, Wh, bz, br, bh):
    B, T, _ = X.shape
    H = bz.shape[0]
    hs = np.zeros((B, T + 1, H))
    zs = np.empty((B, T, H))
    rs = np.empty((B, T, H))
    hcs = np.empty((B, T, H))
    # split once so the per-step work is two matmuls per gate, no concatenation
    Uz, Vz = Wz[:, :H], Wz[:, H:]
    Ur, Vr = Wr[:, :H], Wr[:, H:]
    Uh, Vh = Wh[:, :H], Wh[:, H:]
    for t in range(T):
        hp = hs[:, t]
        x = X[:, t]
        z = sigmoid(hp @ Uz.T + x @ Vz.T + bz)
        r = sigmoid(hp @ Ur.T + x @ Vr.T + br)
        hc = np.tanh((r * hp) @ Uh.T + x @ Vh.T + bh)
        zs[:, t] = z
        rs[:, t] = r
        hcs[:, t] = hc
        hs[:, t + 1] = (1.0 - z) * hp + z * hc
    return hs, zs, rs, hcs


def backward_numpy(X, Wz, Wr, Wh, hs, zs, rs, hcs, dh_final):
    B, T, D = X.shape
    H = hs.shape[2]
    dWz = np.zeros_like(Wz)
    dWr = np.zeros_like(Wr)
    dWh = np.zeros_like(Wh)
    dbz = np.zeros(H)
    dbr = np.zeros(H)
    dbh = np.zeros(H)
    dX = np.zeros_like(X)
    Uz, Vz = Wz[:, :H], Wz[:, H:]
    Ur, Vr = Wr[:, :H], Wr[:, H:]
    Uh, Vh = Wh[:, :H], Wh[:, H:]
    dh = np.array(dh_final, dtype=np.float64, copy=True)
    for t in range(T - 1, -1, -1):
        hp = hs[:, t]
        x = X[:, t]
        z, r, hc = zs[:, t], rs[:, t], hcs[:, t]

        dhc = dh * z
        dz = dh * (hc - hp)
        dhp = dh * (1.0 - z)

        dah = dhc * tanh_grad(hc)
        rh = r * hp
        dWh[:, :H] += dah.T @ rh
        dWh[:, H:] += dah.T @ x
        dbh += dah.sum(axis=0)
        drh = dah @ Uh
        dx = dah @ Vh
        dr = drh * hp
        dhp += drh * r

        daz = dz * sigmoid_grad(z)
        dWz[:, :H] += daz.T @ hp
        dWz[:, H:] += daz.T @ x
        dbz += daz.sum(axis=0)
        dhp += daz @ Uz
        dx += daz @ Vz

        dar = dr * sigmoid_grad(r)
        dWr[:, :H] += dar.T @ hp
        dWr[:, H:] += dar.T @ x
        dbr += dar.sum(axis=0)
        dhp += dar @ Ur
        dx += dar @ Vr

        dX[:, t] = dx
        dh = dhp
    return dWz, dWr, dWh, dbz, dbr, dbh, dX


if HAS_NUMBA:

    @njit(inline="always")
    def _sig(a):
        if a >= 0.0:
            return 1.0 / (1.0 + math.exp(-a))
        e = math.exp(a)
        return e / (1.0 + e)

    @njit(cache=True)
    def _forward_nb(X2, UzT, UrT, UhT, VzT, VrT, VhT, bz, br, bh, hs, zs, rs, hcs):
        B, T1, H = hs.shape
        T = T1 - 1
        # input projections for every step at once: (B*T, D) @ (D, H)
        xz = np.dot(X2, VzT)
        xr = np.dot(X2, VrT)
        xh = np.dot(X2, VhT)
        hp = np.zeros((B, H))
        rh = np.empty((B, H))
        for t in range(T):
            az = np.dot(hp, UzT)
            ar = np.dot(hp, UrT)
            for b in range(B):
                k = b * T + t
                for i in range(H):
                    zs[b, t, i] = _sig(az[b, i] + xz[k, i] + bz[i])
                    r = _sig(ar[b, i] + xr[k, i] + br[i])
                    rs[b, t, i] = r
                    rh[b, i] = r * hp[b, i]
            ah = np.dot(rh, UhT)
            for b in range(B):
                k = b * T + t
                for i in range(H):
                    hc = math.tanh(ah[b, i] + xh[k, i] + bh[i])
                    hcs[b, t, i] = hc
                    z = zs[b, t, i]
                    hn = (1.0 - z) * hp[b, i] + z * hc
                    hs[b, t + 1, i] = hn
                    hp[b, i] = hn

    @njit(cache=True)
    def _backward_nb(X2, Uz, Ur, Uh, hs, zs, rs, hcs, dh_final):
        B, T1, H = hs.shape
        T = T1 - 1
        # per-step pre-activation grads, rows ordered (b, t) like X2
        DAZ = np.empty((B * T, H))
        DAR = np.empty((B * T, H))
        DAH = np.empty((B * T, H))
        HP = np.empty((B * T, H))
        RH = np.empty((B * T, H))
        dh = dh_final.copy()
        dah = np.empty((B, H))
        dhp = np.empty((B, H))
        dar = np.empty((B, H))
        daz = np.empty((B, H))
        for t in range(T - 1, -1, -1):
            for b in range(B):
                k = b * T + t
                for i in range(H):
                    z = zs[b, t, i]
                    hc = hcs[b, t, i]
                    hp = hs[b, t, i]
                    g = dh[b, i]
                    dah[b, i] = g * z * (1.0 - hc * hc)
                    daz[b, i] = g * (hc - hp) * z * (1.0 - z)
                    dhp[b, i] = g * (1.0 - z)
                    DAH[k, i] = dah[b, i]
                    DAZ[k, i] = daz[b, i]
                    HP[k, i] = hp
                    RH[k, i] = rs[b, t, i] * hp
            drh = np.dot(dah, Uh)
            for b in range(B):
                k = b * T + t
                for i in range(H):
                    r = rs[b, t, i]
                    g = drh[b, i] * hs[b, t, i] * r * (1.0 - r)
                    dar[b, i] = g
                    DAR[k, i] = g
                    dhp[b, i] += drh[b, i] * r
            dh = dhp + np.dot(daz, Uz) + np.dot(dar, Ur)
        return DAZ, DAR, DAH, HP, RH

    def forward_numba(X, Wz, Wr, Wh, bz, br, bh):
        B, T, D = X.shape
        H = bz.shape[0]
        hs = np.zeros((B, T + 1, H))
        zs = np.empty((B, T, H))
        rs = np.empty((B, T, H))
        hcs = np.empty((B, T, H))
        X2 = np.ascontiguousarray(X, dtype=np.float64).reshape(B * T, D)
        c = np.ascontiguousarray
        _forward_nb(X2, c(Wz[:, :H].T), c(Wr[:, :H].T), c(Wh[:, :H].T),
                    c(Wz[:, H:].T), c(Wr[:, H:].T), c(Wh[:, H:].T),
                    c(bz, dtype=np.float64), c(br, dtype=np.float64), c(bh, dtype=np.float64),
                    hs, zs, rs, hcs)
        return hs, zs, rs, hcs

    def backward_numba(X, Wz, Wr, Wh, hs, zs, rs, hcs, dh_final):
        B, T, D = X.shape
        H = hs.shape[2]
        c = np.ascontiguousarray
        X2 = c(X, dtype=np.float64).reshape(B * T, D)
        DAZ, DAR, DAH, HP, RH = _backward_nb(X2, c(Wz[:, :H]), c(Wr[:, :H]), c(Wh[:, :H]),
                                             c(hs), c(zs), c(rs), c(hcs),
                                             c(dh_final, dtype=np.float64))
        # weight gradients need no recurrence: one GEMM each over all (b, t) rows
        dWz = np.hstack([DAZ.T @ HP, DAZ.T @ X2])
        dWr = np.hstack([DAR.T @ HP, DAR.T @ X2])
        dWh = np.hstack([DAH.T @ RH, DAH.T @ X2])
        dX = (DAZ @ Wz[:, H:] + DAR @ Wr[:, H:] + DAH @ Wh[:, H:]).reshape(B, T, D)
        return dWz, dWr, dWh, DAZ.sum(axis=0), DAR.sum(axis=0), DAH.sum(axis=0), dX

else:
    forward_numba = None
    backward_numba = None


_IMPLS = {"numpy": (forward_numpy, backward_numpy)}
if HAS_NUMBA:
    _IMPLS["numba"] = (forward_numba, backward_numba)


def get(backend: str | None = None):
    """Return ``(forward, backward)`` for ``backend`` (default: ``BACKEND``)."""
    name = backend or BACKEND
    try:
        return _IMPLS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(_IMPLS)}") from None
