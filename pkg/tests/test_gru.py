import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grusvm import _kernels
from grusvm.gru import (GruParams, build_inputs, cell_forward, sequence_backward,
                        sequence_forward)


def scalar_cell(x, h, p):
    """Gate equations evaluated with plain Python floats and explicit loops."""
    H, D = len(h), len(x)
    hx = list(h) + list(x)

    def affine(W, b, v):
        return [b[i] + sum(W[i][j] * v[j] for j in range(H + D)) for i in range(H)]

    sig = lambda a: 1.0 / (1.0 + math.exp(-a))  # noqa: E731
    z = [sig(a) for a in affine(p.W_z.tolist(), p.b_z.tolist(), hx)]
    r = [sig(a) for a in affine(p.W_r.tolist(), p.b_r.tolist(), hx)]
    rhx = [r[i] * h[i] for i in range(H)] + list(x)
    hc = [math.tanh(a) for a in affine(p.W_h.tolist(), p.b_h.tolist(), rhx)]
    return [(1 - z[i]) * h[i] + z[i] * hc[i] for i in range(H)]


def random_params(rng, H, D, scale=0.5, bias=True):
    p = GruParams.init(H, D, rng, scale)
    if bias:
        for b in (p.b_z, p.b_r, p.b_h):
            b[:] = rng.uniform(-scale, scale, H)
    return p


class TestCellForward:
    def test_zero_params(self, rng):
        p = GruParams.zeros(3, 2)
        h_prev = rng.normal(size=3)
        h, (z, r, hc) = cell_forward(rng.normal(size=2), h_prev, p)
        np.testing.assert_array_equal(z, 0.5)
        np.testing.assert_array_equal(r, 0.5)
        np.testing.assert_array_equal(hc, 0.0)
        np.testing.assert_allclose(h, 0.5 * h_prev, rtol=0, atol=1e-15)

    def test_saturated_update_gate_takes_candidate(self, rng):
        p = random_params(rng, 3, 2)
        p.b_z[:] = 40.0
        h, (_, _, hc) = cell_forward(rng.normal(size=2), rng.normal(size=3), p)
        np.testing.assert_allclose(h, hc, atol=1e-12)

    def test_matches_scalar_oracle(self, rng):
        p = random_params(rng, 2, 2)
        x, h_prev = rng.normal(size=2), rng.normal(size=2)
        h, _ = cell_forward(x, h_prev, p)
        np.testing.assert_allclose(h, scalar_cell(x.tolist(), h_prev.tolist(), p), atol=1e-14)

    def test_shape_mismatch(self, rng):
        p = random_params(rng, 2, 2)
        with pytest.raises(ValueError):
            cell_forward(np.zeros(3), np.zeros(2), p)

    def test_bad_param_shapes(self):
        with pytest.raises(ValueError):
            GruParams(np.zeros((2, 4)), np.zeros((2, 5)), np.zeros((2, 4)),
                      np.zeros(2), np.zeros(2), np.zeros(2))


class TestSequenceForward:
    def test_length_one_equals_cell(self, rng, backend):
        p = random_params(rng, 4, 3)
        x = rng.normal(size=(1, 3))
        h, _ = sequence_forward(x, p, backend=backend)
        h1, _ = cell_forward(x[0], np.zeros(4), p)
        np.testing.assert_allclose(h, h1, atol=1e-14)

    def test_zero_params_stay_at_zero(self, rng, backend):
        h, _ = sequence_forward(rng.normal(size=(6, 3)), GruParams.zeros(4, 3), backend=backend)
        np.testing.assert_array_equal(h, 0.0)

    def test_length_three_matches_composed_oracle(self, rng, backend):
        p = random_params(rng, 2, 2)
        xs = rng.normal(size=(3, 2))
        h = [0.0, 0.0]
        for x in xs:
            h = scalar_cell(x.tolist(), h, p)
        out, trace = sequence_forward(xs, p, backend=backend)
        np.testing.assert_allclose(out, h, atol=1e-14)
        assert len(trace) == 3

    def test_empty_sequence(self, rng):
        with pytest.raises(ValueError):
            sequence_forward(np.zeros((0, 3)), random_params(rng, 2, 3))

    def test_dropout_only_in_train_mode(self, rng):
        p = random_params(rng, 16, 3)
        x = rng.normal(size=(4, 5, 3))
        h_eval, _ = sequence_forward(x, p, 0.5, "eval")
        h_train, tr = sequence_forward(x, p, 0.5, "train", np.random.default_rng(0))
        np.testing.assert_array_equal(h_train, h_eval * tr.mask)
        assert set(np.unique(tr.mask)) <= {0.0, 2.0}

    def test_deterministic_under_seed(self, rng, backend):
        p = random_params(rng, 8, 3)
        x = rng.normal(size=(5, 4, 3))
        a, _ = sequence_forward(x, p, 0.8, "train", np.random.default_rng(3), backend)
        b, _ = sequence_forward(x, p, 0.8, "train", np.random.default_rng(3), backend)
        assert a.tobytes() == b.tobytes()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 9), st.integers(1, 12))
def test_gate_and_state_ranges(seed, T, H):
    rng = np.random.default_rng(seed)
    p = random_params(rng, H, 4, scale=1.0)
    _, tr = sequence_forward(rng.normal(size=(3, T, 4)), p)
    for a in (tr.zs, tr.rs):
        assert np.all((a > 0) & (a < 1))
    assert np.all(np.abs(tr.hcs) < 1)
    assert np.all(np.abs(tr.hs) < 1)


def numeric_grad(f, arr, h=1e-5):
    g = np.empty_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel(a, n):
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)).max())


class TestBackward:
    def test_zero_upstream_gives_zero_gradients(self, rng, backend):
        p = random_params(rng, 4, 3)
        x = rng.normal(size=(2, 5, 3))
        _, tr = sequence_forward(x, p, backend=backend)
        g, dx = sequence_backward(tr, np.zeros((2, 4)), p, backend)
        for v in g.as_dict().values():
            np.testing.assert_array_equal(v, 0.0)
        np.testing.assert_array_equal(dx, 0.0)

    def test_matches_finite_differences(self, rng, backend):
        H, T, D = 4, 5, 3
        p = random_params(rng, H, D)
        x = rng.normal(size=(T, D))
        u = rng.normal(size=H)

        def loss():
            return float(sequence_forward(x, p, backend=backend)[0] @ u)

        _, tr = sequence_forward(x, p, backend=backend)
        g, dx = sequence_backward(tr, u, p, backend)
        for name, arr in p.as_dict().items():
            assert max_rel(getattr(g, name), numeric_grad(loss, arr)) < 1e-4, name
        assert max_rel(dx, numeric_grad(loss, x)) < 1e-4

    def test_saturated_update_gate_routes_through_candidate(self, rng, backend):
        # z == 1 to double precision: h_t = hc_t, so W_z gets no gradient and
        # the previous state only reaches the output through the candidate.
        H, D = 3, 2
        p = random_params(rng, H, D)
        p.b_z[:] = 60.0
        x = rng.normal(size=(2, D))
        x[1] = x[0]
        u = rng.normal(size=H)

        def loss():
            return float(sequence_forward(x, p, backend=backend)[0] @ u)

        _, tr = sequence_forward(x, p, backend=backend)
        g, _ = sequence_backward(tr, u, p, backend)
        np.testing.assert_allclose(g.W_z, 0.0, atol=1e-20)
        np.testing.assert_allclose(numeric_grad(loss, p.W_z), 0.0, atol=1e-10)
        for name in ("W_h", "W_r", "b_h"):
            assert max_rel(getattr(g, name), numeric_grad(loss, getattr(p, name))) < 1e-4

    def test_trace_param_mismatch(self, rng):
        p = random_params(rng, 4, 3)
        _, tr = sequence_forward(rng.normal(size=(3, 3)), p)
        with pytest.raises(ValueError):
            sequence_backward(tr, np.zeros(5), random_params(rng, 5, 3))


@pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba unavailable")
def test_backends_agree(rng):
    p = random_params(rng, 16, 7)
    x = build_inputs(rng.integers(0, 7, (33, 6)), [7] * 6)
    f_np, b_np = _kernels.get("numpy")
    f_nb, b_nb = _kernels.get("numba")
    args = (p.W_z, p.W_r, p.W_h, p.b_z, p.b_r, p.b_h)
    tr_np, tr_nb = f_np(x, *args), f_nb(x, *args)
    for a, b in zip(tr_np, tr_nb):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)
    dh = rng.normal(size=(33, 16))
    for a, b in zip(b_np(x, p.W_z, p.W_r, p.W_h, *tr_np, dh), b_nb(x, p.W_z, p.W_r, p.W_h, *tr_nb, dh)):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12)


def test_env_flag_forces_numpy_backend():
    env = dict(os.environ, GRUSVM_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from grusvm import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.get("cuda")


class TestBuildInputs:
    def test_padding(self):
        X = build_inputs(np.array([[2, 0], [0, 1]]), [3, 2])
        np.testing.assert_array_equal(X[0], [[0, 0, 1], [1, 0, 0]])
        np.testing.assert_array_equal(X[1], [[1, 0, 0], [0, 1, 0]])

    def test_each_step_one_hot(self, rng):
        widths = [10, 3, 10, 1]
        idx = np.column_stack([rng.integers(0, w, 50) for w in widths])
        X = build_inputs(idx, widths)
        np.testing.assert_array_equal(X.sum(axis=2), 1.0)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            build_inputs(np.array([[3]]), [3])
