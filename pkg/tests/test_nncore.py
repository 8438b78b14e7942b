import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facetraj import _backend, nncore
from facetraj.errors import DimensionMismatch, InputError, NonFiniteLoss, ShapeError


def _gru_params(rng, D, H, scale=0.5):
    return {"W": rng.normal(size=(3 * H, D)) * scale,
            "U": rng.normal(size=(3 * H, H)) * scale,
            "b": rng.normal(size=3 * H) * scale}


def test_softmax_rows():
    s = nncore.softmax(np.array([[0.0, 0.0], [1000.0, 0.0]]))
    np.testing.assert_allclose(s, [[0.5, 0.5], [1.0, 0.0]])


def test_gru_cell_zero_cases():
    H, D = 4, 3
    zero = {"W": np.zeros((3 * H, D)), "U": np.zeros((3 * H, H)), "b": np.zeros(3 * H)}
    h = np.arange(H, dtype=float)
    # z = 0.5 and c = 0: the state is halved
    np.testing.assert_array_equal(nncore.gru_cell(np.ones(D), h, zero), 0.5 * h)
    big = dict(zero, b=np.concatenate([np.full(H, -50.0), np.zeros(2 * H)]))
    np.testing.assert_allclose(nncore.gru_cell(np.ones(D), h, big), h, atol=1e-20)
    with pytest.raises(DimensionMismatch):
        nncore.gru_cell(np.ones(D + 1), h, zero)


def test_gru_forward_matches_cell_loop(backend):
    rng = np.random.default_rng(0)
    T, B, D, H = 7, 3, 5, 6
    p = _gru_params(rng, D, H)
    X = rng.normal(size=(T, B, D))
    h0 = rng.normal(size=(B, H))
    hs, _ = nncore.gru_forward(X, h0, p["W"], p["U"], p["b"], backend=backend)
    h = h0
    for t in range(T):
        h = nncore.gru_cell(X[t], h, p)
        np.testing.assert_allclose(hs[t], h, rtol=0, atol=1e-14)


def test_zero_input_gru_equals_explicit_zeros(backend):
    rng = np.random.default_rng(1)
    p = _gru_params(rng, 4, 5)
    h0 = rng.normal(size=(2, 5))
    a, _ = nncore.gru_forward(None, h0, p["W"], p["U"], p["b"], steps=6, backend=backend)
    b, _ = nncore.gru_forward(np.zeros((6, 2, 4)), h0, p["W"], p["U"], p["b"], backend=backend)
    np.testing.assert_allclose(a, b, atol=1e-15)


def _central(f, arr, eps=1e-6):
    g = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        old = arr[i]
        arr[i] = old + eps
        lp = f()
        arr[i] = old - eps
        lm = f()
        arr[i] = old
        g[i] = (lp - lm) / (2 * eps)
    return g


@pytest.mark.parametrize("zero_input", [False, True])
def test_gru_backward_matches_finite_differences(backend, zero_input):
    rng = np.random.default_rng(2)
    T, B, D, H = 5, 2, 3, 4
    p = _gru_params(rng, D, H)
    X = None if zero_input else rng.normal(size=(T, B, D))
    h0 = rng.normal(size=(B, H))
    wt = rng.normal(size=(T, B, H))
    wl = rng.normal(size=(B, H))

    def f():
        hs, _ = nncore.gru_forward(X, h0, p["W"], p["U"], p["b"], steps=T, backend=backend)
        return math.fsum((hs * wt).ravel()) + math.fsum((hs[-1] * wl).ravel())

    _, cache = nncore.gru_forward(X, h0, p["W"], p["U"], p["b"], steps=T, backend=backend)
    dX, dh0, dW, dU, db = nncore.gru_backward(wt, wl, cache)
    for arr, got in ((p["U"], dU), (p["b"], db), (h0, dh0)) + (() if zero_input else ((p["W"], dW), (X, dX))):
        np.testing.assert_allclose(got, _central(f, arr), rtol=1e-6, atol=1e-8)
    if zero_input:
        assert dX is None and not dW.any()


def test_gru_backward_input_column_selection():
    rng = np.random.default_rng(5)
    p = _gru_params(rng, 6, 4)
    X = rng.normal(size=(5, 3, 6))
    _, cache = nncore.gru_forward(X, rng.normal(size=(3, 4)), p["W"], p["U"], p["b"])
    dhs = rng.normal(size=(5, 3, 4))
    full = nncore.gru_backward(dhs, None, cache)
    part = nncore.gru_backward(dhs, None, cache, dx_cols=slice(2, None))
    none = nncore.gru_backward(dhs, None, cache, dx_cols=None)
    np.testing.assert_allclose(part[0], full[0][..., 2:], rtol=1e-13, atol=1e-15)
    assert none[0] is None
    for a, b, c in zip(full[1:], part[1:], none[1:]):
        assert np.array_equal(a, b) and np.array_equal(a, c)


@pytest.mark.parametrize("zero_input", [False, True])
def test_gru_packed_products_match_blas(zero_input):
    ck = pytest.importorskip("facetraj._ckernels")
    if not ck.use_packed_gemm():
        pytest.skip("no AVX-512 at run time")
    rng = np.random.default_rng(6)
    p = _gru_params(rng, 5, 32)  # H a multiple of the 32-column panel
    X = None if zero_input else rng.normal(size=(7, 6, 5))  # 6 rows: one full 4-row tile plus a tail
    h0 = rng.normal(size=(6, 32))
    dhs = rng.normal(size=(7, 6, 32))
    outs = []
    try:
        for flag in (True, False):
            ck.use_packed_gemm(flag)
            hs, cache = nncore.gru_forward(X, h0, p["W"], p["U"], p["b"], steps=7, backend="cython")
            outs.append((hs,) + nncore.gru_backward(dhs, None, cache)[1:])
    finally:
        ck.use_packed_gemm(True)
    for a, b in zip(*outs):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_gru_backends_agree():
    pytest.importorskip("facetraj._ckernels")
    rng = np.random.default_rng(3)
    p = _gru_params(rng, 6, 8)
    X = rng.normal(size=(9, 4, 6))
    h0 = rng.normal(size=(4, 8))
    outs = []
    for be in ("python", "cython"):
        hs, cache = nncore.gru_forward(X, h0, p["W"], p["U"], p["b"], backend=be)
        outs.append((hs,) + nncore.gru_backward(np.ones_like(hs), None, cache))
    for a, b in zip(*outs):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("activation", nncore.ACTIVATIONS)
def test_dense_backward(activation):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 5))
    W = rng.normal(size=(4, 5))
    b = rng.normal(size=4)
    wy = rng.normal(size=(3, 4))

    def f():
        return float(np.sum(nncore.dense_layer(x, W, b, activation) * wy))

    _, cache = nncore.dense_forward(x, W, b, activation)
    dx, dW, db = nncore.dense_backward(wy, cache)
    for arr, got in ((x, dx), (W, dW), (b, db)):
        np.testing.assert_allclose(got, _central(f, arr), rtol=1e-6, atol=1e-8)


def test_dense_errors():
    with pytest.raises(DimensionMismatch):
        nncore.dense_layer(np.ones(3), np.ones((2, 4)), np.ones(2))
    with pytest.raises(InputError):
        nncore.dense_layer(np.ones(4), np.ones((2, 4)), np.ones(2), "gelu")


def test_adam_first_step_closed_form(backend):
    p = {"w": np.array([1.0, -2.0, 3.0])}
    g = {"w": np.array([0.5, -4.0, 0.0])}
    nncore.adam_step(p, g, nncore.AdamState(), 0.1, backend=backend)
    # bias-corrected m/sqrt(v) is g/|g| on the first step
    np.testing.assert_allclose(p["w"], [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 0.1 * 4 / (4 + 1e-8), 3.0],
                               rtol=1e-15)


def test_adam_zero_gradient_keeps_params(backend):
    p = {"w": np.array([1.0, 2.0])}
    state = nncore.AdamState()
    for _ in range(5):
        nncore.adam_step(p, {"w": np.zeros(2)}, state, 0.01, backend=backend)
    assert p["w"].tolist() == [1.0, 2.0] and state.t == 5


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.floats(1e-4, 0.1))
@settings(max_examples=50)
def test_adam_matches_unrolled_recurrence(gs, lr):
    p = {"w": np.array([0.7])}
    state = nncore.AdamState()
    w, m, v = 0.7, 0.0, 0.0
    for t, g in enumerate(gs, start=1):
        nncore.adam_step(p, {"w": np.array([g])}, state, lr)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w -= lr * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert abs(p["w"][0] - w) <= 1e-12 * max(1.0, abs(w))


def test_adam_backends_bit_identical():
    pytest.importorskip("facetraj._ckernels")
    rng = np.random.default_rng(5)
    start = rng.normal(size=(17, 3))
    results = []
    for be in ("python", "cython"):
        p = {"w": start.copy()}
        state = nncore.AdamState()
        r = np.random.default_rng(6)
        for _ in range(10):
            nncore.adam_step(p, {"w": r.normal(size=(17, 3))}, state, 1e-3, backend=be)
        results.append(p["w"])
    assert np.array_equal(*results)


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteLoss):
        nncore.adam_step({"w": np.array([1.0])}, {"w": np.array([np.nan])}, nncore.AdamState(), 0.1)


def test_adam_requires_contiguous():
    with pytest.raises(ShapeError):
        nncore.adam_step({"w": np.ones((4, 4))[:, ::2]}, {"w": np.ones((4, 2))}, nncore.AdamState(), 0.1)


def _quadratic(A):
    def lg(params):
        w = params["w"]
        return float(w @ A @ w), {"w": (A + A.T) @ w}
    return lg


def test_grad_check_passes_on_exact_gradient():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(6, 6))
    report = nncore.grad_check(_quadratic(A), {"w": rng.normal(size=6)})
    assert report["w"] <= 1e-9


def test_grad_check_detects_scaled_gradient():
    rng = np.random.default_rng(8)
    A = rng.normal(size=(6, 6))
    inner = _quadratic(A)

    def doubled(params):
        val, g = inner(params)
        return val, {"w": 2.0 * g["w"]}

    report = nncore.grad_check(doubled, {"w": rng.normal(size=6)})
    assert abs(report["w"] - 1 / 3) <= 1e-6


def test_grad_check_restores_params_and_handles_scalars():
    w = np.array([1.5])
    nncore.grad_check(lambda p: (float(p["w"][0] ** 2), {"w": 2 * p["w"]}), {"w": w})
    assert w.tolist() == [1.5]


def test_grad_check_non_finite():
    with pytest.raises(NonFiniteLoss):
        nncore.grad_check(lambda p: (float("nan"), {"w": p["w"]}), {"w": np.ones(2)})


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    params = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=5), "c": np.zeros((2, 2, 2))}
    nncore.save_checkpoint(tmp_path / "ck.json", params, seed=7, step=11, meta={"k": 1})
    back, manifest = nncore.load_checkpoint(tmp_path / "ck.json")
    assert list(back) == list(params)
    for k in params:
        assert np.array_equal(back[k], params[k])
        assert back[k].flags.writeable and back[k].flags.c_contiguous
    assert manifest["seed"] == 7 and manifest["step"] == 11 and manifest["meta"] == {"k": 1}


def test_checkpoint_rejects_other_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{}")
    with pytest.raises(InputError):
        nncore.load_checkpoint(p)


def test_uniform_init_bounds():
    from facetraj.rng import Xoshiro256

    w = nncore.uniform_init(Xoshiro256(1), (50, 16), 16)
    assert w.shape == (50, 16) and np.abs(w).max() <= 0.25


def test_backend_lookup():
    assert _backend.get("python").__name__.endswith("_pykernels")
    with pytest.raises(ValueError):
        _backend.get("fortran")
