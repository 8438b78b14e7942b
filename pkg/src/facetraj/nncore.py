"""Small float64 neural-network core with hand-written reverse mode.

Every layer comes as a ``*_forward`` returning its output and a cache, and a
``*_backward`` mapping the output gradient to input and parameter
gradients. Parameters live in plain ``dict[str, ndarray]`` mappings; the
gradient dict has the same keys and shapes. Weight matrices are stored
``(out, in)`` and applied as ``x @ W.T + b`` on row-major batches.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import _backend
from .errors import DimensionMismatch, InputError, NonFiniteLoss, ShapeError

LEAKY_SLOPE = 0.2
DTYPE = np.float64


# --- activations -----------------------------------------------------------

def sigmoid(x):
    return expit(x)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


ACTIVATIONS = ("none", "leaky_relu", "relu", "sigmoid", "tanh")


def _activate(pre, activation):
    if activation == "none":
        return pre
    if activation == "leaky_relu":
        return leaky_relu(pre)
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "sigmoid":
        return sigmoid(pre)
    if activation == "tanh":
        return np.tanh(pre)
    raise InputError(f"unknown activation {activation!r}")


def _activation_grad(dy, pre, out, activation):
    if activation == "none":
        return dy
    if activation == "leaky_relu":
        return np.where(pre > 0, dy, LEAKY_SLOPE * dy)
    if activation == "relu":
        return np.where(pre > 0, dy, 0.0)
    if activation == "sigmoid":
        return dy * out * (1.0 - out)
    if activation == "tanh":
        return dy * (1.0 - out * out)
    raise InputError(f"unknown activation {activation!r}")


# --- dense -----------------------------------------------------------------

def dense_forward(x, W, b, activation="none"):
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise DimensionMismatch(f"dense layer {W.shape} cannot take input {x.shape}")
    pre = x @ W.T + b
    out = _activate(pre, activation)
    return out, (x, W, pre, out, activation)


def dense_backward(dy, cache):
    x, W, pre, out, activation = cache
    dpre = _activation_grad(dy, pre, out, activation)
    x2 = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
    # contiguous 2-D operands keep the products on BLAS
    d2 = np.ascontiguousarray(dpre).reshape(-1, dpre.shape[-1])
    dx = (d2 @ W).reshape(dpre.shape[:-1] + (W.shape[1],))
    return dx, d2.T @ x2, d2.sum(axis=0)


def dense_layer(x, W, b, activation="none"):
    """``activation(W x + b)`` for a vector or a batch of row vectors."""
    return dense_forward(x, W, b, activation)[0]


# --- GRU -------------------------------------------------------------------
# Gates are stacked [update z; reset r; candidate] along the first axis of
# W (3H, D), U (3H, H) and b (3H,):
#   z = sig(W_z x + U_z h + b_z),  r = sig(W_r x + U_r h + b_r)
#   c = tanh(W_c x + U_c (r * h) + b_c),  h' = (1 - z) * h + z * c

def _check_gru(W, U, b, D=None):
    H = U.shape[1]
    if U.shape != (3 * H, H) or b.shape != (3 * H,) or W.shape[0] != 3 * H:
        raise DimensionMismatch(f"inconsistent GRU shapes W{W.shape} U{U.shape} b{b.shape}")
    if D is not None and W.shape[1] != D:
        raise DimensionMismatch(f"GRU expects inputs of size {W.shape[1]}, got {D}")
    return H


def gru_cell(x, h, params):
    """One GRU step; ``params`` holds ``W``, ``U``, ``b``."""
    W, U, b = params["W"], params["U"], params["b"]
    x = np.asarray(x, dtype=DTYPE)
    h = np.asarray(h, dtype=DTYPE)
    H = _check_gru(W, U, b, x.shape[-1])
    if h.shape[-1] != H:
        raise DimensionMismatch(f"hidden state has size {h.shape[-1]}, expected {H}")
    xw = x @ W.T + b
    zr = sigmoid(xw[..., :2 * H] + h @ U[:2 * H].T)
    z, r = zr[..., :H], zr[..., H:]
    c = np.tanh(xw[..., 2 * H:] + (r * h) @ U[2 * H:].T)
    return h + z * (c - h)


@dataclass
class _GruCache:
    X: np.ndarray | None  # (T, B, D) time-major, None for zero input
    W: np.ndarray
    U: np.ndarray
    h0: np.ndarray  # (B, H)
    hs: np.ndarray  # (T, B, H)
    zr: np.ndarray  # (T, B, 2H)
    rh: np.ndarray  # (T, B, H)
    c: np.ndarray  # (T, B, H)
    kernels: object = None


def gru_forward(X, h0, W, U, b, steps=None, backend=None):
    """Run a GRU over a time-major sequence.

    ``X`` is ``(T, B, D)``; pass ``X=None`` with ``steps=T`` for an all-zero
    input sequence. Returns ``(hidden states (T, B, H), cache)``.
    """
    H = _check_gru(W, U, b, None if X is None else X.shape[-1])
    k = _backend.get(backend)
    h0 = np.ascontiguousarray(h0, dtype=DTYPE)
    B = h0.shape[0]
    T = X.shape[0] if X is not None else int(steps)
    # sigmoid(a) = 0.5 * tanh(a / 2) + 0.5; halving by a power of two is exact
    WT = np.ascontiguousarray(W.T)
    WT[:, :2 * H] *= 0.5
    bias = np.array(b, dtype=DTYPE)
    bias[:2 * H] *= 0.5
    UzrT = np.ascontiguousarray(U[:2 * H].T) * 0.5
    UcT = np.ascontiguousarray(U[2 * H:].T)
    if X is not None:
        X = np.ascontiguousarray(X, dtype=DTYPE)
        pre = X.reshape(T * B, -1) @ WT  # input projection for all steps at once
        pre += bias
    else:
        pre = np.tile(bias, (B, 1))
    hs = np.empty((T, B, H))
    zr = np.empty((T, B, 2 * H))
    rh = np.empty((T, B, H))
    c = np.empty((T, B, H))
    k.gru_forward_loop(pre, h0, UzrT, UcT, hs, zr, rh, c)
    return hs, _GruCache(X, W, U, h0, hs, zr, rh, c, k)


def gru_backward(dhs, dh_last, cache: _GruCache, dx_cols=slice(None)):
    """Backpropagate through :func:`gru_forward`.

    ``dhs`` (T, B, H) holds per-step output gradients or is None;
    ``dh_last`` (B, H) is added at the final step. Returns
    ``(dX, dh0, dW, dU, db)``. ``dX`` covers the input columns selected by
    ``dx_cols`` and is None for zero-input runs or ``dx_cols=None``.
    """
    T, B, H = cache.hs.shape
    U = cache.U
    if dhs is not None:
        dhs = np.ascontiguousarray(dhs, dtype=DTYPE)
    dh_last = np.zeros((B, H)) if dh_last is None else np.ascontiguousarray(dh_last, dtype=DTYPE)
    dA = np.empty((T, B, 3 * H))
    dh0 = cache.kernels.gru_backward_loop(dhs, dh_last, cache.h0, cache.hs, cache.zr, cache.c,
                                          np.ascontiguousarray(U[:2 * H]),
                                          np.ascontiguousarray(U[2 * H:]), dA)
    dA2 = dA.reshape(T * B, 3 * H)
    dU = np.empty_like(U)
    dU[:2 * H] = dA[0, :, :2 * H].T @ cache.h0
    if T > 1:
        dU[:2 * H] += dA2[B:, :2 * H].T @ cache.hs[:-1].reshape(-1, H)
    dU[2 * H:] = dA2[:, 2 * H:].T @ cache.rh.reshape(T * B, H)
    db = dA2.sum(axis=0)
    if cache.X is None:
        return None, dh0, np.zeros_like(cache.W), dU, db
    X2 = cache.X.reshape(T * B, -1)
    dW = dA2.T @ X2
    if dx_cols is None:
        return None, dh0, dW, dU, db
    dX = (dA2 @ cache.W[:, dx_cols]).reshape(T, B, -1)
    return dX, dh0, dW, dU, db


# --- initialization and optimization ---------------------------------------

def uniform_init(rng, shape, fan_in):
    """Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) drawn from a :class:`Xoshiro256`."""
    k = math.sqrt(1.0 / fan_in)
    return rng.uniform(-k, k, size=tuple(shape))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8, backend=None):
    """One bias-corrected Adam update of ``params`` in place."""
    k = _backend.get(backend)
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if not p.flags.c_contiguous:
            raise ShapeError(f"parameter {name!r} must be C-contiguous")
        k.adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=DTYPE).reshape(-1), m.reshape(-1),
                      v.reshape(-1), beta1, beta2, 1.0 - beta1, 1.0 - beta2, c2, eps, lr / c1)
    if not all(np.isfinite(p).all() for p in params.values()):
        raise NonFiniteLoss("a parameter became non-finite")
    return params, state


# --- gradient checking -----------------------------------------------------

def _rel_err(a, n):
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def grad_check(loss_and_grad, params, *, h=1e-5, n_dirs=2, n_coords=3, seed=0, blocks=None):
    """Compare reverse-mode gradients with central differences, per block.

    ``loss_and_grad(params) -> (loss, grads)``. For every parameter block the
    checker probes the normalized analytic gradient direction, ``n_dirs``
    random directions mixed with it, and the ``n_coords`` coordinates with
    the largest analytic gradient. Each probe yields
    ``|a - n| / max(1e-8, |a| + |n|)``; the block's maximum is reported.
    Parameters are restored afterwards.
    """
    rs = np.random.default_rng(seed)
    loss0, grads = loss_and_grad(params)
    if not math.isfinite(loss0):
        raise NonFiniteLoss("loss is not finite at the check point")

    def f():
        val = loss_and_grad(params)[0]
        if not math.isfinite(val):
            raise NonFiniteLoss("loss became non-finite under perturbation")
        return val

    def probe(p, direction):
        orig = p.copy()
        p += h * direction
        lp = f()
        p[...] = orig
        p -= h * direction
        lm = f()
        p[...] = orig
        return (lp - lm) / (2 * h)

    report = {}
    for name in blocks or list(params):
        p = params[name]
        g = np.asarray(grads[name], dtype=DTYPE)
        errs = []
        gnorm = float(np.linalg.norm(g))
        unit = g / gnorm if gnorm > 0 else np.zeros_like(g)
        dirs = [unit] if gnorm > 0 else []
        for _ in range(n_dirs):
            r = rs.standard_normal(p.shape)
            r /= np.linalg.norm(r)
            d = unit + r
            dn = np.linalg.norm(d)
            dirs.append(d / dn if dn > 1e-6 else r)
        for d in dirs:
            errs.append(_rel_err(float(np.sum(g * d)), probe(p, d)))
        flat = np.argsort(-np.abs(g).ravel(), kind="stable")[:n_coords]
        for k in flat:
            e = np.zeros(p.size)
            e[k] = 1.0
            errs.append(_rel_err(float(g.ravel()[k]), probe(p, e.reshape(p.shape))))
        report[name] = max(errs) if errs else 0.0
    return report


# --- checkpoints -----------------------------------------------------------

def save_checkpoint(path, params, *, seed=None, step=0, meta=None):
    """Write ``path`` (JSON manifest) and ``path.f64`` (little-endian float64 blob)."""
    path = Path(path)
    blob_path = path.with_suffix(".f64")
    entries = []
    offset = 0
    with open(blob_path, "wb") as fh:
        for name, arr in params.items():
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
            fh.write(data)
            offset += len(data)
    manifest = {"format": "facetraj-checkpoint", "version": 1, "dtype": "<f8", "blob": blob_path.name,
                "seed": seed, "step": step, "arrays": entries, "meta": meta or {}}
    path.write_text(json.dumps(manifest, indent=1))


def load_checkpoint(path):
    """Return ``(params, manifest)``."""
    path = Path(path)
    m = json.loads(path.read_text())
    if m.get("format") != "facetraj-checkpoint":
        raise InputError(f"{path}: not a checkpoint manifest")
    raw = (path.parent / m["blob"]).read_bytes()
    params = {}
    for e in m["arrays"]:
        arr = np.frombuffer(raw, dtype="<f8", count=e["nbytes"] // 8, offset=e["offset"])
        params[e["name"]] = arr.astype(DTYPE).reshape(e["shape"])
    return params, m
