"""Fake Trajectory Detection Network.

Input: a normalized 28 x 64 trajectory window ``x``.

* space stream: graph attention over the 28 rows (nodes in R^64) gives h_s;
  a dense ReLU encoder maps flatten(h_s) to R_s (256).
* time stream: graph attention over the 64 columns (nodes in R^28) gives
  h_t; a GRU encoder reads the 64 columns of ``x`` stacked with ``h_t``
  (56 inputs per step) and its final state is R_t (256).
* classifier: [R_s, R_t] -> 128 (LeakyReLU 0.2) -> 1 -> sigmoid.
* decoder: a GRU unrolled 64 steps on zero input from R_t, with a linear
  256 -> 28 head per step, reconstructs ``x``.

Training minimizes BCE(prob, label) + MSE(reconstruction, x).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import nncore
from .errors import NonFiniteLoss, ShapeError
from .rng import Xoshiro256
from .traj import N_FEATURES, WINDOW

HIDDEN = 256
CLS_HIDDEN = 128
PROB_CLAMP = 1e-12

# name -> (shape, fan_in); a fan_in of 0 marks a zero-initialized bias
PARAM_SPECS = {
    "W_s": ((WINDOW, WINDOW), WINDOW),
    "a_s": ((2 * WINDOW,), 2 * WINDOW),
    "W_t": ((N_FEATURES, N_FEATURES), N_FEATURES),
    "a_t": ((2 * N_FEATURES,), 2 * N_FEATURES),
    "enc_W": ((3 * HIDDEN, 2 * N_FEATURES), 2 * N_FEATURES),
    "enc_U": ((3 * HIDDEN, HIDDEN), HIDDEN),
    "enc_b": ((3 * HIDDEN,), 0),
    "de_W": ((HIDDEN, N_FEATURES * WINDOW), N_FEATURES * WINDOW),
    "de_b": ((HIDDEN,), 0),
    "cls1_W": ((CLS_HIDDEN, 2 * HIDDEN), 2 * HIDDEN),
    "cls1_b": ((CLS_HIDDEN,), 0),
    "cls2_W": ((1, CLS_HIDDEN), CLS_HIDDEN),
    "cls2_b": ((1,), 0),
    "dec_W": ((3 * HIDDEN, N_FEATURES), N_FEATURES),
    "dec_U": ((3 * HIDDEN, HIDDEN), HIDDEN),
    "dec_b": ((3 * HIDDEN,), 0),
    "out_W": ((N_FEATURES, HIDDEN), HIDDEN),
    "out_b": ((N_FEATURES,), 0),
}


@dataclass(frozen=True)
class Flags:
    use_time_gat: bool = True
    use_space_gat: bool = True
    use_gru: bool = True  # False replaces R_t with zeros ("w/o GRU")


def init_params(seed) -> dict:
    rng = Xoshiro256(seed)
    params = {}
    for name, (shape, fan_in) in PARAM_SPECS.items():
        params[name] = nncore.uniform_init(rng, shape, fan_in) if fan_in else np.zeros(shape)
    return params


def zero_params() -> dict:
    return {name: np.zeros(shape) for name, (shape, _) in PARAM_SPECS.items()}


def check_params(params):
    for name, (shape, _) in PARAM_SPECS.items():
        if name not in params or params[name].shape != shape:
            got = None if name not in params else params[name].shape
            raise ShapeError(f"parameter {name!r} must have shape {shape}, got {got}")


# --- graph attention -------------------------------------------------------
# e_ij = a^T LeakyReLU(W n_i (+) W n_j) splits into src_i + dst_j because the
# LeakyReLU acts elementwise on the concatenation. src_i is constant along
# each softmax row and cancels exactly, so the weights are softmax_j(dst_j)
# for every i and the query half of ``a`` receives zero gradient.

def _gat_forward(nodes, W, a):
    B, N, D = nodes.shape
    if W.shape != (D, D) or a.shape != (2 * D,):
        raise ShapeError(f"attention parameters W{W.shape} a{a.shape} do not fit nodes of size {D}")
    wn = (nodes.reshape(B * N, D) @ W.T).reshape(B, N, D)
    act = nncore.leaky_relu(wn)
    dst = act @ a[D:]
    alpha = nncore.softmax(dst, axis=-1)  # (B, N), shared by every row i
    agg = np.matmul(alpha[:, None, :], wn)[:, 0, :]
    s = expit(agg)
    out = np.broadcast_to(s[:, None, :], (B, N, D))
    return out, (nodes, W, a, wn, act, alpha, s)


def _gat_backward(dout, cache):
    nodes, W, a, wn, act, alpha, s = cache
    B, N, D = nodes.shape
    dagg = dout.sum(axis=1) * s * (1.0 - s)  # (B, D)
    dalpha = np.matmul(wn, dagg[:, :, None])[:, :, 0]  # (B, N)
    ddst = alpha * (dalpha - np.sum(alpha * dalpha, axis=-1, keepdims=True))
    da = np.zeros_like(a)
    da[D:] = ddst.reshape(-1) @ act.reshape(-1, D)
    dwn = alpha[:, :, None] * dagg[:, None, :]
    dwn += np.where(wn > 0, 1.0, nncore.LEAKY_SLOPE) * (ddst[:, :, None] * a[D:])
    dwn2 = dwn.reshape(B * N, D)
    dW = dwn2.T @ nodes.reshape(B * N, D)
    dnodes = (dwn2 @ W).reshape(B, N, D)
    return dnodes, dW, da


def attention_weights(nodes, W, a):
    """Full ``N x N`` attention matrix (and raw scores e_ij) for one graph."""
    nodes = np.asarray(nodes, dtype=np.float64)
    D = nodes.shape[-1]
    act = nncore.leaky_relu(nodes @ W.T)
    scores = (act @ a[:D])[:, None] + (act @ a[D:])[None, :]
    return nncore.softmax(scores, axis=-1), scores


def graph_attention(nodes, W, a, return_alpha=False):
    """``sigmoid(sum_j alpha_ij W n_j)`` on a fully connected graph with self-loops.

    ``nodes`` is ``(N, D)`` or a batch ``(B, N, D)``.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    single = nodes.ndim == 2
    batch = nodes[None] if single else nodes
    out, cache = _gat_forward(batch, np.asarray(W, dtype=np.float64), np.asarray(a, dtype=np.float64))
    out = np.array(out)
    alpha = np.broadcast_to(cache[5][:, None, :], (batch.shape[0], batch.shape[1], batch.shape[1])).copy()
    if single:
        out, alpha = out[0], alpha[0]
    return (out, alpha) if return_alpha else out


# --- network ---------------------------------------------------------------

@dataclass
class FtdnOutput:
    h_s: np.ndarray  # (B, 28, 64)
    h_t: np.ndarray  # (B, 28, 64)
    R_s: np.ndarray  # (B, 256)
    R_t: np.ndarray  # (B, 256)
    logit: np.ndarray  # (B,)
    prob: np.ndarray  # (B,)
    x_hat: np.ndarray  # (B, 28, 64)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (N_FEATURES, WINDOW):
        raise ShapeError(f"input must be 28 x 64 (or a batch of them), got {x.shape}")
    return x, single


def _forward(x, p, flags: Flags, decode=True):
    B = x.shape[0]
    c = {"x": x, "flags": flags}
    xt = x.transpose(0, 2, 1)  # (B, 64, 28) time nodes
    if flags.use_space_gat:
        hs, c["gat_s"] = _gat_forward(x, p["W_s"], p["a_s"])
        hs = np.ascontiguousarray(hs)
    else:
        hs = np.zeros_like(x)
    if flags.use_time_gat:
        ht_nodes, c["gat_t"] = _gat_forward(xt, p["W_t"], p["a_t"])
    else:
        ht_nodes = np.zeros_like(xt)
    if flags.use_gru:
        enc_in = np.concatenate([xt, ht_nodes], axis=-1).transpose(1, 0, 2)  # (64, B, 56)
        hs_enc, c["enc"] = nncore.gru_forward(np.ascontiguousarray(enc_in), np.zeros((B, HIDDEN)),
                                              p["enc_W"], p["enc_U"], p["enc_b"])
        R_t = hs_enc[-1]
    else:
        R_t = np.zeros((B, HIDDEN))
    R_s, c["de"] = nncore.dense_forward(hs.reshape(B, -1), p["de_W"], p["de_b"], "relu")
    c_in = np.concatenate([R_s, R_t], axis=1)
    c1, c["cls1"] = nncore.dense_forward(c_in, p["cls1_W"], p["cls1_b"], "leaky_relu")
    logit, c["cls2"] = nncore.dense_forward(c1, p["cls2_W"], p["cls2_b"], "none")
    logit = logit[:, 0]
    if decode:
        hd, c["dec"] = nncore.gru_forward(None, R_t, p["dec_W"], p["dec_U"], p["dec_b"], steps=WINDOW)
        rec, c["out"] = nncore.dense_forward(hd, p["out_W"], p["out_b"], "none")  # (64, B, 28)
        x_hat = rec.transpose(1, 2, 0)
    else:
        x_hat = None
    out = FtdnOutput(hs, ht_nodes.transpose(0, 2, 1), R_s, R_t, logit, expit(logit), x_hat)
    return out, c


def forward(x, params, flags: Flags = Flags()) -> FtdnOutput:
    """Run the network on one window (28 x 64) or a batch (B x 28 x 64)."""
    check_params(params)
    xb, single = _as_batch(x)
    out, _ = _forward(xb, params, flags)
    if single:
        out = FtdnOutput(*(v[0] for v in (out.h_s, out.h_t, out.R_s, out.R_t, out.logit, out.prob, out.x_hat)))
    return out


def _backward(dlogit, dx_hat, c, p, need_dx=True):
    """Gradients of the parameters and, if ``need_dx``, of the input ``x``."""
    flags = c["flags"]
    x = c["x"]
    B = x.shape[0]
    g = {name: None for name in PARAM_SPECS}
    dc1, g["cls2_W"], g["cls2_b"] = nncore.dense_backward(dlogit[:, None], c["cls2"])
    dc_in, g["cls1_W"], g["cls1_b"] = nncore.dense_backward(dc1, c["cls1"])
    dR_s = dc_in[:, :HIDDEN]
    dR_t = np.array(dc_in[:, HIDDEN:])
    if dx_hat is not None and "dec" in c:
        dhd, g["out_W"], g["out_b"] = nncore.dense_backward(dx_hat.transpose(2, 0, 1), c["out"])
        _, dh0, g["dec_W"], g["dec_U"], g["dec_b"] = nncore.gru_backward(dhd, None, c["dec"])
        dR_t += dh0
    dx = np.zeros_like(x)
    dxt = np.zeros((B, WINDOW, N_FEATURES))
    if flags.use_gru:
        # the raw-input columns of the encoder gradient only matter for dx
        cols = slice(None) if need_dx else slice(N_FEATURES, None) if flags.use_time_gat else None
        denc, _, g["enc_W"], g["enc_U"], g["enc_b"] = nncore.gru_backward(None, dR_t, c["enc"], dx_cols=cols)
        if denc is not None:
            denc = denc.transpose(1, 0, 2)  # (B, 64, 56) or (B, 64, 28)
        if need_dx:
            dxt += denc[:, :, :N_FEATURES]
        if flags.use_time_gat:
            dnodes, g["W_t"], g["a_t"] = _gat_backward(denc[:, :, -N_FEATURES:], c["gat_t"])
            dxt += dnodes
    dhs_flat, g["de_W"], g["de_b"] = nncore.dense_backward(dR_s, c["de"])
    if flags.use_space_gat:
        dnodes, g["W_s"], g["a_s"] = _gat_backward(dhs_flat.reshape(B, N_FEATURES, WINDOW), c["gat_s"])
        dx += dnodes
    dx += dxt.transpose(0, 2, 1)
    for name, (shape, _) in PARAM_SPECS.items():
        if g[name] is None:
            g[name] = np.zeros(shape)
    return g, dx


def loss(output: FtdnOutput, x, y):
    """Batch-mean ``(L, L_BCE, L_MSE)`` with ``L = L_BCE + L_MSE``."""
    x, _ = _as_batch(x)
    prob = np.clip(np.atleast_1d(output.prob), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    bce = -(y * np.log(prob) + (1.0 - y) * np.log(1.0 - prob))
    x_hat = output.x_hat.reshape(x.shape)
    mse = np.mean((x_hat - x) ** 2, axis=(1, 2))
    l_bce, l_mse = float(np.mean(bce)), float(np.mean(mse))
    total = l_bce + l_mse
    if not np.isfinite(total):
        raise NonFiniteLoss("loss is not finite")
    return total, l_bce, l_mse


def loss_and_grad(params, x, y, flags: Flags = Flags()):
    """``((L, L_BCE, L_MSE), grads)`` for a batch, averaged over samples."""
    xb, _ = _as_batch(x)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    out, c = _forward(xb, params, flags)
    losses = loss(out, xb, y)
    B = xb.shape[0]
    p = out.prob
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    dlogit = np.where(inside, p - y, 0.0) / B
    dx_hat = 2.0 * (out.x_hat - xb) / (xb[0].size * B)
    grads, _ = _backward(dlogit, dx_hat, c, params, need_dx=False)
    return losses, grads


def train_step(params, opt_state, x, y, lr, flags: Flags = Flags()):
    """One Adam step on the batch-mean total loss. Returns the pre-step losses."""
    losses, grads = loss_and_grad(params, x, y, flags)
    nncore.adam_step(params, grads, opt_state, lr)
    return losses


def predict_proba(params, x, flags: Flags = Flags(), batch_size=256):
    """Fake probability per window, without running the decoder."""
    xb, _ = _as_batch(x)
    probs = []
    for i in range(0, len(xb), batch_size):
        out, _ = _forward(xb[i:i + batch_size], params, flags, decode=False)
        probs.append(out.prob)
    return np.concatenate(probs) if probs else np.empty(0)


def input_gradient(x, params, flags: Flags = Flags()):
    """d logit / d x for each window."""
    xb, single = _as_batch(x)
    _, c = _forward(xb, params, flags, decode=False)
    _, dx = _backward(np.ones(xb.shape[0]), None, c, params)
    return dx[0] if single else dx


def saliency(x, params, flags: Flags = Flags(), normalize=True):
    """Per-time-step contribution sum_rows |d logit / d x[row, t]|, min-max scaled."""
    grad = input_gradient(x, params, flags)
    contrib = np.abs(grad).sum(axis=-2)
    if not normalize:
        return contrib
    lo = contrib.min(axis=-1, keepdims=True)
    span = contrib.max(axis=-1, keepdims=True) - lo
    return np.where(span > 0, (contrib - lo) / np.where(span > 0, span, 1.0), 0.0)
