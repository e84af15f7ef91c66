"""Dense attention numerics with hand-derived backward passes.

Every operation comes as a ``*_forward`` returning ``(output, cache)`` and a
matching ``*_backward`` consuming the upstream gradient plus that cache.
All math is double precision; inputs may carry arbitrary leading batch axes
unless noted. Key masking uses the window validity mask: PAD positions never
receive attention, and rows with no valid key at all produce zero weight
rows (so fully padded windows contribute zeros rather than NaNs).
"""

from __future__ import annotations

from math import sqrt

import numpy as np

__all__ = [
    "assert_finite",
    "sigmoid",
    "masked_softmax",
    "masked_softmax_backward",
    "dropout_forward",
    "dropout_backward",
    "linear_forward",
    "linear_backward",
    "layer_norm_forward",
    "layer_norm_backward",
    "mlp2_forward",
    "mlp2_backward",
    "multi_head_attention",
    "multi_head_attention_backward",
    "ffn_forward",
    "ffn_backward",
    "transformer_layer_forward",
    "transformer_layer_backward",
    "readout_forward",
    "readout_backward",
    "bce_loss",
]

LN_EPS = 1e-5


def assert_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")
    return arr


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-normalize scores over valid key columns.

    ``scores`` has shape (..., L, L) and ``mask`` (..., L) flags valid keys.
    Masked columns get zero weight; rows with at least one valid key sum to
    one; rows with none are all-zero.
    """
    valid = np.broadcast_to(np.asarray(mask, dtype=bool)[..., None, :], scores.shape)
    neg = np.where(valid, scores, -np.inf)
    peak = np.max(neg, axis=-1, keepdims=True)
    safe_peak = np.where(np.isfinite(peak), peak, 0.0)
    expd = np.where(valid, np.exp(neg - safe_peak), 0.0)
    total = expd.sum(axis=-1, keepdims=True)
    return np.divide(expd, total, out=np.zeros_like(expd), where=total > 0)


def masked_softmax_backward(grad: np.ndarray, attn: np.ndarray) -> np.ndarray:
    inner = (grad * attn).sum(axis=-1, keepdims=True)
    return attn * (grad - inner)


def dropout_forward(x, rate, rng, training):
    """Inverted dropout; identity (cache None) when inactive."""
    if not training or rate == 0.0:
        return x, None
    keep = 1.0 - rate
    scale = (rng.random(x.shape) >= rate) / keep
    return x * scale, scale


def dropout_backward(grad, scale):
    return grad if scale is None else grad * scale


def linear_forward(x, w, b=None):
    y = x @ w
    if b is not None:
        y = y + b
    return y, x


def linear_backward(grad, x, w, with_bias=True):
    flat_x = x.reshape(-1, x.shape[-1])
    flat_g = grad.reshape(-1, grad.shape[-1])
    dw = flat_x.T @ flat_g
    db = flat_g.sum(axis=0) if with_bias else None
    dx = grad @ w.T
    return dx, dw, db


def layer_norm_forward(x, gain, bias, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv, gain)


def layer_norm_backward(grad, cache):
    xhat, inv, gain = cache
    d = xhat.shape[-1]
    flat_axes = tuple(range(grad.ndim - 1))
    dgain = (grad * xhat).sum(axis=flat_axes)
    dbias = grad.sum(axis=flat_axes)
    gx = grad * gain
    dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def mlp2_forward(x, w1, b1, w2, b2):
    """Affine -> rectifier -> affine, the shape shared by the count lift and heads."""
    h = x @ w1 + b1
    a = np.maximum(h, 0.0)
    y = a @ w2 + b2
    return y, (x, h, a, w1, w2)


def mlp2_backward(grad, cache):
    x, h, a, w1, w2 = cache
    flat = lambda arr: arr.reshape(-1, arr.shape[-1])
    dw2 = flat(a).T @ flat(grad)
    db2 = flat(grad).sum(axis=0)
    da = grad @ w2.T
    dh = da * (h > 0)
    dw1 = flat(x).T @ flat(dh)
    db1 = flat(dh).sum(axis=0)
    dx = dh @ w1.T
    return dx, (dw1, db1, dw2, db2)


def multi_head_attention(
    x, mask, wq, wk, wv, wo, bo, *, dropout_rate=0.0, rng=None, training=False
):
    """Masked multi-head self-attention over one or a batch of windows.

    ``x`` is (..., L, h); per head j the context is
    ``softmax(x Wq_j (x Wk_j)^T / sqrt(d_k)) x Wv_j`` with PAD keys masked
    out, heads are concatenated and mixed by ``wo``. Returns (output, cache);
    ``cache['attn']`` holds the per-head weight stack (J, ..., L, L).
    """
    dk = wq.shape[-1]
    scale = 1.0 / sqrt(dk)
    heads, head_caches = [], []
    for j in range(wq.shape[0]):
        q = x @ wq[j]
        k = x @ wk[j]
        v = x @ wv[j]
        scores = (q @ np.swapaxes(k, -1, -2)) * scale
        attn = masked_softmax(scores, mask)
        dropped, drop_scale = dropout_forward(attn, dropout_rate, rng, training)
        heads.append(dropped @ v)
        head_caches.append((q, k, v, attn, drop_scale, dropped))
    concat = np.concatenate(heads, axis=-1)
    y = concat @ wo + bo
    cache = {
        "x": x,
        "mask": mask,
        "heads": head_caches,
        "concat": concat,
        "weights": (wq, wk, wv, wo),
        "scale": scale,
        "attn": np.stack([hc[3] for hc in head_caches]),
    }
    return y, cache


def multi_head_attention_backward(grad, cache):
    x = cache["x"]
    wq, wk, wv, wo = cache["weights"]
    scale = cache["scale"]
    dv_width = wv.shape[-1]
    flat = lambda arr: arr.reshape(-1, arr.shape[-1])

    dwo = flat(cache["concat"]).T @ flat(grad)
    dbo = flat(grad).sum(axis=0)
    dconcat = grad @ wo.T

    dx = np.zeros_like(x)
    dwq = np.zeros_like(wq)
    dwk = np.zeros_like(wk)
    dwv = np.zeros_like(wv)
    for j, (q, k, v, attn, drop_scale, dropped) in enumerate(cache["heads"]):
        dout = dconcat[..., j * dv_width : (j + 1) * dv_width]
        ddropped = dout @ np.swapaxes(v, -1, -2)
        dv = np.swapaxes(dropped, -1, -2) @ dout
        dattn = dropout_backward(ddropped, drop_scale)
        dscores = masked_softmax_backward(dattn, attn) * scale
        dq = dscores @ k
        dk_ = np.swapaxes(dscores, -1, -2) @ q
        dwq[j] = flat(x).T @ flat(dq)
        dwk[j] = flat(x).T @ flat(dk_)
        dwv[j] = flat(x).T @ flat(dv)
        dx += dq @ wq[j].T + dk_ @ wk[j].T + dv @ wv[j].T
    return dx, {"wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo, "bo": dbo}


def ffn_forward(x, w1, b1, w2, b2, *, dropout_rate=0.0, rng=None, training=False):
    h = x @ w1 + b1
    a = np.maximum(h, 0.0)
    dropped, drop_scale = dropout_forward(a, dropout_rate, rng, training)
    y = dropped @ w2 + b2
    return y, (x, h, dropped, drop_scale, w1, w2)


def ffn_backward(grad, cache):
    x, h, dropped, drop_scale, w1, w2 = cache
    flat = lambda arr: arr.reshape(-1, arr.shape[-1])
    dw2 = flat(dropped).T @ flat(grad)
    db2 = flat(grad).sum(axis=0)
    da = dropout_backward(grad @ w2.T, drop_scale)
    dh = da * (h > 0)
    dw1 = flat(x).T @ flat(dh)
    db1 = flat(dh).sum(axis=0)
    dx = dh @ w1.T
    return dx, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def transformer_layer_forward(x, mask, layer, *, dropout_rate=0.0, rng=None, training=False):
    """One pre-output block: LN(x + MSA(x)) then LN(.. + FFN(..)).

    ``layer`` is a mapping with keys wq, wk, wv, wo, bo, ln1_g, ln1_b,
    ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_g, ln2_b.
    """
    msa, msa_cache = multi_head_attention(
        x, mask, layer["wq"], layer["wk"], layer["wv"], layer["wo"], layer["bo"],
        dropout_rate=dropout_rate, rng=rng, training=training,
    )
    x1, ln1_cache = layer_norm_forward(x + msa, layer["ln1_g"], layer["ln1_b"])
    f, ffn_cache = ffn_forward(
        x1, layer["ffn_w1"], layer["ffn_b1"], layer["ffn_w2"], layer["ffn_b2"],
        dropout_rate=dropout_rate, rng=rng, training=training,
    )
    y, ln2_cache = layer_norm_forward(x1 + f, layer["ln2_g"], layer["ln2_b"])
    return y, {"msa": msa_cache, "ln1": ln1_cache, "ffn": ffn_cache, "ln2": ln2_cache}


def transformer_layer_backward(grad, cache):
    dr2, dln2_g, dln2_b = layer_norm_backward(grad, cache["ln2"])
    dffn_x, ffn_grads = ffn_backward(dr2, cache["ffn"])
    dx1 = dr2 + dffn_x
    dr1, dln1_g, dln1_b = layer_norm_backward(dx1, cache["ln1"])
    dmsa_x, msa_grads = multi_head_attention_backward(dr1, cache["msa"])
    dx = dr1 + dmsa_x
    grads = {
        "wq": msa_grads["wq"], "wk": msa_grads["wk"], "wv": msa_grads["wv"],
        "wo": msa_grads["wo"], "bo": msa_grads["bo"],
        "ln1_g": dln1_g, "ln1_b": dln1_b,
        "ffn_w1": ffn_grads["w1"], "ffn_b1": ffn_grads["b1"],
        "ffn_w2": ffn_grads["w2"], "ffn_b2": ffn_grads["b2"],
        "ln2_g": dln2_g, "ln2_b": dln2_b,
    }
    return dx, grads


def readout_forward(x, mask):
    """Mean over valid rows: (..., L, h) + (..., L) -> (..., h); all-PAD -> 0."""
    m = np.asarray(mask, dtype=np.float64)[..., None]
    counts = m.sum(axis=-2)
    sums = (x * m).sum(axis=-2)
    y = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return y, (m, counts, x.shape)


def readout_backward(grad, cache):
    m, counts, shape = cache
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    return (grad * inv)[..., None, :] * m


def bce_loss(p, y, eps=1e-12):
    """Per-sample binary cross-entropy with probability clamping.

    The gradient with respect to the pre-sigmoid logit is simply ``p - y``;
    callers apply their own batch reduction scaling.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
