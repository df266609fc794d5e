"""Channels-last compute kernels.

All heavy math runs in [N, H, W, C] layout: the 3x3 convolution becomes
nine contiguous-slab GEMMs against [C_in, C_out] weight slices, which keeps
single-core BLAS throughput high and avoids the cache-hostile gather copies
an im2col in channels-first layout would need.  :mod:`bodyseg.layers`
exposes the same operations under their channels-first contracts by
transposing at the boundary, and the network in :mod:`bodyseg.model` calls
these kernels directly.

Every forward returns ``(out, cache)``; the matching backward consumes the
cache.  Layout-free operations (ReLU, dropout, the dropout penalty) live
here too so the whole numeric path has a single home.
"""

from __future__ import annotations

import numpy as np

from .rng import RngStream
from .tensor import seeded_uniform

DEFAULT_TEMPERATURE = 0.1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
VOID_LABEL = 255


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# convolution (3x3, stride 1, pad 1), weights [3, 3, C_in, C_out]
# ---------------------------------------------------------------------------

def conv_forward(x: np.ndarray, w33: np.ndarray, bias: np.ndarray):
    n, h, wid, c = x.shape
    if w33.shape[:3] != (3, 3, c):
        raise ValueError(f"channel mismatch: input has {c}, kernel expects {w33.shape[2]}")
    o = w33.shape[3]
    xp = np.zeros((n, h + 2, wid + 2, c), dtype=x.dtype)
    xp[:, 1 : h + 1, 1 : wid + 1, :] = x
    y = np.empty((n * h * wid, o), dtype=x.dtype)
    y[:] = bias
    for ky in range(3):
        for kx in range(3):
            slab = np.ascontiguousarray(xp[:, ky : ky + h, kx : kx + wid, :])
            y += slab.reshape(n * h * wid, c) @ w33[ky, kx]
    return y.reshape(n, h, wid, o), (xp, w33, (n, h, wid, c))


def conv_backward(dout: np.ndarray, cache):
    xp, w33, (n, h, wid, c) = cache
    o = w33.shape[3]
    dmat = np.ascontiguousarray(dout).reshape(n * h * wid, o)
    dbias = dmat.sum(axis=0)
    dw33 = np.empty_like(w33)
    dxp = np.zeros_like(xp)
    for ky in range(3):
        for kx in range(3):
            slab = np.ascontiguousarray(xp[:, ky : ky + h, kx : kx + wid, :])
            dw33[ky, kx] = slab.reshape(n * h * wid, c).T @ dmat
            dxp[:, ky : ky + h, kx : kx + wid, :] += (dmat @ w33[ky, kx].T).reshape(
                n, h, wid, c
            )
    dx = dxp[:, 1 : h + 1, 1 : wid + 1, :]
    return dx, dw33, dbias


# ---------------------------------------------------------------------------
# batch normalization over (N, H, W), channels last
# ---------------------------------------------------------------------------

def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
    update_stats: bool = True,
):
    """Returns (y, cache, new_running_mean, new_running_var)."""
    n, h, w, c = x.shape
    if train:
        if n * h * w < 2:
            raise ValueError("degenerate batch: batch-norm needs N*H*W >= 2")
        mu = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv_std
        y = gamma * xhat + beta
        if update_stats:
            new_mean = (1.0 - momentum) * running_mean + momentum * mu
            new_var = (1.0 - momentum) * running_var + momentum * var
        else:
            new_mean, new_var = running_mean, running_var
        return y, (xhat, inv_std, gamma), new_mean, new_var
    inv_std = 1.0 / np.sqrt(running_var + eps)
    y = gamma * ((x - running_mean) * inv_std) + beta
    return y, None, running_mean, running_var


def batchnorm_backward(dout: np.ndarray, cache):
    xhat, inv_std, gamma = cache
    n, h, w, c = dout.shape
    m = n * h * w
    dgamma = np.einsum("nhwc,nhwc->c", dout, xhat)
    dbeta = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gamma
    mean_dxhat = dxhat.mean(axis=(0, 1, 2))
    mean_dxhat_xhat = dgamma * gamma / m  # reuse: sum(dout*xhat)*gamma = sum(dxhat*xhat)
    dx = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu_forward(x: np.ndarray):
    mask = x > 0  # subgradient at exactly 0 is 0
    return np.where(mask, x, 0.0), mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


# ---------------------------------------------------------------------------
# 2x2 max pool / unpool with row-major window offsets, channels last
# ---------------------------------------------------------------------------

def _as_windows(x: np.ndarray) -> np.ndarray:
    """[N, H, W, C] -> [N, H/2, W/2, 4, C]; axis 3 is the window offset."""
    n, h, w, c = x.shape
    return np.ascontiguousarray(
        x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    ).reshape(n, h // 2, w // 2, 4, c)


def maxpool_forward(x: np.ndarray):
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError("spatial dims must be even")
    win = _as_windows(x)
    idx = win.argmax(axis=3).astype(np.uint8)  # first max = smallest offset
    y = np.take_along_axis(win, idx[:, :, :, None, :].astype(np.intp), axis=3)[:, :, :, 0, :]
    return y, idx


def maxpool_backward(dout: np.ndarray, idx: np.ndarray, in_hw: tuple[int, int]) -> np.ndarray:
    return maxunpool_forward(dout, idx, in_hw)


def maxunpool_forward(y: np.ndarray, idx: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    n, h2, w2, c = y.shape
    oh, ow = int(out_hw[0]), int(out_hw[1])
    if (oh, ow) != (2 * h2, 2 * w2):
        raise ValueError(f"output shape {(oh, ow)} does not match pooled input {(h2, w2)}")
    if idx.shape != y.shape:
        raise ValueError("indices shape does not match values")
    if idx.min() < 0 or idx.max() > 3:
        raise ValueError("corrupt indices")
    buf = np.zeros((n, h2, w2, 4, c), dtype=y.dtype)
    np.put_along_axis(buf, idx[:, :, :, None, :].astype(np.intp), y[:, :, :, None, :], axis=3)
    return np.ascontiguousarray(
        buf.reshape(n, h2, w2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5)
    ).reshape(n, oh, ow, c)


def maxunpool_backward(dout: np.ndarray, idx: np.ndarray) -> np.ndarray:
    win = _as_windows(dout)
    return np.take_along_axis(win, idx[:, :, :, None, :].astype(np.intp), axis=3)[:, :, :, 0, :]


# ---------------------------------------------------------------------------
# concrete dropout (layout-free)
# ---------------------------------------------------------------------------

def concrete_dropout_forward(
    x: np.ndarray,
    p_logit: float,
    rng: RngStream,
    temperature: float = DEFAULT_TEMPERATURE,
):
    """Relaxed dropout with learned drop probability p = sigmoid(p_logit).

    The soft mask is z = sigmoid((logit(p) + logit(u)) / t) for uniform
    noise u, and the output is x * (1 - z) / (1 - p), so the expected scale
    is preserved and the sample-free path is exactly the identity.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    p_logit = float(p_logit)
    p = float(sigmoid(p_logit))
    u = seeded_uniform(rng, x.shape)
    z = sigmoid((p_logit + np.log(u) - np.log1p(-u)) / temperature)
    # noise math stays float64 for stability; the mask follows x's dtype.
    # p == 1.0 only happens in diverged runs; the training guard reports it.
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        keep = ((1.0 - z) / (1.0 - p)).astype(x.dtype, copy=False)
    z = z.astype(x.dtype, copy=False)
    return x * keep, (x, z, keep, p, temperature)


def concrete_dropout_backward(dout: np.ndarray, cache):
    x, z, keep, p, t = cache
    dx = dout * keep
    # d keep / d p_logit = ((1-z)*p - z*(1-z)/t) / (1-p)
    dkeep = ((1.0 - z) * p - z * (1.0 - z) / t) / (1.0 - p)
    dp_logit = float(np.sum(dout * x * dkeep))
    return dx, dp_logit


def concrete_dropout_regularizer(
    p_logit: float,
    weights: np.ndarray,
    channels: int,
    dataset_size: int,
    w_factor: float = 1e-6,
    d_factor: float = 1e-5,
):
    """Penalty tying the learned drop rate to the following layer's weights.

    value = (w_factor/N) * ||W||^2 / (1-p)
          + (d_factor/N) * K * (p*log p + (1-p)*log(1-p))

    Returns (value, dweights, dp_logit); the gradients are closed-form.
    """
    if dataset_size < 1:
        raise ValueError("dataset size must be >= 1")
    if channels < 1:
        raise ValueError("channel count must be >= 1")
    p_logit = float(p_logit)
    p = float(sigmoid(p_logit))
    lam_w = w_factor / dataset_size
    lam_d = d_factor / dataset_size
    sumsq = float(np.sum(weights * weights))
    with np.errstate(divide="ignore", invalid="ignore"):
        # p saturating to exactly 0/1 yields nan here; the training loop's
        # divergence guard reports it
        entropy = float(p * np.log(p) + (1.0 - p) * np.log(1.0 - p))
    value = lam_w * sumsq / (1.0 - p) + lam_d * channels * entropy
    dweights = (2.0 * lam_w / (1.0 - p)) * weights
    # d entropy / d p = log p - log(1-p) = p_logit
    dp = lam_w * sumsq / (1.0 - p) ** 2 + lam_d * channels * p_logit
    dp_logit = dp * p * (1.0 - p)
    return value, dweights, dp_logit


# ---------------------------------------------------------------------------
# softmax cross-entropy over non-void pixels, classes last
# ---------------------------------------------------------------------------

def cross_entropy_forward(logits: np.ndarray, target: np.ndarray, void_label: int = VOID_LABEL):
    """Mean negative log-likelihood over supervised pixels.

    logits [N, H, W, K]; target [N, H, W] with labels in 0..K-1 or void.
    Void pixels are excluded from the mean and get zero gradient; raises
    when every pixel is void.
    """
    n, h, w, k = logits.shape
    target = np.asarray(target)
    if target.shape != (n, h, w):
        raise ValueError(f"target shape {target.shape} does not match logits {(n, h, w)}")
    valid = target != void_label
    m = int(valid.sum())
    if m == 0:
        raise ValueError("no supervised pixels")
    tvals = target[valid]
    if tvals.min() < 0 or tvals.max() >= k:
        raise ValueError(f"target labels must lie in 0..{k - 1} or be {void_label}")
    shifted = logits - logits.max(axis=3, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=3))  # [N, H, W]
    safe_t = np.where(valid, target, 0).astype(np.intp)
    picked = np.take_along_axis(shifted, safe_t[..., None], axis=3)[..., 0]
    loss = float(((lse - picked) * valid).sum() / m)
    return loss, (shifted, lse, safe_t, valid, m)


def cross_entropy_backward(cache) -> np.ndarray:
    shifted, lse, safe_t, valid, m = cache
    probs = np.exp(shifted - lse[..., None])
    grad = probs * valid[..., None] / m
    ni, yi, xi = np.nonzero(valid)
    grad[ni, yi, xi, safe_t[ni, yi, xi]] -= 1.0 / m
    return grad
