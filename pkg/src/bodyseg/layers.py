"""Differentiable building blocks of the segmentation network.

Operations take channels-first arrays ([N, C, H, W]) and come as a forward
function returning ``(output, cache)`` plus a matching backward that
consumes the cache and the upstream gradient.  The arithmetic itself lives
in :mod:`bodyseg.kernels` in channels-last layout for single-core BLAS
throughput; these wrappers only transpose at the boundary, so there is one
numeric path shared by the public contracts and the network.

All backward passes are verified against the central-difference oracle in
:mod:`bodyseg.tensor`; see :mod:`bodyseg.gradcheck` for the suite.

Convolutions are 3x3, stride 1, zero padding 1, so spatial size is changed
only by the 2x2 pooling stages.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .kernels import (
    BN_EPS,
    BN_MOMENTUM,
    DEFAULT_TEMPERATURE,
    VOID_LABEL,
    concrete_dropout_backward,
    concrete_dropout_forward,
    concrete_dropout_regularizer,
    relu_backward,
    relu_forward,
    sigmoid,
)

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "conv2d",
    "batchnorm2d_forward",
    "batchnorm2d_backward",
    "relu_forward",
    "relu_backward",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
    "maxunpool2x2_forward",
    "maxunpool2x2_backward",
    "concrete_dropout_forward",
    "concrete_dropout_backward",
    "concrete_dropout_regularizer",
    "softmax_cross_entropy_forward",
    "softmax_cross_entropy_backward",
    "sigmoid",
    "DEFAULT_TEMPERATURE",
    "BN_EPS",
    "BN_MOMENTUM",
    "VOID_LABEL",
]


def _to_nhwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _to_nchw(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


# ---------------------------------------------------------------------------
# convolution (3x3, stride 1, pad 1)
# ---------------------------------------------------------------------------

def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Cross-correlation with a [out_ch, in_ch, 3, 3] kernel, same-size output."""
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ValueError("kernel must be 3x3")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[1]}, kernel expects {weight.shape[1]}"
        )
    w33 = np.ascontiguousarray(weight.transpose(2, 3, 1, 0))
    y, cache = kernels.conv_forward(_to_nhwc(x), w33, bias)
    return _to_nchw(y), cache


def conv2d_backward(dout: np.ndarray, cache):
    dx, dw33, dbias = kernels.conv_backward(_to_nhwc(dout), cache)
    return _to_nchw(dx), np.ascontiguousarray(dw33.transpose(3, 2, 0, 1)), dbias


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Forward-only convolution for inference paths."""
    return conv2d_forward(x, weight, bias)[0]


# ---------------------------------------------------------------------------
# batch normalization (per channel over N, H, W)
# ---------------------------------------------------------------------------

def batchnorm2d_forward(
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
    """Per-channel normalization.

    Train mode normalizes with batch statistics and, unless frozen, folds
    them into the running estimates as new = (1-m)*old + m*batch.  Eval
    mode normalizes with the running estimates.  Returns (y, cache,
    new_mean, new_var); the running arrays themselves are never mutated.
    """
    y, cache, new_mean, new_var = kernels.batchnorm_forward(
        _to_nhwc(x), gamma, beta, running_mean, running_var,
        train=train, eps=eps, momentum=momentum, update_stats=update_stats,
    )
    return _to_nchw(y), cache, new_mean, new_var


def batchnorm2d_backward(dout: np.ndarray, cache):
    """Gradients for train-mode batch normalization."""
    dx, dgamma, dbeta = kernels.batchnorm_backward(_to_nhwc(dout), cache)
    return _to_nchw(dx), dgamma, dbeta


# ---------------------------------------------------------------------------
# 2x2 max pooling with argmax indices and the matching unpool
# ---------------------------------------------------------------------------

def maxpool2x2_forward(x: np.ndarray):
    """Non-overlapping 2x2 max pool.

    Returns the pooled values and, per output element, the row-major offset
    (0..3) of the maximum inside its window.  Ties go to the smallest offset.
    """
    y, idx = kernels.maxpool_forward(_to_nhwc(x))
    return _to_nchw(y), np.ascontiguousarray(idx.transpose(0, 3, 1, 2))


def maxpool2x2_backward(dout: np.ndarray, idx: np.ndarray, in_shape) -> np.ndarray:
    """Route the upstream gradient entirely to each window's argmax."""
    return maxunpool2x2_forward(dout, idx, in_shape)


def maxunpool2x2_forward(y: np.ndarray, idx: np.ndarray, out_shape) -> np.ndarray:
    """Scatter pooled values back to their argmax positions, zeros elsewhere."""
    out = kernels.maxunpool_forward(
        _to_nhwc(y),
        np.ascontiguousarray(np.asarray(idx).transpose(0, 2, 3, 1)),
        (out_shape[-2], out_shape[-1]),
    )
    return _to_nchw(out)


def maxunpool2x2_backward(dout: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Gather the upstream gradient from the recorded scatter positions."""
    out = kernels.maxunpool_backward(
        _to_nhwc(dout), np.ascontiguousarray(np.asarray(idx).transpose(0, 2, 3, 1))
    )
    return _to_nchw(out)


# ---------------------------------------------------------------------------
# softmax cross-entropy over non-void pixels
# ---------------------------------------------------------------------------

def softmax_cross_entropy_forward(
    logits: np.ndarray, target: np.ndarray, void_label: int = VOID_LABEL
):
    """Mean negative log-likelihood over supervised pixels.

    logits [N, K, H, W]; target [N, H, W].  Pixels labeled ``void_label``
    are excluded from the mean and receive zero gradient; raises if every
    pixel is void.
    """
    return kernels.cross_entropy_forward(_to_nhwc(logits), target, void_label)


def softmax_cross_entropy_backward(cache) -> np.ndarray:
    return _to_nchw(kernels.cross_entropy_backward(cache))
