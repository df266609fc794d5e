"""Dense tensor helpers and the finite-difference gradient oracle.

Tensors throughout the package are C-contiguous (row-major) numpy arrays,
float64 by default; float32 is only used on the opt-in inference path.  This
module owns the handful of primitives the rest of the code builds on: the
clamped uniform sampler feeding the dropout relaxation, validated
broadcasting and reduction wrappers, and the central-difference oracle used
to verify every analytic gradient in the repository.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .rng import RngStream

__all__ = [
    "UNIFORM_EPS",
    "tensor",
    "seeded_uniform",
    "finite_diff_gradient",
    "finite_diff_gradient_at",
    "relative_error",
    "max_relative_error",
    "broadcast_zip",
    "reduce",
]

# Open-interval clamp for uniform draws so log(u) and log(1-u) stay finite.
UNIFORM_EPS = 1e-7


def tensor(data, dtype=np.float64) -> np.ndarray:
    """Materialize ``data`` as a C-contiguous (row-major) array, the value
    layout every operation in the package assumes."""
    return np.ascontiguousarray(data, dtype=dtype)


def seeded_uniform(rng: RngStream, shape) -> np.ndarray:
    """Uniform samples clamped to the open interval (eps, 1-eps).

    Raises ValueError("empty shape") for rank-0 or zero-sized shapes.
    """
    shape = tuple(int(d) for d in np.atleast_1d(np.asarray(shape, dtype=np.int64)))
    if len(shape) == 0 or any(d <= 0 for d in shape):
        raise ValueError("empty shape")
    u = rng.uniform(shape)
    return np.clip(u, UNIFORM_EPS, 1.0 - UNIFORM_EPS)


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one element at a time.

    The oracle is deliberately independent of any analytic backward pass: it
    only ever calls ``f`` on perturbed copies of ``x``.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty(x.size, dtype=np.float64)
    flat = x.ravel()
    for i in range(x.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("oracle evaluation failed")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def finite_diff_gradient_at(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    indices: Iterable[int],
    h: float = 1e-5,
) -> np.ndarray:
    """Central differences at selected flat indices of ``x``.

    Used where the full element-by-element sweep would be prohibitively
    slow (e.g. whole-network checks); returns one value per index.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    flat = x.ravel()
    out = []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("oracle evaluation failed")
        out.append((fp - fm) / (2.0 * h))
    return np.asarray(out, dtype=np.float64)


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Scale-robust elementwise error |a-b| / max(1, |a|, |b|)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return np.abs(a - b) / denom


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    err = relative_error(a, b)
    return float(err.max()) if err.size else 0.0


def _broadcastable(sa: tuple[int, ...], sb: tuple[int, ...]) -> bool:
    # Standard right-aligned rule: paired dims must match or one must be 1.
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            return False
    return True


def broadcast_zip(
    a: np.ndarray, b: np.ndarray, op: Callable[[np.ndarray, np.ndarray], np.ndarray]
) -> np.ndarray:
    """Apply an elementwise binary op under right-aligned broadcasting."""
    a = np.asarray(a)
    b = np.asarray(b)
    if not _broadcastable(a.shape, b.shape):
        raise ValueError(f"broadcast mismatch: {a.shape} vs {b.shape}")
    return op(a, b)


def reduce(
    x: np.ndarray,
    axes: Sequence[int] | int | None,
    op: str = "sum",
    return_argmax: bool = False,
):
    """Reduce ``x`` over ``axes`` with sum, max or mean.

    With ``op='max'`` and ``return_argmax=True`` also returns the flat
    argmax index within the reduced subspace of each output element.
    """
    x = np.asarray(x)
    if axes is None:
        axes = tuple(range(x.ndim))
    elif isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    else:
        axes = tuple(int(a) for a in axes)
    for a in axes:
        if a < -x.ndim or a >= x.ndim:
            raise ValueError(f"axis {a} out of range for shape {x.shape}")
    axes = tuple(sorted(a % x.ndim for a in axes))
    if len(set(axes)) != len(axes):
        raise ValueError("duplicate reduction axis")

    if op == "sum":
        return x.sum(axis=axes)
    if op == "mean":
        return x.mean(axis=axes)
    if op == "max":
        if not return_argmax:
            return x.max(axis=axes)
        keep = tuple(a for a in range(x.ndim) if a not in axes)
        moved = np.transpose(x, keep + axes)
        kept_shape = moved.shape[: len(keep)]
        flat = moved.reshape(kept_shape + (-1,))
        idx = flat.argmax(axis=-1)
        return flat.max(axis=-1), idx
    raise ValueError(f"unknown reduction op: {op!r}")
