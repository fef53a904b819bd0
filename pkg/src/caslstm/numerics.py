"""Dense numeric helpers shared by every other module.

Tensors are plain :class:`numpy.ndarray` objects of rank 1 or 2 (rank 3 for
batched sequences).  Precision is chosen with :func:`dtype_for` and carried
by the arrays themselves.
"""

import numpy as np
from scipy.special import expit

PRECISIONS = {32: np.float32, 64: np.float64}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def dtype_for(precision):
    try:
        return PRECISIONS[int(precision)]
    except (KeyError, ValueError):
        raise ValueError(f"precision must be 32 or 64, got {precision!r}") from None


def as_tensor(data, precision=64):
    return np.asarray(data, dtype=dtype_for(precision))


def make_rng(seed):
    """Seeded generator; PCG64 gives the same stream on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def matvec(W, x):
    """Return ``W @ x`` after checking that the inner dimensions agree."""
    W = np.asarray(W)
    x = np.asarray(x)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: cannot multiply {W.shape} by {x.shape}")
    return W @ x


def sigmoid(x):
    return expit(x)


def sigmoid_prime(x):
    s = expit(x)
    return s * (1 - s)


def tanh_act(x):
    return np.tanh(x)


def tanh_prime(x):
    t = np.tanh(x)
    return 1 - t * t


def relu(x):
    return np.maximum(x, 0)


def softmax(x):
    """Softmax over the last axis, computed after subtracting the row max."""
    x = np.asarray(x)
    if x.size == 0 or x.shape[-1] == 0:
        raise ValueError("softmax of an empty vector is undefined")
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def glorot_bound(fan_in, fan_out):
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def uniform_init(rng, shape, bound, precision=64):
    """I.i.d. draws from ``U[-bound, bound]``."""
    if not bound > 0:
        raise ValueError(f"init bound must be positive, got {bound}")
    return rng.uniform(-bound, bound, size=shape).astype(dtype_for(precision))
