"""Sentence-pair features, the ReLU MLP head and the cross-entropy objective."""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .numerics import ShapeError, dtype_for, glorot_bound, relu, softmax, uniform_init

FEATURES = ("single", "nli", "pi")


def _check_pair(s1, s2):
    s1, s2 = np.asarray(s1), np.asarray(s2)
    if s1.shape != s2.shape:
        raise ShapeError(f"sentence vectors differ in shape: {s1.shape} vs {s2.shape}")
    return s1, s2


def phi_nli(s1, s2):
    """``s1 ⊕ s2 ⊕ |s1 - s2| ⊕ s1*s2`` along the last axis."""
    s1, s2 = _check_pair(s1, s2)
    return np.concatenate([s1, s2, np.abs(s1 - s2), s1 * s2], axis=-1)


def phi_pi(s1, s2):
    """``|s1 - s2| ⊕ s1*s2``; symmetric in its arguments."""
    s1, s2 = _check_pair(s1, s2)
    return np.concatenate([np.abs(s1 - s2), s1 * s2], axis=-1)


def phi_single(s):
    return np.asarray(s)


def phi(kind, s1, s2=None):
    if kind == "single":
        return phi_single(s1)
    if s2 is None:
        raise ValueError(f"feature function {kind!r} needs two sentence vectors")
    if kind == "nli":
        return phi_nli(s1, s2)
    if kind == "pi":
        return phi_pi(s1, s2)
    raise ValueError(f"unknown feature function {kind!r}")


def phi_backward(kind, dphi, s1, s2=None):
    """Gradients of the features with respect to ``(s1, s2)``.

    The kink of ``|.|`` at zero takes subgradient 0.
    """
    if kind == "single":
        return dphi, None
    d = s1.shape[-1]
    sign = np.sign(s1 - s2)
    if kind == "nli":
        a, b, diff, prod = (dphi[..., k * d:(k + 1) * d] for k in range(4))
        return a + sign * diff + s2 * prod, b - sign * diff + s1 * prod
    if kind == "pi":
        diff, prod = dphi[..., :d], dphi[..., d:]
        return sign * diff + s2 * prod, -sign * diff + s1 * prod
    raise ValueError(f"unknown feature function {kind!r}")


def feature_dim(kind, d):
    return {"single": 1, "nli": 4, "pi": 2}[kind] * d


@dataclass
class MlpParams:
    """Hidden ``(W, b)`` pairs followed by the output projection."""

    hidden: List[Tuple[np.ndarray, np.ndarray]]
    W_out: np.ndarray
    b_out: np.ndarray

    @classmethod
    def init(cls, rng, in_dim, hidden_dim, n_classes, hidden_layers=1, precision=64):
        if n_classes < 2:
            raise ValueError("a classifier needs at least two classes")
        dt = dtype_for(precision)
        hidden = []
        d = in_dim
        for _ in range(hidden_layers):
            W = uniform_init(rng, (hidden_dim, d), glorot_bound(d, hidden_dim), precision)
            hidden.append((W, np.zeros(hidden_dim, dt)))
            d = hidden_dim
        W_out = uniform_init(rng, (n_classes, d), glorot_bound(d, n_classes), precision)
        return cls(hidden, W_out, np.zeros(n_classes, dt))

    @property
    def in_dim(self):
        return (self.hidden[0][0] if self.hidden else self.W_out).shape[1]

    @property
    def n_classes(self):
        return self.W_out.shape[0]

    def tensors(self):
        out = {}
        for k, (W, b) in enumerate(self.hidden):
            out[f"h{k}.W"] = W
            out[f"h{k}.b"] = b
        out["out.W"] = self.W_out
        out["out.b"] = self.b_out
        return out


@dataclass
class ClassLogits:
    logits: np.ndarray
    probabilities: np.ndarray


def mlp_forward(features, params, dropout=None):
    """Affine+ReLU hidden layers, then an affine projection and softmax.

    ``dropout`` is an optional callable applied to the MLP input and to every
    hidden activation; it must return ``(output, mask)``.
    """
    x = np.asarray(features)
    if x.shape[-1] != params.in_dim:
        raise ShapeError(f"feature length {x.shape[-1]} does not match MLP input {params.in_dim}")
    cache = {"inputs": [], "pre": [], "masks": []}
    for W, b in params.hidden:
        if dropout is not None:
            x, m = dropout(x)
            cache["masks"].append(m)
        cache["inputs"].append(x)
        a = x @ W.T + b
        cache["pre"].append(a)
        x = relu(a)
    if dropout is not None:
        x, m = dropout(x)
        cache["masks"].append(m)
    cache["inputs"].append(x)
    logits = x @ params.W_out.T + params.b_out
    return ClassLogits(logits, softmax(logits)), cache


def _accumulate(da, x):
    return np.atleast_2d(da).T @ np.atleast_2d(x), (da.sum(axis=0) if da.ndim == 2 else da)


def mlp_backward(dlogits, cache, params):
    """Returns ``(dfeatures, grads)`` with grads keyed like :meth:`MlpParams.tensors`."""
    grads = {}
    masks = cache["masks"]
    x = cache["inputs"][-1]
    gW, gb = _accumulate(dlogits, x)
    dx = dlogits @ params.W_out
    if masks:
        dx = dx * masks[-1]
    for k in reversed(range(len(params.hidden))):
        W, _ = params.hidden[k]
        da = dx * (cache["pre"][k] > 0)
        grads[f"h{k}.W"], grads[f"h{k}.b"] = _accumulate(da, cache["inputs"][k])
        dx = da @ W
        if masks:
            dx = dx * masks[k]
    grads["out.W"], grads["out.b"] = gW, gb
    return dx, {k: grads[k] for k in params.tensors()}


def cross_entropy(probabilities, labels):
    """Mean negative log-likelihood and its gradient with respect to the logits.

    Works for a single distribution with an integer label or for a batch.
    """
    p = np.asarray(probabilities)
    single = p.ndim == 1
    P = p[None] if single else p
    y = np.atleast_1d(np.asarray(labels))
    if y.shape != (P.shape[0],) or not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be {P.shape[0]} integer class indices")
    if np.any((y < 0) | (y >= P.shape[1])):
        raise ValueError(f"label out of range for {P.shape[1]} classes")
    rows = np.arange(P.shape[0])
    picked = P[rows, y]
    loss = float(-np.mean(np.log(np.maximum(picked, np.finfo(P.dtype).tiny))))
    grad = P.copy()
    grad[rows, y] -= 1
    grad /= P.shape[0]
    return loss, (grad[0] if single else grad)
