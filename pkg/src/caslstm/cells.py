"""Single layer/timestep blocks: plain LSTM, cell-aware (CAS) and peephole cells.

Every function here works on one time step.  State and input arrays may be
vectors of shape ``(d,)`` or batches of shape ``(B, d)``; parameter gradients
are summed over the batch axis.

Plain LSTM::

    i = sig(W_i x + U_i h' + b_i)      f = sig(W_f x + U_f h' + b_f)
    c~ = tanh(W_c x + U_c h' + b_c)    o = sig(W_o x + U_o h' + b_o)
    c = i*c~ + f*c'                    h = o*tanh(c)

where ``x`` is the hidden state of the layer below (or the word vector) and
``(h', c')`` is the state to the left.  The CAS cell adds a vertical forget
gate ``g`` computed like ``f`` and fuses the lower cell state::

    c = i*c~ + (1-lam)*f*c' + lam*g*c_below

The peephole cell computes ``g`` from ``x`` and elementwise peepholes on the
two cell states and sums the three terms without weighting.
"""

import contextlib
from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from .numerics import ShapeError, dtype_for, glorot_bound, sigmoid, uniform_init

LAMBDA_KINDS = ("constant", "trainable", "none")

# Flipped by ``fault_injection`` to exercise the gradient checker's negative control.
_FAULT = False


@contextlib.contextmanager
def fault_injection():
    """Corrupt the sign of one backward term while active."""
    global _FAULT
    previous, _FAULT = _FAULT, True
    try:
        yield
    finally:
        _FAULT = previous


class StatePair(NamedTuple):
    h: np.ndarray
    c: np.ndarray


@dataclass
class GateSet:
    """Gate activations of one forward step, kept for the backward pass."""

    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    c_tilde: np.ndarray
    c: np.ndarray
    g: Optional[np.ndarray] = None


def zero_state(d, batch=None, precision=64):
    shape = (d,) if batch is None else (batch, d)
    dt = dtype_for(precision)
    return StatePair(np.zeros(shape, dt), np.zeros(shape, dt))


@dataclass
class LambdaSpec:
    """Mixing weights between the left and the lower cell state.

    ``kind`` is ``"constant"`` (``value`` holds lambda itself),
    ``"trainable"`` (``value`` holds ``u`` and lambda = sigmoid(u)) or
    ``"none"`` (both cell terms enter with weight one).
    """

    kind: str
    value: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in LAMBDA_KINDS:
            raise ValueError(f"unknown lambda kind {self.kind!r}")
        if self.kind == "constant" and np.any((self.value < 0) | (self.value > 1)):
            raise ValueError("constant lambda must lie in [0, 1]")

    def realize(self):
        if self.kind == "constant":
            return self.value
        if self.kind == "trainable":
            return sigmoid(self.value)
        return None


@dataclass
class LstmParams:
    W_i: np.ndarray
    W_f: np.ndarray
    W_c: np.ndarray
    W_o: np.ndarray
    U_i: np.ndarray
    U_f: np.ndarray
    U_c: np.ndarray
    U_o: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    GATES = ("i", "f", "c", "o")

    @classmethod
    def _init_fields(cls, rng, d_in, d, precision, gates):
        dt = dtype_for(precision)
        out = {}
        for k in gates:
            out[f"W_{k}"] = uniform_init(rng, (d, d_in), glorot_bound(d_in, d), precision)
        for k in gates:
            out[f"U_{k}"] = uniform_init(rng, (d, d), glorot_bound(d, d), precision)
        for k in gates:
            out[f"b_{k}"] = np.full(d, 1.0 if k in ("f", "g") else 0.0, dtype=dt)
        return out

    @classmethod
    def init(cls, rng, d_in, d, precision=64):
        """Glorot-uniform weights, zero biases except ``b_f = 1``."""
        return cls(**cls._init_fields(rng, d_in, d, precision, cls.GATES))

    @property
    def input_dim(self):
        return self.W_i.shape[1]

    @property
    def dim(self):
        return self.W_i.shape[0]

    def tensors(self):
        """Trainable tensors by name; the arrays are shared, not copied."""
        return {f.name: getattr(self, f.name) for f in fields(self)
                if isinstance(getattr(self, f.name), np.ndarray)}

    def check(self):
        d, d_in = self.dim, self.input_dim
        for name, arr in self.tensors().items():
            if name == "lam_u":
                continue
            want = {"W": (d, d_in), "U": (d, d), "b": (d,), "p": (d,)}[name[0]]
            if arr.shape != want:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {want}")


@dataclass
class CasLayerParams(LstmParams):
    W_g: np.ndarray = None
    U_g: np.ndarray = None
    b_g: np.ndarray = None
    lam: LambdaSpec = None

    @classmethod
    def init(cls, rng, d_in, d, precision=64, lambda_kind="constant", lambda_value=0.5):
        if d_in != d:
            raise ValueError(f"CAS layer needs equal input and state sizes, got {d_in} and {d}")
        kw = cls._init_fields(rng, d, d, precision, ("i", "f", "c", "o", "g"))
        dt = dtype_for(precision)
        if lambda_kind == "constant":
            lam = LambdaSpec("constant", np.full(d, lambda_value, dtype=dt))
        elif lambda_kind == "trainable":
            lam = LambdaSpec("trainable", np.zeros(d, dtype=dt))
        else:
            lam = LambdaSpec("none")
        return cls(**kw, lam=lam)

    def tensors(self):
        out = super().tensors()
        if self.lam.kind == "trainable":
            out["lam_u"] = self.lam.value
        return out

    def check(self):
        super().check()
        if self.dim != self.input_dim:
            raise ValueError("CAS layer needs equal input and state sizes")


@dataclass
class PeepholeParams(LstmParams):
    W_g: np.ndarray = None
    b_g: np.ndarray = None
    p_g1: np.ndarray = None
    p_g2: np.ndarray = None

    @classmethod
    def init(cls, rng, d_in, d, precision=64):
        if d_in != d:
            raise ValueError(f"peephole layer needs equal input and state sizes, got {d_in} and {d}")
        kw = cls._init_fields(rng, d, d, precision, cls.GATES)
        dt = dtype_for(precision)
        kw["W_g"] = uniform_init(rng, (d, d), glorot_bound(d, d), precision)
        kw["b_g"] = np.ones(d, dtype=dt)
        bound = 1.0 / np.sqrt(d)
        kw["p_g1"] = uniform_init(rng, (d,), bound, precision)
        kw["p_g2"] = uniform_init(rng, (d,), bound, precision)
        return cls(**kw)


def stack_gates(p):
    """Concatenate per-gate weights in ``i, f, c, o[, g]`` order.

    Returns ``(W, U, b)``; the peephole cell has no ``U_g`` so its ``U``
    covers only the first four gates.
    """
    gates = ("i", "f", "c", "o") if type(p) is LstmParams else ("i", "f", "c", "o", "g")
    u_gates = ("i", "f", "c", "o", "g") if isinstance(p, CasLayerParams) else ("i", "f", "c", "o")
    W = np.concatenate([getattr(p, f"W_{k}") for k in gates])
    U = np.concatenate([getattr(p, f"U_{k}") for k in u_gates])
    b = np.concatenate([getattr(p, f"b_{k}") for k in gates])
    return W, U, b


def _preactivations(p, x, h, stacked):
    W, U, b = stacked if stacked is not None else stack_gates(p)
    a = x @ W.T + b
    if U.shape[0] == W.shape[0]:
        a += h @ U.T
    else:
        a[..., :U.shape[0]] += h @ U.T
    d = p.dim
    return [a[..., k * d:(k + 1) * d] for k in range(W.shape[0] // d)]


def _check_inputs(p, x, left):
    if x.shape[-1] != p.input_dim or left.h.shape[-1] != p.dim or left.c.shape[-1] != p.dim:
        raise ShapeError(
            f"inputs x{x.shape}, h{left.h.shape}, c{left.c.shape} do not fit a "
            f"{p.input_dim}->{p.dim} layer")
    if x.shape[:-1] != left.h.shape[:-1]:
        raise ShapeError(f"batch shapes differ: {x.shape} vs {left.h.shape}")


def _check_below(p, below, left):
    if p.dim != p.input_dim:
        raise ValueError("CAS-style layers need equal input and state sizes")
    _check_inputs(p, below.h, left)
    if below.c is None or below.c.shape != left.c.shape:
        got = None if below.c is None else below.c.shape
        raise ShapeError(f"lower cell {got} vs left cell {left.c.shape}")


def lstm_forward(x, left, params, stacked=None):
    """One plain LSTM step; returns the new ``StatePair`` and the gates.

    ``stacked`` optionally passes precomputed :func:`stack_gates` output.
    """
    _check_inputs(params, x, left)
    a_i, a_f, a_c, a_o = _preactivations(params, x, left.h, stacked)
    i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o)
    c_tilde = np.tanh(a_c)
    c = i * c_tilde + f * left.c
    h = o * np.tanh(c)
    return StatePair(h, c), GateSet(i=i, f=f, o=o, c_tilde=c_tilde, c=c)


def cas_forward(below, left, params, stacked=None):
    """One CAS step fusing the lower state ``below`` with the left state."""
    _check_below(params, below, left)
    a_i, a_f, a_c, a_o, a_g = _preactivations(params, below.h, left.h, stacked)
    i, f, o, g = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o), sigmoid(a_g)
    c_tilde = np.tanh(a_c)
    lam = params.lam.realize()
    if lam is None:
        c = i * c_tilde + f * left.c + g * below.c
    else:
        c = i * c_tilde + (1 - lam) * f * left.c + lam * g * below.c
    h = o * np.tanh(c)
    return StatePair(h, c), GateSet(i=i, f=f, o=o, c_tilde=c_tilde, c=c, g=g)


def peephole_forward(below, left, params, stacked=None):
    """One step of the peephole-integration variant."""
    _check_below(params, below, left)
    a_i, a_f, a_c, a_o, a_g = _preactivations(params, below.h, left.h, stacked)
    i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o)
    g = sigmoid(a_g + params.p_g1 * left.c + params.p_g2 * below.c)
    c_tilde = np.tanh(a_c)
    c = i * c_tilde + f * left.c + g * below.c
    h = o * np.tanh(c)
    return StatePair(h, c), GateSet(i=i, f=f, o=o, c_tilde=c_tilde, c=c, g=g)


def _outer(da, x):
    return np.atleast_2d(da).T @ np.atleast_2d(x)


def _colsum(a):
    return a.sum(axis=0) if a.ndim == 2 else a


def _backward_common(p, x, left, gates, dh, dc, f_coef, g_term, stacked):
    """Shared chain rule for all three cells.

    ``f_coef`` scales ``f*c_left`` in the cell update; ``g_term`` is the
    gradient reaching the ``g`` pre-activation (or None for a plain cell).
    Returns ``(dx, dh_left, dc_total, grads)``.
    """
    tc = np.tanh(gates.c)
    dc_total = dc + dh * gates.o * (1 - tc * tc)
    i, f, o, ct = gates.i, gates.f, gates.o, gates.c_tilde
    parts = [
        dc_total * ct * i * (1 - i),
        dc_total * f_coef * left.c * f * (1 - f),
        dc_total * i * (1 - ct * ct),
        dh * tc * o * (1 - o),
    ]
    if g_term is not None:
        parts.append(g_term)
    da = np.concatenate(parts, axis=-1)
    W, U, _ = stacked if stacked is not None else stack_gates(p)
    names = ("i", "f", "c", "o", "g")[:len(parts)]
    d = p.dim
    dW = _outer(da, x)
    db = _colsum(da)
    nu = U.shape[0]
    dU = _outer(da[..., :nu], left.h)
    grads = {}
    for k, name in enumerate(names):
        rows = slice(k * d, (k + 1) * d)
        grads[f"W_{name}"] = dW[rows]
        grads[f"b_{name}"] = db[rows]
        if (k + 1) * d <= nu:
            grads[f"U_{name}"] = dU[rows]
    if _FAULT:
        grads["b_i"] = -grads["b_i"]
    dx = da @ W
    dh_left = da[..., :nu] @ U
    return dx, dh_left, dc_total, grads


def _ordered(p, grads):
    return {k: grads[k] for k in p.tensors()}


def lstm_backward(x, left, params, gates, dh, dc, stacked=None):
    """Backward of :func:`lstm_forward`.

    Returns ``(dx, StatePair(dh_left, dc_left), param_grads)``.
    """
    dx, dh_left, dc_total, grads = _backward_common(params, x, left, gates, dh, dc, 1, None, stacked)
    return dx, StatePair(dh_left, dc_total * gates.f), _ordered(params, grads)


def cas_backward(below, left, params, gates, dh, dc, stacked=None):
    """Backward of :func:`cas_forward`.

    Returns ``(StatePair(dh_below, dc_below), StatePair(dh_left, dc_left), param_grads)``;
    ``param_grads`` includes ``lam_u`` for a trainable lambda.
    """
    lam = params.lam.realize()
    left_coef = 1 if lam is None else 1 - lam
    below_coef = 1 if lam is None else lam
    tc = np.tanh(gates.c)
    dc_total = dc + dh * gates.o * (1 - tc * tc)
    da_g = dc_total * below_coef * below.c * gates.g * (1 - gates.g)
    dx, dh_left, dc_total, grads = _backward_common(
        params, below.h, left, gates, dh, dc, left_coef, da_g, stacked)
    if params.lam.kind == "trainable":
        dlam = dc_total * (gates.g * below.c - gates.f * left.c)
        grads["lam_u"] = _colsum(dlam * lam * (1 - lam))
    dc_left = dc_total * left_coef * gates.f
    dc_below = dc_total * below_coef * gates.g
    return StatePair(dx, dc_below), StatePair(dh_left, dc_left), _ordered(params, grads)


def peephole_backward(below, left, params, gates, dh, dc, stacked=None):
    """Backward of :func:`peephole_forward`; same return layout as :func:`cas_backward`."""
    tc = np.tanh(gates.c)
    dc_total = dc + dh * gates.o * (1 - tc * tc)
    da_g = dc_total * below.c * gates.g * (1 - gates.g)
    dx, dh_left, dc_total, grads = _backward_common(
        params, below.h, left, gates, dh, dc, 1, da_g, stacked)
    grads["p_g1"] = _colsum(da_g * left.c)
    grads["p_g2"] = _colsum(da_g * below.c)
    dc_left = dc_total * gates.f + da_g * params.p_g1
    dc_below = dc_total * gates.g + da_g * params.p_g2
    return StatePair(dx, dc_below), StatePair(dh_left, dc_left), _ordered(params, grads)
