"""Stacked recurrent sentence encoder.

Layer 1 is always a plain LSTM over the word vectors.  Layers above it use
the configured cell: plain (hidden state only flows upward), CAS or the
peephole variant (both lower states flow upward).  Sequences are batched as
``(B, T, d)`` arrays with a boolean ``(B, T)`` mask marking the valid prefix
of each row; padded positions are computed but never reach the pooled vector.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import cells
from .cells import StatePair
from .numerics import ShapeError, uniform_init

CELL_KINDS = ("plain_stacked", "cas", "peephole_variant")
POOLINGS = ("max", "mean", "last")


@dataclass
class EncoderConfig:
    num_layers: int = 2
    dim: int = 32
    input_dim: Optional[int] = None
    cell_kind: str = "cas"
    bidirectional: bool = False
    pooling: str = "max"
    lambda_kind: str = "constant"
    lambda_value: float = 0.5

    def __post_init__(self):
        if self.input_dim is None:
            self.input_dim = self.dim
        if self.num_layers < 1:
            raise ValueError("num_layers must be at least 1")
        if self.dim < 1 or self.input_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.cell_kind not in CELL_KINDS:
            raise ValueError(f"cell_kind must be one of {CELL_KINDS}, got {self.cell_kind!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.lambda_kind not in cells.LAMBDA_KINDS:
            raise ValueError(f"lambda_kind must be one of {cells.LAMBDA_KINDS}")

    @property
    def output_dim(self):
        return self.dim * (2 if self.bidirectional else 1)


@dataclass
class EmbeddingTable:
    E: np.ndarray
    trainable: bool = True

    @classmethod
    def init(cls, rng, vocab_size, dim, precision=64, trainable=True):
        return cls(uniform_init(rng, (vocab_size, dim), 0.1, precision), trainable)

    @property
    def vocab_size(self):
        return self.E.shape[0]


@dataclass
class EncoderParams:
    """Layer stacks for the forward and (optionally) backward reading."""

    forward: list
    backward: Optional[list] = None

    @classmethod
    def init(cls, rng, config, precision=64):
        fw = init_stack(rng, config, precision)
        bw = init_stack(rng, config, precision) if config.bidirectional else None
        return cls(fw, bw)

    def tensors(self):
        out = {}
        for direction, stack in (("fw", self.forward), ("bw", self.backward)):
            for l, layer in enumerate(stack or (), start=1):
                for name, arr in layer.tensors().items():
                    out[f"{direction}.l{l}.{name}"] = arr
        return out


@dataclass
class GateTrace:
    """Per-sentence gate and cell-state series; arrays are ``(T_sentence, d)``, layers 1-indexed."""

    g: dict = field(default_factory=dict)
    o: dict = field(default_factory=dict)
    sentence_ids: list = field(default_factory=list)
    c: dict = field(default_factory=dict)

    def extend(self, other):
        for attr in ("g", "o", "c"):
            mine = getattr(self, attr)
            for layer, series in getattr(other, attr).items():
                mine.setdefault(layer, []).extend(series)
        self.sentence_ids.extend(other.sentence_ids)


@dataclass
class HiddenSequence:
    H: np.ndarray
    H_back: Optional[np.ndarray] = None
    trace: Optional[GateTrace] = None
    cache: dict = field(default_factory=dict, repr=False)


def init_stack(rng, config, precision=64):
    layers = [cells.LstmParams.init(rng, config.input_dim, config.dim, precision)]
    for _ in range(1, config.num_layers):
        if config.cell_kind == "cas":
            layers.append(cells.CasLayerParams.init(
                rng, config.dim, config.dim, precision,
                lambda_kind=config.lambda_kind, lambda_value=config.lambda_value))
        elif config.cell_kind == "peephole_variant":
            layers.append(cells.PeepholeParams.init(rng, config.dim, config.dim, precision))
        else:
            layers.append(cells.LstmParams.init(rng, config.dim, config.dim, precision))
    return layers


def embed(tokens, table):
    """Look up word vectors; ``tokens`` is ``(T,)`` or ``(B, T)`` integer indices."""
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= table.vocab_size):
        raise IndexError(f"token index out of range for vocabulary of size {table.vocab_size}")
    return table.E[tokens]


def _step(layer, below, left, stacked):
    if type(layer) is cells.LstmParams:
        return cells.lstm_forward(below.h, left, layer, stacked)
    if isinstance(layer, cells.CasLayerParams):
        return cells.cas_forward(below, left, layer, stacked)
    return cells.peephole_forward(below, left, layer, stacked)


def encode(X, layers, trace=False):
    """Run the layer stack over ``X`` of shape ``(T, d0)`` or ``(B, T, d0)``.

    Every layer starts from zero states.  The returned ``HiddenSequence``
    holds the top-layer hidden states with the same leading shape as ``X``.
    """
    X = np.asarray(X)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3:
        raise ShapeError(f"encode expects a (T, d) or (B, T, d) array, got {X.shape}")
    B, T, d0 = X.shape
    if T == 0:
        raise ValueError("cannot encode an empty sequence")
    if d0 != layers[0].input_dim:
        raise ShapeError(f"input dim {d0} does not match layer input dim {layers[0].input_dim}")
    dt = X.dtype
    L = len(layers)
    stacks = [cells.stack_gates(layer) for layer in layers]
    states = [[None] * T for _ in range(L)]
    gates = [[None] * T for _ in range(L)]
    for t in range(T):
        below = StatePair(X[:, t], None)
        for l, layer in enumerate(layers):
            d = layer.dim
            left = states[l][t - 1] if t else StatePair(np.zeros((B, d), dt), np.zeros((B, d), dt))
            new, gs = _step(layer, below, left, stacks[l])
            states[l][t] = new
            gates[l][t] = gs
            below = new
    H = np.stack([states[-1][t].h for t in range(T)], axis=1)
    seq = HiddenSequence(H[0] if single else H,
                         cache={"X": X, "states": states, "gates": gates, "single": single})
    if trace:
        seq.trace = _trace_from_gates(gates, layers, B)
    return seq


def _trace_from_gates(gates, layers, B, lengths=None):
    tr = GateTrace()
    T = len(gates[0])
    lengths = np.full(B, T) if lengths is None else lengths
    for l in range(len(layers)):
        o = np.stack([gates[l][t].o for t in range(T)], axis=1)
        tr.o[l + 1] = [o[b, :lengths[b]].copy() for b in range(B)]
        c = np.stack([gates[l][t].c for t in range(T)], axis=1)
        tr.c[l + 1] = [c[b, :lengths[b]].copy() for b in range(B)]
        if gates[l][0].g is not None:
            g = np.stack([gates[l][t].g for t in range(T)], axis=1)
            tr.g[l + 1] = [g[b, :lengths[b]].copy() for b in range(B)]
    tr.sentence_ids = list(range(B))
    return tr


def encode_backward(dH, seq, layers):
    """Backpropagate ``dL/dH`` through :func:`encode`.

    Returns ``(dX, grads)`` where ``grads`` is a list (one per layer) of
    name -> gradient dicts.
    """
    cache = seq.cache
    X, states, gates = cache["X"], cache["states"], cache["gates"]
    dH = dH[None] if cache["single"] else dH
    B, T, _ = X.shape
    L = len(layers)
    dt = X.dtype
    stacks = [cells.stack_gates(layer) for layer in layers]
    grads = [{k: np.zeros_like(v) for k, v in layer.tensors().items()} for layer in layers]
    dX = np.zeros_like(X)
    # gradients arriving from the right (t+1) for each layer
    dh_right = [np.zeros((B, layer.dim), dt) for layer in layers]
    dc_right = [np.zeros((B, layer.dim), dt) for layer in layers]
    for t in reversed(range(T)):
        dh_above = dH[:, t]
        dc_above = np.zeros_like(dh_above)
        for l in reversed(range(L)):
            layer = layers[l]
            dh = dh_right[l] + dh_above
            dc = dc_right[l] + dc_above
            left = states[l][t - 1] if t else StatePair(np.zeros((B, layer.dim), dt),
                                                        np.zeros((B, layer.dim), dt))
            below = StatePair(X[:, t], None) if l == 0 else states[l - 1][t]
            if type(layer) is cells.LstmParams:
                dx, dleft, g = cells.lstm_backward(below.h, left, layer, gates[l][t], dh, dc,
                                                     stacks[l])
                dh_above, dc_above = dx, np.zeros_like(dx)
            else:
                back = cells.cas_backward if isinstance(layer, cells.CasLayerParams) \
                    else cells.peephole_backward
                dbelow, dleft, g = back(below, left, layer, gates[l][t], dh, dc, stacks[l])
                dh_above, dc_above = dbelow.h, dbelow.c
            for k, v in g.items():
                grads[l][k] += v
            dh_right[l], dc_right[l] = dleft.h, dleft.c
        dX[:, t] = dh_above
    return (dX[0] if cache["single"] else dX), grads


def _as_mask(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ShapeError(f"mask shape {mask.shape} does not match {shape}")
    return mask


def pool(H, method="max", mask=None):
    """Pool hidden states over time, ignoring positions where ``mask`` is False."""
    return _pool(H, method, mask)[0]


def _pool(H, method, mask):
    H = np.asarray(H)
    single = H.ndim == 2
    Hb = H[None] if single else H
    m = _as_mask(None if mask is None else (np.asarray(mask)[None] if single else mask),
                 Hb.shape[:2])
    if not m.any(axis=1).all():
        raise ValueError("pooling needs at least one valid position per sequence")
    rows = np.arange(Hb.shape[0])
    if method == "max":
        masked = np.where(m[..., None], Hb, -np.inf)
        idx = masked.argmax(axis=1)
        out = np.take_along_axis(Hb, idx[:, None, :], axis=1)[:, 0]
        aux = idx
    elif method == "mean":
        n = m.sum(axis=1, keepdims=True)
        out = (Hb * m[..., None]).sum(axis=1) / n
        aux = n
    elif method == "last":
        last = m.shape[1] - 1 - np.argmax(m[:, ::-1], axis=1)
        out = Hb[rows, last]
        aux = last
    else:
        raise ValueError(f"unknown pooling method {method!r}")
    return (out[0] if single else out), (method, m, aux, single, Hb.shape)


def _pool_backward(dP, pcache):
    method, m, aux, single, shape = pcache
    dP = dP[None] if single else dP
    dH = np.zeros(shape, dtype=dP.dtype)
    B, T, d = shape
    if method == "max":
        np.put_along_axis(dH, aux[:, None, :], dP[:, None, :], axis=1)
    elif method == "mean":
        dH[:] = (dP / aux)[:, None, :] * m[..., None]
    else:
        dH[np.arange(B), aux] = dP
    return dH[0] if single else dH


def reverse_index(mask):
    """Per-row index that reverses each valid prefix and leaves padding in place.

    The map is an involution, so it also undoes the reversal.
    """
    B, T = mask.shape
    lengths = mask.sum(axis=1)
    t = np.arange(T)[None, :]
    return np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)


def sentence_forward(X, mask, config, params, trace=False):
    """Encode word vectors ``X`` ``(B, T, d0)`` to sentence vectors ``(B, out_dim)``.

    The bidirectional case reads each valid prefix right-to-left with the
    second stack, realigns the states to the original positions and pools the
    per-step concatenation.
    """
    X = np.asarray(X)
    B, T, _ = X.shape
    mask = _as_mask(mask, (B, T))
    fw = encode(X, params.forward)
    H = fw.H
    bw = rev = None
    if config.bidirectional:
        rev = reverse_index(mask)
        rows = np.arange(B)[:, None]
        bw = encode(X[rows, rev], params.backward)
        H = np.concatenate([H, bw.H[rows, rev]], axis=-1)
    s, pcache = _pool(H, config.pooling, mask)
    cache = {"fw": fw, "bw": bw, "rev": rev, "pool": pcache}
    if trace:
        lengths = mask.sum(axis=1)
        cache["trace"] = _trace_from_gates(fw.cache["gates"], params.forward, B, lengths)
        if bw is not None:
            cache["trace"].extend(_trace_from_gates(bw.cache["gates"], params.backward, B, lengths))
    return s, cache


def sentence_backward(ds, cache, config, params):
    """Backward of :func:`sentence_forward`; returns ``(dX, grads_by_name)``."""
    dH = _pool_backward(ds, cache["pool"])
    d = config.dim
    dX, g_fw = encode_backward(dH[..., :d], cache["fw"], params.forward)
    grads = {}
    for l, g in enumerate(g_fw, start=1):
        grads.update({f"fw.l{l}.{k}": v for k, v in g.items()})
    if cache["bw"] is not None:
        rows = np.arange(dH.shape[0])[:, None]
        rev = cache["rev"]
        dX_rev, g_bw = encode_backward(dH[..., d:][rows, rev], cache["bw"], params.backward)
        dX = dX + dX_rev[rows, rev]
        for l, g in enumerate(g_bw, start=1):
            grads.update({f"bw.l{l}.{k}": v for k, v in g.items()})
    return dX, grads


def encode_sentence(tokens, config, params, table, mask=None, trace=False):
    """Sentence vector(s) for token indices ``(T,)`` or padded ``(B, T)``."""
    tokens = np.asarray(tokens)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None]
        mask = None if mask is None else np.asarray(mask)[None]
    s, cache = sentence_forward(embed(tokens, table), mask, config, params, trace=trace)
    s = s[0] if single else s
    return (s, cache["trace"]) if trace else s

