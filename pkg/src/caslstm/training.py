"""Optimizers, regularizers, the finite-difference gradient check and the epoch loop."""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .classifier import cross_entropy
from .data import LabeledExample, collate, make_batches
from .encoder import EncoderConfig
from .model import ModelConfig, SentenceClassifierNet
from .numerics import make_rng


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    dropout_embedding: float = 0.1
    dropout_mlp: float = 0.2
    clip_norm: float = 5.0
    patience: int = 0
    seed: int = 1
    precision: int = 32

    def __post_init__(self):
        for name in ("dropout_embedding", "dropout_mlp"):
            rate = getattr(self, name)
            if not 0 <= rate < 1:
                raise ValueError(f"{name} must be in [0, 1), got {rate}")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be positive, or 0 to disable clipping")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def _check_shapes(params, grads):
    for k, p in params.items():
        if k not in grads or grads[k].shape != p.shape:
            got = None if k not in grads else grads[k].shape
            raise ValueError(f"gradient for {k!r} has shape {got}, parameter has {p.shape}")


class Sgd:
    kind = "sgd"

    def __init__(self, lr=0.1):
        self.lr = lr
        self.t = 0

    def step(self, params, grads):
        _check_shapes(params, grads)
        self.t += 1
        for k, p in params.items():
            p -= p.dtype.type(self.lr) * grads[k]


class Adam:
    """Adam with bias-corrected moment estimates; parameters update in place."""

    kind = "adam"

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        _check_shapes(params, grads)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)


def adam_step(params, grads, state):
    state.step(params, grads)
    return params, state


def make_optimizer(config):
    return Adam(lr=config.lr) if config.optimizer == "adam" else Sgd(lr=config.lr)


def dropout_apply(x, rate, rng, training=True):
    """Inverted dropout: survivors are scaled by ``1/(1-rate)``."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    keep = rng.random(np.shape(x)) >= rate
    return x * keep / (1 - rate)


def clip_global_norm(grads, max_norm):
    """Scale all gradients together so their joint L2 norm is at most ``max_norm``."""
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    arrays = grads.values() if isinstance(grads, dict) else grads
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in arrays))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    if isinstance(grads, dict):
        return {k: g * g.dtype.type(scale) for k, g in grads.items()}
    return [np.asarray(g) * scale for g in grads]


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: Optional[str] = None
    checked: int = 0
    per_tensor: dict = field(default_factory=dict)
    worst_analytic: float = 0.0
    worst_numeric: float = 0.0
    # (name, analytic, numeric) for every entry above ``flag_above``
    flagged: list = field(default_factory=list)


def gradcheck(model, example, eps=1e-5, max_entries=2000, seed=0, flag_above=1e-4):
    """Compare analytic gradients with central differences.

    ``example`` is a ``Batch`` or a ``LabeledExample``.  Every parameter entry
    is checked when the model has at most ``max_entries`` of them; otherwise a
    uniform sample of that size is drawn.  The relative error of an entry is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    batch = example if hasattr(example, "mask") else collate([example])
    if model.dtype != np.float64:
        raise ValueError("gradcheck needs a 64-bit model")
    _, grads, _ = model.loss_and_grads(batch)
    params = model.tensors()
    index = [(k, j) for k, p in params.items() for j in range(p.size)]
    if len(index) > max_entries:
        rng = make_rng(seed)
        pick = rng.choice(len(index), size=max_entries, replace=False)
        index = [index[j] for j in sorted(pick)]
    result = GradCheckResult(0.0, checked=len(index))
    for k, j in index:
        flat = params[k].reshape(-1)
        old = flat[j]
        flat[j] = old + eps
        up = model.loss(batch)
        flat[j] = old - eps
        down = model.loss(batch)
        flat[j] = old
        numeric = (up - down) / (2 * eps)
        analytic = grads[k].reshape(-1)[j]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        result.per_tensor[k] = max(result.per_tensor.get(k, 0.0), err)
        if err > flag_above:
            result.flagged.append((f"{k}[{j}]", float(analytic), float(numeric)))
        if err > result.max_rel_error:
            result.max_rel_error, result.worst = float(err), f"{k}[{j}]"
            result.worst_analytic, result.worst_numeric = float(analytic), float(numeric)
    return result


# (label, cell_kind, lambda_kind) for every encoder the check covers
GRADCHECK_KINDS = (
    ("plain", "plain_stacked", "constant"),
    ("cas-constant", "cas", "constant"),
    ("cas-trainable", "cas", "trainable"),
    ("cas-none", "cas", "none"),
    ("peephole", "peephole_variant", "constant"),
)


def gradcheck_instance(encoder_config, features="single", length=5, seed=0, hidden_dim=6,
                       n_classes=3, vocab_size=7, scale=1.0):
    """A 64-bit model and a one-example batch for gradient checking.

    All parameters, embeddings included, are redrawn from ``U[-scale, scale]``
    so that gradients are well above finite-difference roundoff; freshly
    initialized models have many gradient entries near 1e-8.  A trainable
    lambda keeps its initial value.
    """
    rng = make_rng(seed)
    config = ModelConfig(vocab_size=vocab_size, n_classes=n_classes, encoder=encoder_config,
                         features=features, hidden_dim=hidden_dim)
    net = SentenceClassifierNet.init(rng, config, precision=64)
    for name, arr in net.tensors().items():
        if not name.endswith("lam_u"):
            arr[...] = rng.uniform(-scale, scale, arr.shape)
    tokens = tuple(int(v) for v in rng.integers(2, vocab_size, length))
    label = int(rng.integers(0, n_classes))
    tokens2 = tuple(int(v) for v in rng.integers(2, vocab_size, length)) if config.pair else None
    example = LabeledExample(tokens, label, tokens2)
    return net, collate([example])


def gradcheck_suite(base_config, features="single", length=5, seed=0, hidden_dim=6, eps=1e-5):
    """Gradcheck every cell kind with the layout of ``base_config``; label -> result."""
    results = {}
    for label, cell_kind, lambda_kind in GRADCHECK_KINDS:
        ec = EncoderConfig(num_layers=base_config.num_layers, dim=base_config.dim,
                           input_dim=base_config.input_dim, cell_kind=cell_kind,
                           bidirectional=base_config.bidirectional, pooling=base_config.pooling,
                           lambda_kind=lambda_kind, lambda_value=base_config.lambda_value)
        net, batch = gradcheck_instance(ec, features, length, seed, hidden_dim)
        results[label] = gradcheck(net, batch, eps=eps)
    return results


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float
    n: int


def train_epoch(model, examples, config, optimizer, rng):
    """One shuffled pass; metrics are accumulated over the training batches."""
    if not examples:
        raise ValueError("cannot train on an empty corpus")
    dropout = (config.dropout_embedding, config.dropout_mlp)
    total_loss, correct = 0.0, 0
    for batch in make_batches(examples, config.batch_size, rng):
        loss, grads, out = model.loss_and_grads(batch, dropout, rng)
        if config.clip_norm:
            grads = clip_global_norm(grads, config.clip_norm)
        optimizer.step(model.tensors(), grads)
        total_loss += loss * len(batch)
        correct += int((out.probabilities.argmax(axis=-1) == batch.labels).sum())
    n = len(examples)
    return EpochMetrics(total_loss / n, correct / n, n)


def evaluate(model, examples, batch_size=256):
    """Accuracy and mean loss with dropout off."""
    if not examples:
        raise ValueError("cannot evaluate on an empty corpus")
    total_loss, correct = 0.0, 0
    for batch in make_batches(examples, batch_size):
        out, _ = model.forward(batch)
        loss, _ = cross_entropy(out.probabilities, batch.labels)
        total_loss += loss * len(batch)
        correct += int((out.probabilities.argmax(axis=-1) == batch.labels).sum())
    n = len(examples)
    return EpochMetrics(total_loss / n, correct / n, n)


def fit(model, train, config, dev=None, optimizer=None, rng=None, callback=None):
    """Train for ``config.epochs`` epochs.

    With a dev set the parameters with the best dev accuracy are restored at
    the end, and ``config.patience > 0`` stops after that many epochs without
    improvement.  ``callback(record)`` receives one dict per epoch and split.
    Returns the list of records.
    """
    optimizer = optimizer or make_optimizer(config)
    rng = rng or make_rng(config.seed)
    history = []
    best_acc, best_params, stale = -1.0, None, 0

    def emit(record, wall):
        history.append(record)
        if callback is not None:
            callback(record, wall)

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        m = train_epoch(model, train, config, optimizer, rng)
        emit({"epoch": epoch, "split": "train", "loss": m.loss, "accuracy": m.accuracy},
             time.perf_counter() - start)
        if dev is not None:
            start = time.perf_counter()
            d = evaluate(model, dev)
            emit({"epoch": epoch, "split": "dev", "loss": d.loss, "accuracy": d.accuracy},
                 time.perf_counter() - start)
            if d.accuracy > best_acc:
                best_acc, best_params, stale = d.accuracy, model.copy_tensors(), 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    break
    if best_params is not None:
        model.load_tensors(best_params)
    return history
