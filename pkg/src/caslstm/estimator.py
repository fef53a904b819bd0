"""scikit-learn style wrapper around :class:`SentenceClassifierNet`."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import classifier, data, training
from .encoder import EncoderConfig
from .model import ModelConfig, SentenceClassifierNet
from .numerics import make_rng


def _words(item, what):
    if isinstance(item, str):
        words = tuple(item.split())
    elif isinstance(item, (list, tuple)) and all(isinstance(w, str) for w in item):
        words = tuple(item)
    else:
        raise ValueError(f"{what} must be a string or a sequence of string tokens")
    if not words:
        raise ValueError(f"{what} is empty")
    return words


class CasLstmClassifier(ClassifierMixin, BaseEstimator):
    """Sentence (or sentence-pair) classifier with a stacked LSTM encoder.

    ``X`` holds whitespace-tokenized strings or token lists.  With pair
    features (``features="nli"`` or ``"pi"``) every item of ``X`` is a
    ``(sentence1, sentence2)`` pair.
    """

    def __init__(self, num_layers=2, dim=32, cell_kind="cas", bidirectional=False,
                 pooling="max", lambda_kind="constant", lambda_value=0.5, features="single",
                 hidden_dim=64, hidden_layers=1, epochs=20, batch_size=32, optimizer="adam",
                 lr=1e-3, dropout_embedding=0.1, dropout_mlp=0.2, clip_norm=5.0,
                 precision=32, random_state=None):
        self.num_layers = num_layers
        self.dim = dim
        self.cell_kind = cell_kind
        self.bidirectional = bidirectional
        self.pooling = pooling
        self.lambda_kind = lambda_kind
        self.lambda_value = lambda_value
        self.features = features
        self.hidden_dim = hidden_dim
        self.hidden_layers = hidden_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.lr = lr
        self.dropout_embedding = dropout_embedding
        self.dropout_mlp = dropout_mlp
        self.clip_norm = clip_norm
        self.precision = precision
        self.random_state = random_state

    def _split(self, X):
        if isinstance(X, str) or not hasattr(X, "__len__") or len(X) == 0:
            raise ValueError("X must be a nonempty sequence of sentences")
        if self.features == "single":
            return [_words(x, f"X[{k}]") for k, x in enumerate(X)], None
        firsts, seconds = [], []
        for k, x in enumerate(X):
            if isinstance(x, str) or len(x) != 2:
                raise ValueError(f"X[{k}] must be a (sentence1, sentence2) pair")
            firsts.append(_words(x[0], f"X[{k}][0]"))
            seconds.append(_words(x[1], f"X[{k}][1]"))
        return firsts, seconds

    def _encode(self, X):
        firsts, seconds = self._split(X)
        seqs1 = [self.vocab_.encode(w) for w in firsts]
        seqs2 = [self.vocab_.encode(w) for w in seconds] if seconds is not None else None
        return seqs1, seqs2

    def _batches(self, X, size=256):
        seqs1, seqs2 = self._encode(X)
        for s in range(0, len(seqs1), size):
            tokens, mask = data.pad(seqs1[s:s + size])
            labels = np.zeros(len(tokens), dtype=np.int64)
            if seqs2 is None:
                yield data.Batch(tokens, mask, labels)
            else:
                tokens2, mask2 = data.pad(seqs2[s:s + size])
                yield data.Batch(tokens, mask, labels, tokens2, mask2)

    def fit(self, X, y):
        firsts, seconds = self._split(X)
        y = np.asarray(y)
        if y.ndim != 1 or len(y) != len(firsts):
            raise ValueError(f"y must be 1-d with {len(firsts)} labels, got shape {y.shape}")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("y must contain at least two classes")
        self.vocab_ = data.Vocab.build(firsts + (seconds or []))
        seed = 0 if self.random_state is None else self.random_state
        encoder = EncoderConfig(num_layers=self.num_layers, dim=self.dim,
                                cell_kind=self.cell_kind, bidirectional=self.bidirectional,
                                pooling=self.pooling, lambda_kind=self.lambda_kind,
                                lambda_value=self.lambda_value)
        config = ModelConfig(vocab_size=len(self.vocab_), n_classes=len(self.classes_),
                             encoder=encoder, features=self.features,
                             hidden_dim=self.hidden_dim, hidden_layers=self.hidden_layers)
        train_config = training.TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, optimizer=self.optimizer, lr=self.lr,
            dropout_embedding=self.dropout_embedding, dropout_mlp=self.dropout_mlp,
            clip_norm=self.clip_norm, seed=seed, precision=self.precision)
        rng = make_rng(seed)
        self.model_ = SentenceClassifierNet.init(rng, config, precision=self.precision)
        examples = [data.LabeledExample(self.vocab_.encode(w), int(label),
                                        self.vocab_.encode(seconds[k]) if seconds else None)
                    for k, (w, label) in enumerate(zip(firsts, y_idx))]
        self.history_ = training.fit(self.model_, examples, train_config, rng=rng)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return np.concatenate([self.model_.predict_proba(b) for b in self._batches(X)])

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

    def transform(self, X):
        """Sentence vectors, or the pair features for pair input."""
        check_is_fitted(self, "model_")
        out = []
        for b in self._batches(X):
            s1 = self.model_.sentence_vectors(b.tokens, b.mask)
            if b.tokens2 is None:
                out.append(s1)
            else:
                s2 = self.model_.sentence_vectors(b.tokens2, b.mask2)
                out.append(classifier.phi(self.features, s1, s2))
        return np.concatenate(out)
