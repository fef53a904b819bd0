"""End-to-end sentence classifier: embeddings, encoder, features and MLP."""

from dataclasses import dataclass, field

import numpy as np

from . import classifier, encoder
from .classifier import MlpParams
from .encoder import EmbeddingTable, EncoderConfig, EncoderParams


@dataclass
class ModelConfig:
    vocab_size: int
    n_classes: int
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    features: str = "single"
    hidden_dim: int = 64
    hidden_layers: int = 1

    def __post_init__(self):
        if self.features not in classifier.FEATURES:
            raise ValueError(f"features must be one of {classifier.FEATURES}")
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be nonnegative")

    @property
    def pair(self):
        return self.features != "single"


def _dropout_fn(rate, rng):
    """Inverted dropout returning ``(output, scaled_mask)``."""
    def apply(x):
        keep = rng.random(x.shape) >= rate
        mask = keep.astype(x.dtype) / x.dtype.type(1 - rate)
        return x * mask, mask
    return apply


class SentenceClassifierNet:
    """Parameters and forward/backward passes of the full model.

    One encoder is shared by both sentences of a pair.
    """

    def __init__(self, config, embedding, enc_params, mlp):
        self.config = config
        self.embedding = embedding
        self.enc_params = enc_params
        self.mlp = mlp

    @classmethod
    def init(cls, rng, config, precision=32, embedding=None):
        ec = config.encoder
        if embedding is None:
            embedding = EmbeddingTable.init(rng, config.vocab_size, ec.input_dim, precision)
        if embedding.E.shape != (config.vocab_size, ec.input_dim):
            raise ValueError(f"embedding shape {embedding.E.shape} does not match "
                             f"({config.vocab_size}, {ec.input_dim})")
        enc_params = EncoderParams.init(rng, ec, precision)
        in_dim = classifier.feature_dim(config.features, ec.output_dim)
        mlp = MlpParams.init(rng, in_dim, config.hidden_dim, config.n_classes,
                             config.hidden_layers, precision)
        return cls(config, embedding, enc_params, mlp)

    @property
    def dtype(self):
        return self.mlp.W_out.dtype

    def tensors(self, include_frozen=False):
        """All trainable tensors by dotted name (shared arrays)."""
        out = {}
        if self.embedding.trainable or include_frozen:
            out["emb.E"] = self.embedding.E
        out.update({f"enc.{k}": v for k, v in self.enc_params.tensors().items()})
        out.update({f"mlp.{k}": v for k, v in self.mlp.tensors().items()})
        return out

    def _encode(self, tokens, mask, emb_dropout, trace):
        X = encoder.embed(tokens, self.embedding)
        emb_mask = None
        if emb_dropout is not None:
            X, emb_mask = emb_dropout(X)
        s, cache = encoder.sentence_forward(X, mask, self.config.encoder, self.enc_params,
                                            trace=trace)
        cache["tokens"] = tokens
        cache["emb_mask"] = emb_mask
        return s, cache

    def forward(self, batch, dropout=(0.0, 0.0), rng=None, trace=False):
        """Class probabilities for a batch.

        ``dropout`` holds the (embedding, MLP) rates; nonzero rates need ``rng``.
        """
        emb_rate, mlp_rate = dropout
        emb_drop = _dropout_fn(emb_rate, rng) if emb_rate > 0 else None
        mlp_drop = _dropout_fn(mlp_rate, rng) if mlp_rate > 0 else None
        kind = self.config.features
        s1, c1 = self._encode(batch.tokens, batch.mask, emb_drop, trace)
        s2 = c2 = None
        if self.config.pair:
            if batch.tokens2 is None:
                raise ValueError("pair features need batches with a second sentence")
            s2, c2 = self._encode(batch.tokens2, batch.mask2, emb_drop, trace)
        feats = classifier.phi(kind, s1, s2)
        out, mcache = classifier.mlp_forward(feats, self.mlp, dropout=mlp_drop)
        cache = {"s1": s1, "s2": s2, "c1": c1, "c2": c2, "mlp": mcache}
        return out, cache

    def loss_and_grads(self, batch, dropout=(0.0, 0.0), rng=None):
        out, cache = self.forward(batch, dropout, rng)
        loss, dlogits = classifier.cross_entropy(out.probabilities, batch.labels)
        return loss, self.backward(dlogits, cache), out

    def backward(self, dlogits, cache):
        dfeat, g_mlp = classifier.mlp_backward(dlogits, cache["mlp"], self.mlp)
        ds1, ds2 = classifier.phi_backward(self.config.features, dfeat, cache["s1"], cache["s2"])
        grads = {k: np.zeros_like(v) for k, v in self.tensors().items()}
        for k, v in g_mlp.items():
            grads[f"mlp.{k}"] += v
        for ds, c in ((ds1, cache["c1"]), (ds2, cache["c2"])):
            if ds is None:
                continue
            dX, g_enc = encoder.sentence_backward(ds, c, self.config.encoder, self.enc_params)
            for k, v in g_enc.items():
                grads[f"enc.{k}"] += v
            if "emb.E" in grads:
                if c["emb_mask"] is not None:
                    dX = dX * c["emb_mask"]
                np.add.at(grads["emb.E"], c["tokens"], dX)
        return grads

    def loss(self, batch):
        out, _ = self.forward(batch)
        return classifier.cross_entropy(out.probabilities, batch.labels)[0]

    def predict_proba(self, batch):
        return self.forward(batch)[0].probabilities

    def sentence_vectors(self, tokens, mask):
        return self._encode(tokens, mask, None, False)[0]

    def gate_trace(self, tokens, mask):
        return self._encode(tokens, mask, None, True)[1]["trace"]

    def copy_tensors(self, include_frozen=True):
        return {k: v.copy() for k, v in self.tensors(include_frozen).items()}

    def load_tensors(self, values):
        mine = self.tensors(include_frozen=True)
        for k, v in values.items():
            if k not in mine:
                raise KeyError(f"unknown parameter {k!r}")
            if mine[k].shape != v.shape:
                raise ValueError(f"parameter {k!r} has shape {mine[k].shape}, got {v.shape}")
            mine[k][...] = v
