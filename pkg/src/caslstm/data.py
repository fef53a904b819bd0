"""Corpus I/O, vocabularies, synthetic tasks and padded batches.

TSV corpora hold ``label<TAB>sentence`` or ``label<TAB>sentence1<TAB>sentence2``
per line, UTF-8, whitespace-tokenized.  Embedding files hold
``word v1 ... vd`` per line.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .encoder import EmbeddingTable
from .numerics import dtype_for, make_rng, uniform_init

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"


class DataError(ValueError):
    """Malformed corpus or embedding file."""


@dataclass(frozen=True)
class TextExample:
    words: Tuple[str, ...]
    label: str
    words2: Optional[Tuple[str, ...]] = None


@dataclass(frozen=True)
class LabeledExample:
    tokens: Tuple[int, ...]
    label: int
    tokens2: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if not self.tokens or (self.tokens2 is not None and not self.tokens2):
            raise ValueError("token sequences must be nonempty")


@dataclass
class Batch:
    tokens: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    tokens2: Optional[np.ndarray] = None
    mask2: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.labels)


class Vocab:
    """Token to index map with ``PAD = 0`` and ``UNK = 1`` reserved."""

    def __init__(self, tokens=()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        self.frozen = False
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        if token not in self.stoi:
            if self.frozen:
                return UNK
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def freeze(self):
        self.frozen = True
        return self

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def index(self, token):
        return self.stoi.get(token, UNK)

    def encode(self, words):
        return tuple(self.index(w) for w in words)

    @classmethod
    def build(cls, sentences):
        vocab = cls()
        for words in sentences:
            for w in words:
                vocab.add(w)
        return vocab.freeze()

    @classmethod
    def from_itos(cls, itos):
        if list(itos[:2]) != [PAD_TOKEN, UNK_TOKEN]:
            raise DataError("vocabulary must start with the reserved PAD and UNK entries")
        vocab = cls(itos[2:])
        return vocab.freeze()


def load_tsv(path, pair=False):
    """Parse a labeled corpus.

    Returns ``(examples, labels)`` where ``labels`` lists class names in order
    of first appearance.
    """
    path = Path(path)
    want = 3 if pair else 2
    examples, labels = [], []
    with path.open("r", encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != want:
                raise DataError(f"{path}:{lineno}: expected {want} tab-separated fields, got {len(parts)}")
            label = parts[0]
            words = tuple(parts[1].split())
            words2 = tuple(parts[2].split()) if pair else None
            if not label or not words or (pair and not words2):
                raise DataError(f"{path}:{lineno}: empty label or sentence")
            if label not in labels:
                labels.append(label)
            examples.append(TextExample(words, label, words2))
    if not examples:
        raise DataError(f"{path}: no examples")
    return examples, labels


def write_tsv(path, examples):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fields = [ex.label, " ".join(ex.words)]
            if ex.words2 is not None:
                fields.append(" ".join(ex.words2))
            fh.write("\t".join(fields) + "\n")


def index_examples(examples, vocab, labels):
    """Map text examples to indices; unknown words become ``UNK``."""
    label_index = {name: k for k, name in enumerate(labels)}
    out = []
    for ex in examples:
        if ex.label not in label_index:
            raise DataError(f"unknown label {ex.label!r}")
        tokens2 = vocab.encode(ex.words2) if ex.words2 is not None else None
        out.append(LabeledExample(vocab.encode(ex.words), label_index[ex.label], tokens2))
    return out


def load_embeddings(path, vocab, rng, precision=32, trainable=False):
    """Build an embedding table from a text vector file.

    Rows for words found in the file are copied; the remaining rows are drawn
    from ``U[-0.1, 0.1]``; the PAD row is zero.
    """
    path = Path(path)
    found = {}
    dim = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not parts or not parts[0]:
                raise DataError(f"{path}:{lineno}: missing word")
            try:
                vec = [float(v) for v in parts[1:]]
            except ValueError:
                raise DataError(f"{path}:{lineno}: unreadable vector") from None
            if dim is None:
                dim = len(vec)
                if dim == 0:
                    raise DataError(f"{path}:{lineno}: empty vector")
            elif len(vec) != dim:
                raise DataError(f"{path}:{lineno}: dimension {len(vec)} differs from {dim}")
            if parts[0] in vocab:
                found[vocab.index(parts[0])] = vec
    if dim is None:
        raise DataError(f"{path}: no vectors")
    E = uniform_init(rng, (len(vocab), dim), 0.1, precision)
    E[PAD] = 0
    for idx, vec in found.items():
        E[idx] = np.asarray(vec, dtype=dtype_for(precision))
    return EmbeddingTable(E, trainable)


def _majority_sequences(rng, n, T, majority):
    """Uniform binary sequences conditioned on the given majority symbol (0/1)."""
    seq = rng.integers(0, 2, size=(n, T))
    flip = (seq.sum(axis=1) * 2 > T).astype(int) != majority
    seq[flip] = 1 - seq[flip]
    return seq


def _check_odd(T):
    if T < 1 or T % 2 == 0:
        raise ValueError(f"sequence length must be odd so majorities never tie, got {T}")


def _balanced_bits(rng, n):
    bits = np.arange(n) % 2
    rng.shuffle(bits)
    return bits


SYMBOLS = ("a", "b")


def gen_majority(n, T, seed):
    """Binary ``a``/``b`` sequences labeled with their majority symbol."""
    _check_odd(T)
    rng = make_rng(seed)
    labels = _balanced_bits(rng, n)
    out = []
    for y in labels:
        seq = _majority_sequences(rng, 1, T, y)[0]
        out.append(TextExample(tuple(SYMBOLS[s] for s in seq), SYMBOLS[y]))
    return out


def gen_pair_match(n, T, seed):
    """Sequence pairs labeled ``1`` iff both share the same majority symbol."""
    _check_odd(T)
    rng = make_rng(seed)
    labels = _balanced_bits(rng, n)
    out = []
    for y in labels:
        m1 = int(rng.integers(0, 2))
        m2 = m1 if y else 1 - m1
        s1 = _majority_sequences(rng, 1, T, m1)[0]
        s2 = _majority_sequences(rng, 1, T, m2)[0]
        out.append(TextExample(tuple(SYMBOLS[s] for s in s1), str(y),
                               tuple(SYMBOLS[s] for s in s2)))
    return out


def pad(seqs):
    T = max(len(s) for s in seqs)
    tokens = np.full((len(seqs), T), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for k, s in enumerate(seqs):
        tokens[k, :len(s)] = s
        mask[k, :len(s)] = True
    return tokens, mask


def collate(examples):
    tokens, mask = pad([ex.tokens for ex in examples])
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    if examples[0].tokens2 is None:
        return Batch(tokens, mask, labels)
    tokens2, mask2 = pad([ex.tokens2 for ex in examples])
    return Batch(tokens, mask, labels, tokens2, mask2)


def make_batches(examples, batch_size, rng=None) -> List[Batch]:
    """Split into padded batches, shuffled by ``rng`` when given."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = np.arange(len(examples))
    if rng is not None:
        rng.shuffle(order)
    return [collate([examples[k] for k in order[s:s + batch_size]])
            for s in range(0, len(order), batch_size)]


def unbatch(batches):
    """Strip padding, recovering the examples of :func:`make_batches`."""
    out = []
    for b in batches:
        for k in range(len(b)):
            tokens = tuple(int(v) for v in b.tokens[k][b.mask[k]])
            tokens2 = None
            if b.tokens2 is not None:
                tokens2 = tuple(int(v) for v in b.tokens2[k][b.mask2[k]])
            out.append(LabeledExample(tokens, int(b.labels[k]), tokens2))
    return out
