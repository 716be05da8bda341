"""Word, subword and document vector stores plus small-scale trainers.

The trainers are deliberately plain: skip-gram with negative sampling, the
FastText subword extension of it, and PV-DM paragraph vectors.  They are meant
for corpora of a few hundred thousand tokens (the synthetic cohorts); real
pre-trained vectors can be loaded from the usual text format instead.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import Rng, sigmoid

log = logging.getLogger(__name__)

MIN_N = 3
MAX_N = 6


def normalize(token: str) -> str:
    return token.strip().lower()


def tokenize(text: str) -> list[str]:
    return [normalize(t) for t in text.split()]


# ------------------------------------------------------------------ containers

@dataclass
class EmbeddingTable:
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __contains__(self, token: str) -> bool:
        return normalize(token) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, token: str):
        return self.entries.get(normalize(token))


@dataclass
class SubwordTable:
    dim: int
    buckets: int
    ngram_vectors: np.ndarray                  # (buckets, dim)
    word_vectors: dict[str, np.ndarray] = field(default_factory=dict)
    ngram_range: tuple[int, int] = (MIN_N, MAX_N)

    def ngram_ids(self, token: str) -> list[int]:
        return ngram_ids(token, self.buckets, *self.ngram_range)

    def lookup(self, token: str) -> np.ndarray:
        token = normalize(token)
        if not token:
            raise ValueError("cannot look up an empty token")
        rows = [self.ngram_vectors[i] for i in self.ngram_ids(token)]
        if token in self.word_vectors:
            rows.append(self.word_vectors[token])
        return np.mean(rows, axis=0)

    def to_table(self) -> EmbeddingTable:
        """Composed vectors for every in-vocabulary word."""
        return EmbeddingTable(self.dim, {w: self.lookup(w) for w in self.word_vectors})


@dataclass
class DocVectorTable:
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, doc_id: str) -> np.ndarray:
        return self.entries[doc_id]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.entries


# ------------------------------------------------------------------ file format

def _open_text(source, mode="r"):
    if isinstance(source, (str, os.PathLike)):
        return open(source, mode, encoding="utf-8", newline="\n"), True
    return source, False


def read_vectors(source, lowercase: bool = True, dim: int | None = None) -> tuple[int, dict[str, np.ndarray]]:
    """Parse ``token f1 ... fd`` lines with an optional ``V d`` header.

    Without ``dim`` or a header the first entry fixes the dimension.
    """
    fh, owned = _open_text(source)
    try:
        text = fh.read()
    finally:
        if owned:
            fh.close()
    entries: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
            if dim is not None and int(parts[1]) != dim:
                raise ValueError(f"line 1: header declares dim {parts[1]}, expected {dim}")
            dim = int(parts[1])
            continue
        token, fields = parts[0], parts[1:]
        if dim is None:
            dim = len(fields)
            if dim == 0:
                raise ValueError(f"line {lineno}: no vector values after token {token!r}")
        if len(fields) != dim:
            raise ValueError(f"line {lineno}: expected {dim} values, found {len(fields)}")
        try:
            vec = np.array([float(f) for f in fields])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: non-numeric field ({exc})") from None
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"line {lineno}: non-finite value")
        entries[normalize(token) if lowercase else token] = vec
    if dim is None:
        raise ValueError("vector file is empty")
    return dim, entries


def write_vectors(entries: dict[str, np.ndarray], dim: int, dest) -> None:
    fh, owned = _open_text(dest, "w")
    try:
        fh.write(f"{len(entries)} {dim}\n")
        for token, vec in entries.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")
    finally:
        if owned:
            fh.close()


def load_table(source, dim: int | None = None) -> EmbeddingTable:
    dim, entries = read_vectors(source, dim=dim)
    return EmbeddingTable(dim, entries)


def save_table(table: EmbeddingTable, dest) -> None:
    write_vectors(table.entries, table.dim, dest)


def load_doc_vectors(source) -> DocVectorTable:
    dim, entries = read_vectors(source, lowercase=False)
    return DocVectorTable(dim, entries)


def save_doc_vectors(table: DocVectorTable, dest) -> None:
    write_vectors(table.entries, table.dim, dest)


def subword_sidecar(path) -> str:
    return os.fspath(path) + ".ngrams.npz"


def save_subword_table(table: SubwordTable, path) -> None:
    """Composed word vectors go to ``path`` (text); n-gram buckets to a sidecar."""
    save_table(table.to_table(), path)
    words = list(table.word_vectors)
    with open(subword_sidecar(path), "wb") as fh:
        np.savez(
            fh,
            ngram_vectors=table.ngram_vectors,
            words=np.array(words, dtype=str),
            word_vectors=np.array([table.word_vectors[w] for w in words]).reshape(len(words), table.dim),
            ngram_range=np.array(table.ngram_range),
        )


def load_subword_table(path) -> SubwordTable:
    sidecar = subword_sidecar(path)
    if not os.path.exists(sidecar):
        raise FileNotFoundError(f"subword model {sidecar} not found next to {path}")
    with np.load(sidecar) as z:
        ngrams = z["ngram_vectors"]
        words = [str(w) for w in z["words"]]
        wv = z["word_vectors"]
        lo, hi = (int(v) for v in z["ngram_range"])
    return SubwordTable(ngrams.shape[1], ngrams.shape[0], ngrams, dict(zip(words, wv)), (lo, hi))


# --------------------------------------------------------------------- lookups

def lookup_word2vec(table: EmbeddingTable, token: str):
    """Vector for ``token`` or ``None`` when it is out of vocabulary."""
    return table.get(token)


def lookup_fasttext(table: SubwordTable, token: str) -> np.ndarray:
    return table.lookup(token)


def lookup_concat(w2v: EmbeddingTable, ft: SubwordTable, token: str) -> np.ndarray:
    if w2v.dim != ft.dim:
        raise ValueError(f"word2vec dim {w2v.dim} differs from fasttext dim {ft.dim}")
    left = lookup_word2vec(w2v, token)
    if left is None:
        left = np.zeros(w2v.dim)
    return np.concatenate([left, ft.lookup(token)])


def fnv1a(text: str) -> int:
    h = 0x811C9DC5
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def char_ngrams(token: str, min_n: int = MIN_N, max_n: int = MAX_N) -> list[str]:
    wrapped = f"<{token}>"
    grams = []
    for n in range(min_n, max_n + 1):
        for i in range(len(wrapped) - n + 1):
            grams.append(wrapped[i:i + n])
    return grams


def ngram_ids(token: str, buckets: int, min_n: int = MIN_N, max_n: int = MAX_N) -> list[int]:
    return [fnv1a(g) % buckets for g in char_ngrams(normalize(token), min_n, max_n)]


# -------------------------------------------------------------------- training

def _vocabulary(corpus: Sequence[Sequence[str]]) -> tuple[list[str], np.ndarray]:
    counts: dict[str, int] = {}
    for sentence in corpus:
        for tok in sentence:
            counts[tok] = counts.get(tok, 0) + 1
    vocab = sorted(counts, key=lambda w: (-counts[w], w))
    return vocab, np.array([counts[w] for w in vocab], dtype=np.float64)


@dataclass
class _Prepared:
    vocab: list[str]
    noise_cdf: np.ndarray
    ids: list[np.ndarray]

    def sample_noise(self, rng: Rng, k: int) -> np.ndarray:
        idx = np.searchsorted(self.noise_cdf, rng.random(k), side="right")
        return np.minimum(idx, len(self.vocab) - 1)

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.ids)


def _prepare(corpus, window: int, negatives: int) -> _Prepared:
    corpus = [[normalize(t) for t in sent if normalize(t)] for sent in corpus]
    if not any(corpus):
        raise ValueError("corpus is empty")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if negatives < 1:
        raise ValueError(f"negatives must be >= 1, got {negatives}")
    vocab, counts = _vocabulary(corpus)
    index = {w: i for i, w in enumerate(vocab)}
    ids = [np.array([index[t] for t in sent], dtype=np.int64) for sent in corpus]
    noise = counts ** 0.75
    return _Prepared(vocab, np.cumsum(noise / noise.sum()), ids)


def _context_ids(sent: np.ndarray, pos: int, window: int) -> np.ndarray:
    lo = max(0, pos - window)
    hi = min(len(sent), pos + window + 1)
    return np.concatenate([sent[lo:pos], sent[pos + 1:hi]])


def _neg_sampling_grad(out_vecs, targets, labels, h, lr):
    """One negative-sampling update of output vectors; returns gradient for ``h``."""
    scores = out_vecs[targets] @ h
    g = lr * (labels - sigmoid(scores))
    grad_h = g @ out_vecs[targets]
    np.add.at(out_vecs, targets, g[:, None] * h[None, :])
    return grad_h


def _schedule(lr: float, step: int, total: int) -> float:
    return lr * max(1e-4, 1.0 - step / max(total, 1))


def _skipgram(prep: _Prepared, inputs, window, negatives, epochs, lr, rng, input_rows):
    """Shared skip-gram loop, updating ``inputs`` in place.

    ``input_rows[word_id]`` lists the rows of ``inputs`` whose mean is the
    centre word's representation.
    """
    V = len(prep.vocab)
    outputs = np.zeros((V, inputs.shape[1]))
    total = epochs * prep.n_tokens
    step = 0
    for _ in range(epochs):
        for sent in prep.ids:
            for pos, w in enumerate(sent):
                step += 1
                ctx = _context_ids(sent, pos, window)
                if ctx.size == 0:
                    continue
                neg = prep.sample_noise(rng, ctx.size * negatives)
                # a draw that hits a true context word is not a negative
                neg = neg[~np.isin(neg, ctx)]
                targets = np.concatenate([ctx, neg])
                labels = np.concatenate([np.ones(ctx.size), np.zeros(neg.size)])
                rows = input_rows[w]
                h = inputs[rows].mean(axis=0)
                grad_h = _neg_sampling_grad(outputs, targets, labels, h, _schedule(lr, step, total))
                np.add.at(inputs, rows, grad_h / len(rows))
    return outputs


def train_sgns(corpus, dim: int = 100, window: int = 5, negatives: int = 5,
               epochs: int = 5, lr: float = 0.025, rng: Rng | None = None,
               add_context: bool = True) -> EmbeddingTable:
    """Skip-gram with negative sampling over a list of token sequences.

    With ``add_context`` each exported vector is the sum of the word's input
    and output vectors, so words that co-occur end up close as well as words
    that share contexts.  ``False`` exports the input vectors alone.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    prep = _prepare(corpus, window, negatives)
    V = len(prep.vocab)
    inputs = rng.uniform(-0.5 / dim, 0.5 / dim, size=(V, dim))
    rows = [np.array([w]) for w in range(V)]
    outputs = _skipgram(prep, inputs, window, negatives, epochs, lr, rng, rows)
    vectors = inputs + outputs if add_context else inputs
    return EmbeddingTable(dim, {w: vectors[i].copy() for i, w in enumerate(prep.vocab)})


def train_fasttext(corpus, dim: int = 100, window: int = 5, negatives: int = 5,
                   epochs: int = 5, lr: float = 0.05, buckets: int = 200_000,
                   rng: Rng | None = None) -> SubwordTable:
    """Skip-gram where each centre word is the mean of its word and n-gram vectors."""
    if buckets < 1:
        raise ValueError(f"buckets must be >= 1, got {buckets}")
    rng = rng if rng is not None else np.random.default_rng(0)
    prep = _prepare(corpus, window, negatives)
    V = len(prep.vocab)
    # word rows occupy [0, V), n-gram buckets [V, V + buckets)
    inputs = rng.uniform(-0.5 / dim, 0.5 / dim, size=(V + buckets, dim))
    rows = [np.array([w] + [V + i for i in ngram_ids(tok, buckets)]) for w, tok in enumerate(prep.vocab)]
    _skipgram(prep, inputs, window, negatives, epochs, lr, rng, rows)
    return SubwordTable(
        dim, buckets, inputs[V:].copy(), {w: inputs[i].copy() for i, w in enumerate(prep.vocab)}
    )


def train_pvdm(docs, dim: int = 100, window: int = 5, negatives: int = 5,
               epochs: int = 20, lr: float = 0.025, rng: Rng | None = None) -> DocVectorTable:
    """PV-DM paragraph vectors.

    ``docs`` is a sequence of ``(doc_id, tokens)`` pairs or a mapping.  The
    document vector is averaged with the context word vectors and used to
    predict the centre word.  As in the reference CBOW trainer, every input
    row receives the full gradient of the averaged vector rather than a
    share of it; the exact share leaves document vectors barely trained.
    """
    if isinstance(docs, dict):
        docs = list(docs.items())
    docs = list(docs)
    if not docs:
        raise ValueError("document set is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    doc_ids = [str(d) for d, _ in docs]
    if len(set(doc_ids)) != len(doc_ids):
        raise ValueError("duplicate document ids")
    token_lists = [[normalize(t) for t in toks if normalize(t)] for _, toks in docs]
    if not any(token_lists):
        raise ValueError("all documents are empty")
    prep = _prepare(token_lists, window, negatives)
    V = len(prep.vocab)
    D = len(docs)
    # rows [0, D) are documents, [D, D + V) words
    inputs = rng.uniform(-0.5 / dim, 0.5 / dim, size=(D + V, dim))
    outputs = np.zeros((V, dim))
    total = epochs * prep.n_tokens
    step = 0
    for _ in range(epochs):
        for d, sent in enumerate(prep.ids):
            for pos, w in enumerate(sent):
                step += 1
                rows = np.concatenate([[d], D + _context_ids(sent, pos, window)])
                h = inputs[rows].mean(axis=0)
                neg = prep.sample_noise(rng, negatives)
                neg = neg[neg != w]
                targets = np.concatenate([[w], neg])
                labels = np.concatenate([[1.0], np.zeros(neg.size)])
                grad_h = _neg_sampling_grad(outputs, targets, labels, h, _schedule(lr, step, total))
                np.add.at(inputs, rows, grad_h)
    return DocVectorTable(dim, {doc_ids[i]: inputs[i].copy() for i in range(D)})


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))
