"""Turn cohorts plus an embedding choice into model-ready arrays."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import Cohort, resolve_task
from .embeddings import (
    DocVectorTable,
    EmbeddingTable,
    SubwordTable,
    lookup_concat,
    lookup_word2vec,
)
from .entities import average_representation, entity_matrix
from .models import Batch, ModelConfig, ModelKind, modalities

EMBEDDINGS = ("word2vec", "fasttext", "concat", "doc2vec")


@dataclass
class Dataset:
    ids: list[str]
    batch: Batch
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset([self.ids[i] for i in idx], self.batch.take(idx), self.y[idx])


class EntityEncoder:
    """Maps entity phrases (or whole patients, for doc vectors) to vectors."""

    def __init__(self, name: str, dim: int, token_lookup: Optional[Callable] = None,
                 docs: Optional[DocVectorTable] = None):
        if name not in EMBEDDINGS:
            raise ValueError(f"unknown embedding {name!r}; expected one of {EMBEDDINGS}")
        self.name = name
        self.dim = dim
        self._lookup = token_lookup
        self.docs = docs
        self._cache: dict[str, Optional[np.ndarray]] = {}

    @property
    def is_document(self) -> bool:
        return self.docs is not None

    def token(self, token: str) -> Optional[np.ndarray]:
        if token not in self._cache:
            self._cache[token] = self._lookup(token)
        return self._cache[token]

    def document(self, patient_id: str) -> np.ndarray:
        if patient_id not in self.docs:
            raise KeyError(f"no document vector for patient {patient_id}")
        return self.docs[patient_id]


def word2vec_encoder(table: EmbeddingTable) -> EntityEncoder:
    return EntityEncoder("word2vec", table.dim, lambda t: lookup_word2vec(table, t))


def fasttext_encoder(table: SubwordTable) -> EntityEncoder:
    return EntityEncoder("fasttext", table.dim, table.lookup)


def concat_encoder(w2v: EmbeddingTable, ft: SubwordTable) -> EntityEncoder:
    if w2v.dim != ft.dim:
        raise ValueError(f"word2vec dim {w2v.dim} differs from fasttext dim {ft.dim}")
    return EntityEncoder("concat", 2 * w2v.dim, lambda t: lookup_concat(w2v, ft, t))


def doc2vec_encoder(docs: DocVectorTable) -> EntityEncoder:
    return EntityEncoder("doc2vec", docs.dim, docs=docs)


class TimeSeriesScaler:
    """Per-feature z-scoring with statistics from the training partition."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = mean
        self.std = std

    @classmethod
    def fit(cls, cohort: Cohort) -> "TimeSeriesScaler":
        stacked = np.concatenate([r.timeseries for r in cohort.records], axis=0)
        std = stacked.std(axis=0)
        return cls(stacked.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, ts: np.ndarray) -> np.ndarray:
        return (ts - self.mean) / self.std


def build_dataset(cohort: Cohort, task: str, kind: ModelKind, cfg: ModelConfig,
                  encoder: Optional[EntityEncoder] = None,
                  scaler: Optional[TimeSeriesScaler] = None) -> Dataset:
    """Arrays for exactly the modalities ``kind`` consumes."""
    use = modalities(kind, cfg)
    task = resolve_task(task)
    recs = cohort.records
    ts = vector = matrix = None
    if use["gru"]:
        ts = np.stack([r.timeseries for r in recs]).astype(np.float64)
        if scaler is not None:
            ts = scaler.transform(ts)
    if use["vector"] or use["cnn"]:
        if encoder is None:
            raise ValueError(f"model {kind.value} needs an entity embedding")
        if encoder.dim != cfg.embed_dim:
            raise ValueError(f"embedding dim {encoder.dim} does not match model embed_dim {cfg.embed_dim}")
    if use["vector"]:
        if kind is ModelKind.DOC2VEC:
            if not encoder.is_document:
                raise ValueError("the doc2vec model needs document vectors")
            vector = np.stack([encoder.document(r.patient_id) for r in recs])
        else:
            if encoder.is_document:
                raise ValueError(f"model {kind.value} needs word-level embeddings, not document vectors")
            vector = np.stack([average_representation(r.entities, encoder.token, encoder.dim) for r in recs])
    if use["cnn"]:
        if encoder.is_document:
            raise ValueError(f"model {kind.value} needs word-level embeddings, not document vectors")
        matrix = np.stack([entity_matrix(r.entities, encoder.token, cfg.k_max, encoder.dim).values
                           for r in recs])
    y = np.array([r.labels[task] for r in recs], dtype=np.float64)
    return Dataset(cohort.ids(), Batch(ts, vector, matrix), y)
