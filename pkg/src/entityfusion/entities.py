"""Medical entities and the patient-level representations built from them."""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .embeddings import normalize, tokenize

CATEGORIES = ("Drug", "Strength", "Form", "Route", "Dosage", "Frequency", "Duration")
_CATEGORY_LOOKUP = {c.lower(): c for c in CATEGORIES}
WINDOW_HOURS = 24

ENTITY_HEADER = ("patient_id", "note_id", "chart_hour", "category", "text")

Embedder = Callable[[str], Optional[np.ndarray]]


@dataclass(frozen=True)
class MedicalEntity:
    text: str
    category: str
    note_id: str
    chart_hour: int
    offset: int = 0
    patient_id: str = ""

    def sort_key(self):
        return (self.chart_hour, self.note_id, self.offset)


def canonical_category(name: str) -> str:
    try:
        return _CATEGORY_LOOKUP[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown entity category {name!r}") from None


# --------------------------------------------------------------------- tagging

_TOKEN = re.compile(r"\S+")
_STRIP = ".,;:()[]"


def tag_entities_lexicon(note: str, lexicon: dict[str, str], note_id: str = "",
                         chart_hour: int = 0, patient_id: str = "") -> list[MedicalEntity]:
    """Dictionary tagger standing in for a clinical NER model.

    Phrases match on whole tokens, case-insensitively.  Among overlapping
    candidates the longest wins, then the leftmost.
    """
    spans = []
    for m in _TOKEN.finditer(note):
        raw = m.group()
        core = raw.strip(_STRIP)
        if not core:
            continue
        start = m.start() + raw.index(core)
        spans.append((start, start + len(core), core.lower()))
    if not spans:
        return []
    phrases = {" ".join(p.lower().split()): canonical_category(c) for p, c in lexicon.items()}
    max_tokens = max(len(p.split()) for p in phrases) if phrases else 0

    candidates = []
    for i in range(len(spans)):
        for n in range(1, min(max_tokens, len(spans) - i) + 1):
            key = " ".join(s[2] for s in spans[i:i + n])
            if key in phrases:
                candidates.append((spans[i][0], spans[i + n - 1][1], phrases[key]))
    candidates.sort(key=lambda c: (-(c[1] - c[0]), c[0]))

    chosen = []
    for start, end, cat in candidates:
        if all(end <= s or start >= e for s, e, _ in chosen):
            chosen.append((start, end, cat))
    chosen.sort()
    return [
        MedicalEntity(note[s:e], cat, note_id, chart_hour, s, patient_id)
        for s, e, cat in chosen
    ]


# ---------------------------------------------------------------------- files

def read_lines(source) -> list[str]:
    """Lines of a path or an open text stream."""
    if hasattr(source, "read"):
        return source.read().splitlines()
    with open(source, encoding="utf-8", newline="") as fh:
        return fh.read().splitlines()


def load_entities(source) -> list[MedicalEntity]:
    """Read an entity file: ``patient_id,note_id,chart_hour,category,text``.

    Comment lines start with ``#``; the first non-comment line is the header.
    Records outside the first 24 hours are dropped.  An unknown category or a
    missing chart hour rejects the file, naming the record index.
    """
    rows = [ln for ln in read_lines(source) if ln and not ln.startswith("#")]
    if not rows:
        return []
    reader = csv.reader(rows)
    header = next(reader)
    if tuple(h.strip() for h in header) != ENTITY_HEADER:
        raise ValueError(f"entity header {header} does not match {list(ENTITY_HEADER)}")
    out = []
    for idx, rec in enumerate(reader):
        if len(rec) != len(ENTITY_HEADER):
            raise ValueError(f"entity record {idx}: expected {len(ENTITY_HEADER)} fields, got {len(rec)}")
        pid, note_id, hour, cat, text = rec
        try:
            category = canonical_category(cat)
        except ValueError as exc:
            raise ValueError(f"entity record {idx}: {exc}") from None
        if not hour.strip():
            raise ValueError(f"entity record {idx}: missing chart_hour")
        try:
            hour_val = float(hour)
        except ValueError:
            raise ValueError(f"entity record {idx}: chart_hour {hour!r} is not numeric") from None
        if not math.isfinite(hour_val):
            raise ValueError(f"entity record {idx}: chart_hour {hour!r} is not finite")
        chart_hour = math.floor(hour_val)
        if chart_hour < 0 or chart_hour >= WINDOW_HOURS:
            continue
        out.append(MedicalEntity(text, category, note_id, chart_hour, idx, pid))
    return out


def format_entities(entities: Iterable[MedicalEntity], version_line: str) -> str:
    buf = io.StringIO()
    buf.write(version_line + "\n")
    buf.write(",".join(ENTITY_HEADER) + "\n")
    for e in entities:
        for name, value in (("patient_id", e.patient_id), ("note_id", e.note_id)):
            if any(ch in value for ch in ',"\n'):
                raise ValueError(f"{name} {value!r} contains a delimiter")
        text = e.text.replace('"', '""')
        buf.write(f'{e.patient_id},{e.note_id},{e.chart_hour},{e.category},"{text}"\n')
    return buf.getvalue()


# ------------------------------------------------------------- representations

def phrase_vector(text: str, embed: Embedder) -> Optional[np.ndarray]:
    """Mean of the token vectors of a (possibly multi-word) entity phrase."""
    vecs = [v for v in (embed(t) for t in tokenize(text)) if v is not None]
    if not vecs:
        return None
    return np.mean(vecs, axis=0)


def _embedded(entities: Iterable[MedicalEntity], embed: Embedder) -> list[np.ndarray]:
    ordered = sorted(entities, key=MedicalEntity.sort_key)
    return [v for v in (phrase_vector(e.text, embed) for e in ordered) if v is not None]


def average_representation(entities, embed: Embedder, dim: int) -> np.ndarray:
    """Component-wise mean of the entity vectors; zeros when there are none.

    Entities with no vector at all (every token out of vocabulary) are left
    out of the mean.
    """
    vecs = _embedded(entities, embed)
    if not vecs:
        return np.zeros(dim)
    return np.mean(vecs, axis=0)


@dataclass
class EntityMatrix:
    values: np.ndarray     # (K_max, d)
    mask: np.ndarray       # (K_max,) bool
    k: int

    @property
    def k_max(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def entity_matrix(entities, embed: Embedder, k_max: int, dim: int) -> EntityMatrix:
    """Stack entity vectors in chart-time order, zero-padded to ``k_max`` rows.

    Entities beyond ``k_max`` are truncated, keeping the earliest.
    """
    vecs = _embedded(entities, embed)[:k_max]
    values = np.zeros((k_max, dim))
    mask = np.zeros(k_max, dtype=bool)
    if vecs:
        values[:len(vecs)] = vecs
        mask[:len(vecs)] = True
    return EntityMatrix(values, mask, len(vecs))


def entity_only_tokens(notes: Iterable[str], tagger: Callable[[str], list[MedicalEntity]]) -> list[str]:
    """Tokens inside tagged entity spans, notes taken in the given order."""
    tokens: list[str] = []
    for note in notes:
        for ent in sorted(tagger(note), key=lambda e: e.offset):
            tokens.extend(tokenize(ent.text))
    return tokens


def entity_tokens(entities: Iterable[MedicalEntity]) -> list[str]:
    """Token stream of already-extracted entities in chart-time order."""
    tokens: list[str] = []
    for e in sorted(entities, key=MedicalEntity.sort_key):
        tokens.extend(tokenize(e.text))
    return tokens


def entity_phrases(entities: Iterable[MedicalEntity]) -> list[str]:
    return [normalize(e.text) for e in sorted(entities, key=MedicalEntity.sort_key)]
