"""Cohort files, label derivation, stratified splits and a synthetic cohort generator.

Three line-oriented files make up a cohort directory, each starting with a
version comment:

``timeseries.csv``
    ``patient_id,hour,<feature names>``; one row per patient-hour, hours 0-23.
``entities.csv``
    ``patient_id,note_id,chart_hour,category,text`` with the text quoted.
``labels.csv``
    ``patient_id,stay_hours,died_in_icu,died_in_hospital``.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .entities import (
    MedicalEntity,
    format_entities,
    load_entities,
    read_lines,
)
from .nn import Rng

log = logging.getLogger(__name__)

TASKS = ("in_hospital_mortality", "in_icu_mortality", "los_gt3", "los_gt7")
TASK_ALIASES = {
    "in_hospital": "in_hospital_mortality",
    "in_icu": "in_icu_mortality",
    "los3": "los_gt3",
    "los7": "los_gt7",
}
TASK_TITLES = {
    "in_hospital_mortality": "In-Hospital Mortality",
    "in_icu_mortality": "In-ICU Mortality",
    "los_gt3": "LOS > 3 Days",
    "los_gt7": "LOS > 7 Days",
}
DEFAULT_PREVALENCE = {
    "in_hospital_mortality": 0.105,
    "in_icu_mortality": 0.07,
    "los_gt3": 0.432,
    "los_gt7": 0.079,
}
HOURS = 24
MIN_STAY_HOURS = 30.0
MAX_STAY_HOURS = 240.0

TS_VERSION = "# entityfusion timeseries v1"
ENTITY_VERSION = "# entityfusion entities v1"
LABEL_VERSION = "# entityfusion labels v1"
FILES = {"timeseries": "timeseries.csv", "entities": "entities.csv", "labels": "labels.csv"}


def resolve_task(name: str) -> str:
    task = TASK_ALIASES.get(name, name)
    if task not in TASKS:
        raise ValueError(f"unknown task {name!r}; expected one of {list(TASKS) + list(TASK_ALIASES)}")
    return task


def derive_labels(stay_hours: float, died_in_icu: bool, died_in_hospital: bool) -> dict[str, int]:
    if not stay_hours >= MIN_STAY_HOURS:
        raise ValueError(f"stay of {stay_hours} h is below the {MIN_STAY_HOURS:g} h inclusion threshold")
    if died_in_icu and not died_in_hospital:
        raise ValueError("died_in_icu without died_in_hospital is inconsistent")
    return {
        "in_hospital_mortality": int(bool(died_in_hospital)),
        "in_icu_mortality": int(bool(died_in_icu)),
        "los_gt3": int(stay_hours > 72.0),
        "los_gt7": int(stay_hours > 168.0),
    }


@dataclass
class PatientRecord:
    patient_id: str
    timeseries: np.ndarray                  # (24, F)
    entities: list[MedicalEntity]
    stay_hours: float
    died_in_icu: bool
    died_in_hospital: bool
    labels: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.labels = derive_labels(self.stay_hours, self.died_in_icu, self.died_in_hospital)


@dataclass
class Cohort:
    records: list[PatientRecord]
    feature_names: list[str]

    def __post_init__(self):
        ids = [r.patient_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate patient ids in cohort")
        F = len(self.feature_names)
        for r in self.records:
            if r.timeseries.shape != (HOURS, F):
                raise ValueError(f"patient {r.patient_id}: time series shape {r.timeseries.shape}, expected {(HOURS, F)}")

    @property
    def feature_count(self) -> int:
        return len(self.feature_names)

    def __len__(self) -> int:
        return len(self.records)

    def labels(self, task: str) -> np.ndarray:
        task = resolve_task(task)
        return np.array([r.labels[task] for r in self.records], dtype=np.int64)

    def ids(self) -> list[str]:
        return [r.patient_id for r in self.records]

    def subset(self, indices: Sequence[int]) -> "Cohort":
        return Cohort([self.records[i] for i in indices], list(self.feature_names))


# ---------------------------------------------------------------------- loading

def _data_rows(lines: list[str]) -> list[tuple[int, str]]:
    return [(i, ln) for i, ln in enumerate(lines, start=1) if ln and not ln.startswith("#")]


def _read_timeseries(source) -> tuple[list[str], dict[str, np.ndarray]]:
    rows = _data_rows(read_lines(source))
    if not rows:
        raise ValueError("time-series file has no header")
    _, header_line = rows[0]
    header = header_line.split(",")
    if header[:2] != ["patient_id", "hour"] or len(header) < 3:
        raise ValueError(f"time-series header must start with patient_id,hour and name features; got {header_line!r}")
    names = header[2:]
    F = len(names)
    grids: dict[str, np.ndarray] = {}
    seen: dict[str, set] = {}
    for lineno, line in rows[1:]:
        parts = line.split(",")
        if len(parts) != F + 2:
            raise ValueError(f"time-series line {lineno}: expected {F + 2} fields, got {len(parts)}")
        pid, hour_s = parts[0], parts[1]
        try:
            hour = int(hour_s)
        except ValueError:
            raise ValueError(f"time-series line {lineno}: hour {hour_s!r} is not an integer") from None
        if hour < 0:
            raise ValueError(f"time-series line {lineno}: negative hour {hour}")
        if hour >= HOURS:
            continue
        values = np.empty(F)
        for j, v in enumerate(parts[2:]):
            try:
                values[j] = float(v)
            except ValueError:
                raise ValueError(f"time-series line {lineno}, column {names[j]!r}: non-numeric value {v!r}") from None
            if not math.isfinite(values[j]):
                raise ValueError(f"time-series line {lineno}, column {names[j]!r}: non-finite value {v!r}")
        hours = seen.setdefault(pid, set())
        if hour in hours:
            raise ValueError(f"time-series line {lineno}: duplicate hour {hour} for patient {pid}")
        hours.add(hour)
        grids.setdefault(pid, np.full((HOURS, F), np.nan))[hour] = values
    for pid, hours in seen.items():
        if len(hours) != HOURS:
            missing = sorted(set(range(HOURS)) - hours)
            raise ValueError(f"patient {pid}: missing hours {missing}")
    return names, grids


def _read_labels(source) -> dict[str, tuple[float, bool, bool]]:
    rows = _data_rows(read_lines(source))
    if not rows or rows[0][1].split(",") != ["patient_id", "stay_hours", "died_in_icu", "died_in_hospital"]:
        raise ValueError("labels header must be patient_id,stay_hours,died_in_icu,died_in_hospital")
    out = {}
    for lineno, line in rows[1:]:
        parts = line.split(",")
        if len(parts) != 4:
            raise ValueError(f"labels line {lineno}: expected 4 fields, got {len(parts)}")
        pid = parts[0]
        if pid in out:
            raise ValueError(f"labels line {lineno}: duplicate patient {pid}")
        try:
            stay = float(parts[1])
            icu, hosp = (_flag(p) for p in parts[2:])
        except ValueError as exc:
            raise ValueError(f"labels line {lineno}: {exc}") from None
        out[pid] = (stay, icu, hosp)
    return out


def _flag(text: str) -> bool:
    if text not in ("0", "1"):
        raise ValueError(f"flag {text!r} is not 0 or 1")
    return text == "1"


def load_cohort(ts_source, entity_source, label_source) -> Cohort:
    """Join the three cohort files.

    Patients missing from the labels file are dropped; patients missing from
    the entities file keep an empty entity list.  Stays shorter than 30 hours
    are excluded.  Record order follows the time-series file.
    """
    names, grids = _read_timeseries(ts_source)
    labels = _read_labels(label_source)
    by_patient: dict[str, list[MedicalEntity]] = {}
    for ent in load_entities(entity_source) if entity_source is not None else []:
        by_patient.setdefault(ent.patient_id, []).append(ent)

    records = []
    no_label = short = 0
    for pid, grid in grids.items():
        if pid not in labels:
            no_label += 1
            continue
        stay, icu, hosp = labels[pid]
        if stay < MIN_STAY_HOURS:
            short += 1
            continue
        records.append(PatientRecord(pid, grid, by_patient.get(pid, []), stay, icu, hosp))
    orphans = len(set(by_patient) - set(grids)) + len(set(labels) - set(grids))
    if no_label or short or orphans:
        log.warning("dropped %d patients without labels, %d with stays under %g h; "
                    "%d ids present only in entity/label files", no_label, short, MIN_STAY_HOURS, orphans)
    return Cohort(records, names)


def load_cohort_dir(path) -> Cohort:
    return load_cohort(
        os.path.join(path, FILES["timeseries"]),
        os.path.join(path, FILES["entities"]),
        os.path.join(path, FILES["labels"]),
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def format_timeseries(cohort: Cohort) -> str:
    lines = [TS_VERSION, ",".join(["patient_id", "hour", *cohort.feature_names])]
    for r in cohort.records:
        for h in range(HOURS):
            lines.append(",".join([r.patient_id, str(h), *(_fmt(v) for v in r.timeseries[h])]))
    return "\n".join(lines) + "\n"


def format_labels(cohort: Cohort) -> str:
    lines = [LABEL_VERSION, "patient_id,stay_hours,died_in_icu,died_in_hospital"]
    for r in cohort.records:
        lines.append(f"{r.patient_id},{_fmt(r.stay_hours)},{int(r.died_in_icu)},{int(r.died_in_hospital)}")
    return "\n".join(lines) + "\n"


def save_cohort(cohort: Cohort, out_dir) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    contents = {
        "timeseries": format_timeseries(cohort),
        "entities": format_entities((e for r in cohort.records for e in r.entities), ENTITY_VERSION),
        "labels": format_labels(cohort),
    }
    paths = {}
    for key, text in contents.items():
        path = os.path.join(out_dir, FILES[key])
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        paths[key] = path
    return paths


# --------------------------------------------------------------------- splitting

@dataclass(frozen=True)
class SplitSpec:
    task: str = "in_hospital_mortality"
    fractions: tuple[float, float, float] = (0.70, 0.10, 0.20)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ValueError(f"need three non-negative fractions, got {self.fractions}")
        if not math.isclose(sum(self.fractions), 1.0, abs_tol=1e-9):
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(cohort: Cohort, spec: SplitSpec) -> tuple[Cohort, Cohort, Cohort]:
    """Per-class shuffle then 70/10/20 partition with largest-remainder rounding."""
    y = cohort.labels(spec.task)
    rng = np.random.default_rng(spec.seed)
    parts: list[list[int]] = [[], [], []]
    for cls in (0, 1):
        members = np.flatnonzero(y == cls)
        if members.size < 3:
            raise ValueError(f"class {cls} of task {spec.task} has {members.size} patients; need at least 3")
        members = members[rng.permutation(members.size)]
        start = 0
        for part, count in zip(parts, largest_remainder(members.size, spec.fractions)):
            part.extend(members[start:start + count].tolist())
            start += count
    return tuple(cohort.subset(sorted(p)) for p in parts)


# -------------------------------------------------------------------- synthesis

LEXICON = {
    "Drug": ["magnesium", "heparin", "insulin", "vancomycin", "furosemide", "metoprolol",
             "acetaminophen", "pantoprazole", "potassium chloride", "lorazepam", "ceftriaxone",
             "docusate", "senna", "aspirin", "atorvastatin", "propofol", "fentanyl", "albuterol"],
    "Strength": ["400mg/5ml", "5mg", "10mg", "20mg", "40mg", "80mg", "100mg", "1g", "500mg",
                 "2mg", "25mcg", "5000 units"],
    "Form": ["suspension", "tablet", "capsule", "solution", "injection", "patch", "inhaler"],
    "Route": ["po", "iv", "sc", "im", "ng", "sl", "pr"],
    "Dosage": ["30ml", "1 tab", "2 tabs", "10ml", "1 puff", "2 puffs", "1 capsule"],
    "Frequency": ["bid", "tid", "qid", "daily", "q6h", "q8h", "prn", "qhs"],
    "Duration": ["next 5 days", "for 7 days", "for 3 days", "x 2 days", "for 10 days"],
}
MARKER_DRUGS = ["norepinephrine", "vasopressin", "epinephrine"]
# infusion context that only accompanies marker drugs
MARKER_CONTEXT = {
    "Strength": ["0.05 mcg/kg/min", "0.1 mcg/kg/min", "0.04 units/min"],
    "Route": ["iv"],
    "Frequency": ["continuous", "titrate"],
}


@dataclass(frozen=True)
class SignalSpec:
    """How strongly each input channel tracks the label of ``task``.

    ``entity_strength`` in [0, 1] moves the probability that a patient
    receives a marker drug from ``marker_base`` towards 1 for positives and 0
    for negatives.  ``ts_strength`` scales a label-dependent upward drift on
    the first ``ts_features`` time-series features.
    """

    task: str = "in_hospital_mortality"
    ts_strength: float = 0.5
    ts_features: int = 3
    entity_strength: float = 0.6
    marker_base: float = 0.3
    notes_mean: float = 3.0
    lines_per_note: tuple[int, int] = (1, 3)

    def __post_init__(self):
        object.__setattr__(self, "task", resolve_task(self.task))
        if not 0.0 <= self.entity_strength <= 1.0:
            raise ValueError(f"entity_strength must lie in [0, 1], got {self.entity_strength}")
        if not 0.0 < self.marker_base < 1.0:
            raise ValueError(f"marker_base must lie in (0, 1), got {self.marker_base}")

    def marker_probability(self, label: int) -> float:
        s, b = self.entity_strength, self.marker_base
        return b + s * (1.0 - b) if label else b * (1.0 - s)


def _exact_positives(n: int, prevalence: float, rng: Rng) -> np.ndarray:
    flags = np.zeros(n, dtype=bool)
    flags[rng.permutation(n)[: int(round(n * prevalence))]] = True
    return flags


def _prescription(rng: Rng, marker: bool = False) -> list[tuple[str, str]]:
    def pick(options):
        return options[rng.integers(len(options))]

    if marker:
        return [("Drug", pick(MARKER_DRUGS))] + [(cat, pick(opts)) for cat, opts in MARKER_CONTEXT.items()]
    line = [("Drug", pick(LEXICON["Drug"]))]
    for cat, p in (("Strength", 0.7), ("Form", 0.4), ("Route", 0.8), ("Dosage", 0.4),
                   ("Frequency", 0.7), ("Duration", 0.15)):
        if rng.random() < p:
            line.append((cat, pick(LEXICON[cat])))
    return line


def synth_cohort(n_patients: int = 1000, n_features: int = 104,
                 prevalence: Optional[dict[str, float]] = None,
                 signal: Optional[SignalSpec] = None,
                 rng: Optional[Rng] = None) -> Cohort:
    """Generate a synthetic ICU cohort.

    Label counts are exact (``round(n * prevalence)`` positives per task) so
    the requested prevalences hold to within one patient.  In-ICU deaths are
    a subset of in-hospital deaths and LOS > 7 a subset of LOS > 3 by
    construction.
    """
    prev = dict(DEFAULT_PREVALENCE)
    for k, v in (prevalence or {}).items():
        prev[resolve_task(k)] = float(v)
    signal = signal or SignalSpec()
    rng = rng if rng is not None else np.random.default_rng(0)
    if n_patients < 20:
        raise ValueError(f"need at least 20 patients, got {n_patients}")
    if n_features < 1:
        raise ValueError("need at least one feature")
    for task, p in prev.items():
        if not 0.0 < p < 1.0:
            raise ValueError(f"prevalence of {task} must lie in (0, 1), got {p}")
        if p * n_patients < 3:
            raise ValueError(f"prevalence {p} of {task} gives fewer than 3 positives among {n_patients} patients")
    if prev["in_icu_mortality"] > prev["in_hospital_mortality"]:
        raise ValueError("in-ICU mortality prevalence cannot exceed in-hospital mortality prevalence")
    if prev["los_gt7"] > prev["los_gt3"]:
        raise ValueError("LOS > 7 prevalence cannot exceed LOS > 3 prevalence")
    if signal.ts_features > n_features:
        raise ValueError(f"ts_features={signal.ts_features} exceeds feature count {n_features}")

    n = n_patients
    # mortality: in-ICU deaths are the first n_icu of a random order of the
    # in-hospital deaths
    order = rng.permutation(n)
    n_hosp = int(round(n * prev["in_hospital_mortality"]))
    n_icu = int(round(n * prev["in_icu_mortality"]))
    died_hosp = np.zeros(n, dtype=bool)
    died_icu = np.zeros(n, dtype=bool)
    died_hosp[order[:n_hosp]] = True
    died_icu[order[:n_icu]] = True

    order = rng.permutation(n)
    n3 = int(round(n * prev["los_gt3"]))
    n7 = int(round(n * prev["los_gt7"]))
    stay = rng.uniform(MIN_STAY_HOURS, 72.0, size=n)
    stay[order[n7:n3]] = rng.uniform(72.0, 168.0, size=n3 - n7)
    stay[order[:n7]] = rng.uniform(168.0, MAX_STAY_HOURS, size=n7)
    # strict thresholds: keep boundary draws off the cut points
    stay = np.round(stay, 2)
    stay[order[n7:n3]] = np.clip(stay[order[n7:n3]], 72.01, 168.0)
    stay[order[:n7]] = np.clip(stay[order[:n7]], 168.01, MAX_STAY_HOURS)

    labels = {
        "in_hospital_mortality": died_hosp,
        "in_icu_mortality": died_icu,
        "los_gt3": stay > 72.0,
        "los_gt7": stay > 168.0,
    }
    y = labels[signal.task].astype(int)

    names = [f"f{j + 1}" for j in range(n_features)]
    offsets = rng.normal(0.0, 1.0, size=n_features)
    phi = 0.8
    hours = (np.arange(HOURS) + 1.0) / HOURS
    records = []
    for i in range(n):
        pid = f"p{i + 1:06d}"
        noise = rng.normal(size=(HOURS, n_features))
        ts = np.empty((HOURS, n_features))
        ts[0] = noise[0]
        for t in range(1, HOURS):
            ts[t] = phi * ts[t - 1] + math.sqrt(1 - phi * phi) * noise[t]
        ts += offsets
        if signal.ts_strength and y[i]:
            ts[:, : signal.ts_features] += signal.ts_strength * hours[:, None]
        ts = np.round(ts, 4)

        n_notes = 1 + rng.poisson(max(signal.notes_mean - 1.0, 0.0))
        note_hours = np.sort(rng.integers(0, HOURS, size=n_notes))
        lines = []
        for k in range(n_notes):
            lo, hi = signal.lines_per_note
            for _ in range(rng.integers(lo, hi + 1)):
                lines.append((k, _prescription(rng)))
        if rng.random() < signal.marker_probability(y[i]):
            lines.append((int(rng.integers(n_notes)), _prescription(rng, marker=True)))
        lines.sort(key=lambda item: item[0])
        entities = []
        offsets_in_note: dict[int, int] = {}
        for k, line in lines:
            for cat, text in line:
                off = offsets_in_note.get(k, 0)
                entities.append(MedicalEntity(text, cat, f"{pid}-n{k + 1}", int(note_hours[k]), off, pid))
                offsets_in_note[k] = off + len(text) + 1
        records.append(PatientRecord(pid, ts, entities, float(stay[i]), bool(died_icu[i]), bool(died_hosp[i])))
    return Cohort(records, names)


def entity_lexicon() -> dict[str, str]:
    """Phrase-to-category map covering every phrase the generator emits."""
    lex = {p: cat for cat, phrases in LEXICON.items() for p in phrases}
    lex.update({m: "Drug" for m in MARKER_DRUGS})
    lex.update({p: cat for cat, phrases in MARKER_CONTEXT.items() for p in phrases})
    return lex


def marker_presence(cohort: Cohort) -> np.ndarray:
    markers = set(MARKER_DRUGS)
    return np.array([any(e.text in markers for e in r.entities) for r in cohort.records])
