"""Command-line driver: ``synth``, ``embed``, ``run`` and ``report``.

Exit codes: 0 success, 2 usage error, 1 runtime failure.  Diagnostics go to
stderr; results are written to files only.  Every subcommand accepts
``--config FILE`` with ``key = value`` lines (keys are flag names); flags
given on the command line win.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import embeddings as emb
from .data import (
    TASKS,
    TASK_ALIASES,
    SignalSpec,
    SplitSpec,
    load_cohort_dir,
    resolve_task,
    save_cohort,
    stratified_split,
    synth_cohort,
)
from .entities import entity_tokens
from .features import (
    EMBEDDINGS,
    TimeSeriesScaler,
    build_dataset,
    concat_encoder,
    doc2vec_encoder,
    fasttext_encoder,
    word2vec_encoder,
)
from .models import ModelConfig, ModelKind
from .report import read_report, render_figure, render_table, write_report
from .training import TrainSpec, run_protocol

log = logging.getLogger("entityfusion")

REPORT_FILE = "report.txt"
TABLE_FILE = "table.txt"
FIGURE_FILE = "figure"
WORD_LEVEL = ("word2vec", "fasttext", "concat")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- flag helpers

def _csv(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in _csv(text))


def _seeds(text: str) -> tuple[int, ...]:
    """``3`` means seeds 1..3; ``4,7,9`` lists them."""
    text = text.strip()
    if "," in text:
        return _ints(text)
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"need at least one seed, got {n}")
    return tuple(range(1, n + 1))


def _prevalence(text: str) -> tuple[str, float]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected task=value, got {text!r}")
    task, value = text.split("=", 1)
    try:
        return resolve_task(task.strip()), float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str], config: dict[str, str]):
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config", "command")}
    defaults = {}
    for key, value in config.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r}")
        action = actions[key]
        try:
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = _bool(value)
            elif isinstance(action, argparse._AppendAction):
                defaults[key] = [action.type(v) for v in _csv(value)]
            else:
                converted = action.type(value) if action.type else value
                if action.choices is not None and converted not in action.choices:
                    raise ValueError(f"{converted!r} is not one of {list(action.choices)}")
                defaults[key] = converted
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from None
    parser.set_defaults(**defaults)


def _need(args, *names):
    for name in names:
        if getattr(args, name) in (None, ""):
            raise UsageError(f"--{name.replace('_', '-')} is required")


# ----------------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    _need(args, "out_dir")
    if args.n < 20:
        raise UsageError(f"--n must be at least 20, got {args.n}")
    signal = SignalSpec(task=args.signal_task, ts_strength=args.ts_strength,
                        ts_features=args.ts_features, entity_strength=args.entity_strength)
    prevalence = dict(args.prevalence or [])
    cohort = synth_cohort(args.n, args.features, prevalence, signal, np.random.default_rng(args.seed))
    paths = save_cohort(cohort, args.out_dir)
    log.info("wrote %d patients to %s", len(cohort), ", ".join(paths.values()))
    return 0


# ----------------------------------------------------------------------- embed

_EMBED_DEFAULTS = {"sgns": (5, 0.025), "fasttext": (5, 0.05), "pvdm": (20, 0.025)}


def _read_corpus(args) -> list[tuple[str, list[str]]]:
    if args.cohort:
        cohort = load_cohort_dir(args.cohort)
        return [(r.patient_id, entity_tokens(r.entities)) for r in cohort.records]
    docs = []
    with open(args.corpus, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if args.method == "pvdm":
                if "\t" not in line:
                    raise ValueError(f"{args.corpus}:{lineno}: expected doc_id<TAB>text")
                doc_id, text = line.split("\t", 1)
                docs.append((doc_id.strip(), emb.tokenize(text)))
            else:
                docs.append((str(lineno), emb.tokenize(line)))
    return docs


def cmd_embed(args) -> int:
    _need(args, "out")
    if bool(args.cohort) == bool(args.corpus):
        raise UsageError("give exactly one of --cohort or --corpus")
    if args.dim < 1 or args.window < 1 or args.negatives < 1:
        raise UsageError("--dim, --window and --negatives must be positive")
    epochs, lr = _EMBED_DEFAULTS[args.method]
    epochs = args.epochs if args.epochs is not None else epochs
    lr = args.lr if args.lr is not None else lr
    docs = _read_corpus(args)
    rng = np.random.default_rng(args.seed)
    kw = dict(dim=args.dim, window=args.window, negatives=args.negatives, epochs=epochs, lr=lr, rng=rng)
    if args.method == "sgns":
        emb.save_table(emb.train_sgns([t for _, t in docs], **kw), args.out)
    elif args.method == "fasttext":
        table = emb.train_fasttext([t for _, t in docs], buckets=args.buckets, **kw)
        emb.save_subword_table(table, args.out)
    else:
        emb.save_doc_vectors(emb.train_pvdm(docs, **kw), args.out)
    log.info("wrote %s vectors to %s", args.method, args.out)
    return 0


# ------------------------------------------------------------------------- run

def plan_rows(models: Sequence[str], embeddings: Sequence[str]) -> list[tuple[ModelKind, str]]:
    """Expand models x embeddings into report rows, rejecting invalid pairings."""
    kinds = []
    for name in models:
        try:
            kinds.append(ModelKind.parse(name))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    for e in embeddings:
        if e not in EMBEDDINGS:
            raise UsageError(f"unknown embedding {e!r}; expected one of {list(EMBEDDINGS)}")
    rows = []
    for kind in dict.fromkeys(kinds):
        if kind is ModelKind.GRU_BASELINE:
            rows.append((kind, "-"))
            continue
        if not embeddings:
            raise UsageError(f"model {kind.value} needs --embeddings")
        for e in dict.fromkeys(embeddings):
            if (kind is ModelKind.DOC2VEC) != (e == "doc2vec"):
                allowed = "doc2vec" if kind is ModelKind.DOC2VEC else ", ".join(WORD_LEVEL)
                raise UsageError(f"model {kind.value} cannot use {e} embeddings (allowed: {allowed})")
            rows.append((kind, e))
    if not rows:
        raise UsageError("no models requested")
    return rows


def _vector_files(rows, args) -> dict[str, list[str]]:
    needed = {"word2vec": ["word2vec"], "fasttext": ["fasttext"],
              "concat": ["word2vec", "fasttext"], "doc2vec": ["doc2vec"]}
    out = {}
    for _, e in rows:
        if e == "-":
            continue
        for flag in needed[e]:
            if not getattr(args, flag):
                raise UsageError(f"{e} embeddings need --{flag}")
        out[e] = needed[e]
    return out


def _encoders(embeddings, args) -> dict:
    cache = {}

    def table(flag):
        if flag not in cache:
            path = getattr(args, flag)
            if flag == "word2vec":
                cache[flag] = emb.load_table(path)
            elif flag == "fasttext":
                cache[flag] = emb.load_subword_table(path)
            else:
                cache[flag] = emb.load_doc_vectors(path)
        return cache[flag]

    out = {}
    for e in embeddings:
        if e == "word2vec":
            out[e] = word2vec_encoder(table("word2vec"))
        elif e == "fasttext":
            out[e] = fasttext_encoder(table("fasttext"))
        elif e == "concat":
            out[e] = concat_encoder(table("word2vec"), table("fasttext"))
        else:
            out[e] = doc2vec_encoder(table("doc2vec"))
    return out


def cmd_run(args) -> int:
    _need(args, "cohort", "out", "models")
    try:
        task = resolve_task(args.task)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = plan_rows(_csv(args.models), _csv(args.embeddings or ""))
    files = _vector_files(rows, args)
    try:
        # a patience longer than the run can never fire, so cap it
        patience = min(args.patience, args.max_epochs) if args.patience else None
        spec = TrainSpec(max_epochs=args.max_epochs, patience=patience,
                         batch_size=args.batch_size, seeds=args.seeds, l2_scale=args.l2,
                         lr=args.lr, threshold=args.threshold)
        base = ModelConfig(hidden_dim=args.hidden_dim, fc_dim_baseline=args.fc_baseline,
                           fc_dim_proposed=args.fc_proposed, conv_filters=args.filters,
                           kernel_size=args.kernel_size, dropout=args.dropout, k_max=args.k_max,
                           entities_only_mode=args.entities_mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    cohort = load_cohort_dir(args.cohort)
    encoders = _encoders(files, args)
    train_c, val_c, test_c = stratified_split(cohort, SplitSpec(task, seed=args.split_seed))
    scaler = TimeSeriesScaler.fit(train_c)
    reports = []
    for kind, e in rows:
        encoder = encoders.get(e)
        dims = dict(input_dim=cohort.feature_count)
        if encoder is not None:
            dims["embed_dim"] = encoder.dim
        cfg = ModelConfig(**{**base.to_dict(), **dims})
        split = [build_dataset(c, task, kind, cfg, encoder, scaler) for c in (train_c, val_c, test_c)]
        log.info("training %s (%s) on %d/%d/%d patients", kind.value, e, *(len(s) for s in split))
        reports.append(run_protocol(kind, cfg, spec, split, task, embedding=e))

    os.makedirs(args.out, exist_ok=True)
    write_report(reports, os.path.join(args.out, REPORT_FILE))
    with open(os.path.join(args.out, TABLE_FILE), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_table(reports))
    if args.figure != "none":
        render_figure(reports, os.path.join(args.out, f"{FIGURE_FILE}.{args.figure}"))
    log.info("wrote report to %s", args.out)
    return 0


# ---------------------------------------------------------------------- report

def cmd_report(args) -> int:
    _need(args, "out")
    reports = []
    for path in args.reports:
        reports.extend(read_report(path))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_table(reports))
    if args.figure:
        render_figure(reports, args.figure)
    return 0


# ---------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entityfusion", description=__doc__.splitlines()[0].replace("``", ""))
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    tasks = list(TASKS) + list(TASK_ALIASES)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--config")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--features", type=int, default=104)
    p.add_argument("--prevalence", type=_prevalence, action="append", metavar="TASK=P")
    p.add_argument("--signal-task", default="in_hospital_mortality", choices=tasks)
    p.add_argument("--ts-strength", type=float, default=0.5)
    p.add_argument("--ts-features", type=int, default=3)
    p.add_argument("--entity-strength", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed", help="train word, subword or document vectors")
    p.add_argument("--config")
    p.add_argument("--method", choices=list(_EMBED_DEFAULTS), default="sgns")
    p.add_argument("--cohort", help="cohort directory; its entity tokens form the corpus")
    p.add_argument("--corpus", help="text file, one document per line (pvdm: doc_id<TAB>text)")
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--buckets", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("run", help="train and evaluate a model/embedding matrix")
    p.add_argument("--config")
    p.add_argument("--cohort")
    p.add_argument("--task", default="in_hospital_mortality")
    p.add_argument("--models", help="comma list of " + ", ".join(k.value for k in ModelKind))
    p.add_argument("--embeddings", help="comma list of " + ", ".join(EMBEDDINGS))
    p.add_argument("--word2vec")
    p.add_argument("--fasttext")
    p.add_argument("--doc2vec")
    p.add_argument("--seeds", type=_seeds, default=tuple(range(1, 11)), help="count or comma list")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5, help="0 disables early stopping")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--l2", type=float, default=0.01)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--hidden-dim", type=int, default=256)
    p.add_argument("--fc-baseline", type=int, default=256)
    p.add_argument("--fc-proposed", type=int, default=512)
    p.add_argument("--filters", type=_ints, default=(32, 64, 96))
    p.add_argument("--kernel-size", type=int, default=3)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--k-max", type=int, default=128)
    p.add_argument("--entities-mode", choices=["cnn", "average"], default="cnn")
    p.add_argument("--figure", choices=["png", "svg", "pdf", "none"], default="png")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render report files as a comparison table")
    p.add_argument("--config")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", help="table file")
    p.add_argument("--figure", help="optional figure path (.png, .svg or .pdf)")
    p.set_defaults(func=cmd_report)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            _apply_config(_subparser(parser, args.command), argv, read_config(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"entityfusion {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"entityfusion {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
