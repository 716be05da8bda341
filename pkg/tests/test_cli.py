import numpy as np
import pytest

from entityfusion.cli import main, plan_rows, UsageError
from entityfusion.data import FILES, load_cohort_dir
from entityfusion.embeddings import load_doc_vectors, load_table
from entityfusion.models import ModelKind
from entityfusion.report import read_report

SMALL_MODEL = ["--hidden-dim", "8", "--fc-baseline", "8", "--fc-proposed", "8", "--filters", "2,3,4",
               "--k-max", "16", "--max-epochs", "2", "--seeds", "2", "--batch-size", "16"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cohort = root / "cohort"
    assert main(["synth", "--n", "80", "--features", "4", "--seed", "3", "--out-dir", str(cohort)]) == 0
    vec = root / "w2v.vec"
    assert main(["embed", "--cohort", str(cohort), "--dim", "8", "--epochs", "1", "--out", str(vec)]) == 0
    return root, cohort, vec


def _run(cohort, vec, out, *extra):
    return main(["run", "--cohort", str(cohort), "--task", "los_gt3", "--models", "gru,proposed",
                 "--embeddings", "word2vec", "--word2vec", str(vec), *SMALL_MODEL, "--out", str(out), *extra])


# ----------------------------------------------------------------------- synth

def test_synth_is_deterministic(tmp_path, workspace):
    _, cohort, _ = workspace
    again = tmp_path / "again"
    assert main(["synth", "--n", "80", "--features", "4", "--seed", "3", "--out-dir", str(again)]) == 0
    for name in FILES.values():
        assert (again / name).read_bytes() == (cohort / name).read_bytes()


def test_synth_prevalence_flag(tmp_path):
    out = tmp_path / "c"
    assert main(["synth", "--n", "500", "--features", "3", "--prevalence", "los_gt3=0.432", "--out-dir", str(out)]) == 0
    assert load_cohort_dir(out).labels("los_gt3").sum() == 216


@pytest.mark.parametrize("argv", [
    ["synth", "--n", "50"],
    ["synth", "--n", "5", "--out-dir", "x"],
    ["synth", "--prevalence", "los_gt3", "--out-dir", "x"],
    ["embed", "--method", "glove", "--out", "x"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


# ----------------------------------------------------------------------- embed

def test_embed_dim_flag(tmp_path, workspace):
    _, cohort, _ = workspace
    out = tmp_path / "v.vec"
    assert main(["embed", "--cohort", str(cohort), "--dim", "100", "--epochs", "1", "--out", str(out)]) == 0
    table = load_table(out)
    assert table.dim == 100 and "heparin" in table.entries


def test_embed_pvdm_corpus(tmp_path):
    corpus = tmp_path / "docs.txt"
    corpus.write_text("P1\theparin iv daily\nP2\tinsulin sc nightly\n")
    out = tmp_path / "d.vec"
    assert main(["embed", "--method", "pvdm", "--corpus", str(corpus), "--dim", "6", "--epochs", "2",
                 "--out", str(out)]) == 0
    docs = load_doc_vectors(out)
    assert set(docs.entries) == {"P1", "P2"} and docs["P1"].shape == (6,)


def test_embed_needs_one_source(tmp_path, workspace):
    _, cohort, _ = workspace
    corpus = tmp_path / "c.txt"
    corpus.write_text("a b\n")
    assert main(["embed", "--cohort", str(cohort), "--corpus", str(corpus), "--out", str(tmp_path / "o")]) == 2


def test_embed_missing_file_exits_1(tmp_path):
    assert main(["embed", "--corpus", str(tmp_path / "absent.txt"), "--out", str(tmp_path / "o")]) == 1


# ------------------------------------------------------------------------- run

def test_plan_rows():
    assert plan_rows(["gru", "proposed"], ["word2vec", "fasttext"]) == [
        (ModelKind.GRU_BASELINE, "-"), (ModelKind.PROPOSED, "word2vec"), (ModelKind.PROPOSED, "fasttext")]
    with pytest.raises(UsageError, match="cannot use doc2vec"):
        plan_rows(["proposed"], ["doc2vec"])
    with pytest.raises(UsageError, match="cannot use word2vec"):
        plan_rows(["doc2vec"], ["word2vec"])
    with pytest.raises(UsageError, match="needs --embeddings"):
        plan_rows(["averaged"], [])


def test_run_writes_two_rows_and_repeats_byte_identically(tmp_path, workspace):
    _, cohort, vec = workspace
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(cohort, vec, a) == 0
    assert _run(cohort, vec, b) == 0
    rows = read_report(a / "report.txt")
    assert [(r.model, r.embedding) for r in rows] == [("gru", "-"), ("proposed", "word2vec")]
    assert all(r.seeds == [1, 2] for r in rows)
    for name in ("report.txt", "table.txt", "figure.png"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_rejects_bad_pairing_before_training(tmp_path, workspace, capsys):
    _, cohort, vec = workspace
    code = main(["run", "--cohort", str(cohort), "--models", "proposed", "--embeddings", "doc2vec",
                 "--doc2vec", str(vec), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "cannot use doc2vec" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_run_needs_vector_file(tmp_path, workspace):
    _, cohort, _ = workspace
    assert main(["run", "--cohort", str(cohort), "--models", "averaged", "--embeddings", "concat",
                 "--out", str(tmp_path / "o")]) == 2


def test_run_from_config_file(tmp_path, workspace):
    _, cohort, vec = workspace
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\n" + f"cohort = {cohort}\nword2vec = {vec}\n"
                   "models = gru\ntask = los_gt3\nhidden-dim = 8\nmax-epochs = 1\nseeds = 1\nfigure = none\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_report(out / "report.txt")
    assert [r.seeds for r in rows] == [[1]] and not (out / "figure.png").exists()
    # command-line flags override the file
    out2 = tmp_path / "o2"
    assert main(["run", "--config", str(cfg), "--seeds", "2", "--out", str(out2)]) == 0
    assert read_report(out2 / "report.txt")[0].seeds == [1, 2]


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = blue\n")
    assert main(["run", "--config", str(cfg)]) == 2


# ---------------------------------------------------------------------- report

def test_report_merges_files(tmp_path, workspace):
    root, cohort, vec = workspace
    run_dir = tmp_path / "r"
    assert _run(cohort, vec, run_dir, "--figure", "none") == 0
    table = tmp_path / "t.txt"
    fig = tmp_path / "f.svg"
    assert main(["report", str(run_dir / "report.txt"), str(run_dir / "report.txt"),
                 "--out", str(table), "--figure", str(fig)]) == 0
    text = table.read_text()
    assert text.count("Proposed Model") == 2 and fig.read_bytes().startswith(b"<?xml")
    assert (run_dir / "table.txt").read_text().splitlines()[0] == text.splitlines()[0]


def test_report_malformed_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("# entityfusion report v1\ntask = los_gt3\n[row]\nmodel = gru\n")
    assert main(["report", str(bad), "--out", str(tmp_path / "t.txt")]) == 1
    assert "line 3" in capsys.readouterr().err


def test_cli_values_are_finite(tmp_path, workspace):
    _, cohort, vec = workspace
    assert _run(cohort, vec, tmp_path / "o", "--figure", "none") == 0
    for r in read_report(tmp_path / "o" / "report.txt"):
        assert all(np.isfinite(v) and 0 <= v <= 1 for vals in r.values.values() for v in vals)
