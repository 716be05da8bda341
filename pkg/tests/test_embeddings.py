import io

import numpy as np
import pytest

from entityfusion import embeddings as emb
from entityfusion.embeddings import (
    EmbeddingTable,
    SubwordTable,
    char_ngrams,
    cosine,
    fnv1a,
    load_table,
    lookup_concat,
    lookup_fasttext,
    lookup_word2vec,
    save_table,
    train_fasttext,
    train_pvdm,
    train_sgns,
)

DRUGS = ["heparin", "insulin", "senna", "furosemide", "metoprolol", "warfarin"]


def _drug_corpus(n=200, seed=0):
    rng = np.random.default_rng(seed)
    return [list(rng.choice(DRUGS, 5)) for _ in range(n)]


# ------------------------------------------------------------------------ files

def test_load_minimal_table():
    t = load_table(io.StringIO("a 1.0 2.0\nb 3.0 4.0\n"))
    assert t.dim == 2 and len(t) == 2
    np.testing.assert_array_equal(t.get("b"), [3.0, 4.0])


def test_load_with_header_and_duplicates():
    t = load_table(io.StringIO("2 3\nx 1 2 3\nX 4 5 6\n"))
    # tokens are lowercased; the later duplicate wins
    assert len(t) == 1
    np.testing.assert_array_equal(t.get("x"), [4.0, 5.0, 6.0])


def test_ragged_line_rejected_with_line_number():
    with pytest.raises(ValueError, match="line 1"):
        load_table(io.StringIO("a 1.0\n"), dim=2)
    with pytest.raises(ValueError, match="line 2"):
        load_table(io.StringIO("a 1.0 2.0\nb 3.0\n"))


@pytest.mark.parametrize("line", ["a 1.0 abc", "a 1.0 nan", "a inf 2.0"])
def test_bad_values_rejected(line):
    with pytest.raises(ValueError, match="line 2"):
        load_table(io.StringIO("z 0 0\n" + line + "\n"))


def test_empty_file_rejected():
    with pytest.raises(ValueError, match="empty"):
        load_table(io.StringIO(""))


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = EmbeddingTable(4, {w: rng.normal(size=4) for w in ("alpha", "beta", "gamma")})
    path = tmp_path / "v.vec"
    save_table(t, path)
    back = load_table(path)
    assert back.entries.keys() == t.entries.keys()
    for w in t.entries:
        np.testing.assert_array_equal(back.get(w), t.get(w))


def test_subword_round_trip(tmp_path):
    ft = train_fasttext(_drug_corpus(40), dim=6, epochs=1, buckets=500, rng=np.random.default_rng(0))
    path = tmp_path / "ft.vec"
    emb.save_subword_table(ft, path)
    back = emb.load_subword_table(path)
    for tok in ["heparin", "heparinoid", "zzz"]:
        np.testing.assert_array_equal(back.lookup(tok), ft.lookup(tok))
    (tmp_path / "ft.vec.ngrams.npz").unlink()
    with pytest.raises(FileNotFoundError):
        emb.load_subword_table(path)


def test_doc_vectors_round_trip_keep_case(tmp_path):
    t = emb.DocVectorTable(2, {"P001": np.array([1.5, -2.0])})
    emb.save_doc_vectors(t, tmp_path / "d.vec")
    back = emb.load_doc_vectors(tmp_path / "d.vec")
    np.testing.assert_array_equal(back["P001"], [1.5, -2.0])


# ---------------------------------------------------------------------- hashing

def test_fnv1a_reference_values():
    # published 32-bit FNV-1a test vectors
    assert fnv1a("") == 0x811C9DC5
    assert fnv1a("a") == 0xE40C292C
    assert fnv1a("foobar") == 0xBF9CF968


def test_char_ngrams_wrap_token():
    grams = char_ngrams("abc")
    assert grams[:3] == ["<ab", "abc", "bc>"]
    assert "<abc>" in grams
    # lengths 3..6 over the five wrapped characters
    assert len(grams) == 3 + 2 + 1


# --------------------------------------------------------------------- lookups

def test_word2vec_lookup_rules():
    t = EmbeddingTable(2, {"heparin": np.array([1.0, 2.0])})
    np.testing.assert_array_equal(lookup_word2vec(t, "heparin"), [1.0, 2.0])
    np.testing.assert_array_equal(lookup_word2vec(t, "HEPARIN"), [1.0, 2.0])
    assert lookup_word2vec(t, "insulin") is None


def _toy_subword(dim=3, buckets=50, seed=0):
    rng = np.random.default_rng(seed)
    return SubwordTable(dim, buckets, rng.normal(size=(buckets, dim)), {"heparin": rng.normal(size=dim)})


def test_fasttext_lookup_is_total_and_compositional():
    ft = _toy_subword()
    v = lookup_fasttext(ft, "neverseen")
    assert v.shape == (3,) and np.all(np.isfinite(v))
    expected = np.mean([ft.ngram_vectors[i] for i in ft.ngram_ids("neverseen")], axis=0)
    np.testing.assert_allclose(v, expected, rtol=1e-15)
    # in-vocabulary words also average in their own vector
    rows = [ft.ngram_vectors[i] for i in ft.ngram_ids("heparin")] + [ft.word_vectors["heparin"]]
    np.testing.assert_allclose(lookup_fasttext(ft, "heparin"), np.mean(rows, axis=0), rtol=1e-15)
    with pytest.raises(ValueError):
        lookup_fasttext(ft, "  ")


def test_single_bucket_collapses_all_oov_tokens():
    ft = _toy_subword(buckets=1)
    a, b = lookup_fasttext(ft, "qwerty"), lookup_fasttext(ft, "zx")
    # means over different n-gram counts may differ in the last bit only
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
    np.testing.assert_allclose(a, ft.ngram_vectors[0], rtol=0, atol=1e-15)


def test_concat_lookup_layout():
    d = 100
    rng = np.random.default_rng(1)
    w2v = EmbeddingTable(d, {"heparin": rng.normal(size=d)})
    ft = SubwordTable(d, 64, rng.normal(size=(64, d)), {})
    both = lookup_concat(w2v, ft, "heparin")
    assert both.shape == (200,)
    np.testing.assert_array_equal(both[:d], lookup_word2vec(w2v, "heparin"))
    np.testing.assert_array_equal(both[d:], lookup_fasttext(ft, "heparin"))
    oov = lookup_concat(w2v, ft, "insulin")
    assert np.all(oov[:d] == 0.0)
    np.testing.assert_array_equal(oov[d:], lookup_fasttext(ft, "insulin"))


def test_concat_dim_mismatch_rejected():
    w2v = EmbeddingTable(2, {"a": np.zeros(2)})
    with pytest.raises(ValueError, match="differs"):
        lookup_concat(w2v, _toy_subword(dim=3), "a")


# -------------------------------------------------------------------- trainers

def test_sgns_planted_pair_across_seeds():
    wins = 0
    for seed in range(10):
        rng = np.random.default_rng(1000 + seed)
        filler = [f"w{i}" for i in range(20)]
        corpus = [["drug", "dose"]] * 300 + [list(rng.choice(filler, 4)) for _ in range(300)]
        t = train_sgns(corpus, dim=8, window=2, epochs=2, rng=np.random.default_rng(seed))
        other = filler[rng.integers(len(filler))]
        wins += cosine(t.get("drug"), t.get("dose")) > cosine(t.get("drug"), t.get(other))
    assert wins >= 9


def test_sgns_zero_epochs_is_initialisation():
    t = train_sgns(_drug_corpus(5), dim=7, epochs=0, rng=np.random.default_rng(0))
    assert t.dim == 7 and set(t.entries) == set(DRUGS)
    for v in t.entries.values():
        assert v.shape == (7,) and np.all(np.isfinite(v)) and np.all(np.abs(v) <= 0.5 / 7)


def test_sgns_deterministic():
    a = train_sgns(_drug_corpus(30), dim=5, epochs=1, rng=np.random.default_rng(3))
    b = train_sgns(_drug_corpus(30), dim=5, epochs=1, rng=np.random.default_rng(3))
    for w in a.entries:
        np.testing.assert_array_equal(a.get(w), b.get(w))


@pytest.mark.parametrize("kwargs, match", [
    (dict(corpus=[]), "empty"),
    (dict(corpus=[[], []]), "empty"),
    (dict(corpus=[["a", "b"]], window=0), "window"),
    (dict(corpus=[["a", "b"]], negatives=0), "negatives"),
])
def test_sgns_rejects_bad_input(kwargs, match):
    with pytest.raises(ValueError, match=match):
        train_sgns(**kwargs)


def test_fasttext_oov_near_trained_token():
    ft = train_fasttext(_drug_corpus(300), dim=16, epochs=3, buckets=5000, rng=np.random.default_rng(0))
    probe = ft.lookup("heparinx")
    assert cosine(probe, ft.lookup("heparin")) > cosine(probe, ft.lookup("insulin"))


def test_fasttext_rejects_bad_buckets_and_empty_corpus():
    with pytest.raises(ValueError, match="buckets"):
        train_fasttext(_drug_corpus(3), buckets=0)
    with pytest.raises(ValueError, match="empty"):
        train_fasttext([])


def test_pvdm_topical_separation():
    wins = 0
    for seed in range(10):
        rng = np.random.default_rng(2000 + seed)
        a = [f"a{i}" for i in range(15)]
        b = [f"b{i}" for i in range(15)]
        d1 = list(rng.choice(a, 60))
        d2 = list(rng.choice(b, 60))
        d1_half = list(rng.choice(d1, 30))
        t = train_pvdm([("d1", d1), ("d2", d2), ("d1h", d1_half)], dim=16, epochs=50,
                       rng=np.random.default_rng(seed))
        wins += cosine(t["d1"], t["d2"]) < cosine(t["d1"], t["d1h"])
    assert wins >= 8


def test_pvdm_single_document_and_determinism():
    docs = {"only": ["heparin", "iv", "daily", "heparin"]}
    a = train_pvdm(docs, dim=6, epochs=3, rng=np.random.default_rng(1))
    b = train_pvdm(docs, dim=6, epochs=3, rng=np.random.default_rng(1))
    assert list(a.entries) == ["only"]
    assert a["only"].shape == (6,) and np.all(np.isfinite(a["only"]))
    np.testing.assert_array_equal(a["only"], b["only"])


def test_pvdm_rejects_empty_and_duplicate_ids():
    with pytest.raises(ValueError, match="empty"):
        train_pvdm([])
    with pytest.raises(ValueError, match="duplicate"):
        train_pvdm([("x", ["a"]), ("x", ["b"])])


def test_cosine_of_zero_vector_is_zero():
    assert cosine(np.zeros(3), np.ones(3)) == 0.0
