import numpy as np
import pytest

from divergescope import align
from divergescope.corpus import SentencePair
from divergescope.embed import (
    EmbeddingTable,
    cosine_score,
    load_embeddings,
    nearest_neighbor,
    save_embeddings,
    sentence_embedding,
    train_bilingual_embeddings,
)
from divergescope.errors import DataError

from conftest import make_cipher_corpus


def _table(entries: dict, dim=2) -> EmbeddingTable:
    return EmbeddingTable(dim, {k: np.asarray(v, dtype=np.float64) for k, v in entries.items()})


# -- loading -------------------------------------------------------------------


def test_load_embeddings_basic(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("2 3\ne:hello 1.0 0.0 0.5\nf:bonjour 0.0 1.0 0.5\n", encoding="utf-8")
    table = load_embeddings(path)
    assert table.dim == 3
    assert len(table.vectors) == 2
    assert np.allclose(table.get("e", "hello"), [1.0, 0.0, 0.5])


def test_load_embeddings_dim_mismatch_names_line(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("1 3\ne:hello 1.0 0.0\n", encoding="utf-8")
    with pytest.raises(DataError, match=":2"):
        load_embeddings(path)


def test_load_embeddings_empty_file(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("", encoding="utf-8")
    with pytest.raises(DataError, match="missing header"):
        load_embeddings(path)


def test_load_embeddings_duplicate_last_wins(tmp_path, caplog):
    path = tmp_path / "vec.txt"
    path.write_text("2 2\ne:a 1.0 0.0\ne:a 0.0 1.0\n", encoding="utf-8")
    table = load_embeddings(path)
    assert np.allclose(table.get("e", "a"), [0.0, 1.0])


def test_save_load_round_trip_six_decimals(tmp_path):
    rng = np.random.default_rng(3)
    table = EmbeddingTable(4, {f"e:w{i}": rng.standard_normal(4) for i in range(5)})
    path = tmp_path / "vec.txt"
    save_embeddings(table, path)
    loaded = load_embeddings(path)
    for key, vec in table.vectors.items():
        assert np.allclose(loaded.vectors[key], vec, atol=5e-7)


# -- sentence embedding / cosine ---------------------------------------------------


def test_sentence_embedding_single_token():
    table = _table({"e:a": [1.0, 2.0]})
    vec, oov = sentence_embedding(("a",), table, "e")
    assert not oov
    assert np.allclose(vec, [1.0, 2.0])


def test_sentence_embedding_opposite_vectors_cancel():
    table = _table({"e:a": [1.0, 2.0], "e:b": [-1.0, -2.0]})
    vec, oov = sentence_embedding(("a", "b"), table, "e")
    assert not oov
    assert np.allclose(vec, [0.0, 0.0])


def test_sentence_embedding_all_oov_flagged():
    table = _table({"e:a": [1.0, 2.0]})
    vec, oov = sentence_embedding(("zzz",), table, "e")
    assert oov
    assert np.allclose(vec, [0.0, 0.0])


def _pair(e, f):
    return SentencePair(0, tuple(e.split()), tuple(f.split()))


def test_cosine_identical_means():
    table = _table({"e:a": [1.0, 1.0], "f:x": [1.0, 1.0]})
    assert cosine_score(_pair("a", "x"), table) == pytest.approx(1.0)


def test_cosine_orthogonal():
    table = _table({"e:a": [1.0, 0.0], "f:x": [0.0, 1.0]})
    assert cosine_score(_pair("a", "x"), table) == pytest.approx(0.0)


def test_cosine_zero_vector_convention():
    table = _table({"e:a": [1.0, 0.0]})
    assert cosine_score(_pair("a", "x"), table) == 0.0


def test_cosine_symmetric_and_scale_invariant():
    rng = np.random.default_rng(0)
    table = _table(
        {"e:a": rng.standard_normal(2), "e:b": rng.standard_normal(2),
         "f:x": rng.standard_normal(2), "f:y": rng.standard_normal(2)}
    )
    score = cosine_score(_pair("a b", "x y"), table)
    swapped = _table(
        {"f:a": table.vectors["e:a"], "f:b": table.vectors["e:b"],
         "e:x": table.vectors["f:x"], "e:y": table.vectors["f:y"]}
    )
    assert cosine_score(_pair("x y", "a b"), swapped) == pytest.approx(score)
    scaled = _table({k: 3.0 * v for k, v in table.vectors.items()})
    assert cosine_score(_pair("a b", "x y"), scaled) == pytest.approx(score)


def test_sentence_embedding_permutation_invariant():
    rng = np.random.default_rng(1)
    table = _table({f"e:w{i}": rng.standard_normal(2) for i in range(4)})
    fwd, _ = sentence_embedding(("w0", "w1", "w2", "w3"), table, "e")
    rev, _ = sentence_embedding(("w3", "w1", "w0", "w2"), table, "e")
    assert np.allclose(fwd, rev)


# -- training -------------------------------------------------------------------


def test_train_validates_parameters():
    pair = SentencePair(0, ("a",), ("x",))
    with pytest.raises(ValueError):
        train_bilingual_embeddings([pair], None, dim=0)
    with pytest.raises(DataError):
        train_bilingual_embeddings([], None, dim=4)


def test_train_monolingual_fallback_warns(caplog):
    import logging

    pairs = [SentencePair(i, ("a", "b"), ("x", "y")) for i in range(3)]
    with caplog.at_level(logging.WARNING):
        table = train_bilingual_embeddings(pairs, None, dim=4, epochs=1)
    assert any("monolingual" in m for m in caplog.messages)
    assert table.dim == 4


def test_train_deterministic_given_seed():
    corpus = make_cipher_corpus(60, vocab_size=12, seed=9)
    alignments = [
        align.Alignment(
            frozenset((k, k) for k in range(len(p.e_tokens))),
            len(p.e_tokens),
            len(p.f_tokens),
        )
        for p in corpus.pairs
    ]
    a = train_bilingual_embeddings(corpus.pairs, alignments, dim=8, epochs=2, seed=5)
    b = train_bilingual_embeddings(corpus.pairs, alignments, dim=8, epochs=2, seed=5)
    assert a.vectors.keys() == b.vectors.keys()
    for key in a.vectors:
        assert np.array_equal(a.vectors[key], b.vectors[key])


def test_train_cipher_nearest_neighbors():
    # Gold alignments are the identity; the learned space must put each source
    # word next to its cipher translation for at least 90% of the vocabulary.
    corpus = make_cipher_corpus(1200, vocab_size=40, noise=0.05, seed=33)
    alignments = [
        align.Alignment(
            frozenset((k, k) for k in range(len(p.e_tokens))),
            len(p.e_tokens),
            len(p.f_tokens),
        )
        for p in corpus.pairs
    ]
    table = train_bilingual_embeddings(corpus.pairs, alignments, dim=24, epochs=5, seed=11)
    good = sum(
        1
        for e_word, f_word in corpus.cipher.items()
        if nearest_neighbor(table, f"e:{e_word}", "f") == f"f:{f_word}"
    )
    assert good >= 0.9 * len(corpus.cipher)
