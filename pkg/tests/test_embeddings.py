"""Vector-file IO (byte-exact round trips) and embedding-matrix assembly."""

import logging

import numpy as np
import pytest

from metaphora.data import PAD_TOKEN, UNK_TOKEN, Vocab
from metaphora.embeddings import EmbeddingMatrix, build_matrix, load_vec, save_vec
from metaphora.errors import ConfigError, DataFormatError


@pytest.fixture
def awkward_vectors():
    # Floats chosen to be unfriendly to short decimal forms.
    return {
        "alpha": np.array([0.1, 1.0 / 3.0, -2.5e-17]),
        "beta": np.array([1e300, -0.0, 7.000000000000001]),
        "gamma": np.array([np.pi, -1.0 / 7.0, 4503599627370497.0]),
    }


class TestVecIO:
    def test_load_basic_file(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("2 3\nfoo 1.0 2.0 3.0\nbar -1.0 0.5 0.25\n", encoding="utf-8")
        vectors, dim = load_vec(p)
        assert dim == 3
        np.testing.assert_array_equal(vectors["foo"], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(vectors["bar"], [-1.0, 0.5, 0.25])

    def test_round_trip_is_byte_exact(self, tmp_path, awkward_vectors):
        p1, p2 = tmp_path / "a.vec", tmp_path / "b.vec"
        save_vec(awkward_vectors, p1)
        loaded, dim = load_vec(p1)
        assert dim == 3
        for token, vec in awkward_vectors.items():
            np.testing.assert_array_equal(loaded[token], vec)
        save_vec(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_errors_name_line_one(self, tmp_path):
        for text in ("3\n", "a b\n", "1 2 3\n", "-1 5\n", "2 0\n"):
            p = tmp_path / "bad.vec"
            p.write_text(text, encoding="utf-8")
            with pytest.raises(DataFormatError, match=r":1"):
                load_vec(p)

    def test_wrong_arity_names_offending_line(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("2 2\nfoo 1.0 2.0\nbar 1.0\n", encoding="utf-8")
        with pytest.raises(DataFormatError, match=r":3"):
            load_vec(p)

    def test_non_numeric_value_names_offending_line(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("1 2\nfoo 1.0 two\n", encoding="utf-8")
        with pytest.raises(DataFormatError, match=r":2.*non-numeric"):
            load_vec(p)

    def test_duplicate_token_keeps_last_and_warns(self, tmp_path, caplog):
        p = tmp_path / "v.vec"
        p.write_text("2 1\nfoo 1.0\nfoo 2.0\n", encoding="utf-8")
        with caplog.at_level(logging.WARNING):
            vectors, _ = load_vec(p)
        assert vectors["foo"][0] == 2.0
        assert any("duplicate" in r.message for r in caplog.records)

    def test_count_mismatch_warns_but_loads(self, tmp_path, caplog):
        p = tmp_path / "v.vec"
        p.write_text("5 1\nfoo 1.0\n", encoding="utf-8")
        with caplog.at_level(logging.WARNING):
            vectors, _ = load_vec(p)
        assert len(vectors) == 1
        assert any("promised" in r.message for r in caplog.records)

    def test_empty_table(self, tmp_path):
        p = tmp_path / "v.vec"
        p.write_text("0 4\n", encoding="utf-8")
        vectors, dim = load_vec(p)
        assert vectors == {} and dim == 4

    def test_save_rejects_ragged_vectors(self, tmp_path):
        with pytest.raises(ConfigError):
            save_vec({"a": np.zeros(2), "b": np.zeros(3)}, tmp_path / "x.vec")


def small_vocab():
    return Vocab.from_tokens([PAD_TOKEN, UNK_TOKEN, "found", "missing", "also-found"])


class TestBuildMatrix:
    def test_found_tokens_copy_vectors_exactly(self):
        pretrained = {
            "found": np.array([1.0, 2.0]),
            "also-found": np.array([-1.0, 0.5]),
            "extraneous": np.array([9.0, 9.0]),
        }
        m = build_matrix(small_vocab(), pretrained, dim=2, seed=0)
        np.testing.assert_array_equal(m.values[2], [1.0, 2.0])
        np.testing.assert_array_equal(m.values[4], [-1.0, 0.5])

    def test_missing_and_unk_rows_hug_the_mean(self):
        pretrained = {"found": np.array([1.0, 3.0]), "also-found": np.array([3.0, 5.0]), "x": np.array([2.0, 4.0])}
        mean = np.array([2.0, 4.0])
        m = build_matrix(small_vocab(), pretrained, dim=2, seed=0)
        for row in (1, 3):  # unk and "missing"
            assert np.all(np.abs(m.values[row] - mean) <= 0.01)

    def test_unk_never_copies_even_if_literally_present(self):
        pretrained = {UNK_TOKEN: np.array([50.0, 50.0]), "found": np.array([1.0, 1.0])}
        m = build_matrix(small_vocab(), pretrained, dim=2, seed=0)
        assert not np.array_equal(m.values[1], [50.0, 50.0])

    def test_pad_row_is_zero_in_both_modes(self):
        vocab = small_vocab()
        with_pre = build_matrix(vocab, {"found": np.array([1.0, 1.0])}, dim=2, seed=0)
        without = build_matrix(vocab, None, dim=2, seed=0)
        np.testing.assert_array_equal(with_pre.values[0], [0.0, 0.0])
        np.testing.assert_array_equal(without.values[0], [0.0, 0.0])

    def test_coverage_counts_real_tokens_only(self):
        pretrained = {"found": np.array([1.0, 1.0]), "also-found": np.array([2.0, 2.0])}
        m = build_matrix(small_vocab(), pretrained, dim=2, seed=0)
        assert m.coverage == 2 / 3  # found, also-found of {found, missing, also-found}

    def test_random_init_bounds_and_coverage(self):
        m = build_matrix(small_vocab(), None, dim=16, seed=1)
        assert m.coverage == 0.0
        lim = 1.0 / np.sqrt(16)
        body = m.values[1:]
        assert np.all(np.abs(body) <= lim)
        assert body.std() > 0.0

    def test_deterministic_under_seed(self):
        a = build_matrix(small_vocab(), None, dim=4, seed=7)
        b = build_matrix(small_vocab(), None, dim=4, seed=7)
        np.testing.assert_array_equal(a.values, b.values)

    def test_dimension_validation(self):
        with pytest.raises(ConfigError):
            build_matrix(small_vocab(), None, dim=0, seed=0)
        with pytest.raises(ConfigError, match="pretrained vectors have dim"):
            build_matrix(small_vocab(), {"found": np.zeros(3)}, dim=2, seed=0)

    def test_matrix_wrapper_validates_rank(self):
        with pytest.raises(ConfigError):
            EmbeddingMatrix(np.zeros(5), coverage=1.0)
        m = EmbeddingMatrix(np.zeros((4, 2)), coverage=0.5)
        assert m.vocab_size == 4 and m.dim == 2
