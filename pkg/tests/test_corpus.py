import numpy as np
import pytest

from activemix import (
    Corpus,
    CorpusFormatError,
    LabelStore,
    corpus_from_texts,
    load_corpus,
    make_corpus,
    read_labels_file,
    split_corpus,
    subsample_to_rate,
)
from activemix.corpus import (
    Vocabulary,
    _escape_text,
    _unescape_text,
    read_texts_file,
    write_corpus,
    write_labels_file,
)


def write(tmp_path, name, content):
    path = tmp_path / name
    path.write_text(content, encoding="utf-8")
    return path


class TestLoadCorpus:
    def test_triplets(self, tmp_path):
        path = write(tmp_path, "d.tsv", "2 2\nd1\tw1\t2\nd1\tw2\t1\nd2\tw2\t3\n")
        corpus = load_corpus(path)
        assert corpus.n_docs == 2 and corpus.n_features == 2
        assert corpus.lengths.tolist() == [3.0, 3.0]
        assert corpus.vocabulary.terms == ("w1", "w2")
        assert corpus.dfm.toarray().tolist() == [[2.0, 1.0], [0.0, 3.0]]

    def test_empty_with_header_width(self, tmp_path):
        path = write(tmp_path, "d.tsv", "0 4\n")
        corpus = load_corpus(path)
        assert corpus.n_docs == 0 and corpus.n_features == 4

    def test_negative_count_names_line(self, tmp_path):
        path = write(tmp_path, "d.tsv", "1 1\nd1\tw1\t-1\n")
        with pytest.raises(CorpusFormatError, match=":2"):
            load_corpus(path)

    def test_malformed_line_names_line(self, tmp_path):
        path = write(tmp_path, "d.tsv", "1 1\nd1 w1 2\n")
        with pytest.raises(CorpusFormatError, match=":2"):
            load_corpus(path)

    def test_duplicate_pair_rejected(self, tmp_path):
        path = write(tmp_path, "d.tsv", "1 1\nd1\tw1\t2\nd1\tw1\t3\n")
        with pytest.raises(CorpusFormatError, match="duplicate"):
            load_corpus(path)

    def test_non_integer_count(self, tmp_path):
        path = write(tmp_path, "d.tsv", "1 1\nd1\tw1\t2.5\n")
        with pytest.raises(CorpusFormatError, match="integer"):
            load_corpus(path)

    def test_header_doc_count_must_match(self, tmp_path):
        path = write(tmp_path, "d.tsv", "3 1\nd1\tw1\t2\n")
        with pytest.raises(CorpusFormatError, match="declares 3 docs"):
            load_corpus(path)

    def test_zero_count_skipped(self, tmp_path):
        path = write(tmp_path, "d.tsv", "1 2\nd1\tw1\t0\nd1\tw2\t4\n")
        corpus = load_corpus(path)
        assert corpus.dfm.nnz == 1
        assert corpus.lengths.tolist() == [4.0]

    def test_row_sums_equal_lengths(self, tmp_path):
        rng = np.random.default_rng(0)
        counts = rng.poisson(1.0, size=(10, 6))
        corpus = make_corpus(counts)
        assert np.array_equal(corpus.lengths, counts.sum(axis=1).astype(float))

    def test_texts_subset_allowed_unknown_rejected(self, tmp_path):
        dfm = write(tmp_path, "d.tsv", "2 1\nd1\tw1\t1\nd2\tw1\t2\n")
        texts = write(tmp_path, "t.tsv", "d1\thello world\n")
        corpus = load_corpus(dfm, texts)
        assert corpus.text_of("d1") == "hello world"
        assert corpus.text_of("d2") is None
        bad = write(tmp_path, "bad.tsv", "nope\ttext\n")
        with pytest.raises(ValueError, match="unknown doc ids"):
            load_corpus(dfm, bad)

    def test_roundtrip_write_load(self, tmp_path):
        # reload preserves ids, term names and counts; vocabulary order
        # follows first appearance in the file
        corpus = make_corpus([[1, 0, 2], [0, 3, 0], [0, 0, 0]], raw_texts={"d0": "a\tb\nc"})
        dfm_path = tmp_path / "out.tsv"
        texts_path = tmp_path / "texts.tsv"
        write_corpus(corpus, dfm_path, texts_path)
        again = load_corpus(dfm_path, texts_path)
        assert again.doc_ids == corpus.doc_ids
        assert set(again.vocabulary.terms) == set(corpus.vocabulary.terms)
        for i, doc in enumerate(corpus.doc_ids):
            for j, term in enumerate(corpus.vocabulary.terms):
                orig = corpus.dfm[i, j]
                back = again.dfm[again.row_of(doc), again.vocabulary.position(term)]
                assert orig == back
        assert again.text_of("d0") == "a\tb\nc"


class TestTextEscaping:
    def test_roundtrip(self):
        for s in ["plain", "tab\there", "nl\nthere", "back\\slash", "\\t literal"]:
            assert _unescape_text(_escape_text(s)) == s


class TestVocabulary:
    def test_unique_positions(self):
        vocab = Vocabulary(("a", "b", "c"))
        assert [vocab.position(t) for t in vocab.terms] == [0, 1, 2]
        with pytest.raises(CorpusFormatError):
            Vocabulary(("a", "a"))


class TestSubset:
    def test_order_and_content(self):
        corpus = make_corpus([[1, 0], [2, 2], [0, 3]])
        sub = corpus.subset(["d2", "d0"])
        assert sub.doc_ids == ("d2", "d0")
        assert sub.dfm.toarray().tolist() == [[0.0, 3.0], [1.0, 0.0]]
        assert sub.vocabulary is corpus.vocabulary


class TestSplit:
    def test_deterministic(self):
        corpus = make_corpus(np.ones((10, 2)))
        a = split_corpus(corpus, 0.2, seed=7)
        b = split_corpus(corpus, 0.2, seed=7)
        assert a.test_ids == b.test_ids and len(a.test_ids) == 2
        c = split_corpus(corpus, 0.2, seed=8)
        assert set(a.train_ids) | set(a.test_ids) == set(corpus.doc_ids)
        assert not set(a.train_ids) & set(a.test_ids)
        assert c.seed == 8

    def test_zero_fraction(self):
        corpus = make_corpus(np.ones((5, 2)))
        spec = split_corpus(corpus, 0.0, seed=1)
        assert spec.test_ids == () and len(spec.train_ids) == 5

    def test_rounding(self):
        corpus = make_corpus(np.ones((5, 2)))
        assert len(split_corpus(corpus, 0.2, seed=0).test_ids) == 1


class TestSubsample:
    @staticmethod
    def truth_for(corpus, positives):
        store = LabelStore.binary()
        for d in corpus.doc_ids:
            store.label(d, 1 if d in positives else 0)
        return store

    def test_si_decrement_trace(self):
        # N=100, N_pos=16, p=0.05: floor(5) -> M_neg 95 > 84 -> M_pos 4, M_neg 76
        corpus = make_corpus(np.ones((100, 2)))
        truth = self.truth_for(corpus, set(corpus.doc_ids[:16]))
        out = subsample_to_rate(corpus, truth, 0.05, seed=0)
        assert out.n_docs == 80
        n_pos = sum(truth.class_of(d) for d in out.doc_ids)
        assert n_pos == 4

    def test_already_feasible(self):
        corpus = make_corpus(np.ones((100, 2)))
        truth = self.truth_for(corpus, set(corpus.doc_ids[:50]))
        out = subsample_to_rate(corpus, truth, 0.5, seed=0)
        assert out.n_docs == 100
        assert sum(truth.class_of(d) for d in out.doc_ids) == 50

    def test_share_within_one_over_n(self):
        rng = np.random.default_rng(3)
        for p in (0.1, 0.25, 0.4):
            corpus = make_corpus(np.ones((120, 2)))
            positives = set(np.array(corpus.doc_ids)[rng.random(120) < 0.5].tolist())
            truth = self.truth_for(corpus, positives)
            out = subsample_to_rate(corpus, truth, p, seed=5)
            share = sum(truth.class_of(d) for d in out.doc_ids) / out.n_docs
            assert abs(share - p) <= 1.0 / out.n_docs

    def test_infeasible_errors(self):
        corpus = make_corpus(np.ones((10, 2)))
        truth = self.truth_for(corpus, set())
        with pytest.raises(ValueError, match="cannot reach"):
            subsample_to_rate(corpus, truth, 0.5, seed=0)

    def test_deterministic(self):
        corpus = make_corpus(np.ones((60, 2)))
        truth = self.truth_for(corpus, set(corpus.doc_ids[:20]))
        a = subsample_to_rate(corpus, truth, 0.2, seed=11)
        b = subsample_to_rate(corpus, truth, 0.2, seed=11)
        assert a.doc_ids == b.doc_ids


class TestLabelsFile:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "labels.tsv"
        write_labels_file(path, {"a": 0, "b": 1})
        assert read_labels_file(path) == {"a": 0, "b": 1}

    def test_bad_class(self, tmp_path):
        path = write(tmp_path, "l.tsv", "a\tx\n")
        with pytest.raises(CorpusFormatError, match="integer"):
            read_labels_file(path)


class TestTokenizer:
    def test_counts(self):
        corpus = corpus_from_texts({"d1": "the cat the dog", "d2": "dog!"})
        row = corpus.dfm.toarray()
        the, cat, dog = (corpus.vocabulary.position(t) for t in ("the", "cat", "dog"))
        assert row[0][the] == 2 and row[0][cat] == 1 and row[1][dog] == 1

    def test_min_token_len(self):
        corpus = corpus_from_texts({"d1": "a bb ccc"}, min_token_len=2)
        assert set(corpus.vocabulary.terms) == {"bb", "ccc"}
