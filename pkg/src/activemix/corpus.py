"""Sparse document-feature corpora: ingest, splits, and rebalancing.

File formats
------------
DFM file (UTF-8 text)::

    N V
    doc_id<TAB>term<TAB>count
    ...

Terms enter the vocabulary in first-appearance order. When the header
declares more features than the data lines mention (pruned DFMs keep
all-zero columns that a triplet format cannot express), the trailing
vocabulary positions are filled with ``__pad<j>`` placeholder names.
The header N must match the number of distinct doc ids in the file.

Raw texts file: one ``doc_id<TAB>text`` record per line, with tabs,
newlines and backslashes inside the text escaped as ``\\t``, ``\\n``
and ``\\\\``.

Labels file: ``doc_id<TAB>class_index`` lines.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp


class CorpusFormatError(ValueError):
    """An input file violates the documented format."""


def _escape_text(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape_text(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "t":
                out.append("\t")
                i += 2
                continue
            if nxt == "n":
                out.append("\n")
                i += 2
                continue
            if nxt == "\\":
                out.append("\\")
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)


@dataclass(frozen=True)
class Vocabulary:
    """Ordered feature names with a term -> position map."""

    terms: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for pos, term in enumerate(self.terms):
            if term in index:
                raise CorpusFormatError(f"duplicate vocabulary term {term!r}")
            index[term] = pos
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.index

    def position(self, term: str) -> int:
        try:
            return self.index[term]
        except KeyError:
            raise KeyError(f"term {term!r} not in vocabulary") from None

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for term in self.terms:
            h.update(term.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


@dataclass(frozen=True)
class Corpus:
    """Immutable sparse count matrix plus document bookkeeping.

    ``dfm`` is an N x V CSR matrix of non-negative counts; ``lengths``
    holds the row sums n_i. Raw texts cover a subset of doc ids and are
    only needed when humans read documents.
    """

    dfm: sp.csr_matrix
    doc_ids: tuple[str, ...]
    vocabulary: Vocabulary
    raw_texts: Mapping[str, str] = field(default_factory=dict)
    lengths: np.ndarray = field(init=False, compare=False)
    _row_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dfm = sp.csr_matrix(self.dfm)
        dfm.sum_duplicates()
        dfm.eliminate_zeros()
        if dfm.shape != (len(self.doc_ids), len(self.vocabulary)):
            raise ValueError(
                f"dfm shape {dfm.shape} does not match "
                f"{len(self.doc_ids)} docs x {len(self.vocabulary)} terms"
            )
        if dfm.nnz and dfm.data.min() < 0:
            raise ValueError("negative count in document-feature matrix")
        for arr in (dfm.data, dfm.indices, dfm.indptr):
            arr.flags.writeable = False
        object.__setattr__(self, "dfm", dfm)
        lengths = np.asarray(dfm.sum(axis=1)).ravel()
        lengths.flags.writeable = False
        object.__setattr__(self, "lengths", lengths)
        row_of = {}
        for i, doc_id in enumerate(self.doc_ids):
            if doc_id in row_of:
                raise ValueError(f"duplicate doc id {doc_id!r}")
            row_of[doc_id] = i
        object.__setattr__(self, "_row_of", row_of)
        unknown = set(self.raw_texts) - set(row_of)
        if unknown:
            some = ", ".join(sorted(unknown)[:3])
            raise ValueError(f"raw texts reference unknown doc ids: {some}")

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def n_features(self) -> int:
        return len(self.vocabulary)

    def row_of(self, doc_id: str) -> int:
        try:
            return self._row_of[doc_id]
        except KeyError:
            raise KeyError(f"unknown doc id {doc_id!r}") from None

    def text_of(self, doc_id: str) -> str | None:
        self.row_of(doc_id)
        return self.raw_texts.get(doc_id)

    def subset(self, doc_ids: Sequence[str]) -> "Corpus":
        """New corpus containing the given docs, in the given order."""
        rows = [self.row_of(d) for d in doc_ids]
        texts = {d: self.raw_texts[d] for d in doc_ids if d in self.raw_texts}
        return Corpus(
            dfm=self.dfm[rows, :],
            doc_ids=tuple(doc_ids),
            vocabulary=self.vocabulary,
            raw_texts=texts,
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.vocabulary.content_hash().encode())
        for doc_id in self.doc_ids:
            h.update(doc_id.encode("utf-8"))
            h.update(b"\n")
        h.update(np.ascontiguousarray(self.dfm.indptr).tobytes())
        h.update(np.ascontiguousarray(self.dfm.indices).tobytes())
        h.update(np.ascontiguousarray(self.dfm.data).tobytes())
        return h.hexdigest()


def make_corpus(
    counts,
    doc_ids: Sequence[str] | None = None,
    terms: Sequence[str] | None = None,
    raw_texts: Mapping[str, str] | None = None,
) -> Corpus:
    """Build a Corpus from a dense or sparse count array."""
    mat = sp.csr_matrix(np.asarray(counts, dtype=np.float64)) if not sp.issparse(counts) else counts.tocsr()
    n, v = mat.shape
    if doc_ids is None:
        doc_ids = tuple(f"d{i}" for i in range(n))
    if terms is None:
        terms = tuple(f"w{j}" for j in range(v))
    return Corpus(
        dfm=mat.astype(np.float64),
        doc_ids=tuple(doc_ids),
        vocabulary=Vocabulary(tuple(terms)),
        raw_texts=dict(raw_texts or {}),
    )


def load_corpus(dfm_path: str | Path, texts_path: str | Path | None = None) -> Corpus:
    """Load a corpus from a triplet DFM file and an optional texts file.

    Raises CorpusFormatError on malformed lines (with the line number),
    duplicate (doc, term) pairs, or negative counts. Zero counts are
    skipped: the sparse matrix stores only positive entries.
    """
    dfm_path = Path(dfm_path)
    lines = dfm_path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CorpusFormatError(f"{dfm_path}: empty file, expected 'N V' header")
    header = lines[0].split()
    if len(header) != 2:
        raise CorpusFormatError(f"{dfm_path}:1: expected header 'N V', got {lines[0]!r}")
    try:
        n_decl, v_decl = int(header[0]), int(header[1])
    except ValueError:
        raise CorpusFormatError(f"{dfm_path}:1: non-integer header fields {lines[0]!r}") from None
    if n_decl < 0 or v_decl < 0:
        raise CorpusFormatError(f"{dfm_path}:1: negative dimension in header")

    doc_ids: list[str] = []
    doc_pos: dict[str, int] = {}
    terms: list[str] = []
    term_pos: dict[str, int] = {}
    rows: list[int] = []
    cols: list[int] = []
    vals: list[int] = []
    seen: set[tuple[int, int]] = set()

    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CorpusFormatError(
                f"{dfm_path}:{lineno}: expected 'doc_id<TAB>term<TAB>count', got {line!r}"
            )
        doc_id, term, count_str = parts
        try:
            count = int(count_str)
        except ValueError:
            raise CorpusFormatError(
                f"{dfm_path}:{lineno}: count {count_str!r} is not an integer"
            ) from None
        if count < 0:
            raise CorpusFormatError(f"{dfm_path}:{lineno}: negative count {count}")
        if doc_id not in doc_pos:
            doc_pos[doc_id] = len(doc_ids)
            doc_ids.append(doc_id)
        if term not in term_pos:
            term_pos[term] = len(terms)
            terms.append(term)
        key = (doc_pos[doc_id], term_pos[term])
        if key in seen:
            raise CorpusFormatError(
                f"{dfm_path}:{lineno}: duplicate entry for doc {doc_id!r}, term {term!r}"
            )
        seen.add(key)
        if count == 0:
            continue
        rows.append(key[0])
        cols.append(key[1])
        vals.append(count)

    if len(doc_ids) != n_decl:
        raise CorpusFormatError(
            f"{dfm_path}: header declares {n_decl} docs but file contains {len(doc_ids)}"
        )
    if len(terms) > v_decl:
        raise CorpusFormatError(
            f"{dfm_path}: header declares {v_decl} features but file contains {len(terms)}"
        )
    for j in range(len(terms), v_decl):
        pad = f"__pad{j}"
        if pad in term_pos:
            raise CorpusFormatError(f"{dfm_path}: term {pad!r} collides with padding names")
        terms.append(pad)

    mat = sp.csr_matrix(
        (np.asarray(vals, dtype=np.float64), (rows, cols)),
        shape=(n_decl, v_decl),
    )
    raw_texts = read_texts_file(texts_path) if texts_path is not None else {}
    return Corpus(
        dfm=mat,
        doc_ids=tuple(doc_ids),
        vocabulary=Vocabulary(tuple(terms)),
        raw_texts=raw_texts,
    )


def write_corpus(corpus: Corpus, dfm_path: str | Path, texts_path: str | Path | None = None) -> None:
    """Write a corpus back out in the triplet DFM format.

    Zero-count lines register empty docs and never-used terms so the
    file reloads with the same doc ids, term names and counts (the
    reloaded vocabulary order follows first appearance in the file).
    """
    lines = [f"{corpus.n_docs} {corpus.n_features}"]
    coo = corpus.dfm.tocoo()
    order = np.lexsort((coo.col, coo.row))
    seen_docs: set[int] = set()
    seen_terms: set[int] = set()
    for idx in order:
        i, j, c = coo.row[idx], coo.col[idx], coo.data[idx]
        seen_docs.add(int(i))
        seen_terms.add(int(j))
        lines.append(f"{corpus.doc_ids[i]}\t{corpus.vocabulary.terms[j]}\t{int(c)}")
    if corpus.n_features:
        for i in range(corpus.n_docs):
            if i not in seen_docs:
                lines.append(f"{corpus.doc_ids[i]}\t{corpus.vocabulary.terms[0]}\t0")
    if corpus.n_docs:
        for j in range(corpus.n_features):
            if j not in seen_terms and not (j == 0 and 0 not in seen_docs):
                lines.append(f"{corpus.doc_ids[0]}\t{corpus.vocabulary.terms[j]}\t0")
    Path(dfm_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if texts_path is not None:
        recs = [f"{d}\t{_escape_text(t)}" for d, t in corpus.raw_texts.items()]
        Path(texts_path).write_text("\n".join(recs) + ("\n" if recs else ""), encoding="utf-8")


def read_texts_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    texts: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise CorpusFormatError(f"{path}:{lineno}: expected 'doc_id<TAB>text'")
        doc_id, raw = line.split("\t", 1)
        if doc_id in texts:
            raise CorpusFormatError(f"{path}:{lineno}: duplicate text for doc {doc_id!r}")
        texts[doc_id] = _unescape_text(raw)
    return texts


def read_labels_file(path: str | Path) -> dict[str, int]:
    path = Path(path)
    labels: dict[str, int] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusFormatError(f"{path}:{lineno}: expected 'doc_id<TAB>class_index'")
        doc_id, cls_str = parts
        try:
            cls = int(cls_str)
        except ValueError:
            raise CorpusFormatError(
                f"{path}:{lineno}: class index {cls_str!r} is not an integer"
            ) from None
        if cls < 0:
            raise CorpusFormatError(f"{path}:{lineno}: negative class index {cls}")
        if doc_id in labels:
            raise CorpusFormatError(f"{path}:{lineno}: duplicate label for doc {doc_id!r}")
        labels[doc_id] = cls
    return labels


def write_labels_file(path: str | Path, labels: Mapping[str, int]) -> None:
    lines = [f"{d}\t{c}" for d, c in labels.items()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


_TOKEN_RE = re.compile(r"[A-Za-z0-9_']+")


def corpus_from_texts(
    texts: Mapping[str, str],
    min_token_len: int = 1,
) -> Corpus:
    """Unigram-count corpus from raw texts.

    Convenience only: lowercased regex tokens, no stemming or stopword
    handling. Vocabulary order follows first appearance across docs.
    """
    doc_ids = tuple(texts)
    terms: list[str] = []
    term_pos: dict[str, int] = {}
    rows, cols, vals = [], [], []
    for i, doc_id in enumerate(doc_ids):
        counts: dict[int, int] = {}
        for tok in _TOKEN_RE.findall(texts[doc_id].lower()):
            if len(tok) < min_token_len:
                continue
            if tok not in term_pos:
                term_pos[tok] = len(terms)
                terms.append(tok)
            j = term_pos[tok]
            counts[j] = counts.get(j, 0) + 1
        for j, c in counts.items():
            rows.append(i)
            cols.append(j)
            vals.append(c)
    mat = sp.csr_matrix(
        (np.asarray(vals, dtype=np.float64), (rows, cols)),
        shape=(len(doc_ids), len(terms)),
    )
    return Corpus(
        dfm=mat,
        doc_ids=doc_ids,
        vocabulary=Vocabulary(tuple(terms)),
        raw_texts=dict(texts),
    )


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/test doc-id sets produced by a seeded shuffle."""

    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValueError(f"train/test overlap: {sorted(overlap)[:3]}")


def split_corpus(corpus: Corpus, test_fraction: float, seed: int) -> SplitSpec:
    """Hold out round(N * test_fraction) docs for evaluation, seeded."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in [0, 1), got {test_fraction}")
    n = corpus.n_docs
    if test_fraction > 0 and n < 2:
        raise ValueError("need at least 2 documents to split off a test set")
    n_test = int(round(n * test_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    test_rows = np.sort(perm[:n_test])
    test_set = set(test_rows.tolist())
    train_ids = tuple(d for i, d in enumerate(corpus.doc_ids) if i not in test_set)
    test_ids = tuple(corpus.doc_ids[i] for i in test_rows)
    return SplitSpec(train_ids=train_ids, test_ids=test_ids, seed=seed)


def subsample_to_rate(corpus: Corpus, truth, p: float, seed: int) -> Corpus:
    """Subsample to a target positive-class share p.

    Starts from M_pos = floor(N*p), M_neg = N - M_pos; while either
    target exceeds the available pool, decrements M_pos by one and
    recomputes M_neg = round(M_pos * (1-p) / p) so the positive share
    stays at p. Sampling is without replacement; the returned corpus
    keeps the original document order.

    ``truth`` must hold a binary label (0/1) for every document.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    pos_ids, neg_ids = [], []
    for doc_id in corpus.doc_ids:
        cls = truth.class_of(doc_id)
        if cls is None:
            raise ValueError(f"doc {doc_id!r} has no ground-truth label")
        if cls not in (0, 1):
            raise ValueError(f"doc {doc_id!r} has non-binary label {cls}")
        (pos_ids if cls == 1 else neg_ids).append(doc_id)
    n = corpus.n_docs
    n_pos, n_neg = len(pos_ids), len(neg_ids)
    m_pos = math.floor(n * p)
    m_neg = n - m_pos
    while m_pos > n_pos or m_neg > n_neg:
        m_pos -= 1
        if m_pos <= 0:
            raise ValueError(
                f"cannot reach positive share {p} with {n_pos} positive / {n_neg} negative docs"
            )
        m_neg = round(m_pos * (1.0 - p) / p)
    rng = np.random.default_rng(seed)
    keep = set(rng.choice(np.asarray(pos_ids, dtype=object), size=m_pos, replace=False).tolist())
    keep |= set(rng.choice(np.asarray(neg_ids, dtype=object), size=m_neg, replace=False).tolist())
    kept_ids = [d for d in corpus.doc_ids if d in keep]
    return corpus.subset(kept_ids)
