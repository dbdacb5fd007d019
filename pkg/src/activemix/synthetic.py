"""Model-generated corpora with known parameters and labels.

Used by benchmarks and tests in place of the large licensed corpora:
documents are multinomial draws from per-class word distributions built
to have a controllable amount of class-specific signal vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .corpus import Corpus, Vocabulary
from .model import LabelStore, ModelParams


@dataclass(frozen=True)
class SyntheticData:
    corpus: Corpus
    truth: LabelStore
    true_params: ModelParams


def synthetic_word_dists(
    vocab_size: int,
    n_classes: int,
    seed: int,
    signal_fraction: float = 0.5,
    boost: float = 3.0,
) -> np.ndarray:
    """V x K word distributions: independent random bases per class
    plus a disjoint per-class signal block of ``boost``-weight words.

    Independent bases make every word weakly informative, so learning
    needs many labels; the signal words carry equal weight within their
    class, so a flat keyword prior boost points toward the true
    distribution shape.
    """
    rng = np.random.default_rng(seed)
    eta = rng.gamma(shape=1.0, scale=1.0, size=(vocab_size, n_classes)) + 0.05
    block = max(1, int(round(vocab_size * signal_fraction / n_classes)))
    for k in range(n_classes):
        lo = k * block
        hi = min(vocab_size, lo + block)
        eta[lo:hi, k] = boost
    return eta / eta.sum(axis=0, keepdims=True)


def synthetic_corpus(
    n_docs: int,
    vocab_size: int,
    seed: int,
    positive_rate: float | None = None,
    class_proportions: np.ndarray | None = None,
    doc_length: float = 16.0,
    signal_fraction: float = 0.5,
    boost: float = 3.0,
    class_names: tuple[str, ...] | None = None,
) -> SyntheticData:
    """Generate a corpus of multinomial documents with known labels.

    Binary by default: pass ``positive_rate`` for exactly
    round(N * rate) positive docs, or ``class_proportions`` for K >= 2
    classes with fixed per-class counts. Document lengths are Poisson
    with the given mean (length zero is allowed). Fully deterministic
    given the seed.
    """
    if class_proportions is None:
        rate = 0.5 if positive_rate is None else float(positive_rate)
        class_proportions = np.array([1.0 - rate, rate])
    props = np.asarray(class_proportions, dtype=np.float64)
    if props.ndim != 1 or len(props) < 2 or abs(props.sum() - 1.0) > 1e-9:
        raise ValueError("class_proportions must be a probability vector of length >= 2")
    k = len(props)
    if class_names is None:
        class_names = ("negative", "positive") if k == 2 else tuple(f"class{i}" for i in range(k))

    rng = np.random.default_rng(seed)
    counts = np.floor(props * n_docs).astype(int)
    while counts.sum() < n_docs:
        counts[int(np.argmax(props * n_docs - counts))] += 1
    z = np.repeat(np.arange(k), counts)
    rng.shuffle(z)

    eta = synthetic_word_dists(vocab_size, k, seed, signal_fraction, boost)
    lengths = rng.poisson(doc_length, size=n_docs)
    rows_mat = np.empty((n_docs, vocab_size), dtype=np.float64)
    for i in range(n_docs):
        rows_mat[i] = rng.multinomial(lengths[i], eta[:, z[i]])
    dfm = sp.csr_matrix(rows_mat)

    width = len(str(max(n_docs - 1, 1)))
    doc_ids = tuple(f"doc{i:0{width}d}" for i in range(n_docs))
    terms = tuple(f"w{j}" for j in range(vocab_size))
    texts = {
        doc_ids[i]: " ".join(
            " ".join([terms[j]] * int(rows_mat[i, j])) for j in rows_mat[i].nonzero()[0]
        )
        for i in range(n_docs)
    }
    corpus = Corpus(dfm=dfm, doc_ids=doc_ids, vocabulary=Vocabulary(terms), raw_texts=texts)

    truth = (
        LabelStore.binary(class_names)
        if k == 2
        else LabelStore.multiclass(class_names)
    )
    truth.bulk_label(zip(doc_ids, z.tolist()))

    true_params = ModelParams(log_pi=np.log(props), log_eta=np.log(eta))
    return SyntheticData(corpus=corpus, truth=truth, true_params=true_params)
