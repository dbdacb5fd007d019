import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from activemix import Hyperparams, LabelStore, make_corpus


@pytest.fixture
def tiny_corpus():
    """Two docs, two terms: the hand-worked example corpus."""
    return make_corpus([[3, 1], [0, 2]])


@pytest.fixture
def tiny_labels():
    store = LabelStore.binary()
    store.label("d0", 1)
    store.label("d1", 0)
    return store


def random_instance(rng, mode, n_max=50, v_max=20, k_choices=(2, 3, 5), lam_choices=(0.0, 0.001, 1.0)):
    """A random small corpus + labels + hyperparams for property tests."""
    if mode == "binary":
        k = 2
    elif mode == "multi_cluster_binary":
        k = int(rng.choice([c for c in k_choices if c >= 3]))
    else:
        k = int(rng.choice(k_choices))
    n = int(rng.integers(max(4, k + 1), n_max + 1))
    v = int(rng.integers(2, v_max + 1))
    counts = rng.poisson(0.8, size=(n, v)).astype(float)
    k_star = int(rng.integers(0, k)) if mode == "multi_cluster_binary" else None
    store = LabelStore.for_mode(mode, k, k_star)
    n_classes = store.n_classes
    doc_ids = tuple(f"d{i}" for i in range(n))
    # guarantee one labeled doc per class, then sprinkle more
    for c in range(n_classes):
        store.label(doc_ids[c], c)
    for i in range(n_classes, n):
        if rng.random() < 0.35:
            store.label(doc_ids[i], int(rng.integers(0, n_classes)))
    lam = float(rng.choice(lam_choices))
    beta = 1.0 + rng.uniform(0.1, 1.5, size=(v, k))
    hyper = Hyperparams.defaults(v, mode=mode, n_clusters=k, lam=lam, beta=2.0, k_star=k_star).with_beta(beta)
    corpus = make_corpus(counts, doc_ids=doc_ids)
    return corpus, store, hyper


def row_class_list(store, corpus):
    """row_class in oracle form: class index or None per row."""
    return [store.class_of(d) for d in corpus.doc_ids]


def class_clusters_map(store):
    return {c: list(store.clusters_of(c)) for c in range(store.n_classes)}
