"""Keyword adjudication: ledger, prior boosts, and candidate proposal.

Accepted keywords raise the word's Dirichlet prior entry by gamma in
every cluster of the accepting class, tightening the prior belief that
the word is generated by that class. Candidates are ranked by how much
more probable a word is under one class's word distribution than under
its strongest competitor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .corpus import Vocabulary
from .model import Hyperparams, LabelStore, ModelParams


class KeywordError(ValueError):
    """Invalid keyword decision or unknown term."""


@dataclass
class KeywordLedger:
    """Accepted/rejected keyword decisions plus the boost settings.

    ``accepted`` maps class index -> set of terms; rejected terms are
    never proposed again. gamma is the prior increment, m the number of
    candidates proposed per class per round.
    """

    gamma: float = 10.0
    m: int = 10
    accepted: dict[int, set[str]] = field(default_factory=dict)
    rejected: set[str] = field(default_factory=set)

    def __post_init__(self):
        if self.gamma <= 0:
            raise KeywordError(f"gamma must be positive, got {self.gamma}")
        if self.m < 1:
            raise KeywordError(f"m must be >= 1, got {self.m}")
        seen: set[str] = set()
        for cls, terms in self.accepted.items():
            dup = seen & set(terms)
            if dup:
                raise KeywordError(f"term(s) {sorted(dup)} accepted for more than one class")
            seen |= set(terms)
        conflict = seen & self.rejected
        if conflict:
            raise KeywordError(f"term(s) {sorted(conflict)} both accepted and rejected")

    def decided(self, term: str) -> bool:
        return term in self.rejected or any(term in s for s in self.accepted.values())

    def decision_of(self, term: str) -> tuple[int | None, bool] | None:
        """(class, accepted) for a decided term, else None."""
        if term in self.rejected:
            return (None, False)
        for cls, terms in self.accepted.items():
            if term in terms:
                return (cls, True)
        return None

    @property
    def n_decided(self) -> int:
        return len(self.rejected) + sum(len(s) for s in self.accepted.values())

    def copy(self) -> "KeywordLedger":
        return KeywordLedger(
            gamma=self.gamma,
            m=self.m,
            accepted={c: set(t) for c, t in self.accepted.items()},
            rejected=set(self.rejected),
        )


def apply_keywords(
    hyper: Hyperparams,
    ledger: KeywordLedger,
    vocabulary: Vocabulary,
    labels: LabelStore,
) -> Hyperparams:
    """Return hyperparams whose beta is boosted by gamma for accepted
    keywords, in every cluster of the accepting class.

    Not idempotent: applying twice adds gamma twice. Callers must apply
    to pristine priors each round.
    """
    if not ledger.accepted:
        return hyper
    beta = np.array(hyper.beta)
    for cls, terms in ledger.accepted.items():
        if not 0 <= cls < labels.n_classes:
            raise KeywordError(f"class index {cls} out of range")
        clusters = labels.clusters_of(cls)
        for term in terms:
            if term not in vocabulary:
                raise KeywordError(f"keyword {term!r} not in vocabulary")
            beta[vocabulary.position(term), clusters] += ledger.gamma
    return hyper.with_beta(beta)


def class_log_word_dists(params: ModelParams, labels: LabelStore) -> np.ndarray:
    """V x K_class log word distributions after collapsing clusters.

    A class owning one cluster keeps that cluster's column; a class
    owning several gets their proportion-weighted mixture.
    """
    v = params.log_eta.shape[0]
    out = np.empty((v, labels.n_classes))
    for cls in range(labels.n_classes):
        ks = labels.clusters_of(cls)
        if len(ks) == 1:
            out[:, cls] = params.log_eta[:, ks[0]]
        else:
            weighted = params.log_pi[ks][None, :] + params.log_eta[:, ks]
            out[:, cls] = logsumexp(weighted, axis=1) - logsumexp(params.log_pi[ks])
    return out


def keyword_scores(params: ModelParams, labels: LabelStore, target_class: int) -> np.ndarray:
    """Log ratio of each word's probability under the target class vs.
    its strongest competitor class."""
    dists = class_log_word_dists(params, labels)
    others = np.delete(dists, target_class, axis=1)
    return dists[:, target_class] - others.max(axis=1)


def propose_candidates(
    params: ModelParams,
    ledger: KeywordLedger,
    target_class: int,
    vocabulary: Vocabulary,
    labels: LabelStore,
) -> list[str]:
    """Top-m undecided terms by descending class-association ratio.

    Ties break by vocabulary position; previously accepted or rejected
    terms are never proposed again. Only terms that actually favor the
    target class (ratio above one) qualify, so the list may hold fewer
    than m terms, or none once the extreme words are exhausted.
    """
    if not 0 <= target_class < labels.n_classes:
        raise KeywordError(f"class index {target_class} out of range")
    scores = keyword_scores(params, labels, target_class)
    order = np.lexsort((np.arange(len(scores)), -scores))
    picked: list[str] = []
    for v in order:
        if scores[v] <= 0:
            break
        term = vocabulary.terms[v]
        if ledger.decided(term):
            continue
        picked.append(term)
        if len(picked) == ledger.m:
            break
    return picked


def record_decisions(
    ledger: KeywordLedger,
    decisions: Sequence[tuple[str, int, bool]],
    vocabulary: Vocabulary,
) -> KeywordLedger:
    """Fold (term, class, accept) decisions into a new ledger.

    Rejects unknown terms, terms decided twice in one call, and
    decisions conflicting with the existing ledger.
    """
    updated = ledger.copy()
    seen: set[str] = set()
    for term, cls, accept in decisions:
        if term not in vocabulary:
            raise KeywordError(f"keyword {term!r} not in vocabulary")
        if term in seen:
            raise KeywordError(f"term {term!r} decided twice in one submission")
        seen.add(term)
        if updated.decided(term):
            raise KeywordError(f"term {term!r} was already decided")
        if accept:
            updated.accepted.setdefault(int(cls), set()).add(term)
        else:
            updated.rejected.add(term)
    return updated


def write_ledger_file(path: str | Path, ledger: KeywordLedger, class_names: Sequence[str]) -> None:
    """Persist decisions as replayable `term<TAB>class_name<TAB>accept|reject` rows."""
    lines = []
    for cls in sorted(ledger.accepted):
        for term in sorted(ledger.accepted[cls]):
            lines.append(f"{term}\t{class_names[cls]}\taccept")
    for term in sorted(ledger.rejected):
        lines.append(f"{term}\t-\treject")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_ledger_file(
    path: str | Path,
    class_names: Sequence[str],
    gamma: float = 10.0,
    m: int = 10,
) -> KeywordLedger:
    name_to_idx = {n: i for i, n in enumerate(class_names)}
    ledger = KeywordLedger(gamma=gamma, m=m)
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[2] not in ("accept", "reject"):
            raise KeywordError(
                f"{path}:{lineno}: expected 'term<TAB>class_name<TAB>accept|reject'"
            )
        term, cls_name, verdict = parts
        if verdict == "accept":
            if cls_name not in name_to_idx:
                raise KeywordError(f"{path}:{lineno}: unknown class name {cls_name!r}")
            if ledger.decided(term):
                raise KeywordError(f"{path}:{lineno}: term {term!r} decided twice")
            ledger.accepted.setdefault(name_to_idx[cls_name], set()).add(term)
        else:
            if ledger.decided(term):
                raise KeywordError(f"{path}:{lineno}: term {term!r} decided twice")
            ledger.rejected.add(term)
    return ledger


def true_keyword_sets(
    reference: ModelParams,
    labels: LabelStore,
    vocabulary: Vocabulary,
    quantile: float = 0.9,
    top_n: int | None = None,
) -> dict[int, set[str]]:
    """Ground-truth keyword sets for simulated adjudication.

    A term is a true keyword for a class when its association ratio
    under a full-label reference fit is at or above the given quantile
    (or, when top_n is set, among the top_n highest)."""
    out: dict[int, set[str]] = {}
    for cls in range(labels.n_classes):
        scores = keyword_scores(reference, labels, cls)
        if top_n is not None:
            order = np.lexsort((np.arange(len(scores)), -scores))
            chosen = order[: min(top_n, len(order))]
        else:
            cut = np.quantile(scores, quantile)
            chosen = np.flatnonzero(scores >= cut)
        out[cls] = {vocabulary.terms[v] for v in chosen}
    return out
