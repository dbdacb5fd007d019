"""activemix: human-in-the-loop text classification.

A semi-supervised multinomial mixture classifier fit by EM over labeled
and downweighted unlabeled documents, wrapped in an active-learning
loop with uncertainty sampling, optional keyword prior boosts, and an
HTTP labeling service.
"""

__version__ = "0.1.0"

from .corpus import (
    Corpus,
    CorpusFormatError,
    SplitSpec,
    Vocabulary,
    corpus_from_texts,
    load_corpus,
    make_corpus,
    read_labels_file,
    split_corpus,
    subsample_to_rate,
    write_corpus,
    write_labels_file,
)
from .model import (
    Hyperparams,
    LabelError,
    LabelStore,
    ModelError,
    ModelParams,
    PosteriorMatrix,
    e_step,
    fit_em,
    init_naive_bayes,
    load_checkpoint,
    log_posterior_objective,
    m_step,
    predict,
    save_checkpoint,
)
from .keywords import (
    KeywordError,
    KeywordLedger,
    apply_keywords,
    propose_candidates,
    record_decisions,
    true_keyword_sets,
)
from .active import (
    ActiveSession,
    Oracle,
    SessionError,
    StoppingRule,
    check_stopping,
    oracle_label,
    run_active_loop,
    select_batch,
)
from .evaluate import (
    ConfusionMatrix,
    MetricRecord,
    confusion,
    evaluate_predictions,
    metrics_from_confusion,
    run_benchmark,
)
from .synthetic import SyntheticData, synthetic_corpus

__all__ = [name for name in dir() if not name.startswith("_")]
