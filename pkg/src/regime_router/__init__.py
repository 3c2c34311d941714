"""Two-hop QA retrieval with regime routing and relation-sentence fusion."""

from .corpus import Dataset, Passage, Query, load_dataset, save_dataset
from .embedding_store import (
    EmbedProviderConfig,
    EmbeddingClient,
    VectorStore,
    load_vectors,
    passage_key,
    question_key,
    save_vectors,
    text_key,
)
from .experiments import (
    compute_margins,
    mixture_decomposition,
    regime_assignment_eval,
    run_ablations,
    run_knockout,
    run_main_eval,
    run_oracle_analysis,
    synthetic_calibration,
    threshold_sweep,
)
from .linear_model import LinearModel, TrainConfig, cross_fit, load_model, save_model, train
from .router_retrieval import (
    RoutingConfig,
    RoutingDecision,
    build_router_training,
    clip_alpha,
    fuse_scores,
    rank_pool,
    recall_at_k,
    retrieve,
    route,
    self_supervised_label,
)
from .selector import AnnotatedBridge, oracle_label, select, selector_accuracy, train_selector
from .stats import (
    CalibrationFit,
    calibration_fit,
    cantelli_check,
    cohen_kappa,
    kendall_tau,
    mcnemar,
    per_query_auc,
    separation_margin,
)
from .text_analysis import (
    Lexicons,
    assign_regime,
    proper_noun_spans,
    router_features,
    sentence_features,
    split_sentences,
    tokenize,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedBridge",
    "CalibrationFit",
    "Dataset",
    "EmbedProviderConfig",
    "EmbeddingClient",
    "LinearModel",
    "Lexicons",
    "Passage",
    "Query",
    "RoutingConfig",
    "RoutingDecision",
    "TrainConfig",
    "VectorStore",
    "assign_regime",
    "build_router_training",
    "calibration_fit",
    "cantelli_check",
    "clip_alpha",
    "cohen_kappa",
    "compute_margins",
    "cross_fit",
    "fuse_scores",
    "kendall_tau",
    "load_dataset",
    "load_model",
    "load_vectors",
    "mcnemar",
    "mixture_decomposition",
    "oracle_label",
    "passage_key",
    "per_query_auc",
    "proper_noun_spans",
    "question_key",
    "rank_pool",
    "recall_at_k",
    "regime_assignment_eval",
    "retrieve",
    "route",
    "router_features",
    "run_ablations",
    "run_knockout",
    "run_main_eval",
    "run_oracle_analysis",
    "save_dataset",
    "save_model",
    "save_vectors",
    "select",
    "selector_accuracy",
    "self_supervised_label",
    "sentence_features",
    "separation_margin",
    "split_sentences",
    "synthetic_calibration",
    "text_key",
    "threshold_sweep",
    "tokenize",
    "train",
    "train_selector",
]
