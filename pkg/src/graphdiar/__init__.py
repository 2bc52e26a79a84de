"""Graph-neural refinement of speaker embeddings for spectral-clustering diarization."""

from .clustering import (
    DiarizeConfig,
    count_speakers_eigengap,
    count_speakers_threshold,
    diarize,
    sanitize_affinity,
    spectral_cluster,
)
from .embedding_io import (
    DiarizationHypothesis,
    EmbeddingMatrix,
    SegmentMeta,
    adjacency_from_labels,
    load_embeddings,
    save_embeddings,
    write_rttm,
)
from .evaluation import confusion_der, count_error_sweep, evaluate_corpus, optimal_label_mapping
from .graph import build_session_graph, pairwise_cosine, propagation_matrix
from .losses import LossConfig, bce_pairwise_loss, combined_loss, histogram_loss, nuclear_norm_loss
from .refiner import RefinerModel, gcn_forward, init_model, load_model, save_model
from .simulator import SimConfig, simulate_corpus, simulate_session
from .trainer import TrainConfig, kfold_split, train, tune_count_threshold

__version__ = "0.1.0"

__all__ = [
    "DiarizeConfig",
    "count_speakers_eigengap",
    "count_speakers_threshold",
    "diarize",
    "sanitize_affinity",
    "spectral_cluster",
    "DiarizationHypothesis",
    "EmbeddingMatrix",
    "SegmentMeta",
    "adjacency_from_labels",
    "load_embeddings",
    "save_embeddings",
    "write_rttm",
    "confusion_der",
    "count_error_sweep",
    "evaluate_corpus",
    "optimal_label_mapping",
    "build_session_graph",
    "pairwise_cosine",
    "propagation_matrix",
    "LossConfig",
    "bce_pairwise_loss",
    "combined_loss",
    "histogram_loss",
    "nuclear_norm_loss",
    "RefinerModel",
    "gcn_forward",
    "init_model",
    "load_model",
    "save_model",
    "SimConfig",
    "simulate_corpus",
    "simulate_session",
    "TrainConfig",
    "kfold_split",
    "train",
    "tune_count_threshold",
]
