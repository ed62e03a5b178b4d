"""mintaudit: training-data provenance auditing for image classifiers.

Decides, per candidate sample, whether an audited classifier saw it during
training. A per-class membership test is trained on layer activations of
the audited model over known members and externals, then scored on held-out
candidates; ROC/AUC utilities and reference-attack baselines round out the
toolkit.
"""

from .baselines import (
    BASELINE_METHODS,
    BaselineScore,
    salem_from_probs,
    salem_score,
    song_from_probs,
    song_score,
    yeom_from_probs,
    yeom_score,
)
from .classifier import (
    ARCHITECTURES,
    AuditedModel,
    AuditedModelCheckpoint,
    AuditedModelSpec,
    TrainReport,
    build_model,
    layer_catalog,
    predict,
    train,
)
from .corpus import (
    CORPUS_NAMES,
    Corpus,
    CorpusDescriptor,
    DatasetSplit,
    LabeledImage,
    load_corpus,
    load_corpus_arrays,
    make_split,
    make_synthetic_corpus,
    subsample_corpus,
)
from .embeddings import EmbeddingRecord, EmbeddingSet, extract, extract_set
from .errors import (
    AuditError,
    CatalogError,
    ConfigurationError,
    ConsistencyError,
    DivergenceError,
    EnsembleIncompleteError,
    IngestionError,
    IntegrityError,
    ProtocolError,
    StageError,
    UndefinedMetricError,
)
from .metrics import (
    ClassMetrics,
    MintAuditReport,
    RocCurve,
    accuracy,
    auc_bruteforce_oracle,
    balanced_accuracy,
    best_balanced_accuracy,
    build_audit_report,
    roc_auc,
    summarize_scores,
)
from .mint import (
    MembershipScore,
    MintEnsemble,
    MintModelSpec,
    build_balanced_mint_sets,
    score,
    scores_by_class,
    train_ensemble,
    train_mint,
)
from .pipeline import (
    DATA_ROOT_ENV,
    ExperimentConfig,
    run_audit,
    run_baseline_comparison,
    run_stages,
    run_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AuditError",
    "CatalogError",
    "ConfigurationError",
    "ConsistencyError",
    "DivergenceError",
    "EnsembleIncompleteError",
    "IngestionError",
    "IntegrityError",
    "ProtocolError",
    "StageError",
    "UndefinedMetricError",
    "ARCHITECTURES",
    "AuditedModel",
    "AuditedModelCheckpoint",
    "AuditedModelSpec",
    "TrainReport",
    "build_model",
    "layer_catalog",
    "predict",
    "train",
    "CORPUS_NAMES",
    "Corpus",
    "CorpusDescriptor",
    "DatasetSplit",
    "LabeledImage",
    "load_corpus",
    "load_corpus_arrays",
    "make_split",
    "make_synthetic_corpus",
    "subsample_corpus",
    "EmbeddingRecord",
    "EmbeddingSet",
    "extract",
    "extract_set",
    "ClassMetrics",
    "MintAuditReport",
    "RocCurve",
    "accuracy",
    "auc_bruteforce_oracle",
    "balanced_accuracy",
    "best_balanced_accuracy",
    "build_audit_report",
    "roc_auc",
    "summarize_scores",
    "MembershipScore",
    "MintEnsemble",
    "MintModelSpec",
    "build_balanced_mint_sets",
    "score",
    "scores_by_class",
    "train_ensemble",
    "train_mint",
    "BASELINE_METHODS",
    "BaselineScore",
    "yeom_from_probs",
    "yeom_score",
    "salem_from_probs",
    "salem_score",
    "song_from_probs",
    "song_score",
    "DATA_ROOT_ENV",
    "ExperimentConfig",
    "run_audit",
    "run_baseline_comparison",
    "run_stages",
    "run_sweep",
]
