"""Schema matching via document compilation, embedding retrieval, and
generative top-K ranking."""

from .docgen import (
    MODE_FULL,
    MODE_NAMES_ONLY,
    Corpus,
    Document,
    attribute_to_doc,
    build_corpora,
    table_to_doc,
)
from .embedding import (
    CandidateSet,
    EmbedderSpec,
    EmbeddingCache,
    EmbeddingVector,
    build_candidate_set,
    cosine_similarity,
    embed,
    make_embedder,
    retrieve_top_j,
)
from .errors import (
    AmbiguousTruth,
    ContextOverflow,
    DimensionMismatch,
    InconsistentNA,
    InvalidRequest,
    KTooLarge,
    MissingDocument,
    MissingEmbedding,
    ParseError,
    RematchError,
    RemoteError,
    UnknownAttribute,
    UnknownTargetTable,
    Unparseable,
    ValidationError,
    ZeroVector,
)
from .evaluation import (
    EvalReport,
    accuracy_at_k,
    f1_argmax,
    format_grid_table,
    format_report,
    make_report,
)
from .pipeline import (
    GridReport,
    PipelineConfig,
    PredictionMatrix,
    apply_guidance,
    auto_guidance,
    grid_search,
    run_rematch,
)
from .ranking import (
    Diagnostic,
    MatchPrompt,
    RankedRow,
    RankerSpec,
    build_match_prompt,
    create_topk_mapping,
    make_ranker,
    parse_topk_response,
)
from .schema import (
    Attribute,
    DatasetStats,
    GroundTruth,
    MatchPair,
    Schema,
    Table,
    dataset_stats,
    load_ground_truth,
    load_schema,
    schema_to_dict,
)

__version__ = "0.1.0"

__all__ = [
    "MODE_FULL",
    "MODE_NAMES_ONLY",
    "Corpus",
    "Document",
    "attribute_to_doc",
    "build_corpora",
    "table_to_doc",
    "CandidateSet",
    "EmbedderSpec",
    "EmbeddingCache",
    "EmbeddingVector",
    "build_candidate_set",
    "cosine_similarity",
    "embed",
    "make_embedder",
    "retrieve_top_j",
    "AmbiguousTruth",
    "ContextOverflow",
    "DimensionMismatch",
    "InconsistentNA",
    "InvalidRequest",
    "KTooLarge",
    "MissingDocument",
    "MissingEmbedding",
    "ParseError",
    "RematchError",
    "RemoteError",
    "UnknownAttribute",
    "UnknownTargetTable",
    "Unparseable",
    "ValidationError",
    "ZeroVector",
    "EvalReport",
    "accuracy_at_k",
    "f1_argmax",
    "format_grid_table",
    "format_report",
    "make_report",
    "GridReport",
    "PipelineConfig",
    "PredictionMatrix",
    "apply_guidance",
    "auto_guidance",
    "grid_search",
    "run_rematch",
    "Diagnostic",
    "MatchPrompt",
    "RankedRow",
    "RankerSpec",
    "build_match_prompt",
    "create_topk_mapping",
    "make_ranker",
    "parse_topk_response",
    "Attribute",
    "DatasetStats",
    "GroundTruth",
    "MatchPair",
    "Schema",
    "Table",
    "dataset_stats",
    "load_ground_truth",
    "load_schema",
    "schema_to_dict",
    "__version__",
]
