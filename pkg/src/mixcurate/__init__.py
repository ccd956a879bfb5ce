"""mixcurate: streaming annotation, profiling, and curation of SFT corpora.

The pipeline: annotate conversations with an LLM judge (task category,
input quality, difficulty, language, safety, reward), salvage the judge's
noisy JSON, profile the annotated corpus, and curate a quality-based,
task-aware training mixture.
"""

__version__ = "0.1.0"

from .corpus import (
    AnnotatedSample,
    Annotation,
    Conversation,
    CorpusRecordError,
    DeltaReward,
    JudgeReward,
    Message,
    Sample,
    classify_turn_type,
    count_tokens,
    emit_corpus,
    load_annotated_corpus,
    load_corpus,
    serialize_conversation,
)
from .judge import (
    AnnotationFailure,
    Annotator,
    EndpointSet,
    JudgeEndpoint,
    render_prompt,
)
from .recipe import (
    CurationConfig,
    CurationResult,
    RecipeError,
    SelectionTrace,
    curate,
    merge_mixtures,
    stratified_sample,
)
from .salvage import SalvageContext, SalvageOutcome, salvage
from .stats import (
    MixtureReport,
    QuantileThresholds,
    TokenBins,
    build_report,
    compute_quantiles,
    diff_reports,
    profile_corpus,
)

__all__ = [
    "AnnotatedSample",
    "Annotation",
    "AnnotationFailure",
    "Annotator",
    "Conversation",
    "CorpusRecordError",
    "CurationConfig",
    "CurationResult",
    "DeltaReward",
    "EndpointSet",
    "JudgeEndpoint",
    "JudgeReward",
    "Message",
    "MixtureReport",
    "QuantileThresholds",
    "RecipeError",
    "Sample",
    "SalvageContext",
    "SalvageOutcome",
    "SelectionTrace",
    "TokenBins",
    "__version__",
    "build_report",
    "classify_turn_type",
    "compute_quantiles",
    "count_tokens",
    "curate",
    "diff_reports",
    "emit_corpus",
    "load_annotated_corpus",
    "load_corpus",
    "merge_mixtures",
    "profile_corpus",
    "render_prompt",
    "salvage",
    "serialize_conversation",
    "stratified_sample",
]
