"""docpack: document packing, attention-mask specs, compute accounting, and
structured-recall evaluation for continual pre-training pipelines."""

from .corpus import (
    Corpus,
    CorpusError,
    Document,
    DocumentGroup,
    VocabConfig,
    default_vocab,
    detokenize_fallback,
    load_corpus,
    tokenize_fallback,
)
from .evalharness import (
    EvalScores,
    GenerationParseError,
    RecallGeneration,
    ScoreCounts,
    aggregate,
    normalize,
    parse_generation,
    score_one,
)
from .judgeclient import (
    JudgeClient,
    JudgeConfig,
    JudgeRequest,
    JudgeTransportError,
    JudgeVerdict,
    VerdictCache,
    render_prompt,
)
from .maskgen import MaskSpec, dense_mask, loss_mask, may_attend
from .packer import (
    EpochMode,
    EpochPlan,
    PackedSequence,
    PackingError,
    PackingStrategy,
    SftExample,
    build_sft_example,
    materialize,
    pack_group,
    plan_epoch,
)
from .stats import (
    ConvergenceRecord,
    PlanStats,
    StrategyTable,
    convergence_table_check,
    docs_per_batch,
    plan_stats,
    total_documents,
)

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CorpusError",
    "Document",
    "DocumentGroup",
    "VocabConfig",
    "default_vocab",
    "tokenize_fallback",
    "detokenize_fallback",
    "load_corpus",
    "PackingStrategy",
    "EpochMode",
    "PackedSequence",
    "EpochPlan",
    "SftExample",
    "PackingError",
    "pack_group",
    "materialize",
    "plan_epoch",
    "build_sft_example",
    "MaskSpec",
    "may_attend",
    "dense_mask",
    "loss_mask",
    "PlanStats",
    "ConvergenceRecord",
    "StrategyTable",
    "total_documents",
    "docs_per_batch",
    "plan_stats",
    "convergence_table_check",
    "RecallGeneration",
    "EvalScores",
    "ScoreCounts",
    "GenerationParseError",
    "parse_generation",
    "normalize",
    "score_one",
    "aggregate",
    "JudgeClient",
    "JudgeConfig",
    "JudgeRequest",
    "JudgeVerdict",
    "JudgeTransportError",
    "VerdictCache",
    "render_prompt",
    "__version__",
]
