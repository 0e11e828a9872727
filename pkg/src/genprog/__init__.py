"""Attributed generation engine: plan a program of text operations over
source sentences, execute it with sentence-level citations, refine
unfaithful steps, and evaluate attribution quality."""

from .backends import BackendError, CacheMiss, EmptyCompletion, OpenAIChatBackend, ScriptedChatBackend
from .corpus import (
    Document,
    GoldData,
    IndexedCorpus,
    Task,
    index_corpus,
    load_dataset,
    render_context,
    split_sentences,
)
from .dsl import (
    Call,
    ErrorKind,
    Leaf,
    ModuleKind,
    ProgramForest,
    ProgramTree,
    leaves,
    parse_program,
    serialize,
    validate,
)
from .executor import (
    AllTreesInvalid,
    ExecutedAnswer,
    ExecutedSentence,
    execute_forest,
    execute_tree,
    render_answer,
    trace_artifact,
)
from .judge import LlmJudge, MockJudge, Verdict, entails, relevance_filter
from .metrics import (
    AttributionScore,
    EvalReport,
    attribution_f1,
    attribution_precision,
    attribution_recall,
    citation_overlap,
    em_recall,
    module_entailment_rate,
    no_attribution_rate,
    rouge_l,
)
from .planner import (
    CitedAnswer,
    PlanMode,
    build_plan_prompt,
    generate_direct,
    parse_cited_answer,
    plan,
    plan_posthoc,
)
from .refine import RefineConfig, RefineStats, check_trace, refine_answer, refine_node, rerank_outputs
from .summarize import (
    MissingOriginMap,
    SummarizedCorpus,
    SummaryMethod,
    remap_citations,
    summarize_corpus,
)
from .text_ops import MockOpBackend, OpRequest, OpResult, Sampling, compress, extract, fuse, paraphrase

__version__ = "0.1.0"
