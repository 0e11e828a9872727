"""Module-level faithfulness checking and refinement.

Every non-leaf trace node is judged against its direct inputs. A node that
fails is refined by sampling a batch of candidates at high temperature and
keeping the first one the judge accepts; when none passes, the first
candidate stands. Ancestors of a refined node are re-executed with the new
child output and re-checked, so the trace stays self-consistent. Leaf sets
never change, so citations are invariant under refinement.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

from .corpus import IndexedCorpus, Task, index_corpus
from .dsl import ModuleKind
from .executor import ExecutedAnswer, TraceNode
from .judge import Judge, entails
from .planner import CitedAnswer, generate_direct
from .text_ops import OpBackend, OpRequest, run_op

logger = logging.getLogger(__name__)

__all__ = [
    "RefineConfig",
    "RefineStats",
    "check_trace",
    "refine_answer",
    "refine_node",
    "rerank_outputs",
]


@dataclass(frozen=True)
class RefineConfig:
    samples: int = 5
    temperature: float = 1.0
    lazy: bool = False  # draw candidates one at a time, stopping at the first pass

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")


@dataclass
class RefineStats:
    nodes_checked: int = 0
    nodes_flagged: int = 0
    nodes_refined: int = 0
    entailed_fraction_before: float | None = None
    entailed_fraction_after: float | None = None


def _judgeable(node: TraceNode) -> bool:
    return node.kind not in ("leaf", ModuleKind.EXTRACT.value)


def check_trace(answer: ExecutedAnswer, judge: Judge) -> ExecutedAnswer:
    """Annotate every operation node with an entailment verdict.

    The premise is the node's direct inputs; extract nodes are marked
    entailed without consulting the judge.
    """
    for sentence in answer.sentences:
        for node in sentence.trace.walk():
            if node.kind == "leaf":
                continue
            if node.kind == ModuleKind.EXTRACT.value:
                node.entailed = True
                continue
            node.entailed = entails(list(node.inputs), node.output, judge).entailed
    return answer


def refine_node(node: TraceNode, backend: OpBackend, judge: Judge, config: RefineConfig) -> str:
    """Replace a flagged node's output by rescoring sampled candidates.

    Draws `samples` candidates (eagerly unless config.lazy), scans them in
    order, and keeps the first entailed one, falling back to candidate 1.
    """
    if node.entailed is not False:
        raise ValueError("refine_node requires a node flagged as not entailed")
    kind = ModuleKind(node.kind)

    def draw(index: int) -> str:
        request = OpRequest(
            kind=kind,
            inputs=node.inputs,
            instruction=node.instruction,
            temperature=config.temperature,
            sample_index=index,
        )
        return run_op(request, backend).text

    chosen: str | None = None
    verdict = False
    if config.lazy:
        first: str | None = None
        for index in range(config.samples):
            candidate = draw(index)
            if first is None:
                first = candidate
            if entails(list(node.inputs), candidate, judge).entailed:
                chosen, verdict = candidate, True
                break
        if chosen is None:
            chosen = first
    else:
        candidates = [draw(index) for index in range(config.samples)]
        for candidate in candidates:
            if entails(list(node.inputs), candidate, judge).entailed:
                chosen, verdict = candidate, True
                break
        if chosen is None:
            chosen = candidates[0]
    if node.entailed_before is None:
        node.entailed_before = False
    node.entailed = verdict
    node.refined = True
    node.output = chosen
    return chosen


def _refine_subtree(
    node: TraceNode, backend: OpBackend, judge: Judge, config: RefineConfig, stats: RefineStats
) -> bool:
    """Post-order refinement; returns True when this node's output changed."""
    child_changed = False
    for child in node.children:
        child_changed |= _refine_subtree(child, backend, judge, config, stats)
    if node.kind == "leaf":
        return False
    if node.kind == ModuleKind.EXTRACT.value:
        return False  # extract wraps a leaf; its input can never change
    changed = False
    if child_changed:
        node.inputs = tuple(child.output for child in node.children)
        previous = node.output
        request = OpRequest(kind=ModuleKind(node.kind), inputs=node.inputs, instruction=node.instruction)
        if node.entailed_before is None:
            node.entailed_before = node.entailed
        node.output = run_op(request, backend).text
        node.refined = True
        node.entailed = entails(list(node.inputs), node.output, judge).entailed
        changed = node.output != previous
    if node.entailed is False:
        refine_node(node, backend, judge, config)
        stats.nodes_refined += 1
        changed = True
    return changed


def _entailed_fraction(answer: ExecutedAnswer) -> float | None:
    verdicts = [
        node.entailed
        for sentence in answer.sentences
        for node in sentence.trace.walk()
        if _judgeable(node) and node.entailed is not None
    ]
    if not verdicts:
        return None
    return sum(verdicts) / len(verdicts)


def refine_answer(
    answer: ExecutedAnswer, backend: OpBackend, judge: Judge, config: RefineConfig = RefineConfig()
) -> tuple[ExecutedAnswer, RefineStats]:
    """Refine all flagged nodes bottom-up; citations are untouched.

    The answer must have been through check_trace. Returns a new answer;
    the input is not modified.
    """
    refined = copy.deepcopy(answer)
    stats = RefineStats()
    stats.entailed_fraction_before = _entailed_fraction(refined)
    for sentence in refined.sentences:
        judged = [n for n in sentence.trace.walk() if _judgeable(n)]
        if any(n.entailed is None for n in judged):
            raise ValueError("refine_answer requires a checked trace (run check_trace first)")
        stats.nodes_checked += len(judged)
        stats.nodes_flagged += sum(1 for n in judged if n.entailed is False)
        _refine_subtree(sentence.trace, backend, judge, config, stats)
        sentence.text = sentence.trace.output
    stats.entailed_fraction_after = _entailed_fraction(refined)
    return refined, stats


def rerank_outputs(
    task: Task,
    backend,
    judge: Judge,
    k: int = 5,
    granularity: str = "document",
    corpus: IndexedCorpus | None = None,
) -> CitedAnswer:
    """Whole-output baseline: sample k cited answers and keep the one whose
    sentences are best supported by their citations (ties to the earliest)."""
    if corpus is None:
        corpus = index_corpus(task)
    best: CitedAnswer | None = None
    best_score = -1.0
    for index in range(k):
        candidate = generate_direct(
            task.query,
            corpus,
            backend,
            granularity=granularity,
            temperature=1.0,
            sample_index=index,
        )
        score = _answer_support(candidate, corpus, judge, granularity)
        if score > best_score:
            best, best_score = candidate, score
    assert best is not None
    return best


def _answer_support(
    answer: CitedAnswer, corpus: IndexedCorpus, judge: Judge, granularity: str
) -> float:
    if not answer.sentences:
        return 0.0
    supported = 0
    for sentence in answer.sentences:
        premises = _resolve_citations(sentence.citations, corpus, granularity)
        if premises and entails(premises, sentence.text, judge).entailed:
            supported += 1
    return supported / len(answer.sentences)


def _resolve_citations(
    citations: tuple[int, ...], corpus: IndexedCorpus, granularity: str
) -> list[str]:
    premises = []
    for cite in citations:
        if granularity == "document":
            if 1 <= cite <= corpus.doc_count:
                premises.append(corpus.doc_text(cite))
        else:
            if 1 <= cite <= corpus.size:
                premises.append(corpus.text_of(cite))
    return premises
