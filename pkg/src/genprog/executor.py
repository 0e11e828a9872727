"""Bottom-up program execution with citation tracking.

Each tree evaluates children before parents; leaf nodes resolve to corpus
sentences and the root output becomes one answer sentence. A sentence's
citations are exactly the leaf ids of its tree, so executed answers carry a
citation for every sentence by construction.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .backends import BackendError
from .corpus import IndexedCorpus
from .dsl import Leaf, ModuleKind, ProgramForest, ProgramNode, ProgramTree, leaves, validate
from .text_ops import OpBackend, OpRequest, Sampling, run_op

logger = logging.getLogger(__name__)

__all__ = [
    "AllTreesInvalid",
    "ExecutedAnswer",
    "ExecutedSentence",
    "SkippedTree",
    "TraceNode",
    "execute_forest",
    "execute_tree",
    "render_answer",
    "trace_artifact",
]

RENDER_STYLES = ("sentence_cites", "doc_cites", "plain")


class AllTreesInvalid(RuntimeError):
    """No tree of the forest survived validation and execution."""


@dataclass
class TraceNode:
    """One evaluated node; `kind` is an operation name or "leaf"."""

    node_path: tuple[int, ...]
    kind: str
    inputs: tuple[str, ...]
    instruction: str | None
    output: str
    entailed: bool | None = None
    refined: bool = False
    entailed_before: bool | None = None
    children: list["TraceNode"] = field(default_factory=list)

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class ExecutedSentence:
    tree_index: int  # 0-based position in the forest
    text: str
    sentence_citations: tuple[int, ...]
    doc_citations: tuple[int, ...]
    trace: TraceNode


@dataclass(frozen=True)
class SkippedTree:
    line: str
    error: str


@dataclass
class ExecutedAnswer:
    task_id: str
    sentences: list[ExecutedSentence]
    backend_calls: int
    cache_hits: int = 0
    skipped: list[SkippedTree] = field(default_factory=list)


class _Counters:
    def __init__(self):
        self.backend_calls = 0
        self.cache_hits = 0


def _evaluate(
    node: ProgramNode,
    path: tuple[int, ...],
    corpus: IndexedCorpus,
    backend: OpBackend,
    sampling: Sampling,
    counters: _Counters,
) -> TraceNode:
    if isinstance(node, Leaf):
        text = corpus.text_of(node.sentence_id)
        return TraceNode(node_path=path, kind="leaf", inputs=(), instruction=None, output=text)
    children = [
        _evaluate(arg, path + (i,), corpus, backend, sampling, counters)
        for i, arg in enumerate(node.args)
    ]
    inputs = tuple(child.output for child in children)
    request = OpRequest(
        kind=node.kind,
        inputs=inputs,
        instruction=node.instruction,
        temperature=sampling.temperature,
        sample_index=sampling.sample_index,
    )
    try:
        result = run_op(request, backend)
    except BackendError as exc:
        raise BackendError(f"{node.kind.value} at node path {list(path)}: {exc}") from exc
    if node.kind is not ModuleKind.EXTRACT:
        counters.backend_calls += 1
        if result.cached:
            counters.cache_hits += 1
    return TraceNode(
        node_path=path,
        kind=node.kind.value,
        inputs=inputs,
        instruction=node.instruction,
        output=result.text,
        children=children,
    )


def execute_tree(
    tree: ProgramTree,
    corpus: IndexedCorpus,
    backend: OpBackend,
    sampling: Sampling = Sampling(),
    tree_index: int = 0,
) -> ExecutedSentence:
    """Evaluate one tree; citations are its leaf ids mapped to documents."""
    counters = _Counters()
    trace = _evaluate(tree.root, (), corpus, backend, sampling, counters)
    sentence_ids = leaves(tree)
    doc_ids = tuple(sorted({corpus.doc_of(s) for s in sentence_ids}))
    return ExecutedSentence(
        tree_index=tree_index,
        text=trace.output,
        sentence_citations=sentence_ids,
        doc_citations=doc_ids,
        trace=trace,
    )


def execute_forest(
    forest: ProgramForest,
    corpus: IndexedCorpus,
    backend: OpBackend,
    sampling: Sampling = Sampling(),
    max_workers: int = 1,
) -> ExecutedAnswer:
    """Execute every valid tree, in forest order.

    Rejected lines and trees that fail validation or execution are recorded
    in `skipped` without sinking their siblings; if nothing executes the
    whole answer is invalid.
    """
    skipped = [SkippedTree(line=r.text, error=f"{r.kind.value}: {r.message}") for r in forest.rejected]
    report = validate(forest, corpus)
    bad_trees: dict[int, str] = {}
    for issue in report.issues:
        if issue.tree_index > 0:
            bad_trees.setdefault(issue.tree_index - 1, f"{issue.kind.value}: {issue.message}")
    runnable = [
        (i, tree) for i, tree in enumerate(forest.trees) if i not in bad_trees
    ]
    for i, tree in enumerate(forest.trees):
        if i in bad_trees:
            skipped.append(SkippedTree(line=tree.source_text, error=bad_trees[i]))

    results: dict[int, ExecutedSentence] = {}

    def run_one(index: int, tree: ProgramTree) -> tuple[ExecutedSentence | None, _Counters]:
        local = _Counters()
        try:
            trace = _evaluate(tree.root, (), corpus, backend, sampling, local)
        except BackendError as exc:
            logger.warning("tree %d failed: %s", index, exc)
            return None, local
        sentence_ids = leaves(tree)
        doc_ids = tuple(sorted({corpus.doc_of(s) for s in sentence_ids}))
        sentence = ExecutedSentence(
            tree_index=index,
            text=trace.output,
            sentence_citations=sentence_ids,
            doc_citations=doc_ids,
            trace=trace,
        )
        return sentence, local

    if max_workers > 1 and len(runnable) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(lambda it: run_one(*it), runnable))
    else:
        outcomes = [run_one(i, t) for i, t in runnable]
    backend_calls = 0
    cache_hits = 0
    for (index, tree), (outcome, local) in zip(runnable, outcomes):
        backend_calls += local.backend_calls
        cache_hits += local.cache_hits
        if outcome is None:
            skipped.append(SkippedTree(line=tree.source_text, error="BackendError"))
        else:
            results[index] = outcome

    if not results:
        raise AllTreesInvalid(f"no executable trees (skipped {len(skipped)})")
    ordered = [results[i] for i in sorted(results)]
    return ExecutedAnswer(
        task_id=corpus.task_id,
        sentences=ordered,
        backend_calls=backend_calls,
        cache_hits=cache_hits,
        skipped=skipped,
    )


def render_answer(answer: ExecutedAnswer, style: str = "sentence_cites") -> str:
    """Join answer sentences, appending ascending "[k]" citation groups."""
    if style not in RENDER_STYLES:
        raise ValueError(f"style must be one of {RENDER_STYLES}")
    parts = []
    for sentence in answer.sentences:
        if style == "plain":
            parts.append(sentence.text)
            continue
        ids = (
            sentence.sentence_citations if style == "sentence_cites" else sentence.doc_citations
        )
        parts.append(sentence.text + "".join(f"[{k}]" for k in ids))
    return " ".join(parts)


def _trace_node_dict(node: TraceNode) -> dict:
    out: dict = {"kind": node.kind}
    if node.instruction is not None:
        out["instruction"] = node.instruction
    out["output"] = node.output
    if node.entailed is not None:
        out["entailed"] = node.entailed
    if node.refined:
        out["entailed_before"] = node.entailed_before
        out["entailed_after"] = node.entailed
    out["refined"] = node.refined
    out["children"] = [_trace_node_dict(c) for c in node.children]
    return out


def trace_artifact(answer: ExecutedAnswer, mode: str) -> str:
    """Serialize the full execution trace of one task as JSON."""
    payload = {
        "task_id": answer.task_id,
        "mode": mode,
        "sentences": [
            {
                "tree_index": s.tree_index,
                "text": s.text,
                "citations": list(s.sentence_citations),
                "doc_citations": list(s.doc_citations),
                "trace": _trace_node_dict(s.trace),
            }
            for s in answer.sentences
        ],
        "skipped": [{"line": s.line, "error": s.error} for s in answer.skipped],
        "backend_calls": answer.backend_calls,
    }
    return json.dumps(payload, ensure_ascii=False, indent=2)
