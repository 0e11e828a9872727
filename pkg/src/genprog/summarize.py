"""Query-focused per-document summarization ahead of planning.

Extractive summaries keep a map from each summary sentence back to the
original sentence it copies, so citations produced over the summarized
corpus can be remapped onto original sentence ids without losing precision.
Abstractive and extract-then-generate summaries have no such map; runs over
them attribute at document level only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Protocol, Sequence

from .backends import ChatBackend
from .corpus import Document, IndexedCorpus, Task, index_corpus
from .executor import ExecutedAnswer

logger = logging.getLogger(__name__)

__all__ = [
    "AllLinesUnmatched",
    "DocumentSummary",
    "LlmSummarizer",
    "MissingOriginMap",
    "MockSummarizer",
    "SummarizedCorpus",
    "SummaryMethod",
    "SummarySentence",
    "remap_citations",
    "summarize_abstractive",
    "summarize_corpus",
    "summarize_extract_then_generate",
    "summarize_extractive",
]

DEFAULT_NUMSENT = 3


class MissingOriginMap(RuntimeError):
    """Citation remapping requested for a summary without origin tracking."""


class AllLinesUnmatched(RuntimeError):
    """No extractive summary line matched an original sentence."""


class SummaryMethod(Enum):
    EXTRACTIVE = "extractive"
    ABSTRACTIVE = "abstractive"
    EXTRACT_THEN_GENERATE = "ext_abs"


@dataclass(frozen=True)
class SummarySentence:
    text: str
    origin_pos: int | None  # 0-based position within the source document


@dataclass(frozen=True)
class DocumentSummary:
    doc_index: int
    sentences: tuple[SummarySentence, ...]
    extractive_stage: tuple[str, ...] | None = None


@dataclass(frozen=True)
class SummarizedCorpus:
    corpus: IndexedCorpus  # re-indexed over summary sentences
    source: IndexedCorpus  # the corpus that was summarized
    method: SummaryMethod
    numsent: int
    origin_map: dict[int, int] | None  # summary sentence id -> source sentence id
    doc_summaries: tuple[DocumentSummary, ...]


class Summarizer(Protocol):
    id: str

    def extract(self, query: str, sentences: Sequence[str], numsent: int) -> list[str]: ...

    def abstract(self, query: str, sentences: Sequence[str], numsent: int) -> list[str]: ...

    def revise(
        self, query: str, sentences: Sequence[str], extracted: Sequence[str], numsent: int
    ) -> list[str]: ...


class MockSummarizer:
    """Offline rules: extract copies the first numsent sentences verbatim;
    abstract returns the document's first sentence; revise keeps the first
    extracted line."""

    def __init__(self):
        self.id = "mock"

    def extract(self, query, sentences, numsent):
        return list(sentences[:numsent])

    def abstract(self, query, sentences, numsent):
        return list(sentences[:1])

    def revise(self, query, sentences, extracted, numsent):
        return list(extracted[:1])


EXTRACTIVE_PROMPT = """Given the following document and the question "[[QUESTION]]", extract [[NUMSENT]] sentences from the passage that can answer the question. Do not change the sentences and copy the sentences exactly as they are.
You should format your output as a bullet point list, where each bullet point is a single sentence. Each bullet should start with a "-" followed by the sentence.

**Document:**
[[CONTEXT]]"""

ABSTRACTIVE_PROMPT = """Given the following document and the question "[[QUESTION]]", summarize the following document within [[NUMSENT]] sentences that can answer the question.
You should format your output as a bullet point list, where each bullet point is a single sentence. Each bullet should start with a "-" followed by the sentence.

**Document:**
[[CONTEXT]]"""

REVISE_PROMPT = """Given the following document, the question "[[QUESTION]]", and the extrated summary based on the document, revise the summary into [[NUMSENT]] sentences that can answer the question. The revised summary must incorporate all the key information from the extracted summary.
You should format your output as a bullet point list, where each bullet point is a single sentence. Each bullet should start with a "-" followed by the sentence.

Document:
[[CONTEXT]]

Extractive Summary:
[[SUMMARY]]"""


def _bullet_lines(completion: str) -> list[str]:
    lines = []
    for raw in completion.splitlines():
        line = raw.strip()
        if line.startswith("-"):
            body = line[1:].strip()
            if body:
                lines.append(body)
    return lines


class LlmSummarizer:
    """Summarizer backed by a chat model."""

    def __init__(self, chat: ChatBackend, max_tokens: int = 512):
        self.chat = chat
        self.id = f"llm:{getattr(chat, 'model', 'chat')}"
        self.max_tokens = max_tokens

    def _ask(self, prompt: str) -> list[str]:
        completion = self.chat.complete(prompt, temperature=0.0, max_tokens=self.max_tokens)
        return _bullet_lines(completion.text)

    def extract(self, query, sentences, numsent):
        prompt = (
            EXTRACTIVE_PROMPT.replace("[[QUESTION]]", query)
            .replace("[[NUMSENT]]", str(numsent))
            .replace("[[CONTEXT]]", " ".join(sentences))
        )
        return self._ask(prompt)

    def abstract(self, query, sentences, numsent):
        prompt = (
            ABSTRACTIVE_PROMPT.replace("[[QUESTION]]", query)
            .replace("[[NUMSENT]]", str(numsent))
            .replace("[[CONTEXT]]", " ".join(sentences))
        )
        return self._ask(prompt)

    def revise(self, query, sentences, extracted, numsent):
        prompt = (
            REVISE_PROMPT.replace("[[QUESTION]]", query)
            .replace("[[NUMSENT]]", str(numsent))
            .replace("[[CONTEXT]]", " ".join(sentences))
            .replace("[[SUMMARY]]", "\n".join(f"- {s}" for s in extracted))
        )
        return self._ask(prompt)


def _normalize(text: str) -> str:
    return " ".join(text.split())


def _truncate(lines: list[str], numsent: int, what: str) -> list[str]:
    if len(lines) > numsent:
        logger.warning("%s returned %d lines for numsent=%d; truncating", what, len(lines), numsent)
        return lines[:numsent]
    return lines


def summarize_extractive(
    query: str, document: Document, numsent: int, backend: Summarizer, doc_index: int = 1
) -> DocumentSummary:
    """Copy up to numsent sentences verbatim, tracking their origins.

    Lines are matched back to original sentences by exact comparison after
    whitespace normalization; unmatched or duplicate lines are dropped.
    """
    if numsent < 1:
        raise ValueError("numsent must be >= 1")
    lines = _truncate(backend.extract(query, document.sentences, numsent), numsent, "extractive")
    positions = {_normalize(s): i for i, s in enumerate(document.sentences)}
    picked: list[SummarySentence] = []
    used: set[int] = set()
    for line in lines:
        pos = positions.get(_normalize(line))
        if pos is None:
            logger.warning("extractive line not found in document %d: %r", doc_index, line[:60])
            continue
        if pos in used:
            logger.warning("extractive line repeated for document %d: %r", doc_index, line[:60])
            continue
        used.add(pos)
        picked.append(SummarySentence(text=document.sentences[pos], origin_pos=pos))
    if lines and not picked:
        raise AllLinesUnmatched(f"no extractive line matched document {doc_index}")
    return DocumentSummary(doc_index=doc_index, sentences=tuple(picked))


def summarize_abstractive(
    query: str, document: Document, numsent: int, backend: Summarizer, doc_index: int = 1
) -> DocumentSummary:
    """Free-form summary; sentence-level origins are not traceable."""
    if numsent < 1:
        raise ValueError("numsent must be >= 1")
    lines = _truncate(backend.abstract(query, document.sentences, numsent), numsent, "abstractive")
    return DocumentSummary(
        doc_index=doc_index,
        sentences=tuple(SummarySentence(text=line, origin_pos=None) for line in lines),
    )


def summarize_extract_then_generate(
    query: str, document: Document, numsent: int, backend: Summarizer, doc_index: int = 1
) -> DocumentSummary:
    """Extract verbatim sentences, then revise them abstractively.

    The intermediate extractive stage is retained for the trace; the final
    sentences carry no origins because the revision may rewrite them.
    """
    extractive = summarize_extractive(query, document, numsent, backend, doc_index=doc_index)
    stage = tuple(s.text for s in extractive.sentences)
    lines = _truncate(
        backend.revise(query, document.sentences, list(stage), numsent), numsent, "revision"
    )
    return DocumentSummary(
        doc_index=doc_index,
        sentences=tuple(SummarySentence(text=line, origin_pos=None) for line in lines),
        extractive_stage=stage,
    )


_PER_DOC = {
    SummaryMethod.EXTRACTIVE: summarize_extractive,
    SummaryMethod.ABSTRACTIVE: summarize_abstractive,
    SummaryMethod.EXTRACT_THEN_GENERATE: summarize_extract_then_generate,
}


def summarize_corpus(
    query: str,
    task: Task,
    source: IndexedCorpus,
    method: SummaryMethod,
    backend: Summarizer,
    numsent: int = DEFAULT_NUMSENT,
) -> SummarizedCorpus:
    """Summarize each document and re-index the summaries contiguously."""
    summaries = [
        _PER_DOC[method](query, doc, numsent, backend, doc_index=i)
        for i, doc in enumerate(task.documents, start=1)
    ]
    # Indexed corpora reject empty documents; keep the first original
    # sentence when a backend returns nothing usable for one.
    for i, (summary, doc) in enumerate(zip(summaries, task.documents)):
        if not summary.sentences:
            logger.warning("empty summary for document %d; keeping its first sentence", i + 1)
            origin = 0 if method is SummaryMethod.EXTRACTIVE else None
            summaries[i] = DocumentSummary(
                doc_index=summary.doc_index,
                sentences=(SummarySentence(text=doc.sentences[0], origin_pos=origin),),
                extractive_stage=summary.extractive_stage,
            )
    summary_docs = tuple(
        Document(sentences=tuple(s.text for s in summary.sentences), title=doc.title)
        for summary, doc in zip(summaries, task.documents)
    )
    summary_task = replace(task, documents=summary_docs)
    corpus = index_corpus(summary_task)

    origin_map: dict[int, int] | None = None
    if method is SummaryMethod.EXTRACTIVE:
        doc_base: dict[int, int] = {}
        offset = 0
        for i, doc in enumerate(task.documents, start=1):
            doc_base[i] = offset
            offset += len(doc.sentences)
        origin_map = {}
        sid = 0
        for summary in summaries:
            for sentence in summary.sentences:
                sid += 1
                origin_map[sid] = doc_base[summary.doc_index] + sentence.origin_pos + 1
    return SummarizedCorpus(
        corpus=corpus,
        source=source,
        method=method,
        numsent=numsent,
        origin_map=origin_map,
        doc_summaries=tuple(summaries),
    )


def remap_citations(answer: ExecutedAnswer, summarized: SummarizedCorpus) -> ExecutedAnswer:
    """Translate summary-sentence citations back to original sentence ids."""
    if summarized.origin_map is None:
        raise MissingOriginMap(
            f"{summarized.method.value} summaries do not track sentence origins"
        )
    for sentence in answer.sentences:
        mapped = tuple(sorted({summarized.origin_map[c] for c in sentence.sentence_citations}))
        sentence.sentence_citations = mapped
        sentence.doc_citations = tuple(sorted({summarized.source.doc_of(s) for s in mapped}))
    return answer
