"""Task ingestion, sentence splitting, and the global sentence-ID scheme.

Every downstream component (programs, execution traces, citations) refers to
source sentences through the ids assigned here: sentences are numbered 1..N
across all documents of a task, in document order then sentence order.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import IO, Iterable

__all__ = [
    "BadSentenceRef",
    "CorpusEntry",
    "Document",
    "EmptyDocument",
    "GoldData",
    "IndexedCorpus",
    "ParseError",
    "Task",
    "index_corpus",
    "load_dataset",
    "render_context",
    "split_sentences",
    "split_sentences_spans",
]


class ParseError(ValueError):
    """Malformed dataset record; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyDocument(ValueError):
    """A document produced zero sentences during indexing."""


class BadSentenceRef(LookupError):
    """A sentence id outside the corpus range 1..N."""


@dataclass(frozen=True)
class Document:
    """One retrieved document, stored as an ordered list of sentences."""

    sentences: tuple[str, ...]
    title: str | None = None


@dataclass(frozen=True)
class GoldData:
    """Optional reference data attached to a task.

    short_answer_sets holds lists of acceptable short-answer strings per
    sub-question; gold_citations holds per-gold-sentence sets of global
    sentence ids.
    """

    answers: tuple[str, ...] = ()
    short_answer_sets: tuple[tuple[str, ...], ...] | None = None
    gold_citations: tuple[tuple[int, ...], ...] | None = None


@dataclass(frozen=True)
class Task:
    """A query plus its pre-retrieved documents."""

    id: str
    query: str
    documents: tuple[Document, ...]
    gold: GoldData | None = None
    output: str | None = None  # target answer for post-hoc attribution runs


@dataclass(frozen=True)
class CorpusEntry:
    sentence_id: int
    doc_index: int  # 1-based
    text: str


@dataclass(frozen=True)
class IndexedCorpus:
    """All sentences of a task under the global numbering 1..N."""

    task_id: str
    entries: tuple[CorpusEntry, ...]
    doc_count: int

    @property
    def size(self) -> int:
        return len(self.entries)

    def text_of(self, sentence_id: int) -> str:
        if not 1 <= sentence_id <= len(self.entries):
            raise BadSentenceRef(f"sentence id {sentence_id} outside 1..{len(self.entries)}")
        return self.entries[sentence_id - 1].text

    def doc_of(self, sentence_id: int) -> int:
        if not 1 <= sentence_id <= len(self.entries):
            raise BadSentenceRef(f"sentence id {sentence_id} outside 1..{len(self.entries)}")
        return self.entries[sentence_id - 1].doc_index

    def doc_sentences(self, doc_index: int) -> list[str]:
        return [e.text for e in self.entries if e.doc_index == doc_index]

    def doc_text(self, doc_index: int) -> str:
        return " ".join(self.doc_sentences(doc_index))


# Tokens that end with "." without ending a sentence. Checked lowercase,
# without the trailing period.
_ABBREVIATIONS = frozenset(
    {
        "mr", "mrs", "ms", "dr", "prof", "rev", "gen", "sen", "rep", "st",
        "jr", "sr", "no", "vs", "etc", "inc", "ltd", "co", "corp", "dept",
        "univ", "assn", "fig", "al", "ca", "approx", "est",
        "e.g", "i.e", "cf", "a.m", "p.m", "u.s", "u.k",
    }
)

_TERMINAL = ".!?"
_CLOSERS = "\"')]’”"


def _ends_sentence(chunk: str, next_chunk: str | None) -> bool:
    core = chunk.rstrip(_CLOSERS)
    if not core or core[-1] not in _TERMINAL:
        return False
    if core[-1] == ".":
        word = core[:-1].rstrip(_CLOSERS)
        if word.lower().lstrip("\"'([‘“") in _ABBREVIATIONS:
            return False
    if next_chunk is not None and next_chunk[0].islower():
        return False
    return True


def split_sentences_spans(text: str) -> list[tuple[str, int, int]]:
    """Like split_sentences, but each sentence carries its (start, end)
    character span in the original text."""
    matches = list(re.finditer(r"\S+", text))
    sentences: list[tuple[str, int, int]] = []
    current: list[str] = []
    start = 0
    for i, match in enumerate(matches):
        if not current:
            start = match.start()
        current.append(match.group(0))
        nxt = matches[i + 1].group(0) if i + 1 < len(matches) else None
        if _ends_sentence(match.group(0), nxt):
            sentences.append((" ".join(current), start, match.end()))
            current = []
    if current:
        sentences.append((" ".join(current), start, matches[-1].end()))
    return sentences


def split_sentences(text: str) -> list[str]:
    """Split text into sentences at terminal punctuation.

    Splits only at whitespace, so joining the result with single spaces
    reproduces the input's non-whitespace content in order. Known
    abbreviations ("Dr.", "e.g.") and lowercase continuations do not end
    a sentence.
    """
    return [sentence for sentence, _, _ in split_sentences_spans(text)]


def index_corpus(task: Task) -> IndexedCorpus:
    """Assign global sentence ids 1..N across the task's documents."""
    entries: list[CorpusEntry] = []
    sid = 0
    for doc_index, doc in enumerate(task.documents, start=1):
        if not doc.sentences:
            raise EmptyDocument(f"task {task.id}: document {doc_index} has no sentences")
        for sentence in doc.sentences:
            sid += 1
            entries.append(CorpusEntry(sid, doc_index, sentence))
    return IndexedCorpus(task_id=task.id, entries=tuple(entries), doc_count=len(task.documents))


def render_context(corpus: IndexedCorpus) -> str:
    """Render the corpus as numbered sentences under per-document headers."""
    blocks: list[str] = []
    for doc_index in range(1, corpus.doc_count + 1):
        lines = [f"Document {doc_index}:"]
        lines.extend(
            f"S{e.sentence_id}: {e.text}" for e in corpus.entries if e.doc_index == doc_index
        )
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def _parse_document(raw: object, line: int) -> Document:
    if not isinstance(raw, dict):
        raise ParseError(line, "document entry must be an object")
    title = raw.get("title")
    if title is not None and not isinstance(title, str):
        raise ParseError(line, "document title must be a string")
    has_text = "text" in raw
    has_sentences = "sentences" in raw
    if has_text == has_sentences:
        raise ParseError(line, 'document needs exactly one of "text" or "sentences"')
    if has_text:
        if not isinstance(raw["text"], str):
            raise ParseError(line, '"text" must be a string')
        sentences = split_sentences(raw["text"])
    else:
        raw_sentences = raw["sentences"]
        if not isinstance(raw_sentences, list) or not all(
            isinstance(s, str) for s in raw_sentences
        ):
            raise ParseError(line, '"sentences" must be a list of strings')
        if any(not s.strip() for s in raw_sentences):
            raise ParseError(line, "pre-split sentences must be non-empty")
        sentences = list(raw_sentences)
    return Document(sentences=tuple(sentences), title=title)


def _parse_gold(raw: object, line: int) -> GoldData:
    if not isinstance(raw, dict):
        raise ParseError(line, '"gold" must be an object')
    answers = raw.get("answers", [])
    if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
        raise ParseError(line, '"gold.answers" must be a list of strings')
    short_sets = None
    if raw.get("short_answers") is not None:
        short_raw = raw["short_answers"]
        if not isinstance(short_raw, list) or not all(
            isinstance(s, list) and s and all(isinstance(a, str) for a in s) for s in short_raw
        ):
            raise ParseError(line, '"gold.short_answers" must be non-empty lists of strings')
        short_sets = tuple(tuple(s) for s in short_raw)
    citations = None
    if raw.get("citations") is not None:
        cit_raw = raw["citations"]
        if not isinstance(cit_raw, list) or not all(
            isinstance(c, list) and all(isinstance(i, int) for i in c) for c in cit_raw
        ):
            raise ParseError(line, '"gold.citations" must be lists of integers')
        citations = tuple(tuple(sorted(set(c))) for c in cit_raw)
    return GoldData(answers=tuple(answers), short_answer_sets=short_sets, gold_citations=citations)


def load_dataset(stream: IO[str] | Iterable[str]) -> list[Task]:
    """Parse line-delimited JSON task records; unknown fields are ignored."""
    tasks: list[Task] = []
    seen_ids: set[str] = set()
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise ParseError(line_no, "record must be a JSON object")
        task_id = record.get("id")
        if not isinstance(task_id, str) or not task_id:
            raise ParseError(line_no, 'missing or invalid "id"')
        if task_id in seen_ids:
            raise ParseError(line_no, f'duplicate task id "{task_id}"')
        seen_ids.add(task_id)
        question = record.get("question")
        if not isinstance(question, str):
            raise ParseError(line_no, 'missing or invalid "question"')
        docs_raw = record.get("docs")
        if not isinstance(docs_raw, list) or not docs_raw:
            raise ParseError(line_no, '"docs" must be a non-empty list')
        documents = tuple(_parse_document(d, line_no) for d in docs_raw)
        gold = _parse_gold(record["gold"], line_no) if record.get("gold") is not None else None
        output = record.get("output")
        if output is not None and not isinstance(output, str):
            raise ParseError(line_no, '"output" must be a string')
        tasks.append(
            Task(id=task_id, query=question, documents=documents, gold=gold, output=output)
        )
    return tasks
