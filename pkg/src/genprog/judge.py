"""Binary entailment verdicts and query/document relevance decisions.

Judges are pluggable: the mock judge uses token-bag containment (hypothesis
tokens minus stopwords must all appear in the premise, with multiplicity),
which pairs with the mock text operations to give a fully deterministic
offline pipeline. The LLM judge prompts a chat backend for a strict
Supported/Unsupported label; "partially supported" counts as unsupported.
"""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

from .backends import ChatBackend
from .corpus import Document

logger = logging.getLogger(__name__)

__all__ = [
    "Judge",
    "LlmJudge",
    "MockJudge",
    "RelevanceDecision",
    "UnparseableVerdict",
    "Verdict",
    "assess_relevance",
    "entails",
    "relevance_filter",
]


class UnparseableVerdict(RuntimeError):
    """The judge completion matched neither verdict label."""


@dataclass(frozen=True)
class Verdict:
    entailed: bool
    judge_id: str
    premise: str
    hypothesis: str


@dataclass(frozen=True)
class RelevanceDecision:
    doc_index: int
    relevant: bool


class Judge(Protocol):
    id: str

    def decide(self, premise: str, hypothesis: str) -> Verdict: ...

    def relevant(self, query: str, document_text: str) -> bool: ...


_TOKEN_RE = re.compile(r"[a-z0-9]+")

_STOPWORDS = frozenset(
    {
        "a", "an", "the", "and", "or", "but", "if", "then", "than", "that",
        "this", "these", "those", "is", "are", "was", "were", "be", "been",
        "being", "to", "of", "in", "on", "at", "by", "for", "with", "as",
        "it", "its", "he", "she", "they", "them", "his", "her", "their",
        "not", "no", "do", "does", "did", "have", "has", "had", "will",
        "would", "can", "could", "may", "might", "from", "into", "about",
    }
)


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _content_tokens(text: str) -> Counter[str]:
    return Counter(t for t in _tokens(text) if t not in _STOPWORDS)


class MockJudge:
    """Entailed iff the hypothesis's content-token multiset is contained in
    the premise's token multiset."""

    def __init__(self):
        self.id = "mock"
        self.calls = 0

    def decide(self, premise: str, hypothesis: str) -> Verdict:
        self.calls += 1
        needed = _content_tokens(hypothesis)
        available = Counter(_tokens(premise))
        entailed = all(available[tok] >= count for tok, count in needed.items())
        return Verdict(entailed=entailed, judge_id=self.id, premise=premise, hypothesis=hypothesis)

    def relevant(self, query: str, document_text: str) -> bool:
        query_tokens = set(_content_tokens(query))
        doc_tokens = set(_tokens(document_text))
        return bool(query_tokens & doc_tokens)


ENTAILMENT_PROMPT = """You are a strict fact-checking assistant. Decide whether the statement is fully supported by the source text. Respond with exactly one word: "Supported" if every piece of information in the statement is entailed by the source, and "Unsupported" otherwise. A statement that is only partially supported must be labeled "Unsupported".

**Source**:
[[PREMISE]]

**Statement**:
[[HYPOTHESIS]]"""

RELEVANCE_PROMPT = """Given the question "[[QUESTION]]", decide whether the following document contains information that helps answer it. Respond with exactly one word: "Relevant" or "Irrelevant".

**Document:**
[[DOCUMENT]]"""


class LlmJudge:
    """Judge backed by a chat model; shares the caller's client and cache."""

    def __init__(self, chat: ChatBackend, max_tokens: int = 16):
        self.chat = chat
        self.id = f"llm:{getattr(chat, 'model', 'chat')}"
        self.max_tokens = max_tokens
        self.calls = 0

    def decide(self, premise: str, hypothesis: str) -> Verdict:
        self.calls += 1
        prompt = ENTAILMENT_PROMPT.replace("[[PREMISE]]", premise).replace(
            "[[HYPOTHESIS]]", hypothesis
        )
        completion = self.chat.complete(prompt, temperature=0.0, max_tokens=self.max_tokens)
        label = completion.text.strip().lower()
        if "partially supported" in label:
            entailed = False
        elif re.search(r"\bunsupported\b", label) or re.search(r"\bnot supported\b", label):
            entailed = False
        elif re.search(r"\bsupported\b", label):
            entailed = True
        else:
            raise UnparseableVerdict(f"judge returned {completion.text!r}")
        return Verdict(entailed=entailed, judge_id=self.id, premise=premise, hypothesis=hypothesis)

    def relevant(self, query: str, document_text: str) -> bool:
        prompt = RELEVANCE_PROMPT.replace("[[QUESTION]]", query).replace(
            "[[DOCUMENT]]", document_text
        )
        completion = self.chat.complete(prompt, temperature=0.0, max_tokens=self.max_tokens)
        label = completion.text.strip().lower()
        if re.search(r"\birrelevant\b", label):
            return False
        if re.search(r"\brelevant\b", label):
            return True
        raise UnparseableVerdict(f"relevance judge returned {completion.text!r}")


def entails(premise_sentences: Sequence[str], hypothesis: str, judge: Judge) -> Verdict:
    """Join the premise sentences with single spaces and ask the judge."""
    if not premise_sentences:
        raise ValueError("premise_sentences must be non-empty")
    return judge.decide(" ".join(premise_sentences), hypothesis)


def assess_relevance(
    query: str, documents: Iterable[Document], judge: Judge
) -> list[RelevanceDecision]:
    return [
        RelevanceDecision(doc_index=i, relevant=judge.relevant(query, " ".join(doc.sentences)))
        for i, doc in enumerate(documents, start=1)
    ]


def relevance_filter(query: str, documents: Sequence[Document], judge: Judge) -> list[Document]:
    """Drop documents the judge deems irrelevant, preserving order.

    Fails open: if every document would be dropped, all are kept and a
    warning is logged.
    """
    if not documents:
        raise ValueError("documents must be non-empty")
    decisions = assess_relevance(query, documents, judge)
    kept = [doc for doc, d in zip(documents, decisions) if d.relevant]
    if not kept:
        logger.warning("relevance filter excluded every document; keeping all %d", len(documents))
        return list(documents)
    return kept
