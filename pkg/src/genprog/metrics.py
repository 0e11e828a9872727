"""Evaluation measures for attributed answers.

Judge-based attribution follows the standard citation-evaluation recipe:
a sentence is recalled when its cited texts jointly entail it, and a
citation is precise when it entails the sentence alone or is necessary
within the full cited set. Per-example F1 is the harmonic mean of that
example's precision and recall; corpus numbers are unweighted means of the
per-example numbers (so the corpus F1 is generally not the harmonic mean
of the corpus P and R).
"""
from __future__ import annotations

import json
import logging
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .dsl import ModuleKind
from .executor import ExecutedAnswer
from .judge import Judge, entails
from .planner import CitedAnswer

logger = logging.getLogger(__name__)

__all__ = [
    "AlignmentError",
    "AttributionScore",
    "EvalReport",
    "MissingGold",
    "RougeScores",
    "SentenceUnit",
    "attribution_f1",
    "attribution_precision",
    "attribution_recall",
    "citation_overlap",
    "em_recall",
    "module_entailment_rate",
    "no_attribution_rate",
    "sentence_units",
]


class MissingGold(ValueError):
    """The metric needs gold data the task does not carry."""


class AlignmentError(ValueError):
    """Sentence-level overlap requested for misaligned pred/gold lists."""


@dataclass(frozen=True)
class SentenceUnit:
    """One answer sentence with the texts its citations resolve to."""

    text: str
    citations: tuple[int, ...]
    premises: tuple[str, ...]


@dataclass
class AttributionScore:
    precision: float | None
    recall: float | None
    f1: float | None
    per_example: list[tuple[float | None, float | None, float | None]] = field(
        default_factory=list
    )


@dataclass(frozen=True)
class RougeScores:
    r1: float
    r2: float
    rl: float


@dataclass
class EvalReport:
    """Aggregate metrics; fields stay None when the inputs cannot support
    them (missing gold data, empty answers), never silently zero."""

    attribution: AttributionScore | None = None
    no_attr_rate: float | None = None
    overlap_sentence: AttributionScore | None = None
    overlap_output: AttributionScore | None = None
    rouge: RougeScores | None = None
    em_recall: float | None = None
    module_entailment: float | None = None
    module_entailment_by_kind: dict[str, float | None] | None = None
    examples: int = 0


def sentence_units(
    answer: ExecutedAnswer | CitedAnswer,
    corpus,
    granularity: str = "sentence",
) -> list[SentenceUnit]:
    """Normalize either answer type into (text, citations, premise texts).

    Executed answers carry sentence ids and derive document ids; direct
    answers carry whichever ids the run asked the model to cite. Citations
    outside the corpus resolve to no premise.
    """
    units: list[SentenceUnit] = []
    if isinstance(answer, ExecutedAnswer):
        for sentence in answer.sentences:
            cites = (
                sentence.sentence_citations
                if granularity == "sentence"
                else sentence.doc_citations
            )
            units.append(
                SentenceUnit(sentence.text, cites, _resolve(cites, corpus, granularity))
            )
    else:
        for sentence in answer.sentences:
            units.append(
                SentenceUnit(
                    sentence.text,
                    sentence.citations,
                    _resolve(sentence.citations, corpus, granularity),
                )
            )
    return units


def _resolve(citations: tuple[int, ...], corpus, granularity: str) -> tuple[str, ...]:
    premises = []
    for cite in citations:
        if granularity == "sentence":
            if 1 <= cite <= corpus.size:
                premises.append(corpus.text_of(cite))
        else:
            if 1 <= cite <= corpus.doc_count:
                premises.append(corpus.doc_text(cite))
    return tuple(premises)


def attribution_recall(units: Sequence[SentenceUnit], judge: Judge) -> tuple[list[bool], float | None]:
    """A sentence is recalled iff it has citations and they entail it."""
    verdicts: list[bool] = []
    for unit in units:
        if not unit.premises:
            verdicts.append(False)
            continue
        verdicts.append(entails(list(unit.premises), unit.text, judge).entailed)
    if not verdicts:
        return [], None
    return verdicts, sum(verdicts) / len(verdicts)


def attribution_precision(
    units: Sequence[SentenceUnit], judge: Judge
) -> tuple[list[list[bool]], float | None]:
    """Per-citation booleans and the example mean.

    A citation is precise iff it alone entails the sentence, or the full
    set entails it and the set minus this citation does not. Sentences
    without citations are excluded from the mean; an example with no cited
    sentence scores 0.
    """
    per_sentence: list[list[bool]] = []
    sentence_means: list[float] = []
    for unit in units:
        if not unit.premises:
            per_sentence.append([])
            continue
        premises = list(unit.premises)
        full = entails(premises, unit.text, judge).entailed if len(premises) > 1 else None
        flags: list[bool] = []
        for i, premise in enumerate(premises):
            alone = entails([premise], unit.text, judge).entailed
            if alone:
                flags.append(True)
                continue
            if len(premises) == 1:
                flags.append(False)
                continue
            rest = premises[:i] + premises[i + 1 :]
            necessary = full and not entails(rest, unit.text, judge).entailed
            flags.append(bool(necessary))
        per_sentence.append(flags)
        sentence_means.append(sum(flags) / len(flags))
    if not units:
        return per_sentence, None
    if not sentence_means:
        return per_sentence, 0.0
    return per_sentence, sum(sentence_means) / len(sentence_means)


def _f1(p: float, r: float) -> float:
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def attribution_f1(
    per_example: Sequence[tuple[float | None, float | None]]
) -> AttributionScore:
    """Harmonic mean per example, then unweighted macro-average."""
    triples: list[tuple[float | None, float | None, float | None]] = []
    for p, r in per_example:
        if p is None or r is None:
            triples.append((p, r, None))
        else:
            triples.append((p, r, _f1(p, r)))
    ps = [p for p, _, _ in triples if p is not None]
    rs = [r for _, r, _ in triples if r is not None]
    f1s = [f for _, _, f in triples if f is not None]
    return AttributionScore(
        precision=sum(ps) / len(ps) if ps else None,
        recall=sum(rs) / len(rs) if rs else None,
        f1=sum(f1s) / len(f1s) if f1s else None,
        per_example=triples,
    )


def no_attribution_rate(answer: ExecutedAnswer | CitedAnswer) -> float | None:
    """Fraction of answer sentences with an empty citation set."""
    if isinstance(answer, ExecutedAnswer):
        cites = [s.sentence_citations for s in answer.sentences]
    else:
        cites = [s.citations for s in answer.sentences]
    if not cites:
        return None
    return sum(1 for c in cites if not c) / len(cites)


def _overlap_unit(
    pred: set[int], gold: set[int]
) -> tuple[float | None, float | None, float | None]:
    common = len(pred & gold)
    p = common / len(pred) if pred else None
    r = common / len(gold) if gold else None
    if p is None and r is None:
        return None, None, None
    if p is None or r is None:
        return p, r, 0.0
    return p, r, _f1(p, r)


def citation_overlap(
    pred_sets: Sequence[set[int] | Sequence[int]],
    gold_sets: Sequence[set[int] | Sequence[int]],
    level: str = "sentence",
    strict: bool = False,
) -> AttributionScore:
    """Set precision/recall/F1 between predicted and gold citations.

    Sentence level compares position-aligned sets; output level unions each
    side first. Misaligned sentence counts raise AlignmentError when strict,
    otherwise the shorter side is padded with empty sets (those units score
    0) and a warning is logged.
    """
    preds = [set(p) for p in pred_sets]
    golds = [set(g) for g in gold_sets]
    if level == "output":
        preds = [set().union(*preds) if preds else set()]
        golds = [set().union(*golds) if golds else set()]
    elif len(preds) != len(golds):
        if strict:
            raise AlignmentError(f"{len(preds)} predicted sets vs {len(golds)} gold sets")
        logger.warning(
            "sentence counts differ (%d pred, %d gold); padding with empty sets",
            len(preds),
            len(golds),
        )
        size = max(len(preds), len(golds))
        preds += [set()] * (size - len(preds))
        golds += [set()] * (size - len(golds))
    triples = [_overlap_unit(p, g) for p, g in zip(preds, golds)]
    triples = [t for t in triples if t != (None, None, None)]
    ps = [p for p, _, _ in triples if p is not None]
    rs = [r for _, r, _ in triples if r is not None]
    f1s = [f for _, _, f in triples if f is not None]
    return AttributionScore(
        precision=sum(ps) / len(ps) if ps else None,
        recall=sum(rs) / len(rs) if rs else None,
        f1=sum(f1s) / len(f1s) if f1s else None,
        per_example=triples,
    )


_WORD_RE = re.compile(r"[a-z0-9]+")


def _rouge_tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b):
            if token == other:
                current.append(previous[j] + 1)
            else:
                current.append(max(previous[j + 1], current[j]))
        previous = current
    return previous[-1]


def _fmeasure(match: int, pred_len: int, ref_len: int) -> float:
    if match == 0 or pred_len == 0 or ref_len == 0:
        return 0.0
    precision = match / pred_len
    recall = match / ref_len
    return _f1(precision, recall)


def _ngram_match(pred: list[str], ref: list[str], n: int) -> int:
    if len(pred) < n or len(ref) < n:
        return 0
    pred_counts = Counter(tuple(pred[i : i + n]) for i in range(len(pred) - n + 1))
    ref_counts = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
    return sum(min(count, ref_counts[gram]) for gram, count in pred_counts.items())


def rouge_l(candidate: str, references: Sequence[str]) -> RougeScores:
    """Unigram, bigram, and LCS F-measures; the best reference wins per
    metric."""
    if not references:
        raise ValueError("at least one reference is required")
    pred = _rouge_tokens(candidate)
    best = RougeScores(0.0, 0.0, 0.0)
    for reference in references:
        ref = _rouge_tokens(reference)
        r1 = _fmeasure(_ngram_match(pred, ref, 1), len(pred), len(ref))
        r2 = _fmeasure(
            _ngram_match(pred, ref, 2), max(len(pred) - 1, 0), max(len(ref) - 1, 0)
        )
        rl = _fmeasure(_lcs_length(pred, ref), len(pred), len(ref))
        best = RougeScores(max(best.r1, r1), max(best.r2, r2), max(best.rl, rl))
    return best


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def _normalize_em(text: str) -> str:
    return " ".join(text.casefold().translate(_PUNCT_TABLE).split())


def em_recall(answer_text: str, short_answer_sets: Sequence[Sequence[str]] | None) -> float:
    """Fraction of short-answer sets with at least one member appearing as
    a normalized substring of the answer."""
    if not short_answer_sets:
        raise MissingGold("no short-answer sets on this task")
    haystack = _normalize_em(answer_text)
    hits = 0
    for answer_set in short_answer_sets:
        if any(_normalize_em(option) in haystack for option in answer_set):
            hits += 1
    return hits / len(short_answer_sets)


_REPORTED_KINDS = (ModuleKind.FUSION.value, ModuleKind.COMPRESSION.value, ModuleKind.PARAPHRASE.value)


def module_entailment_rate(
    answers: Sequence[ExecutedAnswer],
) -> tuple[float | None, dict[str, float | None]]:
    """Fraction of judged operation nodes marked entailed, overall and per
    kind (extract excluded: it is entailed by construction)."""
    by_kind: dict[str, list[bool]] = {kind: [] for kind in _REPORTED_KINDS}
    overall: list[bool] = []
    for answer in answers:
        for sentence in answer.sentences:
            for node in sentence.trace.walk():
                if node.kind not in by_kind or node.entailed is None:
                    continue
                by_kind[node.kind].append(node.entailed)
                overall.append(node.entailed)
    rates = {
        kind: (sum(v) / len(v) if v else None) for kind, v in by_kind.items()
    }
    return (sum(overall) / len(overall) if overall else None), rates


def report_to_json(report: EvalReport) -> str:
    def score(s: AttributionScore | None):
        if s is None:
            return None
        return {"precision": s.precision, "recall": s.recall, "f1": s.f1}

    payload = {
        "examples": report.examples,
        "attribution": score(report.attribution),
        "no_attr_rate": report.no_attr_rate,
        "overlap_sentence": score(report.overlap_sentence),
        "overlap_output": score(report.overlap_output),
        "rouge": (
            None
            if report.rouge is None
            else {"r1": report.rouge.r1, "r2": report.rouge.r2, "rl": report.rouge.rl}
        ),
        "em_recall": report.em_recall,
        "module_entailment": report.module_entailment,
        "module_entailment_by_kind": report.module_entailment_by_kind,
    }
    return json.dumps({k: v for k, v in payload.items() if v is not None}, ensure_ascii=False, indent=2)


def report_to_table(report: EvalReport) -> str:
    """Aligned-column summary; leading columns follow the usual result-table
    order (correctness, attribution F1, no-attribution rate)."""

    def fmt(value: float | None) -> str:
        return "-" if value is None else f"{100 * value:.1f}"

    correct = report.em_recall if report.em_recall is not None else (
        report.rouge.rl if report.rouge is not None else None
    )
    headers = ["Correct", "Attr. F1", "No Attr.", "Attr. P", "Attr. R", "%Entail."]
    values = [
        fmt(correct),
        fmt(report.attribution.f1 if report.attribution else None),
        fmt(report.no_attr_rate),
        fmt(report.attribution.precision if report.attribution else None),
        fmt(report.attribution.recall if report.attribution else None),
        fmt(report.module_entailment),
    ]
    rows = [headers, values]
    if report.overlap_sentence is not None or report.overlap_output is not None:
        rows.append([])
        rows.append(["", "Cit. P", "Cit. R", "Cit. F1", "", ""])
        for label, overlap in (
            ("sentence", report.overlap_sentence),
            ("output", report.overlap_output),
        ):
            if overlap is not None:
                rows.append(
                    [label, fmt(overlap.precision), fmt(overlap.recall), fmt(overlap.f1), "", ""]
                )
    widths = [max(len(str(row[i])) for row in rows if row) for i in range(len(headers))]
    lines = []
    for row in rows:
        if not row:
            lines.append("")
            continue
        lines.append("  ".join(str(cell).ljust(width) for cell, width in zip(row, widths)))
    return "\n".join(lines)
