"""Acceptance gate: one test per release criterion.

Each test asserts exact values at the criterion's stated tolerance, checks
its wall-clock budget, and prints one pass line (visible with pytest -s;
pytest -v shows per-criterion pass/fail either way).
"""
from __future__ import annotations

import itertools
import json
import os
import random
import time
from functools import lru_cache
from pathlib import Path

import pytest

from genprog.cli import RunConfig, cmd_evaluate, cmd_replay, cmd_run
from genprog.corpus import Document, Task, index_corpus
from genprog.dsl import (
    ErrorKind,
    ModuleKind,
    leaves,
    parse_program,
    same_structure,
    serialize,
)
from genprog.executor import execute_forest
from genprog.judge import Verdict
from genprog.metrics import citation_overlap, no_attribution_rate, rouge_l
from genprog.refine import RefineConfig, check_trace, refine_answer, refine_node
from genprog.summarize import (
    MissingOriginMap,
    MockSummarizer,
    SummaryMethod,
    remap_citations,
    summarize_corpus,
)
from genprog.text_ops import MockOpBackend

from .fixtures import write_dataset
from .forests import random_forest

TEASER_PROGRAM = "- fusion(S2, S101)"

GOLDEN_PROGRAM_LINES = [
    '- paraphrase(S4, instruction="Rephrase to emphasize the educational benefits of exposing students to texts from different religions.")',
    '- fusion(S6, S7, instruction="Combine these sentences to highlight the historical connection between religion and the advancement of sciences.")',
    '- compression(S12, instruction="Shorten this sentence to focus on the importance of examining different cultures and their perspectives.")',
    '- fusion(S15, S16, instruction="Merge these sentences to emphasize the development of empathy and critical thinking skills through exploring diverse cultures.")',
]

OHIO_PROGRAM_LINES = [
    '- compression(S3, instruction="Focus on the starting point of the Ohio River.")',
    '- fusion(S3, S17, instruction="Combine these sentences to describe the length and endpoint of the Ohio River.")',
]


class _Timer:
    def __init__(self, budget_seconds: float):
        self.budget = budget_seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc == (None, None, None):
            assert self.elapsed < self.budget, f"took {self.elapsed:.2f}s, budget {self.budget}s"
        return False


def corpus_of(n: int, docs: int = 1):
    docs = min(docs, n)
    per = n // docs
    documents = []
    for d in range(docs):
        hi = (d + 1) * per if d < docs - 1 else n
        documents.append(
            Document(sentences=tuple(f"Token{i} word{i}." for i in range(d * per + 1, hi + 1)))
        )
    return index_corpus(Task(id="t", query="q", documents=tuple(documents)))


def test_criterion_1_parser_golden_suite():
    with _Timer(1.0):
        teaser = parse_program(TEASER_PROGRAM)
        assert len(teaser.trees) == 1 and not teaser.rejected
        assert teaser.trees[0].root.kind is ModuleKind.FUSION
        assert leaves(teaser.trees[0]) == (2, 101)

        forest = parse_program("\n".join(GOLDEN_PROGRAM_LINES))
        assert len(forest.trees) == 4 and not forest.rejected
        assert [t.root.kind for t in forest.trees] == [
            ModuleKind.PARAPHRASE,
            ModuleKind.FUSION,
            ModuleKind.COMPRESSION,
            ModuleKind.FUSION,
        ]
        assert [leaves(t) for t in forest.trees] == [(4,), (6, 7), (12,), (15, 16)]
        expected_instructions = [
            "Rephrase to emphasize the educational benefits of exposing students to texts from different religions.",
            "Combine these sentences to highlight the historical connection between religion and the advancement of sciences.",
            "Shorten this sentence to focus on the importance of examining different cultures and their perspectives.",
            "Merge these sentences to emphasize the development of empathy and critical thinking skills through exploring diverse cultures.",
        ]
        assert [t.root.instruction for t in forest.trees] == expected_instructions

        posthoc = parse_program("\n".join(OHIO_PROGRAM_LINES))
        assert len(posthoc.trees) == 2 and not posthoc.rejected
        assert [t.root.kind for t in posthoc.trees] == [ModuleKind.COMPRESSION, ModuleKind.FUSION]
        assert [leaves(t) for t in posthoc.trees] == [(3,), (3, 17)]
        assert posthoc.trees[0].root.instruction == "Focus on the starting point of the Ohio River."
        assert (
            posthoc.trees[1].root.instruction
            == "Combine these sentences to describe the length and endpoint of the Ohio River."
        )
    print("[PASS] criterion 1: parser golden suite (figures parse exactly)")


def test_criterion_2_attribution_soundness():
    with _Timer(10.0):
        rng = random.Random(20240)
        backend = MockOpBackend()
        for _ in range(1000):
            n = rng.randint(2, 16)
            corpus = corpus_of(n, docs=rng.randint(1, 3))
            forest = random_forest(rng, max_id=n)
            answer = execute_forest(forest, corpus, backend)
            for sentence in answer.sentences:
                assert sentence.sentence_citations == leaves(forest.trees[sentence.tree_index])
            assert no_attribution_rate(answer) == 0.0
    print("[PASS] criterion 2: citations == tree leaves and no-attribution rate 0.0 on 1000 forests")


def test_criterion_3_validator_failure_classes():
    with _Timer(1.0):
        text = "\n".join(
            [
                "- paraphrase(S1)",
                '- compression(instruction="Focus on the starting point.")',
                "- fusion(S1, S2",
                "- compression(S2)",
            ]
        )
        forest = parse_program(text)
        assert len(forest.trees) == 2  # siblings unaffected
        kinds = [r.kind for r in forest.rejected]
        assert kinds == [ErrorKind.ARITY_ERROR, ErrorKind.UNCLOSED_PARENTHESIS]
    print("[PASS] criterion 3: missing-argument and unclosed-parenthesis rejections isolate per line")


def test_criterion_4_offline_end_to_end(tmp_path):
    with _Timer(5.0):
        dataset = tmp_path / "tasks.jsonl"
        write_dataset(dataset, count=10)

        out1, out2, replay_out = tmp_path / "run1", tmp_path / "run2", tmp_path / "replay"
        for out in (out1, out2):
            assert cmd_run(RunConfig(out=str(out)), str(dataset)) == 0
        assert cmd_replay(RunConfig(out=str(replay_out)), str(dataset)) == 0

        baseline = (out1 / "answers.jsonl").read_bytes()
        assert baseline == (out2 / "answers.jsonl").read_bytes()
        assert baseline == (replay_out / "answers.jsonl").read_bytes()
        for trace in sorted((out1 / "traces").glob("*")):
            data = trace.read_bytes()
            assert data == (out2 / "traces" / trace.name).read_bytes()
            assert data == (replay_out / "traces" / trace.name).read_bytes()

        eval_out = tmp_path / "eval"
        assert cmd_evaluate(RunConfig(out=str(eval_out)), str(out1 / "answers.jsonl"), str(dataset)) == 0
        report = json.loads((eval_out / "report.json").read_text())
        assert report["attribution"]["precision"] == 1.0
        assert report["attribution"]["recall"] == 1.0
        assert report["attribution"]["f1"] == 1.0
        assert report["no_attr_rate"] == 0.0
        assert report["module_entailment"] == 1.0
    print("[PASS] criterion 4: offline 10-task run has perfect attribution, byte-stable and replayable")


class _ScriptedJudge:
    def __init__(self, accept):
        self.id = "scripted"
        self.accept = accept
        self.calls = 0

    def decide(self, premise, hypothesis):
        self.calls += 1
        return Verdict(self.accept(hypothesis), self.id, premise, hypothesis)

    def relevant(self, query, document_text):
        return True


def test_criterion_5_refinement_contract():
    with _Timer(1.0):
        def flagged_answer():
            corpus = corpus_of(2)
            forest = parse_program("- paraphrase(S1)\n- compression(S2)")
            answer = execute_forest(forest, corpus, MockOpBackend())
            return answer

        # first passing candidate wins; exactly 5 generations, judge stops early
        answer = flagged_answer()
        target = answer.sentences[1].trace
        check_trace(answer, _ScriptedJudge(lambda h: h != target.output))
        backend = MockOpBackend()
        judge = _ScriptedJudge(lambda h: h.startswith("variant1"))
        new_output = refine_node(target, backend, judge, RefineConfig())
        assert backend.calls == 5
        assert judge.calls == 2
        assert new_output.startswith("variant1:")
        assert target.entailed is True and target.refined

        # all candidates fail: candidate 1 stands
        answer = flagged_answer()
        target = answer.sentences[1].trace
        check_trace(answer, _ScriptedJudge(lambda h: h != target.output))
        backend = MockOpBackend()
        judge = _ScriptedJudge(lambda h: False)
        new_output = refine_node(target, backend, judge, RefineConfig())
        assert backend.calls == 5 and judge.calls == 5
        assert new_output.startswith("variant0:")
        assert target.entailed is False and target.refined

        # answer-level: fraction non-decreasing, citations unchanged
        answer = flagged_answer()
        flagged_text = answer.sentences[1].text
        judge = _ScriptedJudge(lambda h: h != flagged_text)
        check_trace(answer, judge)
        citations_before = [s.sentence_citations for s in answer.sentences]
        refined, stats = refine_answer(answer, MockOpBackend(), judge)
        assert stats.entailed_fraction_after >= stats.entailed_fraction_before
        assert stats.entailed_fraction_before == pytest.approx(0.5)
        assert stats.entailed_fraction_after == pytest.approx(1.0)
        assert [s.sentence_citations for s in refined.sentences] == citations_before
    print("[PASS] criterion 5: refinement samples 5, selects first pass, falls back to candidate 1")


@lru_cache(maxsize=None)
def _lcs_oracle(a: tuple, b: tuple) -> int:
    if not a or not b:
        return 0
    if a[-1] == b[-1]:
        return 1 + _lcs_oracle(a[:-1], b[:-1])
    return max(_lcs_oracle(a[:-1], b), _lcs_oracle(a, b[:-1]))


ROUGE_PAIRS = [
    ("the cat sat", "the cat ran"),
    ("a b c d", "a b c d"),
    ("a b c d", "d c b a"),
    ("one two three", "one three two"),
    ("alpha", "alpha beta"),
    ("alpha beta gamma delta", "beta delta"),
    ("x y z", "p q r"),
    ("repeat repeat repeat", "repeat"),
    ("the quick brown fox", "the brown quick fox"),
    ("sentence with several common words", "several common words appear here"),
    ("a a b b", "a b a b"),
    ("numbers 1 2 3", "numbers 3 2 1"),
    ("start middle end", "start end"),
    ("one", "one"),
    ("left right", "right left"),
    ("w1 w2 w3 w4 w5", "w1 w3 w5"),
    ("abc def ghi", "abc xyz ghi"),
    ("t u v w", "u v"),
    ("m n o p q", "n p q m"),
    ("full overlap test case", "full overlap test case extra"),
]


def test_criterion_6_metric_oracles():
    with _Timer(1.0):
        universe = [1, 2, 3, 4, 5, 6]
        subsets = []
        for size in range(len(universe) + 1):
            subsets.extend(set(c) for c in itertools.combinations(universe, size))
        for pred in subsets:
            for gold in subsets:
                score = citation_overlap([pred], [gold])
                common = len(pred & gold)
                if not pred and not gold:
                    assert score.f1 is None
                    continue
                if not pred:
                    assert score.precision is None
                    assert score.recall == common / len(gold)
                    assert score.f1 == 0.0
                    continue
                if not gold:
                    assert score.recall is None
                    assert score.precision == common / len(pred)
                    assert score.f1 == 0.0
                    continue
                p, r = common / len(pred), common / len(gold)
                assert score.precision == p and score.recall == r
                expected_f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
                assert score.f1 == pytest.approx(expected_f1, abs=1e-12)

        assert len(ROUGE_PAIRS) == 20
        for cand, ref in ROUGE_PAIRS:
            a, b = tuple(cand.split()), tuple(ref.split())
            lcs = _lcs_oracle(a, b)
            expected = (
                0.0
                if lcs == 0
                else 2 * (lcs / len(a)) * (lcs / len(b)) / (lcs / len(a) + lcs / len(b))
            )
            assert rouge_l(cand, [ref]).rl == pytest.approx(expected, abs=1e-12), (cand, ref)

        from genprog.metrics import attribution_f1

        assert attribution_f1([(1.0, 0.5)]).f1 == pytest.approx(2 / 3, abs=1e-9)
        assert attribution_f1([(0.0, 0.0)]).f1 == 0.0
        pooled_harmonic = 2 * 0.851 * 0.916 / (0.851 + 0.916)
        assert round(pooled_harmonic, 3) == 0.882
        assert abs(pooled_harmonic - 0.871) > 1e-3  # macro-average is a distinct choice
    print("[PASS] criterion 6: overlap/ROUGE/F1 match enumeration, LCS oracle, and closed forms")


def test_criterion_7_extractive_traceability():
    with _Timer(1.0):
        task = Task(
            id="t",
            query="q",
            documents=(
                Document(sentences=("Alpha one two.", "Beta three four.", "Gamma five six.")),
                Document(sentences=("Delta seven eight.", "Epsilon nine ten.")),
            ),
        )
        source = index_corpus(task)

        class PickLast(MockSummarizer):
            def extract(self, query, sentences, numsent):
                return list(sentences[-numsent:])

            def abstract(self, query, sentences, numsent):
                return ["a rewritten summary line."]

        summarized = summarize_corpus(
            "q", task, source, SummaryMethod.EXTRACTIVE, PickLast(), numsent=1
        )
        forest = parse_program("- fusion(S1, S2)")
        answer = execute_forest(forest, summarized.corpus, MockOpBackend())
        consumed = {
            node.output for node in answer.sentences[0].trace.walk() if node.kind == "leaf"
        }
        remapped = remap_citations(answer, summarized)
        assert remapped.sentences[0].sentence_citations == (3, 5)
        cited_texts = {source.text_of(c) for c in remapped.sentences[0].sentence_citations}
        assert cited_texts == consumed  # byte-equal round trip

        abstractive = summarize_corpus(
            "q", task, source, SummaryMethod.ABSTRACTIVE, PickLast(), numsent=1
        )
        answer2 = execute_forest(forest, abstractive.corpus, MockOpBackend())
        with pytest.raises(MissingOriginMap):
            remap_citations(answer2, abstractive)
    print("[PASS] criterion 7: extractive remap preserves exact texts; abstractive remap raises")


def test_criterion_8_roundtrip():
    with _Timer(5.0):
        rng = random.Random(777)
        for _ in range(1000):
            forest = random_forest(rng, max_id=50)
            reparsed = parse_program(serialize(forest))
            assert not reparsed.rejected
            assert same_structure(reparsed, forest)
    print("[PASS] criterion 8: parse(serialize(f)) structural equality on 1000 random forests")


SMOKE_URL = os.environ.get("GENPROG_SMOKE_BASE_URL")


@pytest.mark.skipif(not SMOKE_URL, reason="set GENPROG_SMOKE_BASE_URL to run the live smoke test")
def test_criterion_9_live_smoke(tmp_path):
    dataset = tmp_path / "tasks.jsonl"
    write_dataset(dataset, count=1)
    config = RunConfig(
        backend="live",
        judge="llm",
        base_url=SMOKE_URL,
        model=os.environ.get("GENPROG_SMOKE_MODEL", "gpt-4o-mini"),
        cache_dir=str(tmp_path / "cache"),
        out=str(tmp_path / "out"),
    )
    assert cmd_run(config, str(dataset)) == 0
    record = json.loads((tmp_path / "out" / "answers.jsonl").read_text().splitlines()[0])
    assert record["sentences"]
    assert all(s["citations"] for s in record["sentences"])
    eval_out = tmp_path / "eval"
    assert cmd_evaluate(config_with_out(config, eval_out), str(tmp_path / "out" / "answers.jsonl"), str(dataset)) == 0

    from genprog.backends import OpenAIChatBackend
    from genprog.judge import LlmJudge

    chat = OpenAIChatBackend(
        config.base_url, config.model, cache_dir=str(tmp_path / "cache")
    )
    probe = "The river flows south."
    assert LlmJudge(chat).decide(probe, probe).entailed  # reflexivity probe
    print("[PASS] criterion 9: live smoke test produced a cited answer and a report")


def config_with_out(config: RunConfig, out: Path) -> RunConfig:
    from dataclasses import replace

    return replace(config, out=str(out))
