from __future__ import annotations

import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from genprog.backends import ScriptedChatBackend
from genprog.corpus import Document, Task, index_corpus
from genprog.dsl import ModuleKind, leaves, parse_program, same_structure, validate
from genprog.executor import AllTreesInvalid
from genprog.planner import (
    MockDirectChat,
    MockPlannerChat,
    PlanMode,
    build_plan_prompt,
    default_shots,
    generate_direct,
    parse_cited_answer,
    plan,
    plan_posthoc,
    render_doc_context,
)


def corpus_with(*sentences, task_id="t"):
    docs = (Document(sentences=tuple(sentences)),)
    return index_corpus(Task(id=task_id, query="q", documents=docs))


EDU_SENTENCE = (
    "Exposing students to texts from different religions can be helpful to student "
    "learning when shared in context for the development and advancement of societies."
)


class TestBuildPlanPrompt:
    def test_context_lines_present(self):
        sentences = ["Leading filler one.", "Second filler here.", "Third filler text."]
        sentences.insert(3, EDU_SENTENCE)
        corpus = corpus_with(*sentences)
        prompt = build_plan_prompt("should it be taught", corpus)
        assert f"S4: {EDU_SENTENCE}" in prompt.user

    def test_shots_before_your_task(self):
        corpus = corpus_with("Alpha beta.")
        prompt = build_plan_prompt("q", corpus)
        shot_output = default_shots(PlanMode.CONCURRENT)[0].output.splitlines()[0]
        assert prompt.user.index(shot_output) < prompt.user.index("**YOUR TASK**")

    def test_one_shot_by_default(self):
        for mode in PlanMode:
            assert len(default_shots(mode)) == 1

    def test_posthoc_includes_target_verbatim(self):
        corpus = corpus_with("Alpha beta.")
        target = "The alpha is beta. It is known."
        prompt = build_plan_prompt("q", corpus, mode=PlanMode.POSTHOC, target=target)
        assert target in prompt.user
        assert "Answer to reconstruct:" in prompt.user

    def test_posthoc_requires_target(self):
        with pytest.raises(ValueError):
            build_plan_prompt("q", corpus_with("A."), mode=PlanMode.POSTHOC)

    def test_deterministic(self):
        corpus = corpus_with("Alpha beta.", "Gamma delta.")
        a = build_plan_prompt("q", corpus)
        b = build_plan_prompt("q", corpus)
        assert a.user == b.user

    def test_direct_document_context(self):
        corpus = index_corpus(
            Task(
                id="t",
                query="q",
                documents=(
                    Document(sentences=("One a.", "One b.")),
                    Document(sentences=("Two c.",)),
                ),
            )
        )
        prompt = build_plan_prompt("q", corpus, mode=PlanMode.DIRECT, granularity="document")
        assert "[1] One a. One b." in prompt.user
        assert "[2] Two c." in prompt.user

    def test_direct_sentence_context(self):
        corpus = corpus_with("One a.", "Two b.")
        prompt = build_plan_prompt("q", corpus, mode=PlanMode.DIRECT, granularity="sentence")
        assert "S1: One a." in prompt.user


class TestPlan:
    def test_scripted_forest(self):
        corpus = corpus_with("Alpha beta.", "Gamma delta.")
        script = '- fusion(S1, S2, instruction="merge them")'
        forest = plan("q", corpus, ScriptedChatBackend(script))
        assert same_structure(forest, parse_program(script))

    def test_partial_rejection_preserved(self):
        corpus = corpus_with("Alpha beta.", "Gamma delta.", "Epsilon zeta.")
        script = "- paraphrase(S1)\n- compression(S2)\n- extract(S3)\n- fusion(S1"
        forest = plan("q", corpus, ScriptedChatBackend(script))
        assert len(forest.trees) == 3
        assert len(forest.rejected) == 1

    def test_out_of_range_tree_moved_to_rejected(self):
        corpus = corpus_with("Alpha beta.")
        script = "- paraphrase(S1)\n- compression(S9)"
        forest = plan("q", corpus, ScriptedChatBackend(script))
        assert len(forest.trees) == 1
        assert any("S9" in r.message for r in forest.rejected)

    def test_all_invalid_raises(self):
        corpus = corpus_with("Alpha beta.")
        with pytest.raises(AllTreesInvalid):
            plan("q", corpus, ScriptedChatBackend("- compression(S9)"))

    def test_validates_clean(self):
        corpus = corpus_with("Alpha beta.", "Gamma delta.")
        forest = plan("q", corpus, ScriptedChatBackend("- fusion(S1, S2)"))
        assert validate(forest, corpus).ok

    def test_temperature_zero(self):
        backend = ScriptedChatBackend("- paraphrase(S1)")
        plan("q", corpus_with("Alpha beta."), backend)
        assert backend.calls[0][1] == 0.0


class TestPlanPosthoc:
    def test_scripted(self):
        corpus = corpus_with("Alpha beta.", "Gamma delta.")
        script = "- compression(S1)\n- fusion(S1, S2)"
        forest = plan_posthoc("q", corpus, "One. Two.", ScriptedChatBackend(script))
        assert [leaves(t) for t in forest.trees] == [(1,), (1, 2)]

    def test_count_mismatch_logged(self, caplog):
        corpus = corpus_with("Alpha beta.")
        with caplog.at_level("WARNING"):
            plan_posthoc("q", corpus, "One. Two. Three.", ScriptedChatBackend("- paraphrase(S1)"))
        assert any("target sentences" in r.message for r in caplog.records)

    def test_empty_target_rejected(self):
        with pytest.raises(ValueError):
            plan_posthoc("q", corpus_with("A."), "  ", ScriptedChatBackend("x"))


class TestParseCitedAnswer:
    def test_trailing_groups(self):
        answer = parse_cited_answer("A claim.[3][17]")
        assert answer.sentences[0].text == "A claim."
        assert answer.sentences[0].citations == (3, 17)

    def test_no_citations(self):
        answer = parse_cited_answer("No cite here.")
        assert answer.sentences[0].citations == ()

    def test_multi_sentence(self):
        answer = parse_cited_answer("X.[1] Y.[1][2]")
        assert [s.text for s in answer.sentences] == ["X.", "Y."]
        assert [s.citations for s in answer.sentences] == [(1,), (1, 2)]

    def test_embedded_citation(self):
        answer = parse_cited_answer("The river[3] is long.")
        assert answer.sentences[0].text == "The river is long."
        assert answer.sentences[0].citations == (3,)

    def test_regex_oracle(self):
        # Independent check: expected citation sets recovered with a regex
        # per sentence chunk before stripping.
        raw = "Alpha one.[1] Beta two.[2][3] Gamma three. Delta four.[1][4]"
        chunks = re.findall(r"[^.]+\.(?:\[\d+\])*", raw)
        expected = [
            tuple(sorted({int(m) for m in re.findall(r"\[(\d+)\]", chunk)})) for chunk in chunks
        ]
        answer = parse_cited_answer(raw)
        assert [s.citations for s in answer.sentences] == expected

    @given(st.text(alphabet="ab .[]12", max_size=60))
    def test_totality(self, text):
        parse_cited_answer(text)

    def test_idempotent_on_plain_text(self):
        first = parse_cited_answer("One fact.[2] Another fact.[3] Final words.")
        plain = " ".join(s.text for s in first.sentences)
        second = parse_cited_answer(plain)
        assert [s.text for s in second.sentences] == [s.text for s in first.sentences]
        assert all(s.citations == () for s in second.sentences)


class TestGenerateDirect:
    def test_scripted_completion(self):
        corpus = corpus_with("Alpha beta.", "Gamma delta.")
        backend = ScriptedChatBackend("Answer one.[1][2] Answer two.")
        answer = generate_direct("q", corpus, backend)
        assert [s.citations for s in answer.sentences] == [(1, 2), ()]

    def test_sampling_forwarded(self):
        backend = ScriptedChatBackend("Answer.[1]")
        generate_direct(
            "q", corpus_with("Alpha beta."), backend, temperature=1.0, sample_index=2
        )
        assert backend.calls[0][1:] == (1.0, 2)


class TestMockPlanners:
    def test_mock_planner_program_shape(self):
        corpus = corpus_with(
            "Alpha beta gamma.", "Delta epsilon zeta.", "Eta theta iota.", "Kappa lam mu."
        )
        forest = plan("q", corpus, MockPlannerChat())
        kinds = [t.root.kind for t in forest.trees]
        assert kinds == [ModuleKind.PARAPHRASE, ModuleKind.COMPRESSION, ModuleKind.FUSION]
        all_leaves = {sid for t in forest.trees for sid in leaves(t)}
        assert all_leaves <= {1, 2, 3, 4}

    def test_mock_planner_small_corpus(self):
        forest = plan("q", corpus_with("Alpha beta."), MockPlannerChat())
        assert [t.root.kind for t in forest.trees] == [ModuleKind.PARAPHRASE]

    def test_mock_direct_has_uncited_sentence(self):
        corpus = corpus_with("Alpha beta.", "Gamma delta.")
        answer = generate_direct("q", corpus, MockDirectChat())
        assert any(not s.citations for s in answer.sentences)
        assert any(s.citations for s in answer.sentences)

    def test_render_doc_context(self):
        corpus = index_corpus(
            Task(
                id="t",
                query="q",
                documents=(
                    Document(sentences=("A one.", "A two.")),
                    Document(sentences=("B one.",)),
                ),
            )
        )
        assert render_doc_context(corpus) == "[1] A one. A two.\n\n[2] B one."
