from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from genprog.backends import ScriptedChatBackend
from genprog.corpus import split_sentences
from genprog.dsl import ModuleKind
from genprog.text_ops import (
    ArityError,
    LiveOpBackend,
    MockOpBackend,
    OpRequest,
    Sampling,
    build_op_prompt,
    compress,
    extract,
    fuse,
    paraphrase,
    run_op,
)

WORDS = st.text(alphabet="abcdefg", min_size=1, max_size=6)
SENTENCES = st.lists(WORDS, min_size=1, max_size=8).map(lambda ws: " ".join(ws) + ".")


@pytest.fixture
def mock():
    return MockOpBackend()


class TestMockRules:
    def test_paraphrase_identity(self, mock):
        assert paraphrase("A cat sat.", backend=mock).text == "A cat sat."

    def test_paraphrase_sampled_variant(self, mock):
        result = paraphrase(
            "A cat sat.", backend=mock, sampling=Sampling(temperature=1.0, sample_index=2)
        )
        assert result.text == "variant2: A cat sat."

    def test_compress_half(self, mock):
        assert compress("one two three four.", backend=mock).text == "one two."

    def test_compress_single_token(self, mock):
        assert compress("word.", backend=mock).text == "word."

    def test_fuse_join(self, mock):
        assert fuse(["A b.", "C d."], backend=mock).text == "A b C d."

    def test_fuse_three(self, mock):
        assert fuse(["X.", "Y.", "Z."], backend=mock).text == "X Y Z."

    def test_fuse_arity(self, mock):
        with pytest.raises(ArityError):
            fuse(["only one."], backend=mock)

    @given(SENTENCES, st.integers(min_value=0, max_value=3))
    def test_purity(self, sentence, index):
        first = MockOpBackend().run(
            OpRequest(ModuleKind.PARAPHRASE, (sentence,), None, 1.0, index)
        )
        second = MockOpBackend().run(
            OpRequest(ModuleKind.PARAPHRASE, (sentence,), None, 1.0, index)
        )
        assert first.text == second.text

    @given(SENTENCES)
    def test_compress_token_count(self, sentence):
        out = compress(sentence, backend=MockOpBackend()).text
        w = len(sentence.split())
        assert len(out.split()) == -(-w // 2)

    @given(SENTENCES)
    def test_mock_outputs_single_sentence(self, sentence):
        out = compress(sentence, backend=MockOpBackend()).text
        assert len(split_sentences(out)) == 1


class TestExtract:
    def test_identity(self, mock):
        assert extract("Verbatim sentence.").text == "Verbatim sentence."

    def test_no_backend_calls(self, mock):
        before = mock.calls
        run_op(OpRequest(ModuleKind.EXTRACT, ("anything.",)), mock)
        assert mock.calls == before

    @given(SENTENCES)
    def test_identity_law(self, sentence):
        assert extract(sentence).text == sentence


class TestRequests:
    def test_sample_index_requires_temperature(self):
        with pytest.raises(ValueError):
            OpRequest(ModuleKind.PARAPHRASE, ("x.",), None, 0.0, 2)

    def test_single_input_ops_reject_many(self):
        with pytest.raises(ArityError):
            OpRequest(ModuleKind.COMPRESSION, ("a.", "b."))


class TestPrompts:
    def test_instruction_slot_filled(self):
        prompt = build_op_prompt(
            OpRequest(ModuleKind.COMPRESSION, ("The long sentence.",), "Keep the subject.")
        )
        assert "Keep the subject." in prompt
        assert "The long sentence." in prompt
        assert "[[" not in prompt

    def test_instruction_slot_empty_but_header_kept(self):
        prompt = build_op_prompt(OpRequest(ModuleKind.PARAPHRASE, ("A cat.",)))
        assert "**Instruction**:" in prompt
        assert "[[" not in prompt

    def test_fusion_inputs_on_own_lines(self):
        prompt = build_op_prompt(OpRequest(ModuleKind.FUSION, ("First.", "Second.")))
        assert "First.\nSecond." in prompt


class TestLiveCollapse:
    def test_multi_sentence_completion_joined(self, caplog):
        chat = ScriptedChatBackend("First half. Second half.")
        backend = LiveOpBackend(chat)
        with caplog.at_level("WARNING"):
            result = paraphrase("Anything.", backend=backend)
        assert result.text == "First half. Second half."
        assert any("joining" in r.message for r in caplog.records)

    def test_single_sentence_untouched(self):
        chat = ScriptedChatBackend("One sentence only.")
        assert paraphrase("x.", backend=LiveOpBackend(chat)).text == "One sentence only."

    def test_sampling_forwarded(self):
        chat = ScriptedChatBackend("Out.")
        paraphrase(
            "x.",
            backend=LiveOpBackend(chat),
            sampling=Sampling(temperature=1.0, sample_index=3),
        )
        assert chat.calls[0][1] == 1.0
        assert chat.calls[0][2] == 3
