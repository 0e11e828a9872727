"""The four text operations, executed against a pluggable backend.

The mock backend is a pure function of the request, chosen so that its
temperature-0 outputs only ever reuse input tokens: paraphrase is identity,
compression keeps the first half of the tokens, fusion joins its inputs.
That makes the offline pipeline analytically checkable end to end.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Protocol

from .backends import ChatBackend, Completion, EmptyCompletion
from .corpus import split_sentences
from .dsl import ModuleKind

logger = logging.getLogger(__name__)

__all__ = [
    "ArityError",
    "LiveOpBackend",
    "MockOpBackend",
    "OpBackend",
    "OpRequest",
    "OpResult",
    "Sampling",
    "compress",
    "extract",
    "fuse",
    "paraphrase",
    "run_op",
]


class ArityError(ValueError):
    """Input count does not match the operation's signature."""


@dataclass(frozen=True)
class Sampling:
    temperature: float = 0.0
    sample_index: int = 0


@dataclass(frozen=True)
class OpRequest:
    kind: ModuleKind
    inputs: tuple[str, ...]
    instruction: str | None = None
    temperature: float = 0.0
    sample_index: int = 0

    def __post_init__(self):
        if self.kind is ModuleKind.FUSION:
            if len(self.inputs) < 2:
                raise ArityError(f"fusion requires at least 2 inputs, got {len(self.inputs)}")
        elif len(self.inputs) != 1:
            raise ArityError(f"{self.kind.value} takes exactly 1 input, got {len(self.inputs)}")
        if self.temperature == 0 and self.sample_index != 0:
            raise ValueError("sample_index must be 0 at temperature 0")


@dataclass(frozen=True)
class OpResult:
    text: str
    backend_id: str
    cached: bool = False


PARAPHRASE_PROMPT = """You are a paraphrasing assistant. Your task is to generate a paraphrased version of the provided sentence while strictly preserving its original meaning. If an optional instruction is included, ensure that your paraphrase adheres to it. Do not introduce any additional information or commentary. Your output should be only the paraphrased sentence, with no extra text or labels.

**Instruction**:
[[INSTRUCTION]]

**Sentence**:
[[SENTENCE]]"""

COMPRESSION_PROMPT = """You are a sentence compression assistant. Your task is to generate a compressed version of the provided sentence while maintaining its original meaning. If an optional instruction is provided, ensure that your output adheres to it. Do not include any additional commentary or extra text. Your response should consist solely of the compressed sentence.

**Instruction**:
[[INSTRUCTION]]

**Sentence**:
[[SENTENCE]]"""

FUSION_PROMPT = """You are a sentence fusion assistant. Your task is to generate a single sentence that fuses the information from the provided multiple sentences (each on a new line). Merge similar information while ensuring that all differences are retained. If an optional instruction is provided, adhere to it. Your response should consist solely of the fused sentence, without any additional commentary or labels.

**Instruction**:
[[INSTRUCTION]]

**Sentence(s)**:
[[SENTENCE]]"""

_PROMPTS = {
    ModuleKind.PARAPHRASE: PARAPHRASE_PROMPT,
    ModuleKind.COMPRESSION: COMPRESSION_PROMPT,
    ModuleKind.FUSION: FUSION_PROMPT,
}


def build_op_prompt(request: OpRequest) -> str:
    template = _PROMPTS[request.kind]
    return template.replace("[[INSTRUCTION]]", request.instruction or "").replace(
        "[[SENTENCE]]", "\n".join(request.inputs)
    )


class OpBackend(Protocol):
    id: str

    def run(self, request: OpRequest) -> Completion: ...


class MockOpBackend:
    """Deterministic analytic stand-in for a generation model.

    Temperature 0: paraphrase echoes its input, compression keeps the first
    ceil(w/2) whitespace tokens (adding a final period if missing), fusion
    joins inputs with single spaces stripping all but the last terminal
    period. Positive temperatures prefix "variant{sample_index}: ".
    """

    def __init__(self):
        self.id = "mock"
        self.calls = 0

    def run(self, request: OpRequest) -> Completion:
        self.calls += 1
        if request.kind is ModuleKind.PARAPHRASE:
            base = request.inputs[0]
        elif request.kind is ModuleKind.COMPRESSION:
            tokens = request.inputs[0].split()
            kept = " ".join(tokens[: math.ceil(len(tokens) / 2)])
            base = kept if kept.endswith(".") else kept + "."
        elif request.kind is ModuleKind.FUSION:
            parts = [t[:-1] if t.endswith(".") else t for t in request.inputs[:-1]]
            parts.append(request.inputs[-1])
            base = " ".join(parts)
        else:
            base = request.inputs[0]
        if request.temperature > 0:
            base = f"variant{request.sample_index}: {base}"
        return Completion(text=base, cached=False)


class LiveOpBackend:
    """Formats the per-operation prompt and delegates to a chat backend."""

    def __init__(self, chat: ChatBackend, max_tokens: int = 512):
        self.chat = chat
        self.id = getattr(chat, "id", "chat")
        self.max_tokens = max_tokens
        self.calls = 0

    def run(self, request: OpRequest) -> Completion:
        self.calls += 1
        prompt = build_op_prompt(request)
        return self.chat.complete(
            prompt,
            temperature=request.temperature,
            sample_index=request.sample_index,
            max_tokens=self.max_tokens,
        )


def run_op(request: OpRequest, backend: OpBackend) -> OpResult:
    """Execute one operation; extract never touches the backend."""
    if request.kind is ModuleKind.EXTRACT:
        return OpResult(text=request.inputs[0], backend_id="extract", cached=False)
    completion = backend.run(request)
    text = completion.text.strip()
    if not text:
        raise EmptyCompletion(f"{request.kind.value} returned empty text")
    sentences = split_sentences(text)
    if len(sentences) > 1:
        logger.warning(
            "%s returned %d sentences; joining into one", request.kind.value, len(sentences)
        )
        text = " ".join(sentences)
    return OpResult(text=text, backend_id=backend.id, cached=completion.cached)


def paraphrase(
    text: str,
    instruction: str | None = None,
    *,
    backend: OpBackend,
    sampling: Sampling = Sampling(),
) -> OpResult:
    request = OpRequest(
        ModuleKind.PARAPHRASE, (text,), instruction, sampling.temperature, sampling.sample_index
    )
    return run_op(request, backend)


def compress(
    text: str,
    instruction: str | None = None,
    *,
    backend: OpBackend,
    sampling: Sampling = Sampling(),
) -> OpResult:
    request = OpRequest(
        ModuleKind.COMPRESSION, (text,), instruction, sampling.temperature, sampling.sample_index
    )
    return run_op(request, backend)


def fuse(
    inputs: list[str] | tuple[str, ...],
    instruction: str | None = None,
    *,
    backend: OpBackend,
    sampling: Sampling = Sampling(),
) -> OpResult:
    request = OpRequest(
        ModuleKind.FUSION, tuple(inputs), instruction, sampling.temperature, sampling.sample_index
    )
    return run_op(request, backend)


def extract(text: str) -> OpResult:
    return OpResult(text=text, backend_id="extract", cached=False)
