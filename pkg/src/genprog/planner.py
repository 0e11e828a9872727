"""Program planning and the direct generate-with-citations baseline.

Three modes share one prompt scaffold: concurrent planning emits a program
for a fresh answer, post-hoc planning reconstructs a given answer as a
program, and direct mode skips programs entirely, asking the model to write
the answer with bracketed citations.
"""
from __future__ import annotations

import importlib.resources
import json
import logging
import re
from dataclasses import dataclass
from enum import Enum

from .backends import ChatBackend, Completion
from .corpus import IndexedCorpus, render_context, split_sentences, split_sentences_spans
from .dsl import (
    DEFAULT_MAX_DEPTH,
    ProgramForest,
    RejectedLine,
    ValidationIssue,
    parse_program,
    validate,
)
from .executor import AllTreesInvalid

logger = logging.getLogger(__name__)

__all__ = [
    "CitedAnswer",
    "CitedSentence",
    "MockPlannerChat",
    "PlanMode",
    "PlanPrompt",
    "Shot",
    "build_plan_prompt",
    "default_shots",
    "generate_direct",
    "load_shots",
    "parse_cited_answer",
    "plan",
    "plan_posthoc",
    "render_doc_context",
]

# Bump when the post-hoc prompt extension changes; recorded in run configs.
POSTHOC_TEMPLATE_VERSION = "v1"


class PlanMode(Enum):
    CONCURRENT = "concurrent"
    POSTHOC = "posthoc"
    DIRECT = "direct"


@dataclass(frozen=True)
class Shot:
    question: str
    context: str
    output: str
    target: str | None = None  # post-hoc shots demonstrate the reconstruct section


@dataclass(frozen=True)
class PlanPrompt:
    user: str
    mode: PlanMode
    shots: tuple[Shot, ...]
    system: str | None = None


@dataclass(frozen=True)
class CitedSentence:
    text: str
    citations: tuple[int, ...]


@dataclass(frozen=True)
class CitedAnswer:
    sentences: tuple[CitedSentence, ...]
    raw: str


PROGRAM_TEMPLATE = """You are given a document consisting of passages and a specific question. Your task is to write an accurate, engaging, and concise answer to the given question that synthesizes the information from the document. Instead of providing the final answer directly, output a list of Python function calls that, when applied to the sentences, produce the final answer.
The arguments should be either sentence indices (e.g., S1) or other function calls. If you include an instruction in a function call, it must start with instruction="YOUR INSTRUCTION".

Your available functions:
1. **paraphrase(sentence, instruction=None)**
   *Purpose:* Rephrase the given sentence while preserving its original meaning.
   *Optional:* You can specify an instruction for a desired style or syntactic structure (e.g., instruction="YOUR INSTRUCTION").

2. **compression(sentence, instruction=None)**
   *Purpose:* Compress the given sentence to produce a shorter version that retains the essential content and syntactic structure.
   *Optional:* Include an instruction detailing which parts to preserve (e.g., instruction="YOUR INSTRUCTION").

3. **fusion(sentence_1, sentence_2, ... sentence_n, instruction=None)**
   *Purpose:* Merge multiple sentences into a single sentence. The sentences might convey similar or complementary information.
   *Optional:* Provide an instruction on how to combine the sentences, such as which parts to prioritize (e.g., instruction="YOUR INSTRUCTION").

**Careful:**
- **[Format]** Format your output as a bullet-point list, where each bullet point is a single sentence. For each sentence, you must output a series of Python function calls that, when executed, produce the final answer sentence. Each bullet should start with a "-" followed by the function calls without any additional content.
- **[Function Nesting]** You can nest functions as needed. The arguments for any function may be either a sentence identifier (from the document) or the output of another function call.

**EXAMPLES**
[[EXAMPLES]]

**YOUR TASK**
[[TASK]]"""

DIRECT_TEMPLATE = """Instruction: Write an accurate, engaging, and concise answer for the given question using only the provided search results (some of which might be irrelevant) and cite them properly. Use an unbiased and journalistic tone. Always cite for any factual claim with the corresponding passage number. When citing several search results, use [1][2][3]. Cite at least one document and at most three documents in each sentence. If multiple documents support the sentence, only cite a minimum sufficient subset of the documents.

**EXAMPLES**
[[EXAMPLES]]

**YOUR TASK**
[[TASK]]"""

_RECONSTRUCT_RULE = "Output exactly one bullet per sentence of the answer to reconstruct, in order."


def _program_task_block(question: str, context: str, target: str | None, output: str) -> str:
    lines = [f"Question:\n{question}", "", f"Document:\n{context}", ""]
    if target is not None:
        lines += [f"Answer to reconstruct:\n{target}", "", _RECONSTRUCT_RULE, ""]
    lines.append(f"Output:{output}")
    return "\n".join(lines)


def _direct_task_block(question: str, context: str, output: str) -> str:
    return f"Question: {question}\n\nPassages:\n{context}\n\nOutput:{output}"


def render_doc_context(corpus: IndexedCorpus) -> str:
    """Document-level context: one "[k]" labelled passage per document."""
    blocks = []
    for doc_index in range(1, corpus.doc_count + 1):
        blocks.append(f"[{doc_index}] {corpus.doc_text(doc_index)}")
    return "\n\n".join(blocks)


def load_shots(path) -> list[Shot]:
    """Read one-shot exemplars from a JSON file (a list or single object)."""
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    if isinstance(data, dict):
        data = [data]
    return [
        Shot(
            question=item["question"],
            context=item["context"],
            output=item["output"],
            target=item.get("target"),
        )
        for item in data
    ]


def default_shots(mode: PlanMode) -> list[Shot]:
    name = {
        PlanMode.CONCURRENT: "concurrent.json",
        PlanMode.POSTHOC: "posthoc.json",
        PlanMode.DIRECT: "direct.json",
    }[mode]
    ref = importlib.resources.files("genprog").joinpath("shots").joinpath(name)
    data = json.loads(ref.read_text(encoding="utf-8"))
    if isinstance(data, dict):
        data = [data]
    return [
        Shot(
            question=item["question"],
            context=item["context"],
            output=item["output"],
            target=item.get("target"),
        )
        for item in data
    ]


def build_plan_prompt(
    query: str,
    corpus: IndexedCorpus,
    shots: list[Shot] | None = None,
    mode: PlanMode = PlanMode.CONCURRENT,
    target: str | None = None,
    granularity: str = "document",
) -> PlanPrompt:
    """Assemble the full prompt for one task; deterministic for equal inputs."""
    if shots is None:
        shots = default_shots(mode)
    if mode is PlanMode.POSTHOC and target is None:
        raise ValueError("post-hoc planning requires a target output")
    if mode is PlanMode.DIRECT:
        context = render_doc_context(corpus) if granularity == "document" else render_context(corpus)
        examples = "\n\n".join(
            _direct_task_block(s.question, s.context, f" {s.output}") for s in shots
        )
        task = _direct_task_block(query, context, "")
        user = DIRECT_TEMPLATE.replace("[[EXAMPLES]]", examples).replace("[[TASK]]", task)
    else:
        context = render_context(corpus)
        examples = "\n\n".join(
            _program_task_block(s.question, s.context, s.target, f"\n{s.output}") for s in shots
        )
        task_target = target if mode is PlanMode.POSTHOC else None
        task = _program_task_block(query, context, task_target, "")
        user = PROGRAM_TEMPLATE.replace("[[EXAMPLES]]", examples).replace("[[TASK]]", task)
    return PlanPrompt(user=user, mode=mode, shots=tuple(shots))


def _plan_with_prompt(
    prompt: PlanPrompt,
    corpus: IndexedCorpus,
    backend: ChatBackend,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> ProgramForest:
    completion = backend.complete(prompt.user, temperature=0.0)
    forest = parse_program(completion.text, max_depth=max_depth)
    report = validate(forest, corpus, max_depth=max_depth)
    bad: dict[int, ValidationIssue] = {}
    for issue in report.issues:
        if issue.tree_index > 0:
            bad.setdefault(issue.tree_index - 1, issue)
    if bad:
        rejected = list(forest.rejected)
        for index in sorted(bad):
            issue = bad[index]
            rejected.append(
                RejectedLine(
                    text=forest.trees[index].source_text,
                    kind=issue.kind,
                    message=issue.message,
                    column=0,
                )
            )
        forest = ProgramForest(
            trees=tuple(t for i, t in enumerate(forest.trees) if i not in bad),
            rejected=tuple(rejected),
        )
    if not forest.trees:
        raise AllTreesInvalid(
            "planner produced no valid trees: "
            + "; ".join(f"{r.kind.value}({r.text[:40]!r})" for r in forest.rejected)
        )
    return forest


def plan(
    query: str,
    corpus: IndexedCorpus,
    backend: ChatBackend,
    shots: list[Shot] | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> ProgramForest:
    """Generate and parse a program for the query at temperature 0."""
    prompt = build_plan_prompt(query, corpus, shots=shots, mode=PlanMode.CONCURRENT)
    return _plan_with_prompt(prompt, corpus, backend, max_depth=max_depth)


def plan_posthoc(
    query: str,
    corpus: IndexedCorpus,
    target_output: str,
    backend: ChatBackend,
    shots: list[Shot] | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> ProgramForest:
    """Generate a program intended to reconstruct an existing answer."""
    if not target_output.strip():
        raise ValueError("target output must be non-empty")
    prompt = build_plan_prompt(
        query, corpus, shots=shots, mode=PlanMode.POSTHOC, target=target_output
    )
    forest = _plan_with_prompt(prompt, corpus, backend, max_depth=max_depth)
    expected = len(split_sentences(target_output))
    if len(forest.trees) != expected:
        logger.warning(
            "post-hoc program has %d trees for %d target sentences", len(forest.trees), expected
        )
    return forest


_CITATION_RE = re.compile(r"\[(\d+)\]")


def parse_cited_answer(text: str) -> CitedAnswer:
    """Split a bracket-cited completion into sentences with citation sets.

    Bracket groups are removed from the stored text; each group attaches to
    the sentence it trails or sits inside.
    """
    citations: list[tuple[int, int]] = []  # (offset in stripped text, id)
    pieces: list[str] = []
    removed = 0
    last = 0
    for match in _CITATION_RE.finditer(text):
        pieces.append(text[last : match.start()])
        citations.append((match.start() - removed, int(match.group(1))))
        removed += match.end() - match.start()
        last = match.end()
    pieces.append(text[last:])
    stripped = "".join(pieces)

    with_spans = split_sentences_spans(stripped)
    sentences = [s for s, _, _ in with_spans]
    spans = [(start, end) for _, start, end in with_spans]

    per_sentence: list[set[int]] = [set() for _ in sentences]
    for offset, cite in citations:
        if not sentences:
            break
        index = len(sentences) - 1
        for i, (_, end) in enumerate(spans):
            if offset <= end:
                index = i
                break
        per_sentence[index].add(cite)

    return CitedAnswer(
        sentences=tuple(
            CitedSentence(text=" ".join(s.split()), citations=tuple(sorted(ids)))
            for s, ids in zip(sentences, per_sentence)
        ),
        raw=text,
    )


def generate_direct(
    query: str,
    corpus: IndexedCorpus,
    backend: ChatBackend,
    shots: list[Shot] | None = None,
    granularity: str = "document",
    temperature: float = 0.0,
    sample_index: int = 0,
) -> CitedAnswer:
    """Baseline: one completion that writes the answer and its citations."""
    prompt = build_plan_prompt(
        query, corpus, shots=shots, mode=PlanMode.DIRECT, granularity=granularity
    )
    completion = backend.complete(
        prompt.user, temperature=temperature, sample_index=sample_index
    )
    return parse_cited_answer(completion.text)


class MockPlannerChat:
    """Offline planner: derives a small fixed-shape program from the prompt.

    Reads the S-ids present in the rendered context and emits a paraphrase,
    then a compression, then a fusion over the first ids. Pure function of
    the prompt text.
    """

    def __init__(self):
        self.id = "mock-planner"
        self.model = "mock"

    def complete(self, prompt, *, temperature=0.0, sample_index=0, max_tokens=512) -> Completion:
        section = prompt.split("**YOUR TASK**")[-1]
        ids = []
        for match in re.finditer(r"^S(\d+): ", section, flags=re.M):
            ids.append(int(match.group(1)))
        ids = sorted(set(ids))
        lines = []
        if len(ids) >= 1:
            lines.append(f"- paraphrase(S{ids[0]})")
        if len(ids) >= 2:
            lines.append(f"- compression(S{ids[1]})")
        if len(ids) >= 4:
            lines.append(
                f'- fusion(S{ids[2]}, S{ids[3]}, instruction="Combine the two sentences.")'
            )
        elif len(ids) == 3:
            lines.append(
                f'- fusion(S{ids[0]}, S{ids[2]}, instruction="Combine the two sentences.")'
            )
        return Completion(text="\n".join(lines), cached=False)


class MockDirectChat:
    """Offline direct baseline: cites the first passage, then adds an
    uncited closing sentence."""

    def __init__(self):
        self.id = "mock-direct"
        self.model = "mock"

    def complete(self, prompt, *, temperature=0.0, sample_index=0, max_tokens=512) -> Completion:
        section = prompt.split("**YOUR TASK**")[-1]
        first = re.search(r"^\[(\d+)\] ([^\n]+)", section, flags=re.M)
        if first is None:
            first = re.search(r"^S(\d+): ([^\n]+)", section, flags=re.M)
        if first is None:
            return Completion(text="No passages were provided.", cached=False)
        label, body = first.group(1), first.group(2)
        lead = split_sentences(body)[0]
        return Completion(text=f"{lead}[{label}] No further details were given.", cached=False)
