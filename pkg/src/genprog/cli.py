"""Batch runner: plan/execute datasets, evaluate answers, replay cached
runs, and emit standalone summaries.

One invocation processes a line-delimited JSON dataset. Outputs are written
atomically (temp file + rename): per-task trace JSON and program text under
<out>/traces/, an aggregate answers.jsonl, and per-task errors in
errors.jsonl. Exit codes: 0 success, 1 some tasks failed, 2 unusable
config or dataset.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

try:
    import tomllib  # py>=3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .backends import (
    DEFAULT_API_KEY_ENV,
    BackendError,
    CacheMiss,
    OpenAIChatBackend,
)
from .corpus import IndexedCorpus, ParseError, Task, index_corpus, load_dataset
from .dsl import serialize
from .executor import AllTreesInvalid, execute_forest, render_answer, trace_artifact
from . import judge as judge_mod
from .judge import Judge, LlmJudge, MockJudge
from .metrics import (
    AttributionScore,
    EvalReport,
    RougeScores,
    attribution_f1,
    attribution_precision,
    attribution_recall,
    citation_overlap,
    em_recall,
    no_attribution_rate,
    report_to_json,
    report_to_table,
    rouge_l,
    sentence_units,
)
from .planner import (
    POSTHOC_TEMPLATE_VERSION,
    MockDirectChat,
    MockPlannerChat,
    generate_direct,
    load_shots,
    plan,
    plan_posthoc,
)
from .refine import RefineConfig, check_trace, refine_answer, rerank_outputs
from .summarize import (
    LlmSummarizer,
    MockSummarizer,
    SummarizedCorpus,
    SummaryMethod,
    remap_citations,
    summarize_corpus,
)
from .text_ops import LiveOpBackend, MockOpBackend

logger = logging.getLogger(__name__)

MODES = ("genprog", "direct", "posthoc")
SUMMARIZE_OPTIONS = ("none", "extractive", "abstractive", "ext_abs")
JUDGES = ("mock", "llm")
BACKENDS = ("mock", "live")
GRANULARITIES = ("sentence", "document")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mode: str = "genprog"
    summarize: str = "none"
    numsent: int = 3
    relevance_filter: bool = False
    refine: bool = False
    samples: int = 5
    temperature: float = 1.0
    judge: str = "mock"
    backend: str = "mock"
    model: str = "gpt-4o"
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = DEFAULT_API_KEY_ENV
    cache_dir: str | None = None
    max_concurrency: int = 8
    granularity: str = "sentence"
    out: str = "runs/out"
    max_tokens: int = 512
    check_trace: bool = True
    shots: str | None = None
    offline: bool = False

    def validated(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.summarize not in SUMMARIZE_OPTIONS:
            raise ConfigError(f"summarize must be one of {SUMMARIZE_OPTIONS}")
        if self.judge not in JUDGES:
            raise ConfigError(f"judge must be one of {JUDGES}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"granularity must be one of {GRANULARITIES}")
        if self.numsent < 1 or self.samples < 1 or self.max_concurrency < 1:
            raise ConfigError("numsent, samples, and max-concurrency must be >= 1")
        if self.judge == "llm" and self.backend != "live":
            raise ConfigError("judge=llm requires backend=live")
        if self.backend == "live" and not self.cache_dir and self.offline:
            raise ConfigError("offline replay of a live backend requires --cache-dir")
        return self


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, "rb") as handle:
        data = tomllib.load(handle)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**data)


def apply_flag_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for name in (
        "mode",
        "summarize",
        "numsent",
        "refine",
        "samples",
        "temperature",
        "judge",
        "backend",
        "model",
        "base_url",
        "cache_dir",
        "max_concurrency",
        "granularity",
        "out",
        "shots",
    ):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return replace(config, **overrides)


@dataclass
class Engine:
    """Concrete backends assembled from a validated config."""

    config: RunConfig
    op_backend: object
    planner_chat: object
    direct_chat: object
    judge: Judge
    summarizer: object


def build_engine(config: RunConfig) -> Engine:
    if config.backend == "mock":
        return Engine(
            config=config,
            op_backend=MockOpBackend(),
            planner_chat=MockPlannerChat(),
            direct_chat=MockDirectChat(),
            judge=MockJudge(),
            summarizer=MockSummarizer(),
        )
    chat = OpenAIChatBackend(
        config.base_url,
        config.model,
        api_key_env=config.api_key_env,
        cache_dir=config.cache_dir,
        max_inflight=config.max_concurrency,
        offline=config.offline,
    )
    judge: Judge = MockJudge() if config.judge == "mock" else LlmJudge(chat)
    return Engine(
        config=config,
        op_backend=LiveOpBackend(chat, max_tokens=config.max_tokens),
        planner_chat=chat,
        direct_chat=chat,
        judge=judge,
        summarizer=LlmSummarizer(chat, max_tokens=config.max_tokens),
    )


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _corpus_payload(corpus: IndexedCorpus) -> list[dict]:
    return [
        {"id": e.sentence_id, "doc": e.doc_index, "text": e.text} for e in corpus.entries
    ]


def _posthoc_target(task: Task) -> str:
    if task.output:
        return task.output
    if task.gold and task.gold.answers:
        return task.gold.answers[0]
    raise ValueError(f"task {task.id}: post-hoc mode needs an 'output' field or a gold answer")


@dataclass
class TaskResult:
    record: dict
    trace_json: str | None = None
    program_text: str | None = None


def run_task(task: Task, engine: Engine) -> TaskResult:
    config = engine.config
    documents = task.documents
    if config.relevance_filter:
        documents = tuple(judge_mod.relevance_filter(task.query, documents, engine.judge))
        task = replace(task, documents=documents)
    corpus = index_corpus(task)

    if config.mode == "direct":
        answer = generate_direct(
            task.query,
            corpus,
            engine.direct_chat,
            shots=load_shots(config.shots) if config.shots else None,
            granularity=config.granularity,
        )
        if config.refine:
            answer = rerank_outputs(
                task,
                engine.direct_chat,
                engine.judge,
                k=config.samples,
                granularity=config.granularity,
                corpus=corpus,
            )
        record = {
            "task_id": task.id,
            "mode": config.mode,
            "granularity": config.granularity,
            "text": " ".join(s.text for s in answer.sentences),
            "sentences": [
                {"text": s.text, "citations": list(s.citations)} for s in answer.sentences
            ],
            "corpus": _corpus_payload(corpus),
        }
        return TaskResult(record=record)

    summarized: SummarizedCorpus | None = None
    exec_corpus = corpus
    if config.summarize != "none":
        summarized = summarize_corpus(
            task.query,
            task,
            corpus,
            SummaryMethod(config.summarize),
            engine.summarizer,
            numsent=config.numsent,
        )
        exec_corpus = summarized.corpus

    shots = load_shots(config.shots) if config.shots else None
    if config.mode == "posthoc":
        forest = plan_posthoc(
            task.query, exec_corpus, _posthoc_target(task), engine.planner_chat, shots=shots
        )
    else:
        forest = plan(task.query, exec_corpus, engine.planner_chat, shots=shots)

    answer = execute_forest(forest, exec_corpus, engine.op_backend)
    if summarized is not None and summarized.origin_map is not None:
        answer = remap_citations(answer, summarized)
        citation_basis = corpus
    elif summarized is not None:
        citation_basis = summarized.corpus
    else:
        citation_basis = corpus

    refine_stats = None
    if config.check_trace or config.refine:
        check_trace(answer, engine.judge)
    if config.refine:
        answer, stats = refine_answer(
            answer,
            engine.op_backend,
            engine.judge,
            RefineConfig(samples=config.samples, temperature=config.temperature),
        )
        refine_stats = {
            "nodes_checked": stats.nodes_checked,
            "nodes_flagged": stats.nodes_flagged,
            "nodes_refined": stats.nodes_refined,
            "entailed_fraction_before": stats.entailed_fraction_before,
            "entailed_fraction_after": stats.entailed_fraction_after,
        }

    record = {
        "task_id": task.id,
        "mode": config.mode,
        "granularity": config.granularity,
        "text": render_answer(answer, style="plain"),
        "sentences": [
            {
                "text": s.text,
                "citations": list(s.sentence_citations),
                "doc_citations": list(s.doc_citations),
            }
            for s in answer.sentences
        ],
        "corpus": _corpus_payload(citation_basis),
    }
    if config.mode == "posthoc":
        record["posthoc_template"] = POSTHOC_TEMPLATE_VERSION
    if config.check_trace or config.refine:
        record["module_nodes"] = [
            {"kind": node.kind, "entailed": node.entailed}
            for s in answer.sentences
            for node in s.trace.walk()
            if node.kind not in ("leaf", "extract") and node.entailed is not None
        ]
    if refine_stats is not None:
        record["refine"] = refine_stats
    return TaskResult(
        record=record,
        trace_json=trace_artifact(answer, mode=config.mode),
        program_text=serialize(forest),
    )


def cmd_run(config: RunConfig, dataset_path: str) -> int:
    try:
        config = config.validated()
        with open(dataset_path, encoding="utf-8") as handle:
            tasks = load_dataset(handle)
    except (ConfigError, ParseError, OSError) as exc:
        logger.error("%s", exc)
        return 2
    if not tasks:
        logger.error("dataset is empty")
        return 2
    engine = build_engine(config)
    out_dir = Path(config.out)

    def process(task: Task):
        try:
            return task.id, run_task(task, engine), None
        except (BackendError, AllTreesInvalid, ValueError, RuntimeError) as exc:
            if isinstance(exc, CacheMiss):
                raise
            logger.error("task %s failed: %s", task.id, exc)
            return task.id, None, f"{type(exc).__name__}: {exc}"

    if config.max_concurrency > 1 and len(tasks) > 1 and config.backend == "live":
        with ThreadPoolExecutor(max_workers=config.max_concurrency) as pool:
            outcomes = list(pool.map(process, tasks))
    else:
        outcomes = [process(task) for task in tasks]

    answer_lines = []
    error_lines = []
    for task_id, result, error in outcomes:
        if result is None:
            error_lines.append(json.dumps({"task_id": task_id, "error": error}, ensure_ascii=False))
            continue
        answer_lines.append(json.dumps(result.record, ensure_ascii=False))
        if result.trace_json is not None:
            _atomic_write_text(out_dir / "traces" / f"{task_id}.json", result.trace_json)
        if result.program_text is not None:
            _atomic_write_text(
                out_dir / "traces" / f"{task_id}.program.txt", result.program_text + "\n"
            )
    _atomic_write_text(out_dir / "answers.jsonl", "".join(line + "\n" for line in answer_lines))
    if error_lines:
        _atomic_write_text(out_dir / "errors.jsonl", "".join(line + "\n" for line in error_lines))
        return 1
    return 0


class _RecordCorpus:
    """Corpus view over the snapshot embedded in an answers record."""

    def __init__(self, entries: list[dict]):
        self._texts = {e["id"]: e["text"] for e in entries}
        self._docs = {e["id"]: e["doc"] for e in entries}
        self.size = len(entries)
        self.doc_count = max(self._docs.values(), default=0)

    def text_of(self, sentence_id: int) -> str:
        return self._texts[sentence_id]

    def doc_text(self, doc_index: int) -> str:
        return " ".join(
            self._texts[sid] for sid in sorted(self._texts) if self._docs[sid] == doc_index
        )


@dataclass
class _AnswerView:
    """Duck-typed stand-in for CitedAnswer over a parsed answers record."""

    sentences: list


@dataclass(frozen=True)
class _SentenceView:
    text: str
    citations: tuple[int, ...]


def cmd_evaluate(config: RunConfig, answers_path: str, dataset_path: str) -> int:
    try:
        config = config.validated()
        with open(dataset_path, encoding="utf-8") as handle:
            tasks = {t.id: t for t in load_dataset(handle)}
        with open(answers_path, encoding="utf-8") as handle:
            records = [json.loads(line) for line in handle if line.strip()]
    except (ConfigError, ParseError, OSError, json.JSONDecodeError) as exc:
        logger.error("%s", exc)
        return 2
    missing = [r["task_id"] for r in records if r["task_id"] not in tasks]
    if missing:
        logger.error("answers reference unknown task ids: %s", ", ".join(missing))
        return 2
    if not records:
        logger.error("answers file is empty")
        return 2

    engine = build_engine(config)
    per_example_pr: list[tuple[float | None, float | None]] = []
    no_attr_values: list[float] = []
    rouge_scores = []
    em_values = []
    overlap_sentence_scores: list[tuple[float | None, float | None, float | None]] = []
    overlap_output_scores: list[tuple[float | None, float | None, float | None]] = []
    module_nodes: list[dict] = []

    for record in records:
        task = tasks[record["task_id"]]
        corpus = _RecordCorpus(record.get("corpus", []))
        granularity = record.get("granularity", config.granularity)
        # Executed answers cite sentences natively; document-level scoring
        # uses their derived doc citations instead.
        cite_key = (
            "doc_citations"
            if granularity == "document" and record.get("mode") != "direct"
            else "citations"
        )
        view = _AnswerView(
            sentences=[
                _SentenceView(s["text"], tuple(s.get(cite_key, s.get("citations", ()))))
                for s in record["sentences"]
            ]
        )
        units = sentence_units(view, corpus, granularity=granularity)
        _, recall = attribution_recall(units, engine.judge)
        _, precision = attribution_precision(units, engine.judge)
        per_example_pr.append((precision, recall))
        rate = no_attribution_rate(view)
        if rate is not None:
            no_attr_values.append(rate)
        if task.gold and task.gold.answers:
            rouge_scores.append(rouge_l(record["text"], list(task.gold.answers)))
        if task.gold and task.gold.short_answer_sets:
            em_values.append(em_recall(record["text"], task.gold.short_answer_sets))
        if task.gold and task.gold.gold_citations:
            pred_sets = [set(s.citations) for s in view.sentences]
            gold_sets = [set(g) for g in task.gold.gold_citations]
            sentence_score = citation_overlap(pred_sets, gold_sets, level="sentence")
            output_score = citation_overlap(pred_sets, gold_sets, level="output")
            overlap_sentence_scores.append(
                (sentence_score.precision, sentence_score.recall, sentence_score.f1)
            )
            overlap_output_scores.append(
                (output_score.precision, output_score.recall, output_score.f1)
            )
        module_nodes.extend(record.get("module_nodes", []))

    report = EvalReport(examples=len(records))
    report.attribution = attribution_f1(per_example_pr)
    if no_attr_values:
        report.no_attr_rate = sum(no_attr_values) / len(no_attr_values)
    if rouge_scores:
        report.rouge = RougeScores(
            r1=sum(s.r1 for s in rouge_scores) / len(rouge_scores),
            r2=sum(s.r2 for s in rouge_scores) / len(rouge_scores),
            rl=sum(s.rl for s in rouge_scores) / len(rouge_scores),
        )
    if em_values:
        report.em_recall = sum(em_values) / len(em_values)
    report.overlap_sentence = _average_triples(overlap_sentence_scores)
    report.overlap_output = _average_triples(overlap_output_scores)
    if module_nodes:
        total = [n["entailed"] for n in module_nodes]
        report.module_entailment = sum(total) / len(total)
        by_kind: dict[str, float | None] = {}
        for kind in ("fusion", "compression", "paraphrase"):
            flags = [n["entailed"] for n in module_nodes if n["kind"] == kind]
            by_kind[kind] = sum(flags) / len(flags) if flags else None
        report.module_entailment_by_kind = by_kind

    out_dir = Path(config.out)
    _atomic_write_text(out_dir / "report.json", report_to_json(report) + "\n")
    _atomic_write_text(out_dir / "report.txt", report_to_table(report) + "\n")
    print(report_to_table(report))
    return 0


def _average_triples(triples):
    if not triples:
        return None
    ps = [p for p, _, _ in triples if p is not None]
    rs = [r for _, r, _ in triples if r is not None]
    f1s = [f for _, _, f in triples if f is not None]
    return AttributionScore(
        precision=sum(ps) / len(ps) if ps else None,
        recall=sum(rs) / len(rs) if rs else None,
        f1=sum(f1s) / len(f1s) if f1s else None,
        per_example=list(triples),
    )


def cmd_replay(config: RunConfig, dataset_path: str) -> int:
    """Re-run from cache only: no network calls and no cache writes."""
    offline = replace(config, offline=True)
    try:
        return cmd_run(offline, dataset_path)
    except CacheMiss as exc:
        logger.error("replay incomplete: %s", exc)
        return 2


def cmd_summarize(config: RunConfig, dataset_path: str) -> int:
    try:
        config = config.validated()
        if config.summarize == "none":
            raise ConfigError("summarize command needs --summarize extractive|abstractive|ext_abs")
        with open(dataset_path, encoding="utf-8") as handle:
            tasks = load_dataset(handle)
    except (ConfigError, ParseError, OSError) as exc:
        logger.error("%s", exc)
        return 2
    engine = build_engine(config)
    lines = []
    failed = 0
    for task in tasks:
        try:
            corpus = index_corpus(task)
            summarized = summarize_corpus(
                task.query,
                task,
                corpus,
                SummaryMethod(config.summarize),
                engine.summarizer,
                numsent=config.numsent,
            )
        except (BackendError, RuntimeError, ValueError) as exc:
            logger.error("task %s failed: %s", task.id, exc)
            failed += 1
            continue
        lines.append(
            json.dumps(
                {
                    "task_id": task.id,
                    "method": config.summarize,
                    "numsent": config.numsent,
                    "sentences": [
                        {
                            "id": e.sentence_id,
                            "doc": e.doc_index,
                            "text": e.text,
                            "origin": (
                                summarized.origin_map.get(e.sentence_id)
                                if summarized.origin_map
                                else None
                            ),
                        }
                        for e in summarized.corpus.entries
                    ],
                },
                ensure_ascii=False,
            )
        )
    _atomic_write_text(Path(config.out) / "summaries.jsonl", "".join(l + "\n" for l in lines))
    return 1 if failed else 0


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file; flags override its values")
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--summarize", choices=SUMMARIZE_OPTIONS)
    parser.add_argument("--numsent", type=int)
    parser.add_argument("--refine", action="store_const", const=True)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--judge", choices=JUDGES)
    parser.add_argument("--backend", choices=BACKENDS)
    parser.add_argument("--model")
    parser.add_argument("--base-url", dest="base_url")
    parser.add_argument("--cache-dir", dest="cache_dir")
    parser.add_argument("--max-concurrency", dest="max_concurrency", type=int)
    parser.add_argument("--granularity", choices=GRANULARITIES)
    parser.add_argument("--out")
    parser.add_argument("--shots", help="JSON file of one-shot exemplars")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genprog",
        description="Plan-then-execute attributed generation over retrieved documents",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="plan and execute a dataset")
    _add_common_flags(run_parser)
    run_parser.add_argument("dataset")

    eval_parser = sub.add_parser("evaluate", help="score an answers file against its dataset")
    _add_common_flags(eval_parser)
    eval_parser.add_argument("answers")
    eval_parser.add_argument("dataset")

    replay_parser = sub.add_parser("replay", help="re-run a dataset from cache only")
    _add_common_flags(replay_parser)
    replay_parser.add_argument("dataset")

    summarize_parser = sub.add_parser("summarize", help="emit per-document summaries")
    _add_common_flags(summarize_parser)
    summarize_parser.add_argument("dataset")

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = apply_flag_overrides(load_config(args.config), args)
    except (ConfigError, OSError, tomllib.TOMLDecodeError, TypeError) as exc:
        logger.error("bad config: %s", exc)
        return 2
    try:
        if args.command == "run":
            return cmd_run(config, args.dataset)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.answers, args.dataset)
        if args.command == "replay":
            return cmd_replay(config, args.dataset)
        if args.command == "summarize":
            return cmd_summarize(config, args.dataset)
    except BackendError as exc:
        logger.error("backend failure: %s", exc)
        return 1
    return 2  # pragma: no cover


def entrypoint() -> None:  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    entrypoint()
