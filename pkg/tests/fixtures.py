"""Deterministic dataset fixtures for CLI and acceptance tests.

Every sentence draws from its own vocabulary slice so that no sentence
entails another under the token-bag judge; that makes mock-run attribution
precision analytically 1.0.
"""
from __future__ import annotations

import json

_WORDS = [
    "arbor", "basalt", "cedar", "dune", "ember", "fjord", "garnet", "heath",
    "inlet", "juniper", "krill", "lagoon", "mesa", "nectar", "onyx", "plume",
    "quartz", "ridge", "sierra", "tundra", "umber", "vale", "willow", "xenon",
    "yarrow", "zephyr", "amber", "birch", "cobalt", "delta", "elm", "flint",
    "grove", "harbor", "iris", "jade", "kelp", "loess", "moss", "nickel",
]


def _sentence(task_index: int, position: int) -> str:
    base = (task_index * 6 + position * 3) % len(_WORDS)
    words = [_WORDS[(base + i) % len(_WORDS)] + f"{task_index}{position}" for i in range(3)]
    return " ".join(words).capitalize() + "."


def make_tasks(count: int = 10, sentences_per_doc: int = 3, docs: int = 2) -> list[dict]:
    """Tasks with pre-split sentences, gold answers, and gold citations."""
    records = []
    for t in range(count):
        all_sentences = [_sentence(t, p) for p in range(sentences_per_doc * docs)]
        doc_records = [
            {"sentences": all_sentences[d * sentences_per_doc : (d + 1) * sentences_per_doc]}
            for d in range(docs)
        ]
        short = all_sentences[0].split()[0]
        records.append(
            {
                "id": f"task{t}",
                "question": f"what is known about {short.lower()}",
                "docs": doc_records,
                "gold": {
                    "answers": [" ".join(all_sentences[:2])],
                    "short_answers": [[short]],
                    "citations": [[1], [2], [3, 4]],
                },
                "output": " ".join(all_sentences[:2]),
            }
        )
    return records


def write_dataset(path, count: int = 10, **kwargs) -> None:
    records = make_tasks(count, **kwargs)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
