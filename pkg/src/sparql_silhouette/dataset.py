"""JSON-lines dataset records: {id, question, sparql, answers}."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import UnsupportedFeature
from .kg import KnowledgeGraph
from .sparql import answer_strings, execute, parse_sparql


@dataclass
class DatasetRecord:
    id: str
    question: str
    sparql: str
    answers: list[str] = field(default_factory=list)


def load_dataset(path: "str | Path", kg: KnowledgeGraph | None = None) -> list[DatasetRecord]:
    """Load records; when answers are absent and a KG is given, compute
    them by executing the gold SPARQL."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            rec = DatasetRecord(
                id=str(raw["id"]),
                question=raw["question"],
                sparql=raw["sparql"],
                answers=[str(a) for a in raw.get("answers", [])],
            )
            if not rec.answers and kg is not None:
                try:
                    rec.answers = sorted(answer_strings(execute(parse_sparql(rec.sparql), kg)))
                except UnsupportedFeature:
                    rec.answers = []
            records.append(rec)
    return records


def save_dataset(records: list[DatasetRecord], path: "str | Path") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "question": rec.question,
                        "sparql": rec.sparql,
                        "answers": rec.answers,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
