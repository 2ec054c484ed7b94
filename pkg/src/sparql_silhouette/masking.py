"""Noise simulator: masked (question, SPARQL) pairs under the three
linking-noise scenarios, a parametric simulated linker, and demasking of
model output back to concrete SPARQL.

Placeholders are ``<e0>..<eK>`` for entities and ``<r0>..<rK>`` for
relations, numbered by first occurrence in the question; IRIs that never
align to question text are numbered afterwards, in SPARQL token order.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnknownPlaceholder
from .kg import RDF_TYPE, Iri, KnowledgeGraph
from .sparql import SparqlQuery, extract_terms
from .textalign import (
    EmbeddingTable,
    Span,
    align_entity,
    cosine,
    iri_label_tokens,
    jaccard,
    tokenize_question,
)

PLACEHOLDER_RE = re.compile(r"^<[er]\d+>$")
DEFAULT_PLACEHOLDER_CAP = 10


@dataclass(frozen=True)
class LinkerItem:
    iri: Iri
    kind: str  # "entity" | "relation"
    span: Span | None = None


@dataclass
class LinkerOutput:
    items: list[LinkerItem] = field(default_factory=list)


@dataclass
class LinkerNoiseConfig:
    recall_entity: float = 1.0
    recall_relation: float = 1.0
    spurious_rate: float = 0.0
    wrong_link_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("recall_entity", "recall_relation", "wrong_link_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {value}")
        if self.spurious_rate < 0.0:
            raise ValueError("spurious_rate must be >= 0")


@dataclass
class MaskEntry:
    iri: Iri
    span: Span | None


@dataclass
class MaskedPair:
    masked_question: list[str]
    masked_sparql: list[str]
    mask_table: dict[str, MaskEntry]
    scenario: str


def gold_linker(question: str, gold_query: SparqlQuery, emb: EmbeddingTable) -> LinkerOutput:
    """Perfect linker: gold entities/relations with their aligned spans.
    Entity spans claim tokens first; relation alignment never reuses a
    claimed word. Terms that fail alignment carry span=None."""
    tokens = tokenize_question(question)
    entities, relations, _classes = extract_terms(gold_query)
    items: list[LinkerItem] = []
    claimed: set[int] = set()
    for entity in sorted(entities):
        span = align_entity(entity, tokens, emb)
        if span is not None and any(i in claimed for i in range(span.start, span.end)):
            span = None
        if span is not None:
            claimed.update(range(span.start, span.end))
        items.append(LinkerItem(entity, "entity", span))
    for relation in sorted(relations):
        span = _align_relation_avoiding(relation, tokens, emb, claimed)
        if span is not None:
            claimed.update(range(span.start, span.end))
        items.append(LinkerItem(relation, "relation", span))
    return LinkerOutput(items)


def _align_relation_avoiding(
    relation: Iri, tokens: list[str], emb: EmbeddingTable, claimed: set[int]
) -> Span | None:
    target_tokens = iri_label_tokens(relation)
    if not target_tokens:
        return None
    target = np.mean([emb.lookup(t) for t in target_tokens], axis=0)
    best_score, best_index = 0.0, None
    for index, word in enumerate(tokens):
        if index in claimed:
            continue
        score = cosine(emb.lookup(word), target)
        if score > best_score:
            best_score, best_index = score, index
    if best_index is None:
        return None
    return Span(best_index, best_index + 1)


def _question_rng(cfg: LinkerNoiseConfig, question_id: str) -> np.random.Generator:
    # stable per-question stream so parallel masking order cannot matter
    digest = hashlib.sha256(f"{cfg.seed}:{question_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def simulate_linker(
    gold: LinkerOutput,
    cfg: LinkerNoiseConfig,
    kg: KnowledgeGraph,
    n_question_tokens: int = 0,
    question_id: str = "",
) -> LinkerOutput:
    """Degrade a gold linker output: drop items per recall, rewire kept
    items per wrong_link_rate, append Poisson-many spurious items."""
    rng = _question_rng(cfg, question_id)
    entity_pool = sorted(kg.entities)
    relation_pool = sorted(r for r in kg.relations if r != RDF_TYPE)
    items: list[LinkerItem] = []
    for item in gold.items:
        recall = cfg.recall_entity if item.kind == "entity" else cfg.recall_relation
        if rng.random() >= recall:
            continue
        iri = item.iri
        if rng.random() < cfg.wrong_link_rate:
            pool = entity_pool if item.kind == "entity" else relation_pool
            pool = [p for p in pool if p != iri] or pool
            iri = pool[int(rng.integers(len(pool)))]
        items.append(LinkerItem(iri, item.kind, item.span))
    n_spurious = int(rng.poisson(cfg.spurious_rate))
    for _ in range(n_spurious):
        kind = "entity" if rng.random() < 0.5 else "relation"
        pool = entity_pool if kind == "entity" else relation_pool
        if not pool:
            continue
        iri = pool[int(rng.integers(len(pool)))]
        span = None
        if n_question_tokens > 0:
            start = int(rng.integers(n_question_tokens))
            span = Span(start, start + 1)
        items.append(LinkerItem(iri, kind, span))
    return LinkerOutput(items)


def _assign_placeholders(
    items: list[LinkerItem],
    sparql_tokens: list[str],
    cap: int = DEFAULT_PLACEHOLDER_CAP,
) -> list[tuple[str, LinkerItem]]:
    """Deterministic placeholder numbering: question order first, then
    SPARQL order for unaligned items. Items beyond the cap are dropped."""

    def sparql_position(item: LinkerItem) -> int:
        text = str(item.iri)
        return sparql_tokens.index(text) if text in sparql_tokens else len(sparql_tokens)

    aligned = sorted(
        (it for it in items if it.span is not None), key=lambda it: it.span.start
    )
    unaligned = sorted(
        (it for it in items if it.span is None), key=sparql_position
    )
    counters = {"entity": 0, "relation": 0}
    assigned: list[tuple[str, LinkerItem]] = []
    for item in aligned + unaligned:
        index = counters[item.kind]
        if index >= cap:
            continue
        counters[item.kind] = index + 1
        letter = "e" if item.kind == "entity" else "r"
        assigned.append((f"<{letter}{index}>", item))
    return assigned


def _mask_tokens(
    question_tokens: list[str], assigned: list[tuple[str, LinkerItem]]
) -> list[str]:
    """Replace each claimed span with its placeholder. Overlapping spans
    lose to earlier-numbered items."""
    claimed: set[int] = set()
    replacements: list[tuple[Span, str]] = []
    for placeholder, item in assigned:
        span = item.span
        if span is None or span.end > len(question_tokens):
            continue
        if any(i in claimed for i in range(span.start, span.end)):
            continue
        claimed.update(range(span.start, span.end))
        replacements.append((span, placeholder))
    out = list(question_tokens)
    for span, placeholder in sorted(replacements, key=lambda r: -r[0].start):
        out[span.start : span.end] = [placeholder]
    return out


def _mask_sparql(
    sparql_tokens: list[str], assigned: list[tuple[str, LinkerItem]], maskable: set[Iri]
) -> list[str]:
    by_iri: dict[str, str] = {}
    for placeholder, item in assigned:
        if item.iri in maskable:
            by_iri.setdefault(str(item.iri), placeholder)
    return [by_iri.get(tok, tok) for tok in sparql_tokens]


def _build_pair(
    question: str,
    gold_query: SparqlQuery,
    items: list[LinkerItem],
    maskable: set[Iri],
    scenario: str,
    cap: int = DEFAULT_PLACEHOLDER_CAP,
) -> MaskedPair:
    question_tokens = tokenize_question(question)
    sparql_tokens = list(gold_query.raw_tokens)
    assigned = _assign_placeholders(items, sparql_tokens, cap)
    return MaskedPair(
        masked_question=_mask_tokens(question_tokens, assigned),
        masked_sparql=_mask_sparql(sparql_tokens, assigned, maskable),
        mask_table={ph: MaskEntry(it.iri, it.span) for ph, it in assigned},
        scenario=scenario,
    )


def mask_scenario_a(
    question: str, gold_query: SparqlQuery, emb: EmbeddingTable, cap: int = DEFAULT_PLACEHOLDER_CAP
) -> MaskedPair:
    """Noise-free linking: every gold entity/relation is masked in the
    SPARQL; aligned mentions are masked in the question."""
    linker = gold_linker(question, gold_query, emb)
    entities, relations, _ = extract_terms(gold_query)
    return _build_pair(question, gold_query, linker.items, entities | relations, "A", cap)


def mask_scenario_b(
    question: str,
    gold_query: SparqlQuery,
    linker_out: LinkerOutput,
    cap: int = DEFAULT_PLACEHOLDER_CAP,
    jaccard_threshold: float = 0.7,
) -> MaskedPair:
    """Partly noisy linking: only the intersection of linker IRIs and
    gold terms is masked. Question spans come from exact label match,
    else from the linker mention passing the Jaccard threshold."""
    question_tokens = tokenize_question(question)
    entities, relations, _ = extract_terms(gold_query)
    gold_terms = entities | relations
    items: list[LinkerItem] = []
    seen: set[Iri] = set()
    for item in linker_out.items:
        if item.iri not in gold_terms or item.iri in seen:
            continue
        seen.add(item.iri)
        label = iri_label_tokens(item.iri)
        span = None
        width = len(label)
        for start in range(len(question_tokens) - width + 1):
            if question_tokens[start : start + width] == label:
                span = Span(start, start + width)
                break
        if span is None and item.span is not None and item.span.end <= len(question_tokens):
            mention = set(question_tokens[item.span.start : item.span.end])
            if jaccard(set(label), mention) >= jaccard_threshold:
                span = item.span
        items.append(LinkerItem(item.iri, item.kind, span))
    return _build_pair(question, gold_query, items, {it.iri for it in items}, "B", cap)


def mask_scenario_c(
    question: str,
    gold_query: SparqlQuery,
    linker_out: LinkerOutput,
    cap: int = DEFAULT_PLACEHOLDER_CAP,
) -> MaskedPair:
    """Fully noisy linking: every linker item masks the question at its
    mention (spurious ones included); a gold SPARQL term is masked iff it
    equals some linker IRI."""
    question_tokens = tokenize_question(question)
    entities, relations, _ = extract_terms(gold_query)
    gold_terms = entities | relations
    items: list[LinkerItem] = []
    for item in linker_out.items:
        span = item.span
        if span is None:
            label = iri_label_tokens(item.iri)
            width = len(label)
            for start in range(len(question_tokens) - width + 1):
                if question_tokens[start : start + width] == label:
                    span = Span(start, start + width)
                    break
        items.append(LinkerItem(item.iri, item.kind, span))
    maskable = {it.iri for it in items} & gold_terms
    return _build_pair(question, gold_query, items, maskable, "C", cap)


def demask(masked_sparql_tokens: list[str], mask_table: dict[str, MaskEntry]) -> str:
    """Substitute placeholders with their linked IRIs; unknown
    placeholder tokens are an error."""
    out = []
    for tok in masked_sparql_tokens:
        if PLACEHOLDER_RE.match(tok):
            if tok not in mask_table:
                raise UnknownPlaceholder(tok)
            out.append(str(mask_table[tok].iri))
        else:
            out.append(tok)
    return " ".join(out)


def coverage_stats(
    train_queries: list[SparqlQuery], eval_queries: list[SparqlQuery]
) -> dict[str, float | None]:
    """Per prefix, % of distinct eval-split IRIs already present in the
    train split's gold terms. None when the eval prefix set is empty."""

    def by_prefix(queries: list[SparqlQuery]) -> dict[str, set[Iri]]:
        buckets: dict[str, set[Iri]] = {"dbr": set(), "dbp": set(), "dbo": set()}
        for q in queries:
            entities, relations, classes = extract_terms(q)
            for iri in entities | relations | classes:
                if iri.prefix in buckets:
                    buckets[iri.prefix].add(iri)
        return buckets

    train = by_prefix(train_queries)
    eval_ = by_prefix(eval_queries)
    stats: dict[str, float | None] = {}
    for prefix in ("dbr", "dbp", "dbo"):
        total = len(eval_[prefix])
        if total == 0:
            stats[prefix] = None
        else:
            stats[prefix] = 100.0 * len(eval_[prefix] & train[prefix]) / total
    return stats


# --- file formats ------------------------------------------------------


def save_linker_outputs(outputs: dict[str, LinkerOutput], path: "str | Path") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(outputs):
            items = [
                {
                    "start": it.span.start if it.span else None,
                    "end": it.span.end if it.span else None,
                    "iri": str(it.iri),
                    "kind": it.kind,
                }
                for it in outputs[qid].items
            ]
            fh.write(json.dumps({"id": qid, "items": items}, sort_keys=True) + "\n")


def load_linker_outputs(path: "str | Path") -> dict[str, LinkerOutput]:
    outputs: dict[str, LinkerOutput] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            items = []
            for it in raw["items"]:
                span = None
                if it.get("start") is not None:
                    span = Span(it["start"], it["end"])
                items.append(LinkerItem(Iri.parse(it["iri"]), it["kind"], span))
            outputs[str(raw["id"])] = LinkerOutput(items)
    return outputs


def save_masked_dataset(pairs: dict[str, MaskedPair], path: "str | Path") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(pairs):
            pair = pairs[qid]
            table = {
                ph: {
                    "iri": str(entry.iri),
                    "start": entry.span.start if entry.span else None,
                    "end": entry.span.end if entry.span else None,
                }
                for ph, entry in pair.mask_table.items()
            }
            fh.write(
                json.dumps(
                    {
                        "id": qid,
                        "masked_question": pair.masked_question,
                        "masked_sparql": pair.masked_sparql,
                        "mask_table": table,
                        "scenario": pair.scenario,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_masked_dataset(path: "str | Path") -> dict[str, MaskedPair]:
    pairs: dict[str, MaskedPair] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            table = {}
            for ph, entry in raw["mask_table"].items():
                span = None
                if entry.get("start") is not None:
                    span = Span(entry["start"], entry["end"])
                table[ph] = MaskEntry(Iri.parse(entry["iri"]), span)
            pairs[str(raw["id"])] = MaskedPair(
                masked_question=list(raw["masked_question"]),
                masked_sparql=list(raw["masked_sparql"]),
                mask_table=table,
                scenario=raw["scenario"],
            )
    return pairs
