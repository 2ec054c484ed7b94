"""Deterministic synthetic benchmark generator.

Produces a toy KG, templated question/SPARQL splits, and an embedding
table engineered so every relation label has a designated near-synonym
word used in the question templates (making relation alignment a real
embedding lookup, not string matching). Entity mentions appear verbatim
in questions; every gold query is executable on the generated KG.

A configurable fraction of entities is held out of the train/val splits
so test-set entity coverage is below 100%, mirroring real benchmarks. A
fraction of relations also exists in a dbp twin form with the same local
name, for exercising the dbo-preference rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetRecord, save_dataset
from .kg import Iri, KnowledgeGraph, Triple, save_kg
from .sparql import answer_strings, execute, parse_sparql
from .textalign import EmbeddingTable

_SYLLABLES = [
    "ba", "ce", "di", "fo", "gu", "ka", "lem", "mo", "nar", "pol",
    "qui", "rus", "sha", "tev", "ul", "vim", "wo", "xan", "yer", "zob",
]
_SYNONYM_SUFFIXES = ["ly", "ish", "oid", "ous"]
_FILLER_WORDS = ["what", "did", "who", "how", "many", "things", "which"]


@dataclass
class ToybenchSpec:
    n_entities: int = 60
    n_relations: int = 12
    n_classes: int = 6
    n_facts: int = 240
    n_train: int = 100
    n_val: int = 20
    n_test: int = 40
    template_set: str = "default"
    seed: int = 0
    heldout_entity_fraction: float = 0.3
    dbp_twin_fraction: float = 0.25
    embed_dim: int = 16


@dataclass
class Toybench:
    kg: KnowledgeGraph
    train: list[DatasetRecord]
    val: list[DatasetRecord]
    test: list[DatasetRecord]
    embeddings: EmbeddingTable
    paths: dict[str, Path]


def _fresh_word(rng: np.random.Generator, used: set[str], n_syllables: int = 2) -> str:
    while True:
        word = "".join(
            _SYLLABLES[int(rng.integers(len(_SYLLABLES)))] for _ in range(n_syllables)
        )
        if word not in used:
            used.add(word)
            return word


def _unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def generate_toybench(spec: ToybenchSpec, out_dir: "str | Path") -> Toybench:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    used_words: set[str] = set(_FILLER_WORDS)

    relation_words = [_fresh_word(rng, used_words) for _ in range(spec.n_relations)]
    synonyms = {}
    for i, word in enumerate(relation_words):
        syn = word + _SYNONYM_SUFFIXES[i % len(_SYNONYM_SUFFIXES)]
        used_words.add(syn)
        synonyms[word] = syn
    class_words = [_fresh_word(rng, used_words) for _ in range(spec.n_classes)]
    entity_words = [
        (_fresh_word(rng, used_words), _fresh_word(rng, used_words))
        for _ in range(spec.n_entities)
    ]

    relations = [Iri("dbo", w) for w in relation_words]
    n_twins = int(round(spec.n_relations * spec.dbp_twin_fraction))
    twin_relations = set(relations[:n_twins])
    classes = [Iri("dbo", w.capitalize()) for w in class_words]
    entities = [Iri("dbr", f"{a.capitalize()}_{b.capitalize()}") for a, b in entity_words]

    # embeddings: relation word ~= its synonym, everything else random
    vectors: dict[str, np.ndarray] = {}
    for word in relation_words:
        v = _unit(rng, spec.embed_dim)
        vectors[word] = v
        noisy = v + 0.05 * rng.normal(size=spec.embed_dim)
        vectors[synonyms[word]] = noisy / np.linalg.norm(noisy)
    for word in class_words + _FILLER_WORDS:
        vectors[word] = _unit(rng, spec.embed_dim)
    for a, b in entity_words:
        vectors[a] = _unit(rng, spec.embed_dim)
        vectors[b] = _unit(rng, spec.embed_dim)
    emb = EmbeddingTable(spec.embed_dim, vectors)

    # facts: one rdf:type per entity, then subject-primary-relation facts
    # (each subject keeps a single outgoing relation, so restricted
    # inference has teeth), plus dbp twins for the designated relations
    kg = KnowledgeGraph()
    entity_class = {e: classes[i % spec.n_classes] for i, e in enumerate(entities)}
    subject_relation = {e: relations[i % spec.n_relations] for i, e in enumerate(entities)}
    for e in entities:
        kg.add_fact(Triple(e, Iri("rdf", "type"), entity_class[e]))
    attempts = 0
    while len(kg.facts) < spec.n_facts and attempts < spec.n_facts * 50:
        attempts += 1
        s = entities[int(rng.integers(len(entities)))]
        o = entities[int(rng.integers(len(entities)))]
        if s == o:
            continue
        r = subject_relation[s]
        before = len(kg.facts)
        kg.add_fact(Triple(s, r, o))
        if r in twin_relations and len(kg.facts) > before and len(kg.facts) < spec.n_facts:
            kg.add_fact(Triple(s, Iri("dbp", r.local_name), o))

    n_heldout = int(round(spec.n_entities * spec.heldout_entity_fraction))
    heldout = set(entities[-n_heldout:]) if n_heldout else set()
    core_facts = sorted(
        (f for f in kg.facts if f.relation.prefix == "dbo"),
        key=lambda f: (str(f.subject), str(f.relation), str(f.object)),
    )
    shared_facts = [
        f for f in core_facts if f.subject not in heldout and f.object not in heldout
    ]
    heldout_facts = [
        f for f in core_facts if f.subject in heldout or f.object in heldout
    ]
    if not shared_facts:
        raise ValueError("toybench spec leaves no facts for the train split")

    def label(e: Iri) -> str:
        return e.local_name.replace("_", " ").lower()

    def make_question(fact: Triple, template: int) -> tuple[str, str]:
        s, r, o = fact.subject, fact.relation, fact.object
        syn = synonyms[r.local_name]
        if template == 0:
            return (
                f"what did {label(s)} {syn} ?",
                f"SELECT DISTINCT ?uri WHERE {{ {s} {r} ?uri }}",
            )
        if template == 1:
            return (
                f"who {syn} {label(o)} ?",
                f"SELECT DISTINCT ?uri WHERE {{ ?uri {r} {o} }}",
            )
        if template == 2:
            return (
                f"how many things did {label(s)} {syn} ?",
                f"SELECT DISTINCT COUNT ( ?uri ) WHERE {{ {s} {r} ?uri }}",
            )
        if template == 3:
            return (
                f"did {label(s)} {syn} {label(o)} ?",
                f"ASK WHERE {{ {s} {r} {o} }}",
            )
        cls = entity_class[s]
        return (
            f"which {cls.local_name.lower()} {syn} {label(o)} ?",
            f"SELECT DISTINCT ?uri WHERE {{ ?uri {r} {o} . ?uri rdf:type {cls} }}",
        )

    def build_split(name: str, count: int, pool_a: list[Triple], pool_b: list[Triple]):
        records = []
        for i in range(count):
            pool = pool_b if (pool_b and i % 2 == 1) else pool_a
            fact = pool[int(rng.integers(len(pool)))]
            question, sparql = make_question(fact, i % 5)
            query = parse_sparql(sparql)
            answers = sorted(answer_strings(execute(query, kg)))
            records.append(
                DatasetRecord(
                    id=f"{name}-{i:04d}", question=question, sparql=sparql, answers=answers
                )
            )
        return records

    train = build_split("train", spec.n_train, shared_facts, [])
    val = build_split("val", spec.n_val, shared_facts, [])
    test = build_split("test", spec.n_test, shared_facts, heldout_facts)

    paths = {
        "kg": out_dir / "kg.tsv",
        "train": out_dir / "train.jsonl",
        "val": out_dir / "val.jsonl",
        "test": out_dir / "test.jsonl",
        "embeddings": out_dir / "embeddings.txt",
    }
    save_kg(kg, paths["kg"])
    save_dataset(train, paths["train"])
    save_dataset(val, paths["val"])
    save_dataset(test, paths["test"])
    emb.save(paths["embeddings"])
    return Toybench(kg, train, val, test, emb, paths)
