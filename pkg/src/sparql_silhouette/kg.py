"""In-memory knowledge graph with the indexes needed by restricted
relation inference and SPARQL execution.

Facts are triples of prefixed IRIs (``dbr:X dbo:y dbr:Z``) with opaque
string literals allowed in object position only. The graph is immutable
after load and safe for concurrent reads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import EmptyGraph, ParseError, UnknownEntity

KNOWN_PREFIXES = ("dbr", "dbo", "dbp", "rdf")

RDF_TYPE_LOCAL = "type"


@dataclass(frozen=True, order=True)
class Iri:
    """Prefixed IRI. Prefixes outside dbr/dbo/dbp/rdf are carried opaquely."""

    prefix: str
    local_name: str

    def __post_init__(self):
        if not self.local_name:
            raise ValueError("empty local name")
        if not self.prefix:
            raise ValueError("empty prefix")

    @property
    def known(self) -> bool:
        return self.prefix in KNOWN_PREFIXES

    def __str__(self) -> str:
        return f"{self.prefix}:{self.local_name}"

    @classmethod
    def parse(cls, text: str) -> "Iri":
        prefix, sep, local = text.partition(":")
        if not sep or not prefix or not local:
            raise ValueError(f"not a prefixed IRI: {text!r}")
        return cls(prefix, local)


RDF_TYPE = Iri("rdf", RDF_TYPE_LOCAL)


@dataclass(frozen=True, order=True)
class Literal:
    """Opaque string literal; legal in object position only."""

    text: str
    lang: str = ""

    def __str__(self) -> str:
        quoted = f'"{self.text}"'
        return quoted + (f"@{self.lang}" if self.lang else "")

    @property
    def compare_key(self) -> str:
        # answers compare by exact string after stripping language tags
        return self.text


@dataclass(frozen=True, order=True)
class Triple:
    subject: Iri
    relation: Iri
    object: "Iri | Literal"


class Position(Enum):
    SUBJECT = "subject"
    OBJECT = "object"


@dataclass
class KnowledgeGraph:
    entities: set[Iri] = field(default_factory=set)
    relations: set[Iri] = field(default_factory=set)
    facts: set[Triple] = field(default_factory=set)
    rel_by_subject: dict[Iri, set[Iri]] = field(default_factory=dict)
    rel_by_object: dict[Iri, set[Iri]] = field(default_factory=dict)
    classes_of: dict[Iri, set[Iri]] = field(default_factory=dict)
    ontology_classes: set[Iri] = field(default_factory=set)
    # (subject, relation) -> objects and (relation, object) -> subjects,
    # for the executor's pattern matching
    objects_of: dict[tuple[Iri, Iri], set] = field(default_factory=dict)
    subjects_of: dict[tuple[Iri, object], set[Iri]] = field(default_factory=dict)

    def add_fact(self, t: Triple) -> None:
        if t in self.facts:
            return
        self.facts.add(t)
        self.entities.add(t.subject)
        self.relations.add(t.relation)
        if isinstance(t.object, Iri):
            self.entities.add(t.object)
        if t.relation == RDF_TYPE and isinstance(t.object, Iri):
            self.classes_of.setdefault(t.subject, set()).add(t.object)
            self.ontology_classes.add(t.object)
        else:
            # rdf:type is handled by the separate type head, so it is
            # excluded from the valid-relation indexes
            self.rel_by_subject.setdefault(t.subject, set()).add(t.relation)
            if isinstance(t.object, Iri):
                self.rel_by_object.setdefault(t.object, set()).add(t.relation)
        self.objects_of.setdefault((t.subject, t.relation), set()).add(t.object)
        self.subjects_of.setdefault((t.relation, t.object), set()).add(t.subject)


def _parse_object_field(text: str, lineno: int) -> "Iri | Literal":
    if text.startswith('"'):
        body, sep, tail = text[1:].rpartition('"')
        if not sep:
            raise ParseError(lineno, f"unterminated literal: {text!r}")
        lang = tail[1:] if tail.startswith("@") else ""
        return Literal(body, lang)
    try:
        return Iri.parse(text)
    except ValueError as exc:
        raise ParseError(lineno, str(exc)) from exc


def load_kg(path: "str | Path") -> KnowledgeGraph:
    """Load a tab-separated triple file. ``#`` lines are comments."""
    kg = KnowledgeGraph()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(lineno, f"expected 3 tab-separated fields, got {len(fields)}")
            try:
                subject = Iri.parse(fields[0])
                relation = Iri.parse(fields[1])
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from exc
            obj = _parse_object_field(fields[2], lineno)
            if subject.prefix != "dbr":
                raise ParseError(lineno, f"subject must be a dbr entity: {fields[0]}")
            if relation.prefix not in ("dbo", "dbp", "rdf"):
                raise ParseError(lineno, f"relation prefix must be dbo/dbp/rdf: {fields[1]}")
            kg.add_fact(Triple(subject, relation, obj))
    if not kg.facts:
        raise EmptyGraph(str(path))
    return kg


def save_kg(kg: KnowledgeGraph, path: "str | Path") -> None:
    lines = sorted(f"{t.subject}\t{t.relation}\t{t.object}" for t in kg.facts)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def valid_relations(kg: KnowledgeGraph, entity: Iri, position: Position) -> set[Iri]:
    """Relations r for which <entity, r, ?x> (subject) or <?x, r, entity>
    (object) is grounded in the fact set. rdf:type never appears here."""
    if entity not in kg.entities:
        raise UnknownEntity(str(entity))
    index = kg.rel_by_subject if position is Position.SUBJECT else kg.rel_by_object
    return set(index.get(entity, ()))


def has_triple(kg: KnowledgeGraph, subject: Iri, relation: Iri, obj: "Iri | Literal") -> bool:
    return Triple(subject, relation, obj) in kg.facts
