"""Tokenizer, parser, serializer, and executor for the SPARQL fragment
the pipeline emits.

Executable fragment: {SELECT, SELECT DISTINCT, SELECT [DISTINCT] COUNT,
ASK} over conjunctive triple patterns, including rdf:type (with the `a`
sugar). Rarer keywords (GROUP BY, HAVING, UNION, FILTER, OPTIONAL, ...)
parse into ``unsupported_features`` with raw tokens preserved, and are
rejected at execution time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import (
    SparqlSyntaxError,
    UnbalancedQuote,
    UnboundProjection,
    UnsupportedFeature,
)
from .kg import RDF_TYPE, Iri, KnowledgeGraph, Literal, Triple

KEYWORDS = {"SELECT", "DISTINCT", "COUNT", "WHERE", "ASK"}
UNSUPPORTED_KEYWORDS = {
    "GROUP": "GROUP BY",
    "HAVING": "HAVING",
    "UNION": "UNION",
    "FILTER": "FILTER",
    "OPTIONAL": "OPTIONAL",
    "ORDER": "ORDER BY",
    "LIMIT": "LIMIT",
    "OFFSET": "OFFSET",
}
UNSUPPORTED_PREFIXES = ("dct", "dbc", "yago")


class TermKind(Enum):
    VARIABLE = "variable"
    ENTITY = "entity"
    RELATION = "relation"
    ONTOLOGY_CLASS = "class"
    LITERAL = "literal"


@dataclass(frozen=True)
class Term:
    kind: TermKind
    value: "str | Iri | Literal"

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class TriplePattern:
    subject: Term
    relation: Term
    object: Term

    def terms(self) -> tuple[Term, Term, Term]:
        return (self.subject, self.relation, self.object)


@dataclass
class SparqlQuery:
    form: str  # "select" | "select_count" | "ask"
    distinct: bool
    projection: list[str]
    patterns: list[TriplePattern]
    unsupported_features: list[str] = field(default_factory=list)
    raw_tokens: list[str] = field(default_factory=list)


def tokenize_sparql(text: str) -> list[str]:
    """Break query text into tokens: keywords, braces, parens, separators,
    prefixed IRIs, variables, and quoted literals (kept whole)."""
    tokens: list[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in "{}":
            tokens.append(ch)
            i += 1
            continue
        if ch in "\"'":
            end = text.find(ch, i + 1)
            if end == -1:
                raise UnbalancedQuote(text[i : i + 30])
            j = end + 1
            while j < n and not text[j].isspace() and text[j] not in "{}":
                j += 1
            tokens.append(text[i:j])
            i = j
            continue
        j = i
        while j < n and not text[j].isspace() and text[j] not in "{}\"'":
            j += 1
        word = text[i:j]
        i = j
        # COUNT-style parens around variables are separate tokens; parens
        # embedded in IRI local names are not
        if ":" not in word:
            while word.startswith("("):
                tokens.append("(")
                word = word[1:]
            trailing = []
            while word and word[-1] in ").;,":
                trailing.append(word[-1])
                word = word[:-1]
            if word:
                tokens.append(word)
            tokens.extend(reversed(trailing))
        else:
            if len(word) > 1 and word[-1] in ".;" and not word.endswith(")"):
                tokens.append(word[:-1])
                tokens.append(word[-1])
            else:
                tokens.append(word)
    return tokens


def _is_variable(tok: str) -> bool:
    return tok.startswith("?") and len(tok) > 1


def _parse_term(tok: str, position: int) -> Term:
    if _is_variable(tok):
        return Term(TermKind.VARIABLE, tok)
    if tok.startswith(("\"", "'")):
        quote = tok[0]
        end = tok.rfind(quote)
        if end == 0:
            raise SparqlSyntaxError(position, f"bad literal {tok!r}")
        lang = tok[end + 1 :]
        lang = lang[1:] if lang.startswith("@") else ""
        return Term(TermKind.LITERAL, Literal(tok[1:end], lang))
    try:
        iri = Iri.parse(tok)
    except ValueError as exc:
        raise SparqlSyntaxError(position, str(exc)) from exc
    if iri.prefix == "dbr":
        return Term(TermKind.ENTITY, iri)
    return Term(TermKind.RELATION, iri)


def parse_query(tokens: list[str]) -> SparqlQuery:
    if not tokens:
        raise SparqlSyntaxError(0, "empty query")
    unsupported: list[str] = []

    def note(feature: str) -> None:
        if feature not in unsupported:
            unsupported.append(feature)

    for pos, tok in enumerate(tokens):
        upper = tok.upper()
        if upper in UNSUPPORTED_KEYWORDS:
            note(UNSUPPORTED_KEYWORDS[upper])
        elif tok.startswith("<") and tok.endswith(">"):
            note("ANGLE_IRI")
        elif ":" in tok and not tok.startswith(("?", "\"", "'")):
            prefix = tok.partition(":")[0]
            if prefix in UNSUPPORTED_PREFIXES:
                note(prefix)

    i = 0

    def cur() -> str:
        return tokens[i] if i < len(tokens) else ""

    form = "select"
    distinct = False
    projection: list[str] = []

    head = cur().upper()
    if head == "ASK":
        form = "ask"
        i += 1
    elif head == "SELECT":
        i += 1
        if cur().upper() == "DISTINCT":
            distinct = True
            i += 1
        if cur().upper() == "COUNT":
            form = "select_count"
            i += 1
            if cur() == "(":
                i += 1
                if not _is_variable(cur()):
                    raise SparqlSyntaxError(i, "COUNT expects a variable")
                projection.append(cur())
                i += 1
                if cur() != ")":
                    raise SparqlSyntaxError(i, "expected ')'")
                i += 1
            elif _is_variable(cur()):
                projection.append(cur())
                i += 1
            else:
                raise SparqlSyntaxError(i, "COUNT expects (?var)")
        else:
            if cur() == "*":
                note("SELECT *")
                i += 1
            while _is_variable(cur()):
                projection.append(cur())
                i += 1
        if form == "select" and not projection and "SELECT *" not in unsupported:
            raise SparqlSyntaxError(i, "SELECT without projection")
    else:
        raise SparqlSyntaxError(0, f"expected SELECT or ASK, got {cur()!r}")

    if cur().upper() == "WHERE":
        i += 1
    if cur() != "{":
        raise SparqlSyntaxError(i, "expected '{'")
    i += 1

    patterns: list[TriplePattern] = []
    subject: Term | None = None
    depth = 1

    def skip_group() -> None:
        # consume a nested { ... } group verbatim (UNION arms etc.)
        nonlocal i
        d = 1
        i += 1
        while i < len(tokens) and d:
            if tokens[i] == "{":
                d += 1
            elif tokens[i] == "}":
                d -= 1
            i += 1

    def skip_parens() -> None:
        nonlocal i
        d = 0
        while i < len(tokens):
            if tokens[i] == "(":
                d += 1
            elif tokens[i] == ")":
                d -= 1
                if d <= 0:
                    i += 1
                    return
            elif d == 0 and tokens[i] in (".", "}", ";"):
                return
            i += 1

    while i < len(tokens) and depth:
        tok = cur()
        upper = tok.upper()
        if tok == "}":
            depth -= 1
            i += 1
            continue
        if tok == "{":
            skip_group()
            continue
        if tok == ".":
            subject = None
            i += 1
            continue
        if upper in ("FILTER", "HAVING"):
            i += 1
            skip_parens()
            subject = None
            continue
        if upper in ("OPTIONAL", "UNION"):
            i += 1
            if cur() == "{":
                skip_group()
            subject = None
            continue
        if tok == ";":
            # predicate-object list: reuse the current subject
            if subject is None:
                raise SparqlSyntaxError(i, "';' without a preceding triple")
            i += 1
            continue
        # triple: [subject] predicate object
        if subject is None:
            subject = _parse_term(tok, i)
            i += 1
            tok = cur()
        if not tok or tok in ".;}{":
            raise SparqlSyntaxError(i, "truncated triple pattern")
        if tok == "a" or tok == "rdf:type":
            relation = Term(TermKind.RELATION, RDF_TYPE)
        else:
            relation = _parse_term(tok, i)
            if relation.kind not in (TermKind.VARIABLE, TermKind.RELATION):
                raise SparqlSyntaxError(i, f"bad predicate {tok!r}")
        i += 1
        tok = cur()
        if not tok or tok in ".;}{":
            raise SparqlSyntaxError(i, "triple pattern missing object")
        obj = _parse_term(tok, i)
        i += 1
        if (
            relation.kind is TermKind.RELATION
            and relation.value == RDF_TYPE
            and obj.kind is TermKind.RELATION
            and obj.value.prefix == "dbo"
        ):
            obj = Term(TermKind.ONTOLOGY_CLASS, obj.value)
        patterns.append(TriplePattern(subject, relation, obj))

    # trailing solution modifiers (GROUP BY ... etc.) were already noted
    query = SparqlQuery(
        form=form,
        distinct=distinct,
        projection=projection,
        patterns=patterns,
        unsupported_features=unsupported,
        raw_tokens=list(tokens),
    )
    if not unsupported:
        bound = {
            t.value
            for p in patterns
            for t in p.terms()
            if t.kind is TermKind.VARIABLE
        }
        for var in projection:
            if var not in bound:
                raise SparqlSyntaxError(0, f"projection variable {var} unbound")
    return query


def parse_sparql(text: str) -> SparqlQuery:
    return parse_query(tokenize_sparql(text))


def extract_terms(query: SparqlQuery) -> tuple[set[Iri], set[Iri], set[Iri]]:
    """Gold entities (dbr), relations (dbo/dbp predicates, rdf:type
    excluded), and rdf:type ontology classes, by prefix."""
    entities: set[Iri] = set()
    relations: set[Iri] = set()
    classes: set[Iri] = set()
    for p in query.patterns:
        for term in (p.subject, p.object):
            if term.kind is TermKind.ENTITY:
                entities.add(term.value)
            elif term.kind is TermKind.ONTOLOGY_CLASS:
                classes.add(term.value)
        rel = p.relation
        if (
            rel.kind is TermKind.RELATION
            and rel.value != RDF_TYPE
            and rel.value.prefix in ("dbo", "dbp")
        ):
            relations.add(rel.value)
    return entities, relations, classes


def _resolve(term: Term, binding: dict):
    if term.kind is TermKind.VARIABLE:
        return binding.get(term.value)
    return term.value


def _match_pattern(kg: KnowledgeGraph, pattern: TriplePattern, binding: dict):
    s = _resolve(pattern.subject, binding)
    r = _resolve(pattern.relation, binding)
    o = _resolve(pattern.object, binding)
    if s is not None and r is not None:
        candidates = kg.objects_of.get((s, r), set())
        matches = [(s, r, obj) for obj in candidates if o is None or obj == o]
    elif r is not None and o is not None:
        candidates = kg.subjects_of.get((r, o), set())
        matches = [(sub, r, o) for sub in candidates]
    else:
        matches = [
            (t.subject, t.relation, t.object)
            for t in kg.facts
            if (s is None or t.subject == s)
            and (r is None or t.relation == r)
            and (o is None or t.object == o)
        ]
    for sub, rel, obj in sorted(matches, key=lambda m: tuple(str(x) for x in m)):
        new = dict(binding)
        ok = True
        # a variable repeated within one pattern must bind consistently
        for term, value in (
            (pattern.subject, sub),
            (pattern.relation, rel),
            (pattern.object, obj),
        ):
            if term.kind is TermKind.VARIABLE:
                if new.get(term.value, value) != value:
                    ok = False
                    break
                new[term.value] = value
        if ok:
            yield new


def _solutions(kg: KnowledgeGraph, patterns, binding=None):
    if binding is None:
        binding = {}
    if not patterns:
        yield binding
        return
    for b in _match_pattern(kg, patterns[0], binding):
        yield from _solutions(kg, patterns[1:], b)


def execute(query: SparqlQuery, kg: KnowledgeGraph):
    """Conjunctive pattern matching over the fact set.

    Returns a set of answers (Select), an int (SelectCount), or a bool
    (Ask). Queries with unsupported features raise UnsupportedFeature.
    """
    if query.unsupported_features:
        raise UnsupportedFeature(query.unsupported_features)
    if query.form == "ask":
        for _ in _solutions(kg, query.patterns):
            return True
        return False
    if len(query.projection) != 1:
        raise UnboundProjection(f"expected one projection variable, got {query.projection}")
    var = query.projection[0]
    values = [sol[var] for sol in _solutions(kg, query.patterns) if var in sol]
    if query.form == "select_count":
        if query.distinct:
            return len(set(values))
        return len(values)
    return set(values)


def serialize(query: SparqlQuery) -> str:
    """Render a query back to text; parse(serialize(q)) is structurally q
    for the executable fragment. Unsupported queries round-trip via their
    raw tokens."""
    if query.unsupported_features:
        return " ".join(query.raw_tokens)
    parts: list[str] = []
    if query.form == "ask":
        parts.append("ASK")
    else:
        parts.append("SELECT")
        if query.distinct:
            parts.append("DISTINCT")
        if query.form == "select_count":
            parts.extend(["COUNT", "(", query.projection[0], ")"])
        else:
            parts.extend(query.projection)
    parts.extend(["WHERE", "{"])
    for idx, p in enumerate(query.patterns):
        if idx:
            parts.append(".")
        rel = "rdf:type" if (p.relation.kind is TermKind.RELATION and p.relation.value == RDF_TYPE) else str(p.relation)
        parts.extend([str(p.subject), rel, str(p.object)])
    parts.append("}")
    return " ".join(parts)


def answer_strings(result) -> set[str]:
    """Normalize an execute() result into the string answer-set used by
    the metrics (counts numeric, booleans lowercase, literals stripped of
    language tags)."""
    if isinstance(result, bool):
        return {"true" if result else "false"}
    if isinstance(result, int):
        return {str(result)}
    out = set()
    for value in result:
        if isinstance(value, Literal):
            out.add(value.compare_key)
        else:
            out.add(str(value))
    return out


def gold_triples(query: SparqlQuery) -> list[Triple]:
    """Fully grounded patterns of a query, as KG triples."""
    out = []
    for p in query.patterns:
        if (
            p.subject.kind is TermKind.ENTITY
            and p.relation.kind is TermKind.RELATION
            and p.object.kind in (TermKind.ENTITY, TermKind.LITERAL)
        ):
            out.append(Triple(p.subject.value, p.relation.value, p.object.value))
    return out
