"""Word embeddings, similarity measures, and mention alignment used by
the masking scenarios."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, ParseError
from .kg import Iri

_CAMEL_RE = re.compile(r"[A-Z]?[a-z0-9]+|[A-Z]+(?![a-z])")
_TERMINAL_PUNCT = ".,?!;:"


@dataclass(frozen=True)
class Span:
    """Half-open token span on the whitespace-tokenized question."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad span [{self.start}, {self.end})")


class EmbeddingTable:
    """Case-folded token -> vector lookup; OOV tokens map to the zero
    vector."""

    def __init__(self, dim: int, vectors: dict[str, np.ndarray]):
        self.dim = dim
        self.vectors = {}
        for token, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (dim,):
                raise DimMismatch(f"{token}: expected dim {dim}, got {arr.shape}")
            self.vectors[token.lower()] = arr
        self._zero = np.zeros(dim)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.vectors

    def lookup(self, token: str) -> np.ndarray:
        return self.vectors.get(token.lower(), self._zero)

    @classmethod
    def load(cls, path: "str | Path") -> "EmbeddingTable":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ParseError(1, "expected '<vocab_size> <dim>' header")
            vocab_size, dim = int(header[0]), int(header[1])
            vectors = {}
            for lineno, line in enumerate(fh, start=2):
                fields = line.split()
                if not fields:
                    continue
                if len(fields) != dim + 1:
                    raise ParseError(lineno, f"expected {dim + 1} fields, got {len(fields)}")
                vectors[fields[0]] = np.array([float(x) for x in fields[1:]])
        if len(vectors) != vocab_size:
            raise ParseError(1, f"header says {vocab_size} tokens, file has {len(vectors)}")
        return cls(dim, vectors)

    def save(self, path: "str | Path") -> None:
        lines = [f"{len(self.vectors)} {self.dim}"]
        for token in sorted(self.vectors):
            values = " ".join(f"{x:.6f}" for x in self.vectors[token])
            lines.append(f"{token} {values}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimMismatch(f"{u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def iri_label_tokens(iri: Iri) -> list[str]:
    """Local name split on underscores and camelCase boundaries,
    lowercased: dbo:placeOfDeath -> [place, of, death]."""
    tokens: list[str] = []
    for chunk in iri.local_name.split("_"):
        tokens.extend(m.group(0).lower() for m in _CAMEL_RE.finditer(chunk))
    return tokens


def tokenize_question(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip terminal punctuation."""
    tokens = []
    for raw in text.lower().split():
        word = raw.strip(_TERMINAL_PUNCT)
        if word:
            tokens.append(word)
    return tokens


def _mean_vector(tokens: list[str], emb: EmbeddingTable) -> np.ndarray:
    if not tokens:
        return np.zeros(emb.dim)
    return np.mean([emb.lookup(t) for t in tokens], axis=0)


def align_entity(
    entity: Iri, question_tokens: list[str], emb: EmbeddingTable | None = None
) -> Span | None:
    """First exact contiguous match of the entity's label tokens; falls
    back to the best embedding-scored window (accepted at >= 0.5)."""
    label = iri_label_tokens(entity)
    if not label:
        return None
    width = len(label)
    for start in range(len(question_tokens) - width + 1):
        if question_tokens[start : start + width] == label:
            return Span(start, start + width)
    if emb is None:
        return None
    target = _mean_vector(label, emb)
    best_score, best_span = 0.0, None
    for start in range(len(question_tokens) - width + 1):
        window = question_tokens[start : start + width]
        score = cosine(_mean_vector(window, emb), target)
        if score > best_score:
            best_score, best_span = score, Span(start, start + width)
    if best_span is not None and best_score >= 0.5:
        return best_span
    return None


def align_relation(
    relation: Iri, question_tokens: list[str], emb: EmbeddingTable
) -> Span | None:
    """Single-token span on the question word whose embedding is closest
    (cosine) to the mean of the relation's label-token vectors. Ties break
    to the lowest index; all-zero scores align nothing."""
    target = _mean_vector(iri_label_tokens(relation), emb)
    best_score, best_index = 0.0, None
    for index, word in enumerate(question_tokens):
        score = cosine(emb.lookup(word), target)
        if score > best_score:
            best_score, best_index = score, index
    if best_index is None:
        return None
    return Span(best_index, best_index + 1)
