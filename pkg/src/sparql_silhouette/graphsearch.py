"""Stage-II corrector: KG-restricted relation prediction for correctable
triples and a separate ontology-class head for rdf:type patterns.

The text encoder is a small trainable conv + mean-pool network consuming
``[CLS] Q [SEP] [SUB|OBJ] [SEP] <entity label tokens>`` (the class head
sees ``[CLS] Q``), standing in for a large pretrained encoder behind the
same interface. The relation head trains with a combined loss
``(1-alpha) * cross_entropy + alpha * graph_search`` where the graph
search term is cross-entropy against a uniform distribution over the
KG-valid relations of the grounded entity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import Divergence, EmptyValidSet, GoldOutsideUniverse
from .kg import RDF_TYPE, Iri, KnowledgeGraph, Position, valid_relations
from .sparql import SparqlQuery, Term, TermKind, TriplePattern
from .textalign import iri_label_tokens, tokenize_question

CLS, SEP, SUB, OBJ = "[CLS]", "[SEP]", "[SUB]", "[OBJ]"
PAD, UNK = "<pad>", "<unk>"


@dataclass
class EncoderConfig:
    embed_dim: int = 32
    hidden_dim: int = 32
    kernel_width: int = 3
    layers: int = 1
    max_positions: int = 64


@dataclass
class GraphSearchConfig:
    alpha: float = 0.4
    relation_universe: list[Iri] = field(default_factory=list)
    class_universe: list[Iri] = field(default_factory=list)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    learning_rate: float = 1e-5
    batch_size: int = 8
    max_epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        self.relation_universe = list(dict.fromkeys(self.relation_universe))
        self.class_universe = list(dict.fromkeys(self.class_universe))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "relation_universe": [str(i) for i in self.relation_universe],
            "class_universe": [str(i) for i in self.class_universe],
            "encoder": dict(self.encoder.__dict__),
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class CorrectionInput:
    question_tokens: tuple[str, ...]
    marker: str  # "SUB" | "OBJ"
    entity: Iri
    triple_index: int

    @property
    def position(self) -> Position:
        return Position.SUBJECT if self.marker == "SUB" else Position.OBJECT


class _Head:
    """Embedding + conv/GLU/residual + mean pool + linear softmax head."""

    def __init__(self, name: str, vocab: list[str], n_outputs: int, enc: EncoderConfig, rng):
        self.vocab = [PAD, UNK, CLS, SEP, SUB, OBJ] + [
            t for t in vocab if t not in (PAD, UNK, CLS, SEP, SUB, OBJ)
        ]
        self.token_to_id = {t: i for i, t in enumerate(self.vocab)}
        self.enc = enc
        self.params: dict[str, Tensor] = {}
        E, H, k = enc.embed_dim, enc.hidden_dim, enc.kernel_width

        def par(pname, shape, scl):
            self.params[pname] = ad.parameter(rng.normal(0.0, scl, shape), f"{name}.{pname}")

        par("embed", (len(self.vocab), E), 0.1)
        par("pos", (enc.max_positions, E), 0.1)
        par("in_W", (E, H), np.sqrt(1.0 / E))
        par("in_b", (H,), 0.0)
        for layer in range(enc.layers):
            par(f"conv{layer}_K", (k, H, 2 * H), np.sqrt(1.0 / (k * H)))
            par(f"conv{layer}_b", (2 * H,), 0.0)
        par("out_W", (H, n_outputs), np.sqrt(1.0 / H))
        par("out_b", (n_outputs,), 0.0)

    def encode_ids(self, tokens: list[str]) -> list[int]:
        unk = self.token_to_id[UNK]
        ids = [self.token_to_id.get(t, unk) for t in tokens]
        return ids[: self.enc.max_positions]

    def forward(self, tokens: list[str]) -> Tensor:
        ids = self.encode_ids(tokens)
        word = ad.embedding_lookup(self.params["embed"], ids)
        pos = ad.embedding_lookup(self.params["pos"], np.arange(len(ids)))
        x = ad.add(word, pos)
        x = ad.add(ad.matmul(x, self.params["in_W"]), self.params["in_b"])
        for layer in range(self.enc.layers):
            conv = ad.conv1d(x, self.params[f"conv{layer}_K"], self.params[f"conv{layer}_b"])
            x = ad.add(ad.glu(conv), x)
        pooled = ad.mean_rows(x)
        p = ad.softmax(
            ad.add(
                ad.matmul(
                    Tensor(pooled.value.reshape(1, -1), (pooled,), lambda g: (g.reshape(-1),)),
                    self.params["out_W"],
                ),
                self.params["out_b"],
            )
        )
        return Tensor(p.value.reshape(-1), (p,), lambda g: (g.reshape(1, -1),))


class GraphSearchModel:
    """Two heads with no shared parameters: relation corrector and
    rdf:type class predictor."""

    def __init__(self, config: GraphSearchConfig, vocab: list[str]):
        self.config = config
        self.vocab = list(vocab)
        rng = np.random.default_rng(config.seed)
        self.relation_head = _Head(
            "relation", vocab, len(config.relation_universe), config.encoder, rng
        )
        self.type_head = _Head(
            "type", vocab, max(len(config.class_universe), 1), config.encoder, rng
        )
        self.relation_index = {iri: i for i, iri in enumerate(config.relation_universe)}
        self.class_index = {iri: i for i, iri in enumerate(config.class_universe)}

    @property
    def params(self) -> dict[str, Tensor]:
        merged = {}
        for prefix, head in (("relation", self.relation_head), ("type", self.type_head)):
            for name, p in head.params.items():
                merged[f"{prefix}.{name}"] = p
        return merged

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.value = snap[name].copy()


def correctable_triples(query: SparqlQuery) -> list[CorrectionInput]:
    """Triples eligible for relation correction: not rdf:type, exactly
    one grounded entity, the other slot an existential variable."""
    # question tokens are attached by the caller; this operates on slots only
    out: list[CorrectionInput] = []
    for index, p in enumerate(query.patterns):
        if p.relation.kind is TermKind.RELATION and p.relation.value == RDF_TYPE:
            continue
        subject_entity = p.subject.kind is TermKind.ENTITY
        object_entity = p.object.kind is TermKind.ENTITY
        subject_var = p.subject.kind is TermKind.VARIABLE
        object_var = p.object.kind is TermKind.VARIABLE
        if subject_entity and object_var:
            out.append(CorrectionInput((), "SUB", p.subject.value, index))
        elif object_entity and subject_var:
            out.append(CorrectionInput((), "OBJ", p.object.value, index))
    return out


def relation_input_tokens(question_tokens: list[str], marker: str, entity: Iri) -> list[str]:
    marker_token = SUB if marker == "SUB" else OBJ
    return [CLS] + list(question_tokens) + [SEP, marker_token, SEP] + iri_label_tokens(entity)


def type_input_tokens(question_tokens: list[str]) -> list[str]:
    return [CLS] + list(question_tokens)


def stage2_loss(
    p: Tensor,
    gold: Iri,
    valid: set[Iri],
    alpha: float,
    universe: list[Iri],
) -> Tensor:
    """(1-alpha) * (-log p[gold]) + alpha * cross-entropy of p against
    the uniform distribution over the valid relations."""
    index = {iri: i for i, iri in enumerate(universe)}
    if gold not in index:
        raise GoldOutsideUniverse(str(gold))
    valid_ids = sorted(index[v] for v in valid if v in index)
    if not valid_ids:
        raise EmptyValidSet(str(sorted(str(v) for v in valid)))
    log_p = ad.log(p)
    ce = ad.scale(ad.slice_rows(log_p, index[gold], index[gold] + 1), -1.0)
    ce = ad.sum_all(ce)
    picked = [ad.sum_all(ad.slice_rows(log_p, i, i + 1)) for i in valid_ids]
    gs_sum = picked[0]
    for extra in picked[1:]:
        gs_sum = ad.add(gs_sum, extra)
    gs = ad.scale(gs_sum, -1.0 / len(valid_ids))
    return ad.add(ad.scale(ce, 1.0 - alpha), ad.scale(gs, alpha))


def predict_relation(
    model: GraphSearchModel, corr: CorrectionInput, kg: KnowledgeGraph
) -> Iri:
    """Argmax of the relation head restricted to the entity's valid
    relations; dbp winners with a same-name dbo twin in the valid set
    yield the dbo form; ties break by universe order."""
    valid = valid_relations(kg, corr.entity, corr.position)
    candidates = [
        (model.relation_index[r], r) for r in valid if r in model.relation_index
    ]
    if not candidates:
        raise EmptyValidSet(str(corr.entity))
    probs = model.relation_head.forward(
        relation_input_tokens(list(corr.question_tokens), corr.marker, corr.entity)
    ).value
    best = min(candidates, key=lambda c: (-probs[c[0]], c[0]))[1]
    if best.prefix == "dbp":
        dbo_twin = Iri("dbo", best.local_name)
        if dbo_twin in valid:
            return dbo_twin
    return best


def predict_type(model: GraphSearchModel, question_tokens: list[str]) -> Iri:
    """Argmax over the ontology-class universe (ties to lowest index)."""
    if not model.config.class_universe:
        raise EmptyValidSet("class universe is empty")
    probs = model.type_head.forward(type_input_tokens(question_tokens)).value
    index = int(np.argmax(probs[: len(model.config.class_universe)]))
    return model.config.class_universe[index]


@dataclass
class RelationExample:
    question_tokens: list[str]
    marker: str
    entity: Iri
    gold_relation: Iri


@dataclass
class TypeExample:
    question_tokens: list[str]
    gold_class: Iri


def derive_training_examples(
    records, kg: KnowledgeGraph
) -> tuple[list[RelationExample], list[TypeExample]]:
    """Every gold correctable triple yields a relation example; every
    gold rdf:type pattern yields a type example."""
    from .sparql import parse_sparql

    rel_examples: list[RelationExample] = []
    type_examples: list[TypeExample] = []
    for rec in records:
        try:
            query = parse_sparql(rec.sparql)
        except Exception:
            continue
        tokens = tokenize_question(rec.question)
        for corr in correctable_triples(query):
            gold_rel = query.patterns[corr.triple_index].relation
            if gold_rel.kind is not TermKind.RELATION:
                continue
            rel_examples.append(
                RelationExample(tokens, corr.marker, corr.entity, gold_rel.value)
            )
        for p in query.patterns:
            if (
                p.relation.kind is TermKind.RELATION
                and p.relation.value == RDF_TYPE
                and p.subject.kind is TermKind.VARIABLE
                and p.object.kind is TermKind.ONTOLOGY_CLASS
            ):
                type_examples.append(TypeExample(tokens, p.object.value))
    return rel_examples, type_examples


def train_stage2(
    model: GraphSearchModel,
    rel_examples: list[RelationExample],
    type_examples: list[TypeExample],
    kg: KnowledgeGraph,
    config: GraphSearchConfig | None = None,
    epoch_callback=None,
) -> list[float]:
    """Train the relation head with the combined loss and the type head
    with plain cross-entropy. Deterministic given the config seed."""
    if config is None:
        config = model.config
    universe = config.relation_universe
    rng = np.random.default_rng(config.seed)
    loss_log: list[float] = []

    def run_head(head, examples, loss_fn):
        optimizer = ad.NAGOptimizer(head.params, config.learning_rate)
        head_log = []
        for epoch in range(config.max_epochs):
            order = rng.permutation(len(examples))
            epoch_losses = []
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                grads = None
                batch_loss = 0.0
                for idx in batch:
                    loss = loss_fn(examples[idx])
                    g = ad.backward(loss, head.params)
                    batch_loss += float(loss.value)
                    if grads is None:
                        grads = g
                    else:
                        for name in grads:
                            grads[name] += g[name]
                n = len(batch)
                grads = {name: g / n for name, g in grads.items()}
                batch_loss /= n
                if not np.isfinite(batch_loss):
                    raise Divergence(f"non-finite stage-2 loss at epoch {epoch}")
                optimizer.step(grads)
                epoch_losses.append(batch_loss)
            mean_loss = float(np.mean(epoch_losses)) if epoch_losses else 0.0
            head_log.append(mean_loss)
            if epoch_callback is not None:
                epoch_callback(epoch, mean_loss)
        return head_log

    def relation_loss(ex: RelationExample) -> Tensor:
        position = Position.SUBJECT if ex.marker == "SUB" else Position.OBJECT
        valid = valid_relations(kg, ex.entity, position)
        p = model.relation_head.forward(
            relation_input_tokens(ex.question_tokens, ex.marker, ex.entity)
        )
        return stage2_loss(p, ex.gold_relation, valid, config.alpha, universe)

    def type_loss(ex: TypeExample) -> Tensor:
        p = model.type_head.forward(type_input_tokens(ex.question_tokens))
        index = model.class_index[ex.gold_class]
        return ad.scale(ad.sum_all(ad.slice_rows(ad.log(p), index, index + 1)), -1.0)

    rel_examples = [ex for ex in rel_examples if ex.gold_relation in model.relation_index]
    type_examples = [ex for ex in type_examples if ex.gold_class in model.class_index]
    if rel_examples:
        loss_log.extend(run_head(model.relation_head, rel_examples, relation_loss))
    if type_examples:
        loss_log.extend(run_head(model.type_head, type_examples, type_loss))
    return loss_log


def apply_stage2(
    silhouette: SparqlQuery,
    question: str,
    model: GraphSearchModel,
    kg: KnowledgeGraph,
    enable_type_head: bool = True,
    correction_log: list | None = None,
) -> SparqlQuery:
    """Replace each correctable triple's relation with the restricted
    prediction and each <?x, rdf:type, c> class with the type head's
    prediction. Structure is preserved; triples whose entity has no valid
    relations are left unchanged."""
    question_tokens = tokenize_question(question)
    patterns = list(silhouette.patterns)
    for corr in correctable_triples(silhouette):
        corr = CorrectionInput(
            tuple(question_tokens), corr.marker, corr.entity, corr.triple_index
        )
        old = patterns[corr.triple_index]
        try:
            new_relation = predict_relation(model, corr, kg)
        except EmptyValidSet:
            continue
        if correction_log is not None:
            correction_log.append(
                {
                    "triple_index": corr.triple_index,
                    "entity": str(corr.entity),
                    "marker": corr.marker,
                    "before": str(old.relation),
                    "after": str(new_relation),
                }
            )
        patterns[corr.triple_index] = TriplePattern(
            old.subject, Term(TermKind.RELATION, new_relation), old.object
        )
    if enable_type_head and model.config.class_universe:
        for index, p in enumerate(patterns):
            if (
                p.relation.kind is TermKind.RELATION
                and p.relation.value == RDF_TYPE
                and p.subject.kind is TermKind.VARIABLE
                and p.object.kind is TermKind.ONTOLOGY_CLASS
            ):
                predicted = predict_type(model, question_tokens)
                patterns[index] = TriplePattern(
                    p.subject, p.relation, Term(TermKind.ONTOLOGY_CLASS, predicted)
                )
    corrected = SparqlQuery(
        form=silhouette.form,
        distinct=silhouette.distinct,
        projection=list(silhouette.projection),
        patterns=patterns,
        unsupported_features=list(silhouette.unsupported_features),
        raw_tokens=list(silhouette.raw_tokens),
    )
    return corrected
