import numpy as np
import pytest

from sparql_silhouette.kg import Iri, KnowledgeGraph, Triple
from sparql_silhouette.textalign import EmbeddingTable
from sparql_silhouette.toybench import ToybenchSpec, generate_toybench


@pytest.fixture
def film_kg():
    kg = KnowledgeGraph()
    kg.add_fact(Triple(Iri("dbr", "Stanley_Kubrick"), Iri("dbo", "director"), Iri("dbr", "A_Clockwork_Orange")))
    kg.add_fact(Triple(Iri("dbr", "Stanley_Kubrick"), Iri("dbo", "director"), Iri("dbr", "The_Shining")))
    kg.add_fact(Triple(Iri("dbr", "Scarface"), Iri("dbo", "alias"), Iri("dbr", "Al_Capone")))
    kg.add_fact(Triple(Iri("dbr", "Scarface"), Iri("rdf", "type"), Iri("dbo", "Criminal")))
    return kg


@pytest.fixture
def unit_emb():
    def make(words: dict[str, list[float]], dim: int) -> EmbeddingTable:
        return EmbeddingTable(dim, {w: np.asarray(v, dtype=float) for w, v in words.items()})

    return make


@pytest.fixture(scope="session")
def small_bench_spec():
    return ToybenchSpec(
        n_entities=24, n_relations=6, n_classes=3, n_facts=80,
        n_train=40, n_val=8, n_test=16, seed=7,
    )


@pytest.fixture(scope="session")
def small_bench(small_bench_spec, tmp_path_factory):
    return generate_toybench(small_bench_spec, tmp_path_factory.mktemp("bench"))
