import numpy as np

from sparql_silhouette.dataset import load_dataset
from sparql_silhouette.kg import Iri, Position, load_kg, valid_relations
from sparql_silhouette.masking import gold_linker
from sparql_silhouette.sparql import answer_strings, execute, parse_sparql
from sparql_silhouette.textalign import EmbeddingTable
from sparql_silhouette.toybench import ToybenchSpec, generate_toybench


def test_split_sizes(small_bench, small_bench_spec):
    spec = small_bench_spec
    assert len(small_bench.train) == spec.n_train
    assert len(small_bench.val) == spec.n_val
    assert len(small_bench.test) == spec.n_test


def test_files_round_trip(small_bench):
    bench = small_bench
    kg = load_kg(bench.paths["kg"])
    assert kg.facts == bench.kg.facts
    assert load_dataset(bench.paths["train"]) == bench.train
    emb = EmbeddingTable.load(bench.paths["embeddings"])
    assert set(emb.vectors) == set(bench.embeddings.vectors)


def test_generation_deterministic(tmp_path):
    spec = ToybenchSpec(n_entities=12, n_relations=4, n_classes=2,
                        n_facts=40, n_train=10, n_val=4, n_test=6, seed=5)
    a = generate_toybench(spec, tmp_path / "a")
    b = generate_toybench(spec, tmp_path / "b")
    for name in a.paths:
        assert a.paths[name].read_bytes() == b.paths[name].read_bytes()


def test_seed_changes_output(tmp_path):
    spec = ToybenchSpec(n_entities=12, n_relations=4, n_classes=2,
                        n_facts=40, n_train=10, n_val=4, n_test=6, seed=5)
    other = ToybenchSpec(**{**spec.__dict__, "seed": 6})
    a = generate_toybench(spec, tmp_path / "a")
    b = generate_toybench(other, tmp_path / "b")
    assert a.paths["train"].read_bytes() != b.paths["train"].read_bytes()


def test_gold_queries_executable_with_stored_answers(small_bench):
    bench = small_bench
    for record in bench.train + bench.val + bench.test:
        query = parse_sparql(record.sparql)
        assert sorted(answer_strings(execute(query, bench.kg))) == record.answers


def test_gold_mentions_align(small_bench):
    bench = small_bench
    from sparql_silhouette.sparql import extract_terms

    for record in bench.train[:10]:
        query = parse_sparql(record.sparql)
        out = gold_linker(record.question, query, bench.embeddings)
        linked = {item.iri for item in out.items if item.kind == "entity"}
        gold_entities, _, _ = extract_terms(query)
        assert linked == gold_entities
        for item in out.items:
            assert item.span is not None


def test_test_split_has_heldout_entities(small_bench):
    bench = small_bench

    from sparql_silhouette.sparql import extract_terms

    def split_entities(records):
        out = set()
        for record in records:
            entities, _, _ = extract_terms(parse_sparql(record.sparql))
            out |= entities
        return out

    train_entities = split_entities(bench.train) | split_entities(bench.val)
    test_entities = split_entities(bench.test)
    assert test_entities - train_entities


def test_dbp_twins_present(small_bench):
    kg = small_bench.kg
    dbp = {r for r in kg.relations if r.prefix == "dbp"}
    assert dbp
    for r in dbp:
        assert Iri("dbo", r.local_name) in kg.relations


def test_subject_primary_relation_is_unique(small_bench):
    kg = small_bench.kg
    for entity in sorted(kg.entities):
        dbo_out = {
            r for r in valid_relations(kg, entity, Position.SUBJECT) if r.prefix == "dbo"
        }
        assert len(dbo_out) <= 1


def test_relation_synonyms_have_high_cosine(small_bench):
    bench = small_bench
    emb = bench.embeddings
    dbo = sorted(r for r in bench.kg.relations if r.prefix == "dbo")
    for r in dbo:
        word = r.local_name
        partners = [w for w in emb.vectors if w.startswith(word) and w != word]
        assert partners
        v = emb.vectors[word]
        for p in partners:
            cos = float(np.dot(v, emb.vectors[p]))
            assert cos > 0.9
