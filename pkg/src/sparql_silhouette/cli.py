"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training
divergence.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import graphsearch as gs
from . import pipeline as pl
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import load_dataset
from .errors import Divergence, SilhouetteError
from .kg import RDF_TYPE, load_kg
from .masking import (
    LinkerNoiseConfig,
    gold_linker,
    save_linker_outputs,
    save_masked_dataset,
    simulate_linker,
)
from .metrics import EvalReport, QuestionResult
from .report import write_report
from .seq2seq import Seq2SeqConfig, Seq2SeqModel, Vocabulary, build_vocab, decode, train_stage1
from .sparql import answer_strings, execute, parse_sparql, serialize
from .textalign import EmbeddingTable, iri_label_tokens, tokenize_question


@click.group()
def cli():
    """Two-stage question-to-SPARQL pipeline over an in-memory KG."""


# --- toybench ----------------------------------------------------------


@cli.group()
def toybench():
    """Synthetic benchmark generation."""


@toybench.command("generate")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--n-entities", default=60, show_default=True)
@click.option("--n-relations", default=12, show_default=True)
@click.option("--n-classes", default=6, show_default=True)
@click.option("--n-facts", default=240, show_default=True)
@click.option("--n-train", default=100, show_default=True)
@click.option("--n-val", default=20, show_default=True)
@click.option("--n-test", default=40, show_default=True)
def toybench_generate(out_dir, seed, n_entities, n_relations, n_classes, n_facts, n_train, n_val, n_test):
    from .toybench import ToybenchSpec, generate_toybench

    spec = ToybenchSpec(
        n_entities=n_entities,
        n_relations=n_relations,
        n_classes=n_classes,
        n_facts=n_facts,
        n_train=n_train,
        n_val=n_val,
        n_test=n_test,
        seed=seed,
    )
    bench = generate_toybench(spec, out_dir)
    for name, path in sorted(bench.paths.items()):
        click.echo(f"{name}\t{path}")


# --- kg ----------------------------------------------------------------


@cli.group()
def kg():
    """Knowledge graph utilities."""


@kg.command("validate")
@click.argument("kg_path", type=click.Path(exists=True))
def kg_validate(kg_path):
    graph = load_kg(kg_path)
    click.echo(f"facts\t{len(graph.facts)}")
    click.echo(f"entities\t{len(graph.entities)}")
    click.echo(f"relations\t{len(graph.relations)}")
    click.echo(f"classes\t{len(graph.ontology_classes)}")


# --- linker ------------------------------------------------------------


def _noise_options(fn):
    for deco in (
        click.option("--recall-entity", default=1.0, show_default=True),
        click.option("--recall-relation", default=1.0, show_default=True),
        click.option("--spurious-rate", default=0.0, show_default=True),
        click.option("--wrong-link-rate", default=0.0, show_default=True),
        click.option("--seed", default=0, show_default=True),
    ):
        fn = deco(fn)
    return fn


@cli.group()
def linker():
    """Entity/relation linker simulation."""


@linker.command("simulate")
@click.option("--kg", "kg_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--embeddings", "emb_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_noise_options
def linker_simulate(kg_path, dataset_path, emb_path, out_path, recall_entity, recall_relation, spurious_rate, wrong_link_rate, seed):
    graph = load_kg(kg_path)
    emb = EmbeddingTable.load(emb_path)
    records = load_dataset(dataset_path, graph)
    cfg = LinkerNoiseConfig(
        recall_entity=recall_entity,
        recall_relation=recall_relation,
        spurious_rate=spurious_rate,
        wrong_link_rate=wrong_link_rate,
        seed=seed,
    )
    outputs = {}
    for rec in records:
        gold = gold_linker(rec.question, parse_sparql(rec.sparql), emb)
        outputs[rec.id] = simulate_linker(
            gold, cfg, graph,
            n_question_tokens=len(tokenize_question(rec.question)),
            question_id=rec.id,
        )
    save_linker_outputs(outputs, out_path)
    click.echo(f"wrote {len(outputs)} linker outputs to {out_path}")


# --- mask --------------------------------------------------------------


@cli.command("mask")
@click.option("--scenario", required=True, type=click.Choice(["a", "b", "c"]))
@click.option("--kg", "kg_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--embeddings", "emb_path", required=True, type=click.Path(exists=True))
@click.option("--linker-file", "linker_file", default="", type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@_noise_options
def mask_cmd(scenario, kg_path, dataset_path, emb_path, linker_file, out_path, recall_entity, recall_relation, spurious_rate, wrong_link_rate, seed):
    graph = load_kg(kg_path)
    emb = EmbeddingTable.load(emb_path)
    records = load_dataset(dataset_path, graph)
    cfg = pl.PipelineConfig(
        scenario=scenario.upper(),
        linker=LinkerNoiseConfig(
            recall_entity=recall_entity,
            recall_relation=recall_relation,
            spurious_rate=spurious_rate,
            wrong_link_rate=wrong_link_rate,
            seed=seed,
        ),
        linker_file=linker_file,
    )
    from .masking import load_linker_outputs

    from_file = load_linker_outputs(linker_file) if linker_file else None
    outputs = pl.build_linker_outputs(records, cfg, graph, emb, from_file)
    pairs = pl.mask_split(records, outputs, cfg, emb)
    save_masked_dataset(pairs, out_path)
    click.echo(f"wrote {len(pairs)} masked pairs to {out_path}")


# --- train / predict / correct / eval ----------------------------------


def _prepare(cfg: pl.PipelineConfig):
    graph = load_kg(cfg.kg_path)
    emb = EmbeddingTable.load(cfg.embeddings_path)
    train = load_dataset(cfg.train_path, graph)
    test = load_dataset(cfg.test_path, graph) if cfg.test_path else []
    return graph, emb, train, test


def _masked_pairs(records, cfg, graph, emb):
    from .masking import load_linker_outputs

    from_file = load_linker_outputs(cfg.linker_file) if cfg.linker_file else None
    outputs = pl.build_linker_outputs(records, cfg, graph, emb, from_file)
    return pl.mask_split(records, outputs, cfg, emb)


@cli.group()
def train():
    """Model training."""


@train.command("stage1")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "ckpt_path", required=True, type=click.Path())
@click.option("--seed", default=None, type=int)
def train_stage1_cmd(config_path, ckpt_path, seed):
    cfg = pl.load_config(config_path, {"seed": seed})
    graph, emb, train_records, _ = _prepare(cfg)
    masked = _masked_pairs(train_records, cfg, graph, emb)
    pairs = [(p.masked_question, p.masked_sparql) for _q, p in sorted(masked.items())]
    src_vocab, tgt_vocab = build_vocab(pairs)
    model = Seq2SeqModel(cfg.seq2seq, src_vocab, tgt_vocab)
    loss_log = train_stage1(model, pairs)
    save_checkpoint(
        ckpt_path,
        model.snapshot(),
        config=cfg.seq2seq.to_dict(),
        metadata={"epochs": len(loss_log), "final_loss": loss_log[-1] if loss_log else None},
        vocabs={"src_vocab": src_vocab.to_json(), "tgt_vocab": tgt_vocab.to_json()},
    )
    click.echo(f"final loss {loss_log[-1]:.4f}, checkpoint at {ckpt_path}")


def _load_stage1(ckpt_path) -> Seq2SeqModel:
    tensors, header = load_checkpoint(ckpt_path)
    src_vocab = Vocabulary.from_json(Path(str(ckpt_path) + ".src_vocab.json").read_text())
    tgt_vocab = Vocabulary.from_json(Path(str(ckpt_path) + ".tgt_vocab.json").read_text())
    model = Seq2SeqModel(Seq2SeqConfig(**header["config"]), src_vocab, tgt_vocab)
    model.restore(tensors)
    return model


def _stage2_words(train_records, graph):
    return sorted(
        {tok for rec in train_records for tok in tokenize_question(rec.question)}
        | {tok for e in graph.entities for tok in iri_label_tokens(e)}
    )


def _build_stage2(cfg: pl.PipelineConfig, graph, train_records) -> gs.GraphSearchModel:
    relation_universe = sorted(r for r in graph.relations if r != RDF_TYPE)
    class_universe = sorted(graph.ontology_classes)
    gs_config = gs.GraphSearchConfig(
        alpha=cfg.stage2_alpha,
        relation_universe=relation_universe,
        class_universe=class_universe,
        encoder=cfg.stage2_encoder,
        learning_rate=cfg.stage2_learning_rate,
        batch_size=cfg.stage2_batch_size,
        max_epochs=cfg.stage2_max_epochs,
        seed=cfg.seed,
    )
    return gs.GraphSearchModel(gs_config, _stage2_words(train_records, graph))


@train.command("stage2")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "ckpt_path", required=True, type=click.Path())
@click.option("--seed", default=None, type=int)
def train_stage2_cmd(config_path, ckpt_path, seed):
    cfg = pl.load_config(config_path, {"seed": seed})
    graph, _emb, train_records, _ = _prepare(cfg)
    model = _build_stage2(cfg, graph, train_records)
    rel_examples, type_examples = gs.derive_training_examples(train_records, graph)
    loss_log = gs.train_stage2(model, rel_examples, type_examples, graph)
    save_checkpoint(
        ckpt_path,
        model.snapshot(),
        config=model.config.to_dict(),
        metadata={"epochs": model.config.max_epochs},
    )
    final = loss_log[-1] if loss_log else float("nan")
    click.echo(f"final loss {final:.4f}, checkpoint at {ckpt_path}")


@cli.command("predict")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def predict_cmd(config_path, ckpt_path, out_path):
    cfg = pl.load_config(config_path)
    graph, emb, _train, test_records = _prepare(cfg)
    masked = _masked_pairs(test_records, cfg, graph, emb)
    model = _load_stage1(ckpt_path)
    from .masking import demask

    with open(out_path, "w", encoding="utf-8") as fh:
        for rec in test_records:
            pair = masked.get(rec.id)
            row = {"id": rec.id, "silhouette_sparql": "", "predicted_sparql": "", "answers": []}
            if pair is not None:
                tokens = decode(model, model.src_vocab.encode(pair.masked_question), max_len=cfg.decode_max_len)
                try:
                    text = demask(tokens, pair.mask_table)
                    row["silhouette_sparql"] = text
                    row["predicted_sparql"] = text
                    row["answers"] = sorted(answer_strings(execute(parse_sparql(text), graph)))
                except Exception:
                    pass
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    click.echo(f"wrote predictions to {out_path}")


@cli.command("correct")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--predictions", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def correct_cmd(config_path, ckpt_path, pred_path, out_path):
    cfg = pl.load_config(config_path)
    graph, _emb, train_records, test_records = _prepare(cfg)
    model = _build_stage2(cfg, graph, train_records)
    tensors, _header = load_checkpoint(ckpt_path)
    model.restore(tensors)
    questions = {rec.id: rec.question for rec in test_records}
    n = 0
    with open(pred_path, encoding="utf-8") as src, open(out_path, "w", encoding="utf-8") as dst:
        for line in src:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            text = row.get("silhouette_sparql") or row.get("predicted_sparql") or ""
            question = questions.get(row["id"], "")
            try:
                query = parse_sparql(text)
                corrections: list = []
                query = gs.apply_stage2(
                    query, question, model, graph,
                    enable_type_head=cfg.enable_type_head,
                    correction_log=corrections,
                )
                row["predicted_sparql"] = serialize(query)
                row["corrections"] = corrections
                row["answers"] = sorted(answer_strings(execute(query, graph)))
            except Exception:
                row["answers"] = []
            dst.write(json.dumps(row, sort_keys=True) + "\n")
            n += 1
    click.echo(f"corrected {n} predictions into {out_path}")


@cli.command("eval")
@click.option("--kg", "kg_path", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--predictions", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def eval_cmd(kg_path, dataset_path, pred_path, out_dir):
    graph = load_kg(kg_path)
    records = load_dataset(dataset_path, graph)
    predicted: dict[str, list[str]] = {}
    with open(pred_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            predicted[str(row["id"])] = [str(a) for a in row.get("answers", [])]
    results = [
        QuestionResult.compute(rec.id, set(rec.answers), set(predicted.get(rec.id, [])))
        for rec in records
    ]
    report = EvalReport.compute(results)
    write_report(report, out_dir)
    click.echo(f"macro F1 {100.0 * report.macro_f1:.2f}, report in {out_dir}")


# --- pipeline ----------------------------------------------------------


@cli.group()
def pipeline():
    """End-to-end orchestration."""


@pipeline.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", default=None, type=int)
@click.option("--scenario", default=None, type=click.Choice(["A", "B", "C"]))
@click.option("--output-dir", default=None, type=click.Path())
def pipeline_run(config_path, seed, scenario, output_dir):
    overrides = {"seed": seed, "scenario": scenario, "output_dir": output_dir}
    cfg = pl.load_config(config_path, overrides)
    result = pl.run_pipeline(cfg)
    report = result.report
    click.echo(
        f"questions {report.n_questions}  AM {100.0 * report.am_rate:.2f}  "
        f"macro F1 {100.0 * report.macro_f1:.2f}  wholeset F1 {100.0 * report.wholeset_f1:.2f}"
    )
    click.echo(f"artifacts in {result.output_dir}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 1
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except Divergence as exc:
        click.echo(f"training diverged: {exc}", err=True)
        return 3
    except (SilhouetteError, OSError, json.JSONDecodeError, ValueError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
