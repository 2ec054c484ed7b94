"""End-to-end orchestration: mask -> train stage 1 -> decode -> demask ->
(optional) stage-2 correction -> execute -> evaluate.

Every question is isolated: a prediction that fails to parse, demask, or
execute contributes an empty answer set instead of aborting the run. All
artifacts (masked datasets, checkpoints, predictions, report, figures)
land in the configured output directory, and identical config + seed
yields byte-identical predictions and reports.
"""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import graphsearch as gs
from .dataset import DatasetRecord, load_dataset
from .errors import ConfigError
from .kg import RDF_TYPE, KnowledgeGraph, load_kg
from .masking import (
    LinkerNoiseConfig,
    LinkerOutput,
    gold_linker,
    load_linker_outputs,
    mask_scenario_a,
    mask_scenario_b,
    mask_scenario_c,
    demask,
    save_linker_outputs,
    save_masked_dataset,
    simulate_linker,
)
from .metrics import EvalReport, QuestionResult
from .seq2seq import (
    Seq2SeqConfig,
    Seq2SeqModel,
    build_vocab,
    decode,
    train_stage1,
)
from .sparql import answer_strings, execute, parse_sparql, serialize
from .checkpoint import save_checkpoint
from .textalign import EmbeddingTable, iri_label_tokens, tokenize_question

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class PipelineConfig:
    kg_path: str = ""
    train_path: str = ""
    val_path: str = ""
    test_path: str = ""
    embeddings_path: str = ""
    linker_file: str = ""
    output_dir: str = "out"
    scenario: str = "A"
    linker: LinkerNoiseConfig = field(default_factory=LinkerNoiseConfig)
    seq2seq: Seq2SeqConfig = field(default_factory=Seq2SeqConfig)
    stage2_alpha: float = 0.4
    stage2_learning_rate: float = 1e-5
    stage2_batch_size: int = 8
    stage2_max_epochs: int = 20
    stage2_encoder: gs.EncoderConfig = field(default_factory=gs.EncoderConfig)
    enable_stage2: bool = False
    enable_type_head: bool = True
    decode_max_len: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("A", "B", "C"):
            raise ConfigError(f"scenario must be A, B, or C, got {self.scenario!r}")
        if self.scenario in ("B", "C") and not self.linker_file and self.linker is None:
            raise ConfigError("scenarios B and C need a linker file or noise config")


def load_config(path: "str | Path", overrides: dict | None = None) -> PipelineConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    paths = raw.get("paths", {})
    cfg = PipelineConfig(
        kg_path=paths.get("kg", ""),
        train_path=paths.get("train", ""),
        val_path=paths.get("val", ""),
        test_path=paths.get("test", ""),
        embeddings_path=paths.get("embeddings", ""),
        linker_file=paths.get("linker_file", ""),
        output_dir=raw.get("output_dir", paths.get("output_dir", "out")),
        scenario=raw.get("scenario", "A"),
        linker=LinkerNoiseConfig(**raw.get("linker", {})),
        seq2seq=Seq2SeqConfig(**raw.get("seq2seq", {})),
        enable_stage2=raw.get("enable_stage2", False),
        enable_type_head=raw.get("enable_type_head", True),
        decode_max_len=raw.get("decode_max_len", 60),
        seed=raw.get("seed", 0),
    )
    stage2 = raw.get("graphsearch", {})
    cfg.stage2_alpha = stage2.get("alpha", cfg.stage2_alpha)
    cfg.stage2_learning_rate = stage2.get("learning_rate", cfg.stage2_learning_rate)
    cfg.stage2_batch_size = stage2.get("batch_size", cfg.stage2_batch_size)
    cfg.stage2_max_epochs = stage2.get("max_epochs", cfg.stage2_max_epochs)
    enc = stage2.get("encoder", {})
    cfg.stage2_encoder = gs.EncoderConfig(**enc)
    if "seed" in raw:
        # --seed / top-level seed overrides every module seed
        cfg.seq2seq = replace(cfg.seq2seq, seed=cfg.seed)
        cfg.linker = replace(cfg.linker, seed=cfg.seed)
    return cfg


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SILHOUETTE_THREADS", "1")))
    except ValueError:
        return 1


def ordered_map(fn, items):
    """Map preserving input order; fans out to SILHOUETTE_THREADS."""
    n = worker_count()
    if n <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def build_linker_outputs(
    records: list[DatasetRecord],
    cfg: PipelineConfig,
    kg: KnowledgeGraph,
    emb: EmbeddingTable,
    from_file: dict[str, LinkerOutput] | None,
) -> dict[str, LinkerOutput]:
    outputs: dict[str, LinkerOutput] = {}
    for rec in records:
        try:
            query = parse_sparql(rec.sparql)
        except Exception:
            outputs[rec.id] = LinkerOutput([])
            continue
        gold = gold_linker(rec.question, query, emb)
        if cfg.scenario == "A":
            outputs[rec.id] = gold
        elif from_file is not None:
            outputs[rec.id] = from_file.get(rec.id, LinkerOutput([]))
        else:
            outputs[rec.id] = simulate_linker(
                gold,
                cfg.linker,
                kg,
                n_question_tokens=len(tokenize_question(rec.question)),
                question_id=rec.id,
            )
    return outputs


def mask_split(
    records: list[DatasetRecord],
    linker_outputs: dict[str, LinkerOutput],
    cfg: PipelineConfig,
    emb: EmbeddingTable,
):
    pairs = {}
    for rec in records:
        try:
            query = parse_sparql(rec.sparql)
        except Exception:
            continue
        if cfg.scenario == "A":
            pairs[rec.id] = mask_scenario_a(rec.question, query, emb)
        elif cfg.scenario == "B":
            pairs[rec.id] = mask_scenario_b(rec.question, query, linker_outputs[rec.id])
        else:
            pairs[rec.id] = mask_scenario_c(rec.question, query, linker_outputs[rec.id])
    return pairs


@dataclass
class PipelineResult:
    report: EvalReport
    output_dir: Path
    stage1_loss_log: list[float]
    stage2_loss_log: list[float]
    predictions: list[dict]


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    events_path = out_dir / "events.jsonl"
    events = open(events_path, "w", encoding="utf-8")

    def log_event(kind: str, **payload):
        events.write(json.dumps({"event": kind, **payload}, sort_keys=True) + "\n")

    try:
        kg = load_kg(cfg.kg_path)
        emb = EmbeddingTable.load(cfg.embeddings_path)
        splits = {
            "train": load_dataset(cfg.train_path, kg),
            "val": load_dataset(cfg.val_path, kg) if cfg.val_path else [],
            "test": load_dataset(cfg.test_path, kg),
        }
        from_file = load_linker_outputs(cfg.linker_file) if cfg.linker_file else None

        masked = {}
        for name, records in splits.items():
            if not records:
                continue
            linker_outputs = build_linker_outputs(records, cfg, kg, emb, from_file)
            save_linker_outputs(linker_outputs, out_dir / f"linker_{name}.jsonl")
            masked[name] = mask_split(records, linker_outputs, cfg, emb)
            save_masked_dataset(masked[name], out_dir / f"masked_{name}.jsonl")

        train_pairs = [
            (pair.masked_question, pair.masked_sparql)
            for _qid, pair in sorted(masked["train"].items())
        ]
        src_vocab, tgt_vocab = build_vocab(train_pairs)
        model = Seq2SeqModel(cfg.seq2seq, src_vocab, tgt_vocab)
        loss_log = train_stage1(
            model,
            train_pairs,
            epoch_callback=lambda epoch, loss: log_event("stage1_epoch", epoch=epoch, loss=loss),
        )
        save_checkpoint(
            out_dir / "stage1.ckpt",
            model.snapshot(),
            config=cfg.seq2seq.to_dict(),
            metadata={"epochs": len(loss_log), "final_loss": loss_log[-1] if loss_log else None},
            vocabs={"src_vocab": src_vocab.to_json(), "tgt_vocab": tgt_vocab.to_json()},
        )

        gs_model = None
        stage2_log: list[float] = []
        if cfg.enable_stage2:
            relation_universe = sorted(r for r in kg.relations if r != RDF_TYPE)
            class_universe = sorted(kg.ontology_classes)
            words = sorted(
                {
                    tok
                    for rec in splits["train"]
                    for tok in tokenize_question(rec.question)
                }
                | {tok for e in kg.entities for tok in iri_label_tokens(e)}
            )
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
            gs_model = gs.GraphSearchModel(gs_config, words)
            rel_examples, type_examples = gs.derive_training_examples(splits["train"], kg)
            stage2_log = gs.train_stage2(
                gs_model,
                rel_examples,
                type_examples,
                kg,
                epoch_callback=lambda epoch, loss: log_event("stage2_epoch", epoch=epoch, loss=loss),
            )
            save_checkpoint(
                out_dir / "stage2.ckpt",
                gs_model.snapshot(),
                config=gs_config.to_dict(),
                metadata={"epochs": cfg.stage2_max_epochs},
            )

        test_records = splits["test"]
        test_masked = masked["test"]

        def predict_one(rec: DatasetRecord) -> dict:
            outcome = {
                "id": rec.id,
                "silhouette_sparql": "",
                "predicted_sparql": "",
                "answers": [],
            }
            pair = test_masked.get(rec.id)
            if pair is None:
                return outcome
            predicted_tokens = decode(
                model,
                model.src_vocab.encode(pair.masked_question),
                max_len=cfg.decode_max_len,
            )
            try:
                silhouette_text = demask(predicted_tokens, pair.mask_table)
            except Exception:
                outcome["silhouette_sparql"] = " ".join(predicted_tokens)
                return outcome
            outcome["silhouette_sparql"] = silhouette_text
            final_text = silhouette_text
            try:
                query = parse_sparql(silhouette_text)
            except Exception:
                outcome["predicted_sparql"] = final_text
                return outcome
            if gs_model is not None:
                corrections: list = []
                query = gs.apply_stage2(
                    query,
                    rec.question,
                    gs_model,
                    kg,
                    enable_type_head=cfg.enable_type_head,
                    correction_log=corrections,
                )
                final_text = serialize(query)
                outcome["corrections"] = corrections
            outcome["predicted_sparql"] = final_text
            try:
                outcome["answers"] = sorted(answer_strings(execute(query, kg)))
            except Exception:
                outcome["answers"] = []
            return outcome

        predictions = ordered_map(predict_one, test_records)
        with open(out_dir / "predictions.jsonl", "w", encoding="utf-8") as fh:
            for outcome in predictions:
                fh.write(json.dumps(outcome, sort_keys=True) + "\n")
                log_event(
                    "question",
                    id=outcome["id"],
                    predicted=outcome["predicted_sparql"],
                    n_answers=len(outcome["answers"]),
                )

        results = [
            QuestionResult.compute(rec.id, set(rec.answers), set(outcome["answers"]))
            for rec, outcome in zip(test_records, predictions)
        ]
        report = EvalReport.compute(results)
        from .report import write_report

        write_report(report, out_dir, loss_log, stage2_log, scenario=cfg.scenario)
        return PipelineResult(report, out_dir, loss_log, stage2_log, predictions)
    finally:
        events.close()
