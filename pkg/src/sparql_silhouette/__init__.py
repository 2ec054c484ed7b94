"""Two-stage question-to-SPARQL pipeline over an in-memory knowledge
graph: noise-simulated masking, a convolutional seq2seq translator, and
a KG-restricted relation corrector, with an evaluation harness."""

from .kg import Iri, KnowledgeGraph, Literal, Position, Triple, load_kg, save_kg
from .masking import (
    LinkerNoiseConfig,
    LinkerOutput,
    MaskedPair,
    demask,
    gold_linker,
    mask_scenario_a,
    mask_scenario_b,
    mask_scenario_c,
    simulate_linker,
)
from .metrics import EvalReport, QuestionResult, prf1, wholeset_f1
from .pipeline import PipelineConfig, load_config, run_pipeline
from .seq2seq import Seq2SeqConfig, Seq2SeqModel, build_vocab, decode, train_stage1
from .sparql import SparqlQuery, execute, parse_sparql, serialize
from .toybench import ToybenchSpec, generate_toybench

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "Iri",
    "KnowledgeGraph",
    "LinkerNoiseConfig",
    "LinkerOutput",
    "Literal",
    "MaskedPair",
    "PipelineConfig",
    "Position",
    "QuestionResult",
    "Seq2SeqConfig",
    "Seq2SeqModel",
    "SparqlQuery",
    "ToybenchSpec",
    "Triple",
    "build_vocab",
    "decode",
    "demask",
    "execute",
    "generate_toybench",
    "gold_linker",
    "load_config",
    "load_kg",
    "mask_scenario_a",
    "mask_scenario_b",
    "mask_scenario_c",
    "parse_sparql",
    "prf1",
    "run_pipeline",
    "save_kg",
    "serialize",
    "simulate_linker",
    "train_stage1",
    "wholeset_f1",
]
