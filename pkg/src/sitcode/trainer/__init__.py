"""Corpora, batching, optimization, metrics and ablation runs."""
from .ablate import CSV_HEADER, SUITES, ablate, mean_by_variant, variants, write_csv
from .corpus import CorpusError, dataflow_summary, gen_corpus, read_jsonl, write_jsonl
from .data import Batch, Example, collate, prepare_source
from .loop import Bundle, DivergedError, Report, TrainConfig, VocabMismatch, evaluate, train
from .metrics import EmptyReference, bleu, rouge_l
from .optim import AdamW, lr_at, warmup_steps

__all__ = [
    "AdamW",
    "Batch",
    "Bundle",
    "CSV_HEADER",
    "CorpusError",
    "DivergedError",
    "EmptyReference",
    "Example",
    "Report",
    "SUITES",
    "TrainConfig",
    "VocabMismatch",
    "ablate",
    "bleu",
    "collate",
    "dataflow_summary",
    "evaluate",
    "gen_corpus",
    "lr_at",
    "mean_by_variant",
    "prepare_source",
    "read_jsonl",
    "rouge_l",
    "train",
    "variants",
    "warmup_steps",
    "write_csv",
    "write_jsonl",
]
