"""Examples, vocabularies and padded batches."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..codegraph import BOS, EOS, ROOT, MultiViewGraph, Vocab, build_graph, expand, sbt_flatten, subtokenize, truncate
from ..minilang import parse_source
from ..sitmodel import AttentionMask, SitConfig, attention_mask_for, pattern_mask, parse_pattern


def summary_tokens(summary: str) -> list[str]:
    return summary.lower().split()


@dataclass(frozen=True)
class Source:
    """A source sequence with ``<root>`` at position 0 and its graph (None for SBT)."""

    tokens: tuple[str, ...]
    graph: MultiViewGraph | None


def prepare_source(code: str, max_src_len: int, sbt: bool = False,
                   alpha: float = 1.0, beta: float = 1.0, gamma: float = 1.0) -> Source:
    root = parse_source(code)
    if sbt:
        return Source((ROOT, *sbt_flatten(root)[: max_src_len - 1]), None)
    g = build_graph(root, alpha, beta, gamma)
    g = truncate(expand(g, subtokenize(g.tokens)), max_src_len - 1)
    return Source((ROOT, *g.tokens), g)


@dataclass
class Example:
    source_tokens: list[int]
    graph: MultiViewGraph | None
    target_tokens: list[int]
    meta: dict = field(default_factory=dict)
    mask: AttentionMask | None = field(default=None, repr=False)


def build_vocabs(sources: Sequence[Source], summaries: Sequence[str], min_freq: int = 1) -> tuple[Vocab, Vocab]:
    src = Vocab.build((s.tokens[1:] for s in sources), min_freq)
    tgt = Vocab.build((summary_tokens(s) for s in summaries), min_freq)
    return src, tgt


def make_examples(rows: Sequence[dict], sources: Sequence[Source], src_vocab: Vocab, tgt_vocab: Vocab,
                  cfg: SitConfig) -> list[Example]:
    out = []
    for row, s in zip(rows, sources):
        tgt = tgt_vocab.encode([BOS, *summary_tokens(row["summary"])[: cfg.max_tgt_len - 1], EOS])
        ex = Example(src_vocab.encode(s.tokens), s.graph, tgt, {"code": row["code"], "summary": row["summary"]})
        ex.mask = example_mask(ex, cfg)
        out.append(ex)
    return out


def example_mask(ex: Example, cfg: SitConfig) -> AttentionMask:
    l = len(ex.source_tokens)
    if ex.graph is None:
        spec = parse_pattern(cfg.pattern)
        # graph-free sources fall back to full attention under the structured pattern
        return pattern_mask("full" if spec.kind == "structured" else spec, l)
    return attention_mask_for(ex.graph, cfg, l)


@dataclass
class Batch:
    src: np.ndarray        # (B, L) ids, padded with 0
    src_valid: np.ndarray  # (B, L) bool
    allowed: np.ndarray    # (B, L, L) bool
    weights: np.ndarray    # (B, L, L)
    tgt_in: np.ndarray     # (B, T)
    tgt_out: np.ndarray    # (B, T)
    tgt_valid: np.ndarray  # (B, T) bool


def collate(examples: Sequence[Example], cfg: SitConfig) -> Batch:
    b = len(examples)
    L = max(len(e.source_tokens) for e in examples)
    T = max(len(e.target_tokens) for e in examples) - 1
    src = np.zeros((b, L), dtype=np.intp)
    src_valid = np.zeros((b, L), dtype=bool)
    # padded rows keep their self-loop so no softmax row is empty
    allowed = np.broadcast_to(np.eye(L, dtype=bool), (b, L, L)).copy()
    weights = np.broadcast_to(np.eye(L), (b, L, L)).astype(cfg.np_dtype)
    tgt_in = np.zeros((b, T), dtype=np.intp)
    tgt_out = np.zeros((b, T), dtype=np.intp)
    tgt_valid = np.zeros((b, T), dtype=bool)
    for k, e in enumerate(examples):
        l = len(e.source_tokens)
        mask = e.mask if e.mask is not None else example_mask(e, cfg)
        src[k, :l] = e.source_tokens
        src_valid[k, :l] = True
        allowed[k, :l, :l] = mask.allowed
        weights[k, :l, :l] = mask.weights
        t = len(e.target_tokens) - 1
        tgt_in[k, :t] = e.target_tokens[:-1]
        tgt_out[k, :t] = e.target_tokens[1:]
        tgt_valid[k, :t] = True
    return Batch(src, src_valid, allowed, weights, tgt_in, tgt_out, tgt_valid)


def batches(examples: Sequence[Example], batch_size: int, cfg: SitConfig, rng: np.random.Generator | None = None):
    order = np.arange(len(examples)) if rng is None else rng.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield collate([examples[i] for i in order[start:start + batch_size]], cfg)
