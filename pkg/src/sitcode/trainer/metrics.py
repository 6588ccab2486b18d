"""Corpus BLEU-4 and ROUGE-L over whitespace-tokenized summaries."""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

Tokens = Sequence[str]


class EmptyReference(ValueError):
    pass


def _tok(x) -> list[str]:
    return x.split() if isinstance(x, str) else list(x)


def _check(hyps, refs) -> tuple[list[list[str]], list[list[str]]]:
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses for {len(refs)} references")
    hyps = [_tok(h) for h in hyps]
    refs = [_tok(r) for r in refs]
    if not refs:
        raise EmptyReference("no references given")
    for k, r in enumerate(refs):
        if not r:
            raise EmptyReference(f"reference {k} is empty")
    return hyps, refs


def ngram_stats(hyp: Tokens, ref: Tokens, n: int) -> tuple[int, int]:
    """Clipped n-gram matches and hypothesis n-gram count."""
    h = Counter(tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1))
    r = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
    return sum(min(c, r[g]) for g, c in h.items()), sum(h.values())


def bleu(hyps, refs, max_n: int = 4) -> float:
    """Corpus BLEU with brevity penalty.

    Counts are pooled over the corpus.  Orders above one use add-one
    smoothing, ``(matches + 1) / (total + 1)``; unigram precision is unsmoothed.
    """
    hyps, refs = _check(hyps, refs)
    matches = [0] * max_n
    totals = [0] * max_n
    for h, r in zip(hyps, refs):
        for n in range(1, max_n + 1):
            m, t = ngram_stats(h, r, n)
            matches[n - 1] += m
            totals[n - 1] += t
    if totals[0] == 0 or matches[0] == 0:
        return 0.0
    log_p = math.log(matches[0] / totals[0])
    for n in range(1, max_n):
        log_p += math.log((matches[n] + 1) / (totals[n] + 1))
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p / max_n)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(hyp: Tokens, ref: Tokens, beta: float = 1.2) -> float:
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(hyp)
    r = lcs / len(ref)
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def rouge_l(hyps, refs, beta: float = 1.2) -> float:
    """Mean sentence-level LCS F-measure."""
    hyps, refs = _check(hyps, refs)
    return sum(rouge_l_sentence(h, r, beta) for h, r in zip(hyps, refs)) / len(refs)
