"""Summarization transformer: encoder with graph-restricted attention,
standard decoder, greedy and beam decoding."""
from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import numkit as nk
from .codegraph import MultiViewGraph
from .numkit import Module, Tensor

BOS_ID, EOS_ID, PAD_ID, ROOT_ID = 3, 4, 0, 2


class GraphSizeMismatch(ValueError):
    pass


class PrefixTooLong(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


# -- configuration -------------------------------------------------------

_PATTERN_RE = re.compile(r"^(structured|full|window\((\d+)\)|random\((\d+)(?:,\s*(\d+))?\))$")


@dataclass(frozen=True)
class PatternSpec:
    kind: str  # structured | full | window | random
    size: int = 0
    seed: int = 0


def parse_pattern(text: str) -> PatternSpec:
    m = _PATTERN_RE.match(text.strip())
    if not m:
        raise ValueError(f"bad attention pattern {text!r}; use structured, full, window(w) or random(r[,seed])")
    if m.group(2) is not None:
        return PatternSpec("window", int(m.group(2)))
    if m.group(3) is not None:
        return PatternSpec("random", int(m.group(3)), int(m.group(4) or 0))
    return PatternSpec(m.group(1))


@dataclass
class SitConfig:
    d_model: int = 128
    heads: int = 4
    d_ff: int = 512
    encoder_layers: int = 4
    decoder_layers: int = 4
    max_src_len: int = 400
    max_tgt_len: int = 32
    dropout: float = 0.1
    rpe_clip: int = 16
    attention_mode: str = "masked"  # masked | multiplicative
    pattern: str = "structured"  # structured | full | window(w) | random(r, seed)
    layer_pattern: str = ""  # over {S, G}; empty means "GS" per module
    module_sum: bool = True  # pair layers into SAN -> Si-SAN modules summed position-wise
    share_encoder_params: bool = False
    dtype: str = "float32"

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    @property
    def n_modules(self) -> int:
        return self.encoder_layers // 2

    @property
    def layers(self) -> str:
        return self.layer_pattern or "GS" * self.n_modules

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def problems(self) -> list[str]:
        out = []
        for name, lo in (("d_model", 1), ("heads", 1), ("d_ff", 1), ("encoder_layers", 1),
                         ("decoder_layers", 1), ("max_src_len", 2), ("max_tgt_len", 1), ("rpe_clip", 0)):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < lo:
                out.append(f"{name} must be an integer >= {lo}, got {value!r}")
        if isinstance(self.d_model, int) and isinstance(self.heads, int) and self.heads > 0 and self.d_model % self.heads:
            out.append(f"d_model ({self.d_model}) must be divisible by heads ({self.heads})")
        if not isinstance(self.dropout, (int, float)) or not 0.0 <= self.dropout < 1.0:
            out.append(f"dropout must be in [0, 1), got {self.dropout!r}")
        if self.attention_mode not in ("masked", "multiplicative"):
            out.append(f"attention_mode must be masked or multiplicative, got {self.attention_mode!r}")
        try:
            parse_pattern(str(self.pattern))
        except ValueError as exc:
            out.append(str(exc))
        if isinstance(self.encoder_layers, int):
            if self.module_sum and self.encoder_layers % 2:
                out.append(f"encoder_layers must be even when module_sum is set, got {self.encoder_layers}")
            lp = self.layers
            if len(lp) != self.encoder_layers:
                out.append(f"layer_pattern {lp!r} has length {len(lp)}, expected {self.encoder_layers}")
            if set(lp) - {"S", "G"}:
                out.append(f"layer_pattern {lp!r} may only contain S and G")
        if self.dtype not in ("float32", "float64"):
            out.append(f"dtype must be float32 or float64, got {self.dtype!r}")
        return out

    def validate(self) -> SitConfig:
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SitConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"unknown SitConfig key {k!r}" for k in unknown])
        return cls(**d)


# -- attention masks ----------------------------------------------------

@dataclass(frozen=True)
class AttentionMask:
    """Boolean attention graph; ``weights`` carries the combined view values
    for the multiplicative mode."""

    allowed: np.ndarray
    weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.allowed.shape[0]

    def __post_init__(self):
        if not np.all(np.diagonal(self.allowed)):
            raise ValueError("attention masks must allow every self-loop")


def mask_from_graph(graph: MultiViewGraph) -> AttentionMask:
    c = np.asarray(graph.combined)
    return AttentionMask(c > 0, c.copy())


def pattern_mask(kind: str | PatternSpec, l: int) -> AttentionMask:
    """Full, banded (|i - j| <= w) or seeded random attention graph over ``l`` positions."""
    spec = parse_pattern(kind) if isinstance(kind, str) else kind
    if spec.kind == "full":
        allowed = np.ones((l, l), dtype=bool)
    elif spec.kind == "window":
        i = np.arange(l)
        allowed = np.abs(i[:, None] - i[None, :]) <= spec.size
    elif spec.kind == "random":
        allowed = np.eye(l, dtype=bool)
        rng = np.random.default_rng([spec.seed, l])
        k = min(spec.size, l - 1)
        for i in range(l):
            if k == 0:
                break
            others = np.delete(np.arange(l), i)
            partners = rng.choice(others, size=k, replace=False)
            allowed[i, partners] = True
            allowed[partners, i] = True
    else:
        raise ValueError(f"pattern_mask does not build {spec.kind!r} masks")
    return AttentionMask(allowed, allowed.astype(np.float64))


def attention_mask_for(graph: MultiViewGraph | None, cfg: SitConfig, l: int | None = None) -> AttentionMask:
    spec = parse_pattern(cfg.pattern)
    if spec.kind == "structured":
        if graph is None:
            raise GraphSizeMismatch("structured attention needs a graph")
        return mask_from_graph(graph)
    return pattern_mask(spec, graph.n if l is None else l)


# -- layers ----------------------------------------------------------------

def relative_index(i_len: int, j_len: int, clip: int) -> np.ndarray:
    i = np.arange(i_len)[:, None]
    j = np.arange(j_len)[None, :]
    return np.clip(j - i, -clip, clip) + clip


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product attention with key-side relative positions."""

    def __init__(self, d_model: int, heads: int, rng, dtype, rpe_clip: int = 0):
        self.heads = heads
        self.d_k = d_model // heads
        self.q = nk.Linear(d_model, d_model, rng, dtype)
        self.k = nk.Linear(d_model, d_model, rng, dtype)
        self.v = nk.Linear(d_model, d_model, rng, dtype)
        self.o = nk.Linear(d_model, d_model, rng, dtype)
        self.rpe_clip = rpe_clip
        self.rel_k = nk.Embedding(2 * rpe_clip + 1, self.d_k, rng, dtype) if rpe_clip > 0 else None
        self.record = False
        self.last_probs = None

    def _split(self, t: Tensor) -> Tensor:
        b, n, _ = t.shape
        return nk.permute(nk.reshape(t, (b, n, self.heads, self.d_k)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, kv: Tensor, allowed: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
        b, i_len, d = x.shape
        j_len = kv.shape[1]
        q, k, v = self._split(self.q(x)), self._split(self.k(kv)), self._split(self.v(kv))
        scores = nk.matmul(q, nk.transpose_last_two(k))
        if self.rel_k is not None:
            rel = nk.matmul(q, nk.transpose_last_two(self.rel_k.weight))
            scores = nk.add(scores, nk.gather_last(rel, relative_index(i_len, j_len, self.rpe_clip)))
        scores = nk.scale(scores, 1.0 / math.sqrt(self.d_k))
        if weights is not None:
            scores = nk.mul(scores, Tensor(weights.astype(scores.dtype, copy=False)))
        probs = nk.softmax_rows(scores, allowed)
        if nk.tensor.DEBUG:
            leak = probs.data[~np.broadcast_to(allowed, probs.shape)]
            assert not leak.any(), "attention mass on a forbidden pair"
        if self.record:
            self.last_probs = probs.data
        ctx = nk.reshape(nk.permute(nk.matmul(probs, v), (0, 2, 1, 3)), (b, i_len, d))
        return self.o(ctx)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng, dtype):
        self.inner = nk.Linear(d_model, d_ff, rng, dtype)
        self.outer = nk.Linear(d_ff, d_model, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(nk.relu(self.inner(x)))


class EncoderLayer(Module):
    """Post-norm transformer layer.  Whether it acts as SAN or Si-SAN is
    decided by the mask it is called with."""

    def __init__(self, cfg: SitConfig, rng):
        dt = cfg.np_dtype
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, dt, cfg.rpe_clip)
        self.norm1 = nk.LayerNorm(cfg.d_model, dt)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, dt)
        self.norm2 = nk.LayerNorm(cfg.d_model, dt)
        self.p = cfg.dropout
        self.rng = rng

    def __call__(self, x: Tensor, allowed: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
        h = self.norm1(nk.add(x, nk.dropout(self.attn(x, x, allowed, weights), self.p, self.rng, self.training)))
        return self.norm2(nk.add(h, nk.dropout(self.ff(h), self.p, self.rng, self.training)))


class DecoderLayer(Module):
    def __init__(self, cfg: SitConfig, rng):
        dt = cfg.np_dtype
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, dt, cfg.rpe_clip)
        self.norm1 = nk.LayerNorm(cfg.d_model, dt)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng, dt)
        self.norm2 = nk.LayerNorm(cfg.d_model, dt)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, dt)
        self.norm3 = nk.LayerNorm(cfg.d_model, dt)
        self.p = cfg.dropout
        self.rng = rng

    def __call__(self, y: Tensor, memory: Tensor, causal: np.ndarray, cross: np.ndarray) -> Tensor:
        drop = lambda t: nk.dropout(t, self.p, self.rng, self.training)  # noqa: E731
        h = self.norm1(nk.add(y, drop(self.self_attn(y, y, causal))))
        h = self.norm2(nk.add(h, drop(self.cross_attn(h, memory, cross))))
        return self.norm3(nk.add(h, drop(self.ff(h))))


def san(attn: MultiHeadAttention, x: Tensor, mask: AttentionMask | None = None) -> Tensor:
    """Self-attention over one ``(l, d)`` sequence; complete graph unless ``mask`` is given."""
    l = x.shape[0]
    allowed = np.ones((l, l), dtype=bool) if mask is None else mask.allowed
    return nk.reshape(attn(nk.reshape(x, (1,) + x.shape), nk.reshape(x, (1,) + x.shape), allowed[None, None]), x.shape)


def si_san(attn: MultiHeadAttention, x: Tensor, mask: AttentionMask, mode: str = "masked") -> Tensor:
    """Structure-induced self-attention: attention only along ``mask`` edges.

    In ``multiplicative`` mode the scaled logits are first multiplied by the
    combined view weights.
    """
    l = x.shape[0]
    if mask.n != l:
        raise GraphSizeMismatch(f"mask covers {mask.n} positions, input has {l}")
    weights = mask.weights[None, None] if mode == "multiplicative" else None
    x3 = nk.reshape(x, (1,) + x.shape)
    return nk.reshape(attn(x3, x3, mask.allowed[None, None], weights), x.shape)


def si_module(
    san_layer: EncoderLayer,
    si_layer: EncoderLayer,
    x: Tensor,
    mask: AttentionMask,
    mode: str = "masked",
    drop_structured: bool = False,
) -> Tensor:
    """SAN layer, then Si-SAN layer on its output, summed position-wise."""
    l = x.shape[0]
    if mask.n != l:
        raise GraphSizeMismatch(f"mask covers {mask.n} positions, input has {l}")
    x3 = nk.reshape(x, (1,) + x.shape)
    h = san_layer(x3, np.ones((1, 1, l, l), dtype=bool))
    if drop_structured:
        return nk.reshape(h, x.shape)
    weights = mask.weights[None, None] if mode == "multiplicative" else None
    h2 = si_layer(h, mask.allowed[None, None], weights)
    return nk.reshape(nk.add(h, h2), x.shape)


# -- model -----------------------------------------------------------------

@dataclass
class Hypothesis:
    token_ids: list[int]
    log_prob: float
    finished: bool = False

    def score(self, alpha: float) -> float:
        length = max(len(self.token_ids), 1)
        return self.log_prob / (length ** alpha) if alpha else self.log_prob


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.float64) - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Encoder(Module):
    def __init__(self, cfg: SitConfig, rng):
        if cfg.share_encoder_params:
            layer = EncoderLayer(cfg, rng)
            self.layers = [layer] * cfg.encoder_layers
        else:
            self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.encoder_layers)]
        self.kinds = cfg.layers
        self.module_sum = cfg.module_sum
        self.multiplicative = cfg.attention_mode == "multiplicative"
        self.drop_structured = False  # debug: module output = SAN output only

    def __call__(self, x: Tensor, key_valid: np.ndarray, allowed: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
        l = x.shape[1]
        base = key_valid[:, None, None, :] | np.eye(l, dtype=bool)[None, None]
        struct = base & allowed[:, None]
        w = weights[:, None] if (self.multiplicative and weights is not None) else None

        def run(k: int, h: Tensor) -> Tensor:
            if self.kinds[k] == "S":
                return self.layers[k](h, struct, w)
            return self.layers[k](h, base)

        if not self.module_sum:
            for k in range(len(self.layers)):
                x = run(k, x)
            return x
        for k in range(0, len(self.layers), 2):
            h = run(k, x)
            x = h if self.drop_structured else nk.add(h, run(k + 1, h))
        return x


class Decoder(Module):
    def __init__(self, cfg: SitConfig, rng):
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.decoder_layers)]

    def __call__(self, y: Tensor, memory: Tensor, src_valid: np.ndarray) -> Tensor:
        b, t = y.shape[:2]
        causal = np.tril(np.ones((t, t), dtype=bool))[None, None]
        cross = np.broadcast_to(src_valid[:, None, None, :], (b, 1, t, src_valid.shape[1]))
        for layer in self.layers:
            y = layer(y, memory, causal, cross)
        return y


class SitModel(Module):
    def __init__(self, cfg: SitConfig, src_vocab: int, tgt_vocab: int, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        dt = cfg.np_dtype
        self.src_embed = nk.Embedding(src_vocab, cfg.d_model, rng, dt)
        self.encoder = Encoder(cfg, rng)
        self.tgt_embed = nk.Embedding(tgt_vocab, cfg.d_model, rng, dt)
        self.decoder = Decoder(cfg, rng)
        self.generator = nk.Linear(cfg.d_model, tgt_vocab, rng, dt)
        self.dropout_rng = np.random.default_rng([seed, 1])
        for m in self.modules():
            if hasattr(m, "rng"):
                m.rng = self.dropout_rng
        self.embed_scale = math.sqrt(cfg.d_model)

    @property
    def src_vocab_size(self) -> int:
        return self.src_embed.weight.shape[0]

    @property
    def tgt_vocab_size(self) -> int:
        return self.tgt_embed.weight.shape[0]

    def encoder_parameter_count(self) -> int:
        return sum(t.data.size for name, t in self.named_parameters() if name.startswith("encoder."))

    def _embed(self, table: nk.Embedding, ids: np.ndarray) -> Tensor:
        x = nk.scale(table(ids), self.embed_scale)
        return nk.dropout(x, self.cfg.dropout, self.dropout_rng, self.training)

    def encode_batch(self, src: np.ndarray, src_valid: np.ndarray, allowed: np.ndarray,
                     weights: np.ndarray | None = None) -> Tensor:
        b, l = src.shape
        if allowed.shape != (b, l, l):
            raise GraphSizeMismatch(f"mask shape {allowed.shape} for source batch {src.shape}")
        return self.encoder(self._embed(self.src_embed, src), src_valid, allowed, weights)

    def encode(self, tokens: Sequence[int], graph: MultiViewGraph | None) -> Tensor:
        """Encode one source sequence (root at index 0) to an ``(l, d)`` tensor."""
        l = len(tokens)
        if graph is not None and graph.n != l:
            raise GraphSizeMismatch(f"graph has {graph.n} positions, sequence has {l}")
        mask = attention_mask_for(graph, self.cfg, l)
        src = np.asarray(tokens, dtype=np.intp)[None]
        out = self.encode_batch(src, np.ones((1, l), dtype=bool), mask.allowed[None], mask.weights[None])
        return nk.reshape(out, (l, self.cfg.d_model))

    def decode_batch(self, memory: Tensor, src_valid: np.ndarray, tgt_in: np.ndarray) -> Tensor:
        y = self.decoder(self._embed(self.tgt_embed, tgt_in), memory, src_valid)
        return self.generator(y)

    def loss(self, batch) -> tuple[Tensor, int, int]:
        """Token-level cross entropy with padding excluded; also returns (tokens, correct)."""
        memory = self.encode_batch(batch.src, batch.src_valid, batch.allowed, batch.weights)
        logits = self.decode_batch(memory, batch.src_valid, batch.tgt_in)
        v = logits.shape[-1]
        flat = nk.reshape(logits, (-1, v))
        valid = batch.tgt_valid.reshape(-1)
        targets = batch.tgt_out.reshape(-1)
        loss = nk.cross_entropy(flat, targets, valid.astype(np.float64))
        pred = flat.data.argmax(axis=1)
        return loss, int(valid.sum()), int(((pred == targets) & valid).sum())

    # -- decoding --------------------------------------------------------

    def decode_step(self, memory: Tensor, src_valid: np.ndarray, prefixes) -> np.ndarray:
        """Next-token logits for each prefix (all prefixes share one length)."""
        prefixes = np.atleast_2d(np.asarray(prefixes, dtype=np.intp))
        if prefixes.shape[1] > self.cfg.max_tgt_len:
            raise PrefixTooLong(f"prefix length {prefixes.shape[1]} > max_tgt_len {self.cfg.max_tgt_len}")
        with nk.no_grad():
            logits = self.decode_batch(memory, src_valid, prefixes)
        return logits.data[:, -1, :]

    def _memory(self, memory: Tensor, src_valid: np.ndarray, k: int) -> tuple[Tensor, np.ndarray]:
        if memory.shape[0] == k:
            return memory, src_valid
        return Tensor(np.repeat(memory.data[:1], k, axis=0)), np.repeat(src_valid[:1], k, axis=0)

    def greedy_decode(self, memory: Tensor, src_valid: np.ndarray, max_len: int | None = None) -> list[list[int]]:
        """Argmax decoding for a batch of encoded sources; ``<eos>`` is stripped."""
        max_len = min(max_len or self.cfg.max_tgt_len, self.cfg.max_tgt_len)
        b = memory.shape[0]
        seqs = np.full((b, 1), BOS_ID, dtype=np.intp)
        done = np.zeros(b, dtype=bool)
        for _ in range(max_len):
            nxt = _log_softmax(self.decode_step(memory, src_valid, seqs)).argmax(axis=1)
            nxt = np.where(done, EOS_ID, nxt)
            seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
            done |= nxt == EOS_ID
            if done.all():
                break
        out = []
        for row in seqs[:, 1:].tolist():
            out.append(row[: row.index(EOS_ID)] if EOS_ID in row else row)
        return out

    def beam_decode(self, memory: Tensor, src_valid: np.ndarray, beam: int = 4,
                    len_norm: float = 0.6, max_len: int | None = None) -> Hypothesis:
        """Beam search for one encoded source; returns the best hypothesis by
        length-normalized log-probability."""
        if beam < 1:
            raise ValueError("beam must be >= 1")
        max_len = min(max_len or self.cfg.max_tgt_len, self.cfg.max_tgt_len)
        alive = [Hypothesis([], 0.0)]
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            mem, valid = self._memory(memory, src_valid, len(alive))
            prefixes = [[BOS_ID] + h.token_ids for h in alive]
            logp = _log_softmax(self.decode_step(mem, valid, prefixes))
            cands = []
            for hi, h in enumerate(alive):
                top = np.argsort(-logp[hi], kind="stable")[:beam]
                cands.extend((h.log_prob + float(logp[hi, t]), hi, int(t)) for t in top)
            cands.sort(key=lambda c: (-c[0], c[1], c[2]))
            survivors = []
            for lp, hi, t in cands[:beam]:
                hyp = Hypothesis(alive[hi].token_ids + [t], lp, t == EOS_ID)
                (finished if hyp.finished else survivors).append(hyp)
            alive = survivors
            if not alive:
                break
        pool = finished + alive
        best = pool[0]
        for hyp in pool[1:]:
            if hyp.score(len_norm) > best.score(len_norm):
                best = hyp
        return best

    def summarize_ids(self, tokens: Sequence[int], graph: MultiViewGraph | None,
                      beam: int = 1, len_norm: float = 0.6) -> list[int]:
        """Decode one source; ``beam == 1`` is plain greedy search."""
        with nk.no_grad():
            memory = nk.reshape(self.encode(tokens, graph), (1, len(tokens), self.cfg.d_model))
        valid = np.ones((1, len(tokens)), dtype=bool)
        if beam == 1:
            return self.greedy_decode(memory, valid)[0]
        ids = self.beam_decode(memory, valid, beam, len_norm).token_ids
        return ids[:-1] if ids and ids[-1] == EOS_ID else ids
