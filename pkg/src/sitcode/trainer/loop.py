"""Training, evaluation and on-disk model bundles."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import numkit as nk
from ..codegraph import Vocab
from ..numkit import checkpoint
from ..sitmodel import ConfigError, SitConfig, SitModel
from . import data as D
from .metrics import bleu, rouge_l
from .optim import AdamW, lr_at, warmup_steps


class DivergedError(RuntimeError):
    pass


class VocabMismatch(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-3
    warmup_frac: float = 0.06
    weight_decay: float = 0.01
    max_epochs: int = 10
    seed: int = 0
    eval_beam: int = 4
    max_steps: int | None = None
    clip_norm: float | None = 1.0

    def problems(self) -> list[str]:
        out = []
        for name, lo in (("batch_size", 1), ("max_epochs", 0), ("eval_beam", 1), ("seed", 0)):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < lo:
                out.append(f"{name} must be an integer >= {lo}, got {value!r}")
        if not isinstance(self.lr, (int, float)) or self.lr <= 0:
            out.append(f"lr must be positive, got {self.lr!r}")
        if not isinstance(self.warmup_frac, (int, float)) or not 0.0 <= self.warmup_frac <= 1.0:
            out.append(f"warmup_frac must be in [0, 1], got {self.warmup_frac!r}")
        if not isinstance(self.weight_decay, (int, float)) or self.weight_decay < 0:
            out.append(f"weight_decay must be >= 0, got {self.weight_decay!r}")
        if self.max_steps is not None and (not isinstance(self.max_steps, int) or self.max_steps < 0):
            out.append(f"max_steps must be a non-negative integer, got {self.max_steps!r}")
        return out

    def validate(self) -> TrainConfig:
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"unknown TrainConfig key {k!r}" for k in unknown])
        return cls(**d)


@dataclass
class Bundle:
    """A model with everything needed to decode: vocabularies and configs."""

    model: SitModel
    src_vocab: Vocab
    tgt_vocab: Vocab
    sbt: bool = False
    train_config: TrainConfig | None = None

    @property
    def config(self) -> SitConfig:
        return self.model.cfg

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        checkpoint.save(out / "model.ckpt", self.model.state_dict())
        meta = {
            "model": self.config.to_dict(),
            "train": self.train_config.to_dict() if self.train_config else None,
            "sbt": self.sbt,
            "src_vocab": self.src_vocab.to_json(),
            "tgt_vocab": self.tgt_vocab.to_json(),
        }
        (out / "bundle.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Bundle:
        path = Path(path)
        root = path if path.is_dir() else path.parent
        meta = json.loads((root / "bundle.json").read_text())
        cfg = SitConfig.from_dict(meta["model"])
        src, tgt = Vocab.from_json(meta["src_vocab"]), Vocab.from_json(meta["tgt_vocab"])
        model = SitModel(cfg, len(src), len(tgt))
        state = checkpoint.load(root / "model.ckpt" if path.is_dir() else path)
        try:
            model.load_state_dict(state)
        except (KeyError, ValueError) as exc:
            raise VocabMismatch(f"checkpoint does not fit its vocabularies: {exc}") from exc
        train = TrainConfig.from_dict(meta["train"]) if meta.get("train") else None
        return cls(model.eval(), src, tgt, bool(meta.get("sbt")), train)

    def sources(self, rows: Sequence[dict]) -> list[D.Source]:
        return [D.prepare_source(r["code"], self.config.max_src_len, self.sbt) for r in rows]

    def examples(self, rows: Sequence[dict]) -> list[D.Example]:
        return D.make_examples(rows, self.sources(rows), self.src_vocab, self.tgt_vocab, self.config)

    def summarize(self, code: str, beam: int = 1) -> str:
        s = D.prepare_source(code, self.config.max_src_len, self.sbt)
        ids = self.model.summarize_ids(self.src_vocab.encode(s.tokens), s.graph, beam)
        return " ".join(self.tgt_vocab.decode(ids))


@dataclass
class TrainResult:
    bundle: Bundle
    history: list[dict] = field(default_factory=list)
    steps: int = 0

    @property
    def seconds_per_epoch(self) -> float:
        times = [h["seconds"] for h in self.history]
        return float(np.mean(times)) if times else 0.0


LOG_FIELDS = ("epoch", "steps", "loss", "token_acc", "lr", "valid_bleu", "seconds")


def prepare(rows: Sequence[dict], cfg: SitConfig, sbt: bool = False) -> Bundle:
    """Build vocabularies from ``rows`` and a freshly initialized model."""
    if not rows:
        raise ValueError("empty corpus")
    sources = [D.prepare_source(r["code"], cfg.max_src_len, sbt) for r in rows]
    src, tgt = D.build_vocabs(sources, [r["summary"] for r in rows])
    return Bundle(SitModel(cfg, len(src), len(tgt)), src, tgt, sbt)


def train(
    rows: Sequence[dict],
    cfg: SitConfig,
    tcfg: TrainConfig,
    out_dir: str | Path | None = None,
    valid_rows: Sequence[dict] | None = None,
    sbt: bool = False,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train a model on ``rows``; writes ``model.ckpt``, ``bundle.json`` and
    ``train_log.csv`` under ``out_dir`` when given."""
    cfg.validate()
    tcfg.validate()
    if not rows:
        raise ValueError("empty corpus")
    sources = [D.prepare_source(r["code"], cfg.max_src_len, sbt) for r in rows]
    src_vocab, tgt_vocab = D.build_vocabs(sources, [r["summary"] for r in rows])
    model = SitModel(cfg, len(src_vocab), len(tgt_vocab), seed=tcfg.seed)
    bundle = Bundle(model, src_vocab, tgt_vocab, sbt, tcfg)
    examples = D.make_examples(rows, sources, src_vocab, tgt_vocab, cfg)
    valid = bundle.examples(valid_rows) if valid_rows else []

    per_epoch = math.ceil(len(examples) / tcfg.batch_size)
    total = per_epoch * tcfg.max_epochs
    if tcfg.max_steps is not None:
        total = min(total, tcfg.max_steps)
    warm = warmup_steps(total, tcfg.warmup_frac)
    opt = AdamW(model.parameters(), tcfg.lr, weight_decay=tcfg.weight_decay, clip_norm=tcfg.clip_norm)
    rng = np.random.default_rng([tcfg.seed, 2])
    result = TrainResult(bundle)
    step = 0
    epoch = 0
    while step < total:
        epoch += 1
        model.train()
        t0 = time.perf_counter()
        loss_sum = tokens = correct = 0
        lr = 0.0
        for batch in D.batches(examples, tcfg.batch_size, cfg, rng):
            if step >= total:
                break
            model.zero_grad()
            loss, n_tok, n_ok = model.loss(batch)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergedError(f"non-finite loss {value} at step {step}")
            nk.backward(loss)
            lr = lr_at(step, tcfg.lr, total, warm)
            opt.step(lr)
            if on_step is not None:
                on_step(step, value)
            step += 1
            loss_sum += value * n_tok
            tokens += n_tok
            correct += n_ok
        seconds = time.perf_counter() - t0
        model.eval()
        row = {
            "epoch": epoch,
            "steps": step,
            "loss": loss_sum / max(tokens, 1),
            "token_acc": correct / max(tokens, 1),
            "lr": lr,
            "valid_bleu": greedy_bleu(bundle, valid) if valid else "",
            "seconds": seconds,
        }
        result.history.append(row)
    result.steps = step
    model.eval()
    if out_dir is not None:
        bundle.save(out_dir)
        with open(Path(out_dir) / "train_log.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, LOG_FIELDS)
            w.writeheader()
            w.writerows(result.history)
    return result


def token_accuracy(bundle: Bundle, examples: Sequence[D.Example], batch_size: int = 32) -> float:
    """Teacher-forced next-token accuracy over non-padding targets."""
    tokens = correct = 0
    with nk.no_grad():
        for batch in D.batches(examples, batch_size, bundle.config):
            _, n_tok, n_ok = bundle.model.loss(batch)
            tokens += n_tok
            correct += n_ok
    return correct / max(tokens, 1)


def greedy_bleu(bundle: Bundle, examples: Sequence[D.Example], batch_size: int = 32) -> float:
    model = bundle.model
    hyps, refs = [], []
    with nk.no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start:start + batch_size]
            b = D.collate(chunk, bundle.config)
            memory = model.encode_batch(b.src, b.src_valid, b.allowed, b.weights)
            for ex, ids in zip(chunk, model.greedy_decode(memory, b.src_valid)):
                hyps.append(bundle.tgt_vocab.decode(ids))
                refs.append(D.summary_tokens(ex.meta["summary"]))
    return bleu(hyps, refs)


@dataclass
class Report:
    bleu: float
    rouge_l: float
    outputs: list[dict]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bleu", "rouge_l", "examples"])
            w.writerow([f"{self.bleu:.6f}", f"{self.rouge_l:.6f}", len(self.outputs)])
        with open(out / "outputs.jsonl", "w", encoding="utf-8") as fh:
            for row in self.outputs:
                fh.write(json.dumps(row) + "\n")


def evaluate(bundle: Bundle, rows: Sequence[dict], beam: int = 4) -> Report:
    """Decode every example one at a time (``beam == 1`` is greedy)."""
    if bundle.model.src_vocab_size != len(bundle.src_vocab) or bundle.model.tgt_vocab_size != len(bundle.tgt_vocab):
        raise VocabMismatch(
            f"model expects vocabularies of {bundle.model.src_vocab_size}/{bundle.model.tgt_vocab_size}, "
            f"got {len(bundle.src_vocab)}/{len(bundle.tgt_vocab)}"
        )
    bundle.model.eval()
    outputs, hyps, refs = [], [], []
    for k, row in enumerate(rows):
        hyp = bundle.summarize(row["code"], beam)
        outputs.append({"index": k, "reference": row["summary"], "hypothesis": hyp})
        hyps.append(hyp.split())
        refs.append(D.summary_tokens(row["summary"]))
    return Report(bleu(hyps, refs), rouge_l(hyps, refs), outputs)
