"""Ablation suites: each variant is trained with matched seeds and budgets."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from ..sitmodel import SitConfig
from .loop import TrainConfig, evaluate, train

SUITES = ("patterns", "proportion", "sharing", "sbt")
CSV_HEADER = ("variant", "seed", "bleu", "rouge_l", "epochs", "seconds_per_epoch")


@dataclass(frozen=True)
class Variant:
    name: str
    cfg: SitConfig
    sbt: bool = False


def variants(suite: str, base: SitConfig, window: int = 8, random_degree: int = 8) -> list[Variant]:
    if suite == "patterns":
        return [
            Variant("full", replace(base, pattern="full")),
            Variant("window", replace(base, pattern=f"window({window})")),
            Variant("random", replace(base, pattern=f"random({random_degree})")),
            Variant("structured", replace(base, pattern="structured")),
        ]
    if suite == "proportion":
        n = base.encoder_layers
        half = "GS" * (n // 2) + "G" * (n % 2)
        return [
            Variant("0%", replace(base, pattern="structured", layer_pattern="G" * n)),
            Variant("50%", replace(base, pattern="structured", layer_pattern=half)),
            Variant("100%", replace(base, pattern="structured", layer_pattern="S" * n)),
        ]
    if suite == "sharing":
        return [
            Variant("unshared", replace(base, share_encoder_params=False)),
            Variant("shared", replace(base, share_encoder_params=True)),
        ]
    if suite == "sbt":
        return [
            Variant("sit", replace(base, pattern="structured")),
            Variant("sbt", replace(base, pattern="full"), sbt=True),
        ]
    raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")


def worker_threads(default: int = 1) -> int:
    raw = os.environ.get("SIT_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"SIT_THREADS must be an integer, got {raw!r}") from None


def run_variant(v: Variant, tcfg: TrainConfig, seed: int, train_rows: Sequence[dict], test_rows: Sequence[dict]) -> dict:
    tc = replace(tcfg, seed=seed)
    result = train(train_rows, v.cfg, tc, sbt=v.sbt)
    report = evaluate(result.bundle, test_rows, tc.eval_beam)
    return {
        "variant": v.name,
        "seed": seed,
        "bleu": report.bleu,
        "rouge_l": report.rouge_l,
        "epochs": len(result.history),
        "seconds_per_epoch": result.seconds_per_epoch,
    }


def ablate(
    suite: str,
    base: SitConfig,
    tcfg: TrainConfig,
    train_rows: Sequence[dict],
    test_rows: Sequence[dict],
    seeds: Sequence[int] = (0,),
    threads: int | None = None,
    **variant_kw,
) -> list[dict]:
    """Train and evaluate every (variant, seed); rows come back in variant-major order."""
    jobs = [(v, s) for v in variants(suite, base, **variant_kw) for s in seeds]
    threads = worker_threads() if threads is None else threads
    if threads <= 1:
        return [run_variant(v, tcfg, s, train_rows, test_rows) for v, s in jobs]
    with ThreadPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        futures = [pool.submit(run_variant, v, tcfg, s, train_rows, test_rows) for v, s in jobs]
        return [f.result() for f in futures]


def write_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, CSV_HEADER)
        w.writeheader()
        for r in rows:
            w.writerow({**r, "bleu": f"{r['bleu']:.6f}", "rouge_l": f"{r['rouge_l']:.6f}",
                        "seconds_per_epoch": f"{r['seconds_per_epoch']:.4f}"})


def mean_by_variant(rows: Sequence[dict], key: str = "bleu") -> dict[str, float]:
    sums: dict[str, list[float]] = {}
    for r in rows:
        sums.setdefault(r["variant"], []).append(float(r[key]))
    return {k: sum(v) / len(v) for k, v in sums.items()}
