"""``sitcode`` command-line entry point.

Configuration precedence, lowest first: built-in defaults, the ``--config``
JSON file (one flat object whose keys are model and training fields), then
individual flags such as ``--d-model`` or ``--lr``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import subprocess
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .codegraph import build_graph, serialize_graph
from .minilang import LexError, ParseError
from .sitmodel import ConfigError, SitConfig
from .trainer.ablate import SUITES, ablate as run_ablation, write_csv
from .trainer.corpus import TASKS, gen_corpus, read_jsonl, write_jsonl
from .trainer.loop import Bundle, TrainConfig, evaluate, train


class UsageError(Exception):
    pass


class CliError(Exception):
    def __init__(self, message: str, details: Sequence[str] = ()):
        super().__init__(message)
        self.details = list(details)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse calls this for bad flags
        raise UsageError(message)


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def write_manifest(out: Path, command: str, argv: Sequence[str], seed, config_paths=(), resolved=None) -> Path:
    """Record how to reproduce this run; written before any work starts."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_paths": [str(p) for p in config_paths],
        "seed": seed,
        "git_describe": git_describe(),
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "output_directory": str(out),
        "working_directory": os.getcwd(),
        "resolved_config": resolved,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


# -- config handling -----------------------------------------------------

_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(SitConfig)}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _flag_type(default):
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if default is None:
        return lambda s: None if s.lower() == "none" else int(s)
    return str


def _add_config_flags(p: argparse.ArgumentParser, train_fields: bool = True) -> None:
    p.add_argument("--config", help="JSON file of model and training fields")
    groups = [("model", SitConfig())] + ([("train", TrainConfig())] if train_fields else [])
    for title, obj in groups:
        g = p.add_argument_group(f"{title} overrides")
        for f in dataclasses.fields(obj):
            default = getattr(obj, f.name)
            g.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", type=_flag_type(default),
                           default=None, metavar=type(default).__name__.upper() if default is not None else "INT")


def resolve_config(args) -> tuple[SitConfig, TrainConfig, dict]:
    """Merge defaults, the config file and flags; report every violation at once."""
    values: dict = {}
    problems: list[str] = []
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise CliError(f"config {args.config} must hold a JSON object")
        values.update(loaded)
    for key, value in vars(args).items():
        if key.startswith("cfg_") and value is not None:
            values[key[4:]] = value
    for key in sorted(values):
        if key not in _MODEL_FIELDS and key not in _TRAIN_FIELDS:
            problems.append(f"unknown config key {key!r}")
    sit = SitConfig(**{k: v for k, v in values.items() if k in _MODEL_FIELDS})
    tr = TrainConfig(**{k: v for k, v in values.items() if k in _TRAIN_FIELDS})
    problems += sit.problems() + tr.problems()
    if problems:
        raise ConfigError(problems)
    return sit, tr, {"model": sit.to_dict(), "train": tr.to_dict()}


def _rows(path: str) -> list[dict]:
    try:
        return read_jsonl(path)
    except FileNotFoundError as exc:
        raise CliError(f"{path}: no such file") from exc
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror}") from exc


# -- commands --------------------------------------------------------------

def cmd_gen_corpus(args, argv) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    out = Path(args.out)
    write_manifest(out, "gen-corpus", argv, args.seed)
    try:
        write_jsonl(out / "corpus.jsonl", gen_corpus(args.n, args.seed, args.task))
    except OSError as exc:
        raise CliError(f"{out / 'corpus.jsonl'}: {exc.strerror}") from exc
    return 0


def cmd_build_graphs(args, argv) -> int:
    out = Path(args.out)
    write_manifest(out, "build-graphs", argv, None, [args.corpus])
    rows = _rows(args.corpus)
    # read_jsonl skips blank lines; keep the file line of each row for the report
    with open(args.corpus, encoding="utf-8") as fh:
        line_of = [k for k, line in enumerate(fh, 1) if line.strip()]
    gdir = out / "graphs"
    gdir.mkdir(parents=True, exist_ok=True)
    errors = []
    for k, row in enumerate(rows):
        try:
            g = build_graph(row["code"], args.alpha, args.beta, args.gamma, args.dep_mode)
        except (LexError, ParseError) as exc:
            errors.append({"index": k, "line": line_of[k], "error": type(exc).__name__, "message": str(exc)})
            continue
        (gdir / f"{k:06d}.json").write_bytes(serialize_graph(g))
    with open(out / "errors.jsonl", "w") as fh:
        for e in errors:
            fh.write(json.dumps(e) + "\n")
    if errors and args.strict:
        raise CliError(f"{len(errors)} of {len(rows)} examples failed to parse", [e["message"] for e in errors])
    return 0


def cmd_train(args, argv) -> int:
    sit, tr, resolved = resolve_config(args)
    out = Path(args.out)
    write_manifest(out, "train", argv, tr.seed, [p for p in (args.config, args.corpus, args.valid) if p], resolved)
    rows = _rows(args.corpus)
    if not rows:
        raise CliError(f"{args.corpus}: corpus is empty")
    valid = _rows(args.valid) if args.valid else None
    result = train(rows, sit, tr, out, valid, sbt=args.sbt)
    last = result.history[-1] if result.history else {}
    print(json.dumps({"steps": result.steps, "epochs": len(result.history), "token_acc": last.get("token_acc")}))
    return 0


def _load_bundle(path: str) -> Bundle:
    try:
        return Bundle.load(path)
    except FileNotFoundError as exc:
        raise CliError(f"{path}: no model bundle found ({exc.filename})") from exc


def cmd_evaluate(args, argv) -> int:
    out = Path(args.out)
    write_manifest(out, "evaluate", argv, None, [args.checkpoint, args.corpus])
    bundle = _load_bundle(args.checkpoint)
    beam = args.beam if args.beam is not None else (bundle.train_config.eval_beam if bundle.train_config else 4)
    report = evaluate(bundle, _rows(args.corpus), beam)
    report.write(out)
    print(json.dumps({"bleu": report.bleu, "rouge_l": report.rouge_l, "beam": beam}))
    return 0


def cmd_summarize(args, argv) -> int:
    bundle = _load_bundle(args.checkpoint)
    if args.source in (None, "-"):
        code = sys.stdin.read()
    else:
        try:
            code = Path(args.source).read_text()
        except OSError as exc:
            raise CliError(f"{args.source}: {exc.strerror}") from exc
    print(bundle.summarize(code, args.beam))
    return 0


def cmd_ablate(args, argv) -> int:
    sit, tr, resolved = resolve_config(args)
    out = Path(args.out)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from exc
    write_manifest(out, "ablate", argv, seeds, [p for p in (args.config, args.corpus, args.test) if p], resolved)
    t0 = time.perf_counter()
    rows = run_ablation(args.suite, sit, tr, _rows(args.corpus), _rows(args.test), seeds,
                             window=args.window, random_degree=args.random_degree)
    write_csv(rows, out / "ablation.csv")
    print(json.dumps({"rows": len(rows), "seconds": round(time.perf_counter() - t0, 2)}))
    return 0


def cmd_replay(args, argv) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read manifest {args.manifest}: {exc}") from exc
    # relative paths in argv refer to the directory the run started from
    here = os.getcwd()
    os.chdir(manifest.get("working_directory", here))
    try:
        return main(manifest["argv"])
    finally:
        os.chdir(here)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sitcode", description="Graph-restricted transformer that summarizes MiniLang programs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-corpus", help="write a synthetic JSONL corpus")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--task", choices=TASKS, default="dataflow")
    s.add_argument("--out", required=True, help="output directory (corpus.jsonl + manifest.json)")
    s.set_defaults(fn=cmd_gen_corpus)

    s = sub.add_parser("build-graphs", help="one multi-view graph JSON per corpus example")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--dep-mode", choices=("defuse", "allpairs"), default="defuse")
    s.add_argument("--strict", action="store_true", help="fail if any example does not parse")
    s.set_defaults(fn=cmd_build_graphs)

    s = sub.add_parser("train", help="train a model and write a bundle + train_log.csv")
    s.add_argument("--corpus", required=True)
    s.add_argument("--valid", help="corpus for per-epoch greedy BLEU")
    s.add_argument("--out", required=True)
    s.add_argument("--sbt", action="store_true", help="feed the SBT linearization instead of tokens + graph")
    _add_config_flags(s)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("evaluate", help="beam-decode a corpus and write metrics.csv + outputs.jsonl")
    s.add_argument("--checkpoint", required=True, help="bundle directory written by train")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--beam", type=int)
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("summarize", help="print the summary of one source file (or stdin)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("source", nargs="?")
    s.add_argument("--beam", type=int, default=1)
    s.set_defaults(fn=cmd_summarize)

    s = sub.add_parser("ablate", help="train/evaluate a suite of variants and write ablation.csv")
    s.add_argument("--suite", choices=SUITES, required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seeds", default="0")
    s.add_argument("--window", type=int, default=8)
    s.add_argument("--random-degree", type=int, default=8)
    _add_config_flags(s)
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("replay", help="re-run the command recorded in a manifest.json")
    s.add_argument("manifest")
    s.set_defaults(fn=cmd_replay)
    return p


def _fail(kind: str, message: str, details: Sequence[str] = (), code: int = 1) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "details": list(details)}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args, argv)
    except UsageError as exc:
        return _fail("UsageError", str(exc), code=2)
    except ConfigError as exc:
        return _fail("ConfigError", "invalid configuration", exc.problems)
    except CliError as exc:
        return _fail("CliError", str(exc), exc.details)
    except (LexError, ParseError) as exc:
        return _fail(type(exc).__name__, str(exc))
    except (ValueError, OSError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
