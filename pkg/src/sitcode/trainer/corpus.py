"""Synthetic MiniLang corpora and JSON Lines corpus files.

``dataflow`` programs return a value produced by a chain of transforms
applied to one parameter, buried among distractor statements that read the
other parameters, redefine names, and shadow earlier definitions.  The
summary names the transforms and the originating parameter, so producing
it requires following def-use chains.  ``rename`` summaries are just the
words of the function name.
"""
from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Iterable

from ..minilang import lex, parse_source

VARIABLES = (
    "alpha", "beta", "gamma", "delta", "item", "value", "data", "count",
    "total", "result", "buffer", "record", "entry", "node", "key", "token",
    "score", "level", "index", "size", "limit", "offset", "rate", "weight",
)
TRANSFORMS = {
    "clean": "cleaned",
    "scale": "scaled",
    "parse": "parsed",
    "sort": "sorted",
    "trim": "trimmed",
    "encode": "encoded",
}
SINKS = ("log", "print", "emit")
VERBS = ("get", "set", "compute", "load", "save", "update", "build", "find", "check", "merge")
NOUNS = ("user", "name", "price", "file", "list", "config", "item", "record", "path", "cache", "state", "report")
TASKS = ("rename", "dataflow", "mixed")


class CorpusError(ValueError):
    pass


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(row, dict) or not isinstance(row.get("code"), str) or not isinstance(row.get("summary"), str):
                raise CorpusError(f"{path}:{lineno}: expected an object with string 'code' and 'summary'")
            rows.append(row)
    return rows


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps({"code": row["code"], "summary": row["summary"]}) + "\n")


# -- label resolution ----------------------------------------------------

def dataflow_summary(source: str) -> str:
    """Resolve the value returned by the first function back to a parameter.

    Definitions are resolved in straight-line source order: a use sees the
    closest preceding definition.  Each ``name = f(arg)`` on the way adds the
    adjective for ``f``; ``name = other`` is a plain copy.
    """
    root = parse_source(source)
    func = next((s for s in root.children if s.kind == "FunctionDef"), None)
    if func is None:
        raise CorpusError("no function definition")
    close = next(k for k, c in enumerate(func.children) if c.kind == "Punct" and c.lexeme == ")")
    params = [c.lexeme for c in func.children[3:close] if c.kind == "Name"]
    body = func.children[close + 2:]
    flat = []

    def walk(stmts):
        for s in stmts:
            flat.append(s)
            walk([c for c in s.children if c.kind in ("Assign", "Return", "Expr", "If", "Elif", "Else", "While", "For")])

    walk(body)
    returns = [k for k, s in enumerate(flat) if s.kind == "Return" and s in body]
    if not returns:
        raise CorpusError("function has no top-level return")
    at = returns[-1]
    ret = flat[at]
    if len(ret.children) != 2 or ret.children[1].kind != "Name":
        raise CorpusError("return value is not a variable")
    name = ret.children[1].lexeme
    adjectives = []
    for _ in range(len(flat) + 1):
        k = next((j for j in range(at - 1, -1, -1) if flat[j].kind == "Assign" and flat[j].children[0].lexeme == name), None)
        if k is None:
            if name not in params:
                raise CorpusError(f"{name!r} is never defined")
            return " ".join(["returns", *adjectives, name])
        value = flat[k].children[2]
        if value.kind == "Name":
            name = value.lexeme
        elif value.kind == "Call" and len(value.children) == 4 and value.children[2].kind == "Name":
            fn = value.children[0].lexeme
            if fn not in TRANSFORMS:
                raise CorpusError(f"unknown transform {fn!r}")
            adjectives.append(TRANSFORMS[fn])
            name = value.children[2].lexeme
        else:
            raise CorpusError("chain passes through an unsupported expression")
        at = k
    raise CorpusError("definition chain does not terminate")


def rename_summary(source: str) -> str:
    root = parse_source(source)
    func = next((s for s in root.children if s.kind == "FunctionDef"), None)
    if func is None:
        raise CorpusError("no function definition")
    return " ".join(func.children[1].lexeme.split("_"))


# -- generation ----------------------------------------------------------

def _fname(rng: random.Random) -> str:
    parts = [rng.choice(VERBS), rng.choice(NOUNS)]
    if rng.random() < 0.5:
        parts.append(rng.choice(NOUNS))
    return "_".join(parts)


def _program(rng: random.Random) -> tuple[str, str]:
    """Return (source, function name) of one dataflow program."""
    names = rng.sample(VARIABLES, 10)
    n_params = rng.choice((2, 3))
    params, pool = names[:n_params], names[n_params:]
    origin = rng.choice(params)
    # chain of 1-3 steps from origin to the returned name
    chain = []
    cur = origin
    for step in range(rng.choice((1, 2, 2, 3))):
        fn = rng.choice(list(TRANSFORMS))
        if step > 0 and rng.random() < 0.25:
            target = cur if cur not in params else pool.pop()
        else:
            target = pool.pop()
        chain.append(f"{target} = {fn}({cur})")
        cur = target
        if rng.random() < 0.2:
            copy = pool.pop()
            chain.append(f"{copy} = {cur}")
            cur = copy
    ret = cur
    chain_targets = [line.split(" = ")[0] for line in chain]

    lines = list(chain)
    for _ in range(rng.randint(2, 4)):
        src = rng.choice(params)
        fn = rng.choice(list(TRANSFORMS))
        kind = rng.random()
        if kind < 0.35 and chain_targets:
            # shadowed definition: placed before the real definition of the same name
            target = rng.choice(chain_targets)
            first = next(k for k, line in enumerate(lines) if line.startswith(target + " ="))
            lines.insert(rng.randint(0, first), f"{target} = {fn}({src})")
        elif kind < 0.7 and pool:
            target = pool.pop()
            lines.insert(rng.randint(0, len(lines)), f"{target} = {fn}({src})")
        elif kind < 0.85:
            lines.insert(rng.randint(0, len(lines)), f"{rng.choice(SINKS)}({src})")
        else:
            lines.insert(rng.randint(0, len(lines)), f"if {src} > {rng.randint(0, 9)}:\n        {rng.choice(SINKS)}({src})")
    fname = _fname(rng)
    body = "\n".join("    " + line for line in lines)
    source = f"def {fname}({', '.join(params)}):\n{body}\n    return {ret}\n"
    return source, fname


def gen_corpus(n: int, seed: int = 0, task: str = "dataflow") -> list[dict]:
    """Deterministic synthetic corpus of ``{"code", "summary"}`` rows."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    rng = random.Random(seed)
    rows = []
    for k in range(n):
        source, fname = _program(rng)
        kind = task if task != "mixed" else ("dataflow" if k % 2 == 0 else "rename")
        summary = dataflow_summary(source) if kind == "dataflow" else " ".join(fname.split("_"))
        rows.append({"code": source, "summary": summary})
    return rows


def rename_identifiers(source: str, mapping: dict[str, str]) -> str:
    """Apply an identifier renaming token by token, preserving layout."""
    out, pos = [], 0
    lines = source.split("\n")
    offsets = [0]
    for line in lines[:-1]:
        offsets.append(offsets[-1] + len(line) + 1)
    for tok in lex(source):
        start = offsets[tok.line - 1] + tok.col - 1
        out.append(source[pos:start])
        out.append(mapping.get(tok.lexeme, tok.lexeme) if tok.kind == "identifier" else tok.lexeme)
        pos = start + len(tok.lexeme)
    out.append(source[pos:])
    return "".join(out)
