"""Multi-view code graphs over terminal tokens.

Three views share one vertex set (the terminals of a MiniLang tree, in
source order):

* ``ast``  -- syntactic siblings, projected onto terminals through the
  leftmost-terminal representative of every child;
* ``flow`` -- a clique over the terminals of each statement;
* ``dep``  -- def-use chains between identifier occurrences.

Views are ``n x n`` 0/1 matrices without a root slot.  :func:`combine`
prepends the global root at index 0 of the weighted ``combined`` matrix.
"""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .minilang import AstNode, StatementSpan, iter_nodes, parse_source, statements, terminals

VIEWS = ("ast", "flow", "dep")

PAD, UNK, ROOT, BOS, EOS = "<pad>", "<unk>", "<root>", "<bos>", "<eos>"
SPECIALS = (PAD, UNK, ROOT, BOS, EOS)


class NegativeWeight(ValueError):
    pass


class FormatError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ViewMatrix:
    view: str
    entries: np.ndarray  # uint8, symmetric, unit diagonal

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        """Undirected non-self edges as ``(i, j)`` with ``i < j``."""
        rows, cols = np.nonzero(np.triu(self.entries, 1))
        return list(zip(rows.tolist(), cols.tolist()))


def _view(name: str, n: int, pairs: Iterable[tuple[int, int]]) -> ViewMatrix:
    m = np.eye(n, dtype=np.uint8)
    for i, j in pairs:
        m[i, j] = m[j, i] = 1
    return ViewMatrix(name, _frozen(m))


def _positions(root: AstNode) -> dict[int, int]:
    return {node.id: k for k, node in enumerate(terminals(root))}


def build_ast_view(root: AstNode) -> ViewMatrix:
    """Connect, for every non-terminal, all pairs of its children's representatives.

    A child's representative is its leftmost terminal descendant.
    """
    pos = _positions(root)
    leftmost: dict[int, int] = {}
    # post-order so children are resolved before parents
    for node in reversed(list(iter_nodes(root))):
        if node.is_terminal:
            leftmost[node.id] = pos[node.id]
        elif node.children:
            leftmost[node.id] = leftmost[node.children[0].id]
    pairs = []
    for node in iter_nodes(root):
        reps = [leftmost[c.id] for c in node.children if c.id in leftmost]
        pairs.extend((a, b) for k, a in enumerate(reps) for b in reps[k + 1:])
    return _view("ast", len(pos), pairs)


def build_flow_view(spans: Sequence[StatementSpan], n: int | None = None) -> ViewMatrix:
    """Clique over each statement span; no edges between statements.

    Terminal ids are mapped to positions by sorting all ids appearing in
    ``spans``; pass ``n`` to size the matrix explicitly.
    """
    ids = sorted(t for span in spans for t in span.terminal_ids)
    pos = {t: k for k, t in enumerate(ids)}
    pairs = []
    for span in spans:
        members = [pos[t] for t in span.terminal_ids]
        pairs.extend((a, b) for k, a in enumerate(members) for b in members[k + 1:])
    return _view("flow", len(ids) if n is None else n, pairs)


def _def_use_events(root: AstNode) -> list[tuple[str, AstNode]]:
    """Identifier occurrences in evaluation order, tagged "def"/"use"/"enter"/"leave"."""
    events: list[tuple[str, AstNode]] = []

    def expr(node: AstNode) -> None:
        for n in iter_nodes(node):
            if n.kind == "Name":
                events.append(("use", n))

    def stmt(node: AstNode) -> None:
        ch = node.children
        if node.kind == "Assign":
            expr(ch[2])
            events.append(("def", ch[0]))
        elif node.kind == "For":
            expr(ch[3])
            events.append(("def", ch[1]))
            for c in ch[5:]:
                stmt(c)
        elif node.kind == "FunctionDef":
            close = next(k for k, c in enumerate(ch) if c.lexeme == ")" and c.kind == "Punct")
            events.append(("enter", node))
            for c in ch[3:close]:
                if c.kind == "Name":
                    events.append(("def", c))
            for c in ch[close + 2:]:
                stmt(c)
            events.append(("leave", node))
        elif node.kind in ("If", "Elif", "Else", "While"):
            for c in ch:
                if c.kind in ("Keyword", "Punct"):
                    continue
                if c.kind in ("Assign", "Return", "Expr", "If", "Elif", "Else", "While", "For", "FunctionDef"):
                    stmt(c)
                else:
                    expr(c)
        else:  # Return, Expr
            for c in ch:
                expr(c)

    for s in root.children:
        stmt(s)
    return events


def build_dep_view(root: AstNode, mode: str = "defuse") -> ViewMatrix:
    """Data-dependency view.

    ``defuse``: every definition site (assignment target, loop variable,
    function parameter) is linked to each later use until the identifier is
    redefined.  Function bodies see the enclosing definitions but their own
    definitions do not leak out.  ``allpairs``: every two occurrences of the
    same identifier are linked.
    """
    pos = _positions(root)
    if mode == "allpairs":
        groups: dict[str, list[int]] = {}
        for node in iter_nodes(root):
            if node.kind == "Name":
                groups.setdefault(node.lexeme, []).append(pos[node.id])
        pairs = [(a, b) for g in groups.values() for k, a in enumerate(g) for b in g[k + 1:]]
        return _view("dep", len(pos), pairs)
    if mode != "defuse":
        raise ValueError(f"unknown dep mode {mode!r}")
    env: dict[str, int] = {}
    saved: list[dict[str, int]] = []
    pairs = []
    for event, node in _def_use_events(root):
        if event == "enter":
            saved.append(dict(env))
        elif event == "leave":
            env = saved.pop()
        elif event == "def":
            env[node.lexeme] = pos[node.id]
        elif node.lexeme in env:
            pairs.append((env[node.lexeme], pos[node.id]))
    return _view("dep", len(pos), pairs)


@dataclass(frozen=True)
class MultiViewGraph:
    """Three views plus the weighted combination with a global root at index 0.

    ``tokens`` and the views cover the ``n - 1`` non-root positions;
    ``combined`` is ``n x n`` where ``n`` counts the root.
    """

    tokens: tuple[str, ...]
    ast: ViewMatrix
    flow: ViewMatrix
    dep: ViewMatrix
    weights: tuple[float, float, float]
    combined: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.combined.shape[0]

    def view(self, name: str) -> ViewMatrix:
        return {"ast": self.ast, "flow": self.flow, "dep": self.dep}[name]


def combine(
    ast: ViewMatrix,
    flow: ViewMatrix,
    dep: ViewMatrix,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float = 1.0,
    tokens: Sequence[str] | None = None,
) -> MultiViewGraph:
    weights = (float(alpha), float(beta), float(gamma))
    if any(w < 0 for w in weights):
        raise NegativeWeight(f"view weights must be non-negative, got {weights}")
    if not ast.n == flow.n == dep.n:
        raise ValueError(f"view sizes differ: {ast.n}, {flow.n}, {dep.n}")
    n = ast.n
    if tokens is None:
        tokens = [""] * n
    if len(tokens) != n:
        raise ValueError(f"{len(tokens)} tokens for {n}-node views")
    combined = np.zeros((n + 1, n + 1))
    combined[1:, 1:] = (
        weights[0] * ast.entries + weights[1] * flow.entries + weights[2] * dep.entries
    )
    # self-loops survive any weighting
    idx = np.arange(1, n + 1)
    combined[idx, idx] = np.maximum(combined[idx, idx], 1.0)
    combined[0, :] = np.maximum(combined[0, :], 1.0)
    combined[:, 0] = np.maximum(combined[:, 0], 1.0)
    return MultiViewGraph(tuple(tokens), ast, flow, dep, weights, _frozen(combined))


def build_graph(
    source: str | AstNode,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float = 1.0,
    dep_mode: str = "defuse",
) -> MultiViewGraph:
    root = parse_source(source) if isinstance(source, str) else source
    toks = [t.lexeme for t in terminals(root)]
    return combine(
        build_ast_view(root),
        build_flow_view(statements(root), len(toks)),
        build_dep_view(root, dep_mode),
        alpha,
        beta,
        gamma,
        tokens=toks,
    )


# -- subtokens ------------------------------------------------------------

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_CAMEL = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")


@dataclass(frozen=True)
class SubtokenMap:
    pieces: tuple[str, ...]
    origin: tuple[int, ...]


def split_identifier(word: str) -> list[str]:
    """``getDisableInteractions`` -> ``[get, disable, interactions]``; snake_case likewise."""
    if not _IDENT.match(word):
        return [word]
    pieces = [p.lower() for part in word.split("_") for p in _CAMEL.findall(part)]
    return pieces or [word]


def subtokenize(terminals: Sequence[str], vocab_mode: str = "split") -> SubtokenMap:
    if vocab_mode not in ("split", "none"):
        raise ValueError(f"unknown vocab mode {vocab_mode!r}")
    pieces, origin = [], []
    for k, word in enumerate(terminals):
        parts = split_identifier(word) if vocab_mode == "split" else [word]
        pieces.extend(parts)
        origin.extend([k] * len(parts))
    return SubtokenMap(tuple(pieces), tuple(origin))


def expand(graph: MultiViewGraph, submap: SubtokenMap) -> MultiViewGraph:
    """Re-index ``graph`` over subtoken pieces.

    Each piece inherits every edge of its origin terminal; pieces of one
    terminal form a clique through the origin's self-loop.
    """
    o = np.asarray(submap.origin, dtype=np.intp)
    views = [
        ViewMatrix(v.view, _frozen(np.ascontiguousarray(v.entries[np.ix_(o, o)])))
        for v in (graph.ast, graph.flow, graph.dep)
    ]
    return combine(*views, *graph.weights, tokens=submap.pieces)


def truncate(graph: MultiViewGraph, max_tokens: int) -> MultiViewGraph:
    """Keep the first ``max_tokens`` non-root positions."""
    if len(graph.tokens) <= max_tokens:
        return graph
    views = [
        ViewMatrix(v.view, _frozen(v.entries[:max_tokens, :max_tokens].copy()))
        for v in (graph.ast, graph.flow, graph.dep)
    ]
    return combine(*views, *graph.weights, tokens=graph.tokens[:max_tokens])


# -- SBT baseline -----------------------------------------------------------

def sbt_flatten(root: AstNode) -> list[str]:
    """Structure-based traversal: ``( label children... ) label`` per node."""
    out: list[str] = []
    stack: list[tuple[AstNode, bool]] = [(root, False)]
    while stack:
        node, closing = stack.pop()
        label = node.lexeme if node.is_terminal else node.kind
        if closing:
            out.extend((")", label))
            continue
        out.extend(("(", label))
        stack.append((node, True))
        stack.extend((c, False) for c in reversed(node.children))
    return out


# -- interchange format ---------------------------------------------------

def serialize_graph(g: MultiViewGraph) -> bytes:
    doc = {
        "n": len(g.tokens),
        "tokens": list(g.tokens),
        "views": {name: [list(e) for e in g.view(name).edges()] for name in VIEWS},
        "weights": list(g.weights),
    }
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def deserialize_graph(data: bytes | str) -> MultiViewGraph:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("graph file must hold a JSON object")
    n, tokens = doc.get("n"), doc.get("tokens")
    if not isinstance(n, int) or isinstance(n, bool) or n < 0:
        raise FormatError(f"'n' must be a non-negative integer, got {n!r}")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise FormatError("'tokens' must be a list of strings")
    if len(tokens) != n:
        raise FormatError(f"header n={n} but {len(tokens)} tokens")
    views = doc.get("views", {})
    if not isinstance(views, dict) or set(views) - set(VIEWS):
        raise FormatError(f"'views' must be an object with keys among {VIEWS}")
    weights = doc.get("weights", [1.0, 1.0, 1.0])
    if (
        not isinstance(weights, list)
        or len(weights) != 3
        or not all(isinstance(w, (int, float)) and not isinstance(w, bool) for w in weights)
    ):
        raise FormatError("'weights' must be three numbers")
    mats = []
    for name in VIEWS:
        pairs = views.get(name, [])
        if not isinstance(pairs, list):
            raise FormatError(f"view {name!r} must be a list of [row, col] pairs")
        for p in pairs:
            if (
                not isinstance(p, list)
                or len(p) != 2
                or not all(isinstance(i, int) and not isinstance(i, bool) for i in p)
                or not all(0 <= i < n for i in p)
            ):
                raise FormatError(f"bad coordinate {p!r} in view {name!r} (n={n})")
        mats.append(_view(name, n, [tuple(p) for p in pairs]))
    try:
        return combine(*mats, *weights, tokens=tokens)
    except NegativeWeight as exc:
        raise FormatError(str(exc)) from exc


# -- vocabulary -----------------------------------------------------------

class Vocab:
    """Token <-> id table with the five special symbols first."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], min_freq: int = 1) -> Vocab:
        counts = Counter(t for seq in sequences for t in seq)
        keep = sorted((t for t, c in counts.items() if c >= min_freq and t not in SPECIALS))
        return cls(keep)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Sequence[str]) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_json(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_json(cls, itos: list[str]) -> Vocab:
        if tuple(itos[: len(SPECIALS)]) != SPECIALS:
            raise FormatError("vocabulary must start with the special tokens")
        return cls(itos[len(SPECIALS):])
