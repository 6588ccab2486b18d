import json
import random
from pathlib import Path

import numpy as np
import pytest

from sitcode.codegraph import ViewMatrix, combine
from sitcode.sitmodel import SitConfig

FIXTURES = Path(__file__).parent / "fixtures"

NAMES = ["a", "b", "x", "y", "total", "getValue", "item_count", "n"]


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text())


def _expr(rng, depth=0):
    r = rng.random()
    if depth > 2 or r < 0.35:
        return rng.choice(NAMES + ["1", "42", '"s"'])
    if r < 0.6:
        return f"{_expr(rng, depth + 1)} {rng.choice('+-*/')} {_expr(rng, depth + 1)}"
    if r < 0.7:
        if depth:
            return rng.choice(NAMES)
        # comparisons do not chain, so only the outermost level gets one
        return f"{_expr(rng, depth + 1)} {rng.choice(['==', '>', '<'])} {_expr(rng, depth + 1)}"
    if r < 0.8:
        return f"-{_expr(rng, depth + 1)}"
    if r < 0.9:
        return f"({_expr(rng, depth + 1)})"
    args = ", ".join(_expr(rng, depth + 1) for _ in range(rng.randint(0, 2)))
    return f"{rng.choice(['f', 'print', 'clean'])}({args})"


def _block(rng, indent, depth):
    pad = "    " * indent
    lines = []
    for _ in range(rng.randint(1, 3)):
        r = rng.random()
        if depth < 2 and r < 0.12:
            lines.append(f"{pad}if {_expr(rng)}:")
            lines += _block(rng, indent + 1, depth + 1)
            if rng.random() < 0.4:
                lines.append(f"{pad}elif {_expr(rng)}:")
                lines += _block(rng, indent + 1, depth + 1)
            if rng.random() < 0.4:
                lines.append(f"{pad}else:")
                lines += _block(rng, indent + 1, depth + 1)
        elif depth < 2 and r < 0.2:
            lines.append(f"{pad}while {_expr(rng)}:")
            lines += _block(rng, indent + 1, depth + 1)
        elif depth < 2 and r < 0.28:
            lines.append(f"{pad}for {rng.choice(NAMES)} in {_expr(rng)}:")
            lines += _block(rng, indent + 1, depth + 1)
        elif depth < 1 and r < 0.34:
            params = ", ".join(rng.sample(NAMES, rng.randint(0, 3)))
            lines.append(f"{pad}def {rng.choice(['f', 'g', 'run_it'])}({params}):")
            lines += _block(rng, indent + 1, depth + 1)
        elif r < 0.45:
            lines.append(f"{pad}return {_expr(rng)}")
        elif r < 0.6:
            lines.append(f"{pad}{_expr(rng)}")
        else:
            lines.append(f"{pad}{rng.choice(NAMES)} = {_expr(rng)}")
    return lines


def random_program(seed: int) -> str:
    """A random syntactically valid MiniLang program."""
    rng = random.Random(seed)
    return "\n".join(_block(rng, 0, 0)) + "\n"


def random_view(rng, n, name, p=0.3):
    upper = np.triu(rng.random((n, n)) < p, 1)
    m = (upper | upper.T | np.eye(n, dtype=bool)).astype(np.uint8)
    return ViewMatrix(name, m)


def random_graph(rng, n_tokens, weights=(1.0, 1.0, 1.0)):
    views = [random_view(rng, n_tokens, v, p) for v, p in (("ast", 0.2), ("flow", 0.3), ("dep", 0.1))]
    return combine(*views, *weights, tokens=[f"t{i}" for i in range(n_tokens)])


def tiny_config(**kw) -> SitConfig:
    base = dict(d_model=8, heads=2, d_ff=12, encoder_layers=2, decoder_layers=1, max_src_len=32,
                max_tgt_len=8, dropout=0.0, rpe_clip=3, dtype="float64")
    base.update(kw)
    return SitConfig(**base)


@pytest.fixture
def graph_oracles():
    return load_fixture("graph_oracles.json")["fixtures"]


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
