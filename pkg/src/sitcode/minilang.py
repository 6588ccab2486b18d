"""Lexer and recursive-descent parser for MiniLang.

MiniLang is a tiny indentation-structured imperative language (grammar in
``docs/GRAMMAR.md``).  Blocks are delimited by token columns rather than by
synthetic INDENT/DEDENT tokens, so every token the lexer emits ends up as
exactly one terminal node of the tree.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

KEYWORDS = frozenset({"def", "if", "elif", "else", "while", "for", "in", "return"})
OPERATORS = ("==", "=", "+", "-", "*", "/", ">", "<")
PUNCTUATION = frozenset("(),:")
WHITESPACE = frozenset(" \t\r\n")

SIMPLE_STATEMENTS = frozenset({"Assign", "Return", "Expr"})
COMPOUND_STATEMENTS = frozenset({"FunctionDef", "If", "While", "For"})
CLAUSES = frozenset({"Elif", "Else"})

MAX_NESTING = 100


class LexError(ValueError):
    def __init__(self, line: int, col: int, char: str):
        super().__init__(f"unexpected character {char!r} at {line}:{col}")
        self.line = line
        self.col = col
        self.char = char


class ParseError(ValueError):
    def __init__(self, expected: str, found: str, position: tuple[int, int] | None):
        where = f"{position[0]}:{position[1]}" if position else "end of input"
        super().__init__(f"expected {expected}, found {found} at {where}")
        self.expected = expected
        self.found = found
        self.position = position


@dataclass(frozen=True)
class Token:
    kind: str  # identifier | integer | string | keyword | operator | punctuation
    lexeme: str
    line: int
    col: int


@dataclass(eq=False)
class AstNode:
    kind: str
    lexeme: str = ""
    children: list[AstNode] = field(default_factory=list)
    token: Token | None = None
    id: int = -1

    @property
    def is_terminal(self) -> bool:
        return self.token is not None

    def __repr__(self) -> str:
        if self.is_terminal:
            return f"{self.kind}({self.lexeme!r})"
        return f"{self.kind}({', '.join(map(repr, self.children))})"


@dataclass(frozen=True)
class StatementSpan:
    stmt_id: int
    terminal_ids: tuple[int, ...]


def lex(source: str) -> list[Token]:
    tokens = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        ch = source[i]
        if ch in WHITESPACE:
            if ch == "\n":
                line, col = line + 1, 1
            else:
                col += 1
            i += 1
            continue
        start = i
        if ch.isascii() and (ch.isalpha() or ch == "_"):
            while i < n and source[i].isascii() and (source[i].isalnum() or source[i] == "_"):
                i += 1
            word = source[start:i]
            kind = "keyword" if word in KEYWORDS else "identifier"
        elif ch.isascii() and ch.isdigit():
            while i < n and source[i].isascii() and source[i].isdigit():
                i += 1
            kind = "integer"
        elif ch == '"':
            i += 1
            while i < n and source[i] not in '"\n':
                i += 1
            if i >= n or source[i] != '"':
                raise LexError(line, col, ch)
            i += 1
            kind = "string"
        elif ch in PUNCTUATION:
            i += 1
            kind = "punctuation"
        else:
            op = next((o for o in OPERATORS if source.startswith(o, i)), None)
            if op is None:
                raise LexError(line, col, ch)
            i += len(op)
            kind = "operator"
        tokens.append(Token(kind, source[start:i], line, col))
        col += i - start
    return tokens


def _terminal(tok: Token) -> AstNode:
    kind = {
        "identifier": "Name",
        "integer": "Constant",
        "string": "Constant",
        "keyword": "Keyword",
        "operator": "Op",
        "punctuation": "Punct",
    }[tok.kind]
    return AstNode(kind, tok.lexeme, token=tok)


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.depth = 0

    # -- token helpers -----------------------------------------------------

    def peek(self, offset: int = 0) -> Token | None:
        i = self.pos + offset
        return self.tokens[i] if i < len(self.tokens) else None

    def error(self, expected: str) -> ParseError:
        tok = self.peek()
        if tok is None:
            return ParseError(expected, "end of input", None)
        return ParseError(expected, repr(tok.lexeme), (tok.line, tok.col))

    def check(self, lexeme: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.lexeme == lexeme and tok.kind != "string"

    def expect(self, lexeme: str) -> AstNode:
        if not self.check(lexeme):
            raise self.error(repr(lexeme))
        return self.advance()

    def expect_name(self) -> AstNode:
        tok = self.peek()
        if tok is None or tok.kind != "identifier":
            raise self.error("identifier")
        return self.advance()

    def advance(self) -> AstNode:
        tok = self.tokens[self.pos]
        self.pos += 1
        return _terminal(tok)

    def enter(self) -> None:
        self.depth += 1
        if self.depth > MAX_NESTING:
            raise self.error(f"nesting depth <= {MAX_NESTING}")

    # -- statements --------------------------------------------------------

    def program(self) -> AstNode:
        root = AstNode("Module")
        if self.tokens:
            root.children = self.block(self.tokens[0].col)
        if self.peek() is not None:
            raise self.error("statement at column %d" % self.tokens[0].col)
        return root

    def block(self, indent: int) -> list[AstNode]:
        stmts = []
        prev_line = 0
        while (tok := self.peek()) is not None and tok.col >= indent:
            if tok.col > indent:
                raise self.error("statement at column %d (unexpected indent)" % indent)
            if tok.line == prev_line:
                raise self.error("end of line")
            if tok.lexeme in ("elif", "else") and tok.kind == "keyword":
                break
            stmts.append(self.statement())
            prev_line = self.tokens[self.pos - 1].line
        return stmts

    def statement(self) -> AstNode:
        tok = self.peek()
        if tok.kind == "keyword":
            handler = {
                "def": self.funcdef,
                "if": self.if_stmt,
                "while": self.while_stmt,
                "for": self.for_stmt,
            }.get(tok.lexeme)
            if handler is not None:
                self.enter()
                node = handler()
                self.depth -= 1
                return node
        node = self.simple_statement()
        self.end_of_line()
        return node

    def same_line(self, tok: Token | None) -> bool:
        return tok is not None and tok.line == self.tokens[self.pos - 1].line

    def end_of_line(self) -> None:
        nxt = self.peek()
        if nxt is not None and nxt.line == self.tokens[self.pos - 1].line:
            raise self.error("end of line")

    def simple_statement(self) -> AstNode:
        if self.check("return") and self.peek().kind == "keyword":
            children = [self.advance()]
            nxt = self.peek()
            if nxt is not None and nxt.line == self.tokens[self.pos - 1].line:
                children.append(self.expression())
            return AstNode("Return", children=children)
        nxt = self.peek(1)
        if (
            self.peek().kind == "identifier"
            and nxt is not None
            and nxt.kind == "operator"
            and nxt.lexeme == "="
        ):
            target = self.advance()
            eq = self.advance()
            return AstNode("Assign", children=[target, eq, self.expression()])
        return AstNode("Expr", children=[self.expression()])

    def suite(self, header_col: int) -> list[AstNode]:
        colon_line = self.tokens[self.pos - 1].line
        tok = self.peek()
        if tok is None:
            raise self.error("statement")
        if tok.line == colon_line:
            node = self.simple_statement()
            self.end_of_line()
            return [node]
        if tok.col <= header_col:
            raise self.error("indented block")
        body = self.block(tok.col)
        if not body:
            raise self.error("statement")
        return body

    def funcdef(self) -> AstNode:
        col = self.peek().col
        children = [self.advance(), self.expect_name(), self.expect("(")]
        if not self.check(")"):
            children.append(self.expect_name())
            while self.check(","):
                children.append(self.advance())
                children.append(self.expect_name())
        children.append(self.expect(")"))
        children.append(self.expect(":"))
        children.extend(self.suite(col))
        return AstNode("FunctionDef", children=children)

    def if_stmt(self) -> AstNode:
        col = self.peek().col
        children = [self.advance(), self.expression(), self.expect(":")]
        children.extend(self.suite(col))
        while (tok := self.peek()) is not None and tok.col == col and tok.lexeme == "elif":
            clause = [self.advance(), self.expression(), self.expect(":")]
            clause.extend(self.suite(col))
            children.append(AstNode("Elif", children=clause))
        tok = self.peek()
        if tok is not None and tok.col == col and tok.lexeme == "else" and tok.kind == "keyword":
            clause = [self.advance(), self.expect(":")]
            clause.extend(self.suite(col))
            children.append(AstNode("Else", children=clause))
        return AstNode("If", children=children)

    def while_stmt(self) -> AstNode:
        col = self.peek().col
        children = [self.advance(), self.expression(), self.expect(":")]
        children.extend(self.suite(col))
        return AstNode("While", children=children)

    def for_stmt(self) -> AstNode:
        col = self.peek().col
        children = [self.advance(), self.expect_name(), self.expect("in"), self.expression()]
        children.append(self.expect(":"))
        children.extend(self.suite(col))
        return AstNode("For", children=children)

    # -- expressions -------------------------------------------------------

    def expression(self) -> AstNode:
        self.enter()
        left = self.additive()
        tok = self.peek()
        # an operator that opens a new line starts the next statement
        if self.same_line(tok) and tok.kind == "operator" and tok.lexeme in ("==", ">", "<"):
            left = AstNode("Compare", children=[left, self.operator(), self.additive()])
        self.depth -= 1
        return left

    def _binary(self, operand, ops) -> AstNode:
        left = operand()
        while self.same_line(tok := self.peek()) and tok.kind == "operator" and tok.lexeme in ops:
            left = AstNode("BinaryOp", children=[left, self.operator(), operand()])
        return left

    def operator(self) -> Token:
        op = self.advance()
        if not self.same_line(self.peek()):
            raise self.error("operand on the same line")
        return op

    def additive(self) -> AstNode:
        return self._binary(self.term, ("+", "-"))

    def term(self) -> AstNode:
        return self._binary(self.unary, ("*", "/"))

    def unary(self) -> AstNode:
        tok = self.peek()
        if tok is not None and tok.kind == "operator" and tok.lexeme == "-":
            self.enter()
            node = AstNode("UnaryOp", children=[self.advance(), self.unary()])
            self.depth -= 1
            return node
        return self.primary()

    def primary(self) -> AstNode:
        tok = self.peek()
        if tok is None:
            raise self.error("expression")
        if tok.kind in ("integer", "string"):
            return self.advance()
        if tok.kind == "identifier":
            name = self.advance()
            if not (self.check("(") and self.same_line(self.peek())):
                return name
            children = [name, self.advance()]
            if not self.check(")"):
                children.append(self.expression())
                while self.check(","):
                    children.append(self.advance())
                    children.append(self.expression())
            children.append(self.expect(")"))
            return AstNode("Call", children=children)
        if tok.lexeme == "(" and tok.kind == "punctuation":
            return AstNode("Group", children=[self.advance(), self.expression(), self.expect(")")])
        raise self.error("expression")


def _number(root: AstNode) -> None:
    next_id = 0
    stack = [root]
    while stack:
        node = stack.pop()
        node.id = next_id
        next_id += 1
        stack.extend(reversed(node.children))


def parse(tokens: list[Token]) -> AstNode:
    """Parse a token list into a ``Module`` tree with pre-order node ids."""
    root = _Parser(list(tokens)).program()
    _number(root)
    return root


def parse_source(source: str) -> AstNode:
    return parse(lex(source))


def iter_nodes(root: AstNode) -> Iterator[AstNode]:
    """Yield nodes in pre-order (which is also id order)."""
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def terminals(root: AstNode) -> list[AstNode]:
    return [node for node in iter_nodes(root) if node.is_terminal]


def _is_statement(node: AstNode) -> bool:
    return node.kind in SIMPLE_STATEMENTS or node.kind in COMPOUND_STATEMENTS or node.kind in CLAUSES


def statements(root: AstNode) -> list[StatementSpan]:
    """Split the terminals of ``root`` into statement spans in source order.

    Simple statements form one span each.  A compound statement (and each
    ``elif``/``else`` clause) contributes a span made of its header
    terminals; its body statements are handled recursively.
    """
    spans: list[list[int]] = []

    def visit(stmt: AstNode) -> None:
        if stmt.kind in SIMPLE_STATEMENTS:
            spans.append([t.id for t in terminals(stmt)])
            return
        header: list[int] = []
        spans.append(header)
        for child in stmt.children:
            if _is_statement(child):
                visit(child)
            else:
                header.extend(t.id for t in terminals(child))

    for stmt in root.children:
        visit(stmt)
    spans.sort(key=lambda ids: ids[0])
    return [StatementSpan(i, tuple(ids)) for i, ids in enumerate(spans)]
