"""Arithmetic expression language for equation and heuristic genomes.

Infix grammar over ``+ - * / ^`` with the function set ``sin cos exp log
sqrt abs tanh``, parenthesised subexpressions, and nonnegative decimal
literals (see ``docs/grammar.ebnf``).  ``^`` binds tightest and is
right-associative, then unary minus, then ``* /``, then ``+ -``, so
``-x^2`` reads ``-(x^2)`` while ``-x*y`` reads ``(-x)*y``.

Evaluation is elementwise over vector bindings and never raises on
numeric trouble: division by zero, log of a nonpositive value, and
overflow propagate as non-finite elements.  Numeric literals are
quantised to 12 significant digits at construction time so the canonical
printer round-trips exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs", "tanh")
BINARY_OPS = ("+", "-", "*", "/", "^")

MAX_DEPTH = 32
MAX_NODES = 512

# Parser recursion ceiling; parenthesis nesting consumes it faster than AST
# depth does, so it sits well above MAX_DEPTH.
_PARSER_DEPTH_LIMIT = 160


class ExprError(Exception):
    """Base class for expression language failures."""


class ExprSyntaxError(ExprError):
    """Malformed source text; ``position`` is the byte offset of the failure."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class UnknownSymbolError(ExprError):
    """Variable or function name outside the allowed vocabulary."""

    def __init__(self, name: str, position: int):
        super().__init__(f"unknown symbol '{name}' (at offset {position})")
        self.name = name
        self.position = position


class ExprLimitError(ExprError):
    """Depth or node-count budget exceeded."""


class EvalError(ExprError):
    """Evaluation against bindings that do not cover the expression."""


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Const, Var, Neg, BinOp, Call]


def quantize(value: float) -> float:
    """Round to 12 significant digits, the canonical literal precision."""
    return float(f"{value:.12g}")


def format_const(value: float) -> str:
    return f"{value:.12g}"


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> Iterator[_Token]:
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup or "op"
        yield _Token(kind, m.group(), pos)
        pos = m.end()
    yield _Token("end", "", n)


class _Parser:
    """Recursive-descent parser for the grammar in the module docstring."""

    def __init__(self, text: str, variables: Sequence[str]):
        self.tokens = list(_tokenize(text))
        self.variables = frozenset(variables)
        self.index = 0
        self.depth = 0

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        tok = self.tokens[self.index]
        self.index += 1
        return tok

    def _enter(self) -> None:
        self.depth += 1
        if self.depth > _PARSER_DEPTH_LIMIT:
            raise ExprLimitError("expression nesting exceeds the parser limit")

    def _leave(self) -> None:
        self.depth -= 1

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.pos)
        return node

    def expr(self) -> Node:
        self._enter()
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        self._leave()
        return node

    def term(self) -> Node:
        self._enter()
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        self._leave()
        return node

    def unary(self) -> Node:
        self._enter()
        if self.peek().text == "-":
            self.advance()
            node: Node = Neg(self.unary())
        else:
            node = self.power()
        self._leave()
        return node

    def power(self) -> Node:
        self._enter()
        node = self.atom()
        if self.peek().text == "^":
            self.advance()
            # Right-associative; the exponent may carry its own unary minus.
            node = BinOp("^", node, self.unary())
        self._leave()
        return node

    def atom(self) -> Node:
        tok = self.peek()
        if tok.kind == "num":
            self.advance()
            return Const(quantize(float(tok.text)))
        if tok.kind == "name":
            self.advance()
            if self.peek().text == "(":
                if tok.text not in FUNCTIONS:
                    raise UnknownSymbolError(tok.text, tok.pos)
                self.advance()
                arg = self.expr()
                self._expect(")")
                return Call(tok.text, arg)
            if tok.text not in self.variables:
                raise UnknownSymbolError(tok.text, tok.pos)
            return Var(tok.text)
        if tok.text == "(":
            self.advance()
            node = self.expr()
            self._expect(")")
            return node
        if tok.kind == "end":
            raise ExprSyntaxError("unexpected end of input", tok.pos)
        raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.pos)

    def _expect(self, text: str) -> None:
        tok = self.peek()
        if tok.text != text:
            raise ExprSyntaxError(f"expected {text!r}", tok.pos)
        self.advance()


def parse(text: str, variables: Sequence[str]) -> Node:
    """Parse ``text`` into an AST, allowing only ``variables`` as free names.

    Raises ExprSyntaxError / UnknownSymbolError / ExprLimitError on malformed
    input; the returned tree respects MAX_DEPTH and MAX_NODES.
    """
    node = _Parser(text, variables).parse()
    check_limits(node)
    return node


def check_limits(node: Node) -> None:
    if depth(node) > MAX_DEPTH:
        raise ExprLimitError(f"expression depth exceeds {MAX_DEPTH}")
    if node_count(node) > MAX_NODES:
        raise ExprLimitError(f"expression size exceeds {MAX_NODES} nodes")


def depth(node: Node) -> int:
    if isinstance(node, (Const, Var)):
        return 1
    if isinstance(node, Neg):
        return 1 + depth(node.operand)
    if isinstance(node, Call):
        return 1 + depth(node.arg)
    return 1 + max(depth(node.left), depth(node.right))


def node_count(node: Node) -> int:
    if isinstance(node, (Const, Var)):
        return 1
    if isinstance(node, Neg):
        return 1 + node_count(node.operand)
    if isinstance(node, Call):
        return 1 + node_count(node.arg)
    return 1 + node_count(node.left) + node_count(node.right)


def variables_of(node: Node) -> frozenset:
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Const):
        return frozenset()
    if isinstance(node, Neg):
        return variables_of(node.operand)
    if isinstance(node, Call):
        return variables_of(node.arg)
    return variables_of(node.left) | variables_of(node.right)


# ---------------------------------------------------------------------------
# Evaluation

class EvalContext:
    """Variable bindings broadcast to a common vector length.

    Scalar bindings broadcast; vector bindings must all share one length.
    """

    def __init__(self, bindings: Mapping[str, object]):
        self._scalars: dict[str, float] = {}
        self._vectors: dict[str, np.ndarray] = {}
        self.length = 1
        for name, value in bindings.items():
            arr = np.asarray(value, dtype=float)
            if arr.ndim == 0:
                self._scalars[name] = float(arr)
            elif arr.ndim == 1:
                if self._vectors and arr.shape[0] != self.length:
                    raise ValueError(
                        f"vector binding '{name}' has length {arr.shape[0]}, "
                        f"expected {self.length}"
                    )
                self.length = arr.shape[0]
                self._vectors[name] = arr
            else:
                raise ValueError("bindings must be scalars or 1-D vectors")

    def array(self, name: str) -> np.ndarray:
        if name in self._vectors:
            return self._vectors[name]
        if name in self._scalars:
            return np.full(self.length, self._scalars[name])
        raise EvalError(f"unbound variable '{name}'")


_UNARY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
}


def evaluate(node: Node, ctx: EvalContext) -> np.ndarray:
    """Evaluate elementwise; non-finite trouble stays in the output vector."""
    with np.errstate(all="ignore"):
        return np.asarray(_eval(node, ctx), dtype=float)


def _eval(node: Node, ctx: EvalContext) -> np.ndarray:
    if isinstance(node, Const):
        return np.full(ctx.length, node.value)
    if isinstance(node, Var):
        return ctx.array(node.name)
    if isinstance(node, Neg):
        return -_eval(node.operand, ctx)
    if isinstance(node, Call):
        return _UNARY_FUNCS[node.func](_eval(node.arg, ctx))
    left = _eval(node.left, ctx)
    right = _eval(node.right, ctx)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        return left / right
    return np.power(left, right)


# ---------------------------------------------------------------------------
# Canonical form

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        if node.op in ("+", "-"):
            return _PREC_ADD
        if node.op in ("*", "/"):
            return _PREC_MUL
        return _PREC_POW
    if isinstance(node, Neg):
        return _PREC_NEG
    if isinstance(node, Const) and node.value < 0:
        # Prints with a leading minus, so it parenthesises like a unary minus.
        return _PREC_NEG
    return _PREC_ATOM


def _flatten(node: Node, op: str) -> list:
    """Operands of a maximal ``op`` chain (``op`` is '+' or '*')."""
    if isinstance(node, BinOp) and node.op == op:
        return _flatten(node.left, op) + _flatten(node.right, op)
    return [node]


def _wrap(rendered: str, child: Node, minimum: int) -> str:
    if _prec(child) < minimum:
        return f"({rendered})"
    return rendered


def canonicalize(node: Node) -> str:
    """Deterministic printing: commutative operands of ``+`` and ``*`` are
    flattened across the chain and sorted lexicographically; constants print
    at 12 significant digits; no folding or simplification is applied.
    """
    if isinstance(node, Const):
        if node.value < 0:
            return "-" + format_const(-node.value)
        return format_const(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = canonicalize(node.operand)
        return "-" + _wrap(inner, node.operand, _PREC_NEG)
    if isinstance(node, Call):
        return f"{node.func}({canonicalize(node.arg)})"
    if node.op in ("+", "*"):
        minimum = _PREC_ADD if node.op == "+" else _PREC_MUL
        parts = [
            _wrap(canonicalize(child), child, minimum)
            for child in _flatten(node, node.op)
        ]
        return node.op.join(sorted(parts))
    if node.op == "-":
        left = _wrap(canonicalize(node.left), node.left, _PREC_ADD)
        right_r = canonicalize(node.right)
        # Right operand at equal precedence needs parens: a-(b+c), a-(b-c).
        right = f"({right_r})" if _prec(node.right) <= _PREC_ADD else right_r
        return f"{left}-{right}"
    if node.op == "/":
        left = _wrap(canonicalize(node.left), node.left, _PREC_MUL)
        right_r = canonicalize(node.right)
        right = f"({right_r})" if _prec(node.right) <= _PREC_MUL else right_r
        return f"{left}/{right}"
    # '^': the base must sit at atom level, the exponent at unary level.
    left_r = canonicalize(node.left)
    left = f"({left_r})" if _prec(node.left) < _PREC_ATOM else left_r
    right_r = canonicalize(node.right)
    right = f"({right_r})" if _prec(node.right) < _PREC_NEG else right_r
    return f"{left}^{right}"


# ---------------------------------------------------------------------------
# Random generation

def random_expr(rng: np.random.Generator, variables: Sequence[str],
                max_depth: int = 3) -> Node:
    """Random AST over ``variables``, leaf-forced beyond ``max_depth``."""
    if max_depth <= 1:
        return _random_leaf(rng, variables)
    kind = rng.choice(("binary", "call", "neg", "leaf"), p=(0.45, 0.2, 0.1, 0.25))
    if kind == "binary":
        op = rng.choice(BINARY_OPS, p=(0.25, 0.25, 0.2, 0.2, 0.1))
        return BinOp(str(op), random_expr(rng, variables, max_depth - 1),
                     random_expr(rng, variables, max_depth - 1))
    if kind == "call":
        func = str(rng.choice(FUNCTIONS))
        return Call(func, random_expr(rng, variables, max_depth - 1))
    if kind == "neg":
        return Neg(random_expr(rng, variables, max_depth - 1))
    return _random_leaf(rng, variables)


def _random_leaf(rng: np.random.Generator, variables: Sequence[str]) -> Node:
    if variables and rng.random() < 0.6:
        return Var(str(rng.choice(list(variables))))
    value = quantize(round(float(rng.uniform(-2.0, 2.0)), 3))
    if value == 0:
        value = 0.0
    if value < 0:
        # Literals are nonnegative in the grammar; negatives are unary minus.
        return Neg(Const(-value))
    return Const(value)
