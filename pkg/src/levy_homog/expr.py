"""Closed-form scalar expressions for coefficients, sources and densities.

A small recursive-descent parser over literals, named variables, the
constant ``pi``, the binary operators ``+ - * / ^``, unary minus and the
functions ``sin cos exp abs min max``.  Precedence, from tightest:
``^``, unary ``-``, ``* /``, ``+ -``.  Operators of equal precedence
associate to the left, ``^`` included.

Evaluation is vectorised over numpy arrays::

    >>> e = parse("sin(2*pi*y1)^2", ["y1"])
    >>> float(e(0.25))
    1.0
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EvaluationError, ParseError

FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "abs": (1, np.abs),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}
CONSTANTS = {"pi": math.pi}

# precedence levels used by the printer
_ADD, _MUL, _NEG, _POW, _ATOM = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


def _byte_offset(text, pos):
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text, var_names):
        self.text = text
        self.vars = set(var_names)
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message, tok, expected):
        raise ParseError(message, _byte_offset(self.text, tok[2]), expected)

    def expect(self, value):
        tok = self.peek()
        if tok[1] != value or tok[0] == "eof":
            self.fail(f"unexpected {tok[1] or 'end of input'!r}", tok, [value])
        return self.advance()

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "eof":
            self.fail(f"unexpected {tok[1]!r}", tok, ["+", "-", "*", "/", "^", "end of input"])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        node = self.primary()
        while self.peek()[1] == "^" and self.peek()[0] == "op":
            self.advance()
            node = BinOp("^", node, self.exponent())
        return node

    def exponent(self):
        # allows 2^-1 without letting unary minus bind looser than ^ elsewhere
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.advance()
            return Neg(self.exponent())
        return self.primary()

    def primary(self):
        tok = self.peek()
        kind, text, _ = tok
        if kind == "num":
            self.advance()
            return Num(float(text))
        if kind == "ident":
            self.advance()
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if text not in FUNCTIONS:
                    self.fail(f"unknown function {text!r}", tok, sorted(FUNCTIONS))
                self.advance()
                arity = FUNCTIONS[text][0]
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != arity:
                    self.fail(f"{text} takes {arity} argument(s), got {len(args)}", tok, [])
                return Call(text, tuple(args))
            if text in self.vars:
                return Var(text)
            if text in CONSTANTS:
                return Const(text)
            self.fail(f"unknown identifier {text!r}", tok, sorted(self.vars | set(CONSTANTS)))
        if kind == "op" and text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        self.fail(f"unexpected {text or 'end of input'!r}", tok, ["number", "identifier", "(", "-"])


def _prec(node):
    if isinstance(node, BinOp):
        return {"+": _ADD, "-": _ADD, "*": _MUL, "/": _MUL, "^": _POW}[node.op]
    if isinstance(node, Neg):
        return _NEG
    if isinstance(node, Num) and (node.value < 0 or math.copysign(1.0, node.value) < 0):
        return _NEG
    return _ATOM


def _fmt_number(v):
    s = repr(float(v))
    if s.endswith(".0"):
        s = s[:-2]
    return s


def pretty(node) -> str:
    """Render an AST with the minimal parentheses needed to re-parse it identically."""
    if isinstance(node, Num):
        if _prec(node) == _NEG:
            return "-" + _fmt_number(-node.value)
        return _fmt_number(node.value)
    if isinstance(node, (Var, Const)):
        return node.name
    if isinstance(node, Call):
        return f"{node.name}({', '.join(pretty(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = pretty(node.operand)
        if _prec(node.operand) < _NEG:
            inner = f"({inner})"
        return "-" + inner
    p = _prec(node)
    left, right = pretty(node.left), pretty(node.right)
    if node.op == "^":
        if _prec(node.left) < _POW:
            left = f"({left})"
        if _prec(node.right) < _ATOM:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        fn = FUNCTIONS[node.name][1]
        return fn(*[_eval(a, env) for a in node.args])
    a = _eval(node.left, env)
    b = _eval(node.right, env)
    if node.op == "+":
        return np.add(a, b)
    if node.op == "-":
        return np.subtract(a, b)
    if node.op == "*":
        return np.multiply(a, b)
    if node.op == "/":
        if np.any(np.asarray(b) == 0):
            raise EvaluationError("division by zero")
        return np.divide(a, b)
    # power
    a_arr, b_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if np.any((a_arr == 0) & (b_arr < 0)):
        raise EvaluationError("zero raised to a negative power")
    if np.any((a_arr < 0) & (b_arr != np.round(b_arr))):
        raise EvaluationError("negative base raised to a non-integer power")
    with np.errstate(over="ignore"):
        out = np.power(a_arr, b_arr)
    return out if out.ndim else float(out)


class Expression:
    """A parsed expression bound to an ordered list of variable names."""

    def __init__(self, text: str, var_names: Sequence[str], ast):
        self.text = text
        self.var_names = tuple(var_names)
        self.ast = ast

    def __call__(self, *args):
        if len(args) != len(self.var_names):
            raise TypeError(f"expected {len(self.var_names)} argument(s), got {len(args)}")
        env = {name: np.asarray(v, dtype=float) for name, v in zip(self.var_names, args)}
        shape = np.broadcast_shapes(*[np.shape(v) for v in env.values()]) if env else ()
        out = _eval(self.ast, env)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else float(out)

    def on_points(self, points):
        """Evaluate at an ``(K, len(var_names))`` array of points."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, len(self.var_names))
        if not self.var_names:
            return np.full(pts.shape[0], self())
        return np.asarray(self(*pts.T), dtype=float).reshape(pts.shape[0])

    def pretty(self) -> str:
        return pretty(self.ast)

    def __repr__(self):
        return f"Expression({self.pretty()!r}, vars={list(self.var_names)})"


def parse(text: str, var_names: Sequence[str] = ()) -> Expression:
    if not text or not text.strip():
        raise ParseError("empty expression", 0, ["number", "identifier", "(", "-"])
    for name in var_names:
        if name in FUNCTIONS or name in CONSTANTS:
            raise ValueError(f"variable name {name!r} shadows a builtin")
    return Expression(text, var_names, _Parser(text, var_names).parse())


def var_names_for(prefix: str, dim: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(dim)]


def check_periodic(e: Expression, dims: int, samples: int, seed: int = 0, tol: float = 1e-10) -> bool:
    """True when ``e`` is 1-periodic in each of its first ``dims`` variables on random samples."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    y = rng.random((samples, dims))
    base = e.on_points(y)
    for k in range(dims):
        shifted = y.copy()
        shifted[:, k] += 1.0
        if np.max(np.abs(e.on_points(shifted) - base)) > tol:
            return False
    return True


def check_positive_lower_bound(e: Expression, a0: float, samples: int = 64, dims: int | None = None) -> bool:
    """Check ``min e >= a0`` on a uniform torus grid with ``samples`` points per dimension."""
    dims = len(e.var_names) if dims is None else dims
    axes = [np.arange(samples) / samples] * dims
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return bool(np.min(e.on_points(pts)) >= a0)
