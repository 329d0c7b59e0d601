"""Arithmetic expressions over a single real variable.

Coefficient functions such as b(t) or r(x) are given as text, e.g.
``"exp(-2*t)"`` or ``"0.5*sin(x)"``. This module parses them into a small
AST, evaluates the AST on scalars or numpy arrays, prints it back to text
and compiles it into a postfix program for the compiled EM kernel.

Grammar (highest precedence first)::

    atom    := number | variable | func "(" args ")" | "(" expr ")"
    power   := atom ["^" unary]          # right associative
    unary   := "-" unary | power
    term    := unary (("*" | "/") unary)*
    expr    := term (("+" | "-") term)*
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNARY_FUNCS = ("exp", "ln", "abs", "sin", "cos")
BINARY_FUNCS = ("min", "max")
BINARY_OPS = {"+": "add", "-": "subtract", "*": "multiply", "/": "divide", "^": "power"}

ARITY = {
    "constant": 0,
    "variable": 0,
    "negate": 1,
    "exp": 1,
    "ln": 1,
    "abs": 1,
    "sin": 1,
    "cos": 1,
    "add": 2,
    "subtract": 2,
    "multiply": 2,
    "divide": 2,
    "power": 2,
    "min": 2,
    "max": 2,
}

# opcodes shared with _kernels.pyx
OPCODES = {
    "constant": 0,
    "variable": 1,
    "negate": 2,
    "add": 3,
    "subtract": 4,
    "multiply": 5,
    "divide": 6,
    "power": 7,
    "exp": 8,
    "ln": 9,
    "abs": 10,
    "sin": 11,
    "cos": 12,
    "min": 13,
    "max": 14,
}


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int, variable: str | None = None):
        if variable is not None:
            msg = f"unknown identifier {name!r} at offset {offset} (expected variable {variable!r})"
        else:
            msg = f"unknown identifier {name!r} at offset {offset}"
        super().__init__(msg)
        self.name = name
        self.offset = offset


class WrongVariableError(UnknownIdentifierError):
    """A known coefficient variable used in the wrong context (``x`` inside b(t))."""


KNOWN_VARIABLES = ("t", "x")


class CoeffDomainError(ArithmeticError):
    """Evaluation left the function's domain (ln of nonpositive, 0 division, overflow)."""

    def __init__(self, message: str, point: float | None = None):
        if point is not None:
            message = f"{message} at point {point!r}"
        super().__init__(message)
        self.point = point


@dataclass(frozen=True)
class Expr:
    kind: str
    children: tuple["Expr", ...] = ()
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ARITY:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if len(self.children) != ARITY[self.kind]:
            raise ValueError(f"{self.kind} takes {ARITY[self.kind]} children, got {len(self.children)}")

    def __str__(self) -> str:
        return to_text(self)


def const(v: float) -> Expr:
    return Expr("constant", value=float(v))


# --------------------------------------------------------------------------
# tokenizer / parser


def _tokenize(text: str):
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lit = text[i:j]
            try:
                val = float(lit)
            except ValueError:
                raise ExprSyntaxError(f"malformed number {lit!r}", i) from None
            tokens.append(("num", val, i))
            i = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
        elif c in "+-*/^(),":
            tokens.append(("op", c, i))
            i += 1
        else:
            raise ExprSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, text: str, variable: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.variable = variable

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, op: str):
        kind, val, off = self.next()
        if kind != "op" or val != op:
            what = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {op!r}, found {what}", off)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {val!r}", off)
        return e

    def expr(self) -> Expr:
        left = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                left = Expr(BINARY_OPS[val], (left, self.term()))
            else:
                return left

    def term(self) -> Expr:
        left = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                left = Expr(BINARY_OPS[val], (left, self.unary()))
            else:
                return left

    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return Expr("negate", (self.unary(),))
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.next()
            return Expr("power", (base, self.unary()))
        return base

    def atom(self) -> Expr:
        kind, val, off = self.next()
        if kind == "num":
            return const(val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            if val in UNARY_FUNCS or val in BINARY_FUNCS:
                self.expect("(")
                args = [self.expr()]
                while self.peek()[0] == "op" and self.peek()[1] == ",":
                    self.next()
                    args.append(self.expr())
                self.expect(")")
                want = 1 if val in UNARY_FUNCS else 2
                if len(args) != want:
                    raise ExprSyntaxError(f"{val} takes {want} argument(s), got {len(args)}", off)
                return Expr(val, tuple(args))
            if val == self.variable:
                return Expr("variable")
            if val in KNOWN_VARIABLES:
                raise WrongVariableError(val, off, self.variable)
            raise UnknownIdentifierError(val, off, self.variable)
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", off)
        raise ExprSyntaxError(f"unexpected token {val!r}", off)


def parse_expr(text: str, variable: str = "t") -> Expr:
    """Parse ``text`` into an :class:`Expr` over the single symbol ``variable``.

    Raises ExprSyntaxError (with ``.offset``) or UnknownIdentifierError.
    """
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(text, variable).parse()


# --------------------------------------------------------------------------
# printing

_PRINT_OPS = {"add": "+", "subtract": "-", "multiply": "*", "divide": "/", "power": "^"}


def to_text(e: Expr, variable: str = "t") -> str:
    """Fully parenthesised text form; parses back to an equivalent tree."""
    k = e.kind
    if k == "constant":
        v = e.value
        if v < 0 or (v == 0 and math.copysign(1.0, v) < 0):
            return f"(-{repr(-v)})"
        return repr(v)
    if k == "variable":
        return variable
    if k == "negate":
        return f"(-{to_text(e.children[0], variable)})"
    if k in _PRINT_OPS:
        a, b = (to_text(c, variable) for c in e.children)
        return f"({a}{_PRINT_OPS[k]}{b})"
    args = ",".join(to_text(c, variable) for c in e.children)
    return f"{k}({args})"


# --------------------------------------------------------------------------
# evaluation


def _witness(x, bad) -> float:
    if np.ndim(x) == 0:
        return float(x)
    shape = np.broadcast_shapes(np.shape(x), np.shape(bad))
    xb = np.broadcast_to(x, shape)
    return float(xb[np.broadcast_to(bad, shape)][0])


def _eval(e: Expr, x):
    k = e.kind
    if k == "constant":
        return e.value
    if k == "variable":
        return x
    if k == "negate":
        return -_eval(e.children[0], x)
    if len(e.children) == 1:
        a = np.asarray(_eval(e.children[0], x), dtype=float)
        if k == "exp":
            return np.exp(a)
        if k == "ln":
            bad = a <= 0
            if np.any(bad):
                raise CoeffDomainError("ln of nonpositive value", _witness(x, bad))
            return np.log(a)
        if k == "abs":
            return np.abs(a)
        if k == "sin":
            return np.sin(a)
        if k == "cos":
            return np.cos(a)
    a = np.asarray(_eval(e.children[0], x), dtype=float)
    b = np.asarray(_eval(e.children[1], x), dtype=float)
    if k == "add":
        return a + b
    if k == "subtract":
        return a - b
    if k == "multiply":
        return a * b
    if k == "divide":
        bad = b == 0
        if np.any(bad):
            raise CoeffDomainError("division by zero", _witness(x, bad))
        return a / b
    if k == "power":
        return np.power(a, b)
    if k == "min":
        return np.minimum(a, b)
    if k == "max":
        return np.maximum(a, b)
    raise AssertionError(k)


def evaluate(e: Expr, x):
    """Evaluate on a float or array. Raises CoeffDomainError on non-finite output."""
    with np.errstate(all="ignore"):
        out = np.asarray(_eval(e, x), dtype=float)
        out = np.broadcast_to(out, np.shape(x)) if np.ndim(x) else out
    bad = ~np.isfinite(out)
    if np.any(bad):
        raise CoeffDomainError("non-finite value", _witness(x, bad))
    if np.ndim(x) == 0:
        return float(out)
    return np.array(out)


# --------------------------------------------------------------------------
# postfix program for the compiled kernels


def compile_program(e: Expr) -> tuple[np.ndarray, np.ndarray]:
    """Postfix (opcode, constant) arrays; evaluated by a stack machine."""
    ops: list[int] = []
    consts: list[float] = []

    def emit(node: Expr):
        for c in node.children:
            emit(c)
        ops.append(OPCODES[node.kind])
        consts.append(node.value if node.kind == "constant" else 0.0)

    emit(e)
    return np.asarray(ops, dtype=np.int32), np.asarray(consts, dtype=np.float64)


def stack_depth(e: Expr) -> int:
    if not e.children:
        return 1
    if len(e.children) == 1:
        return stack_depth(e.children[0])
    return max(stack_depth(e.children[0]), 1 + stack_depth(e.children[1]))


def is_zero(e: Expr) -> bool:
    """True for the literal zero expression (e.g. ``"0"`` or ``"-0"``)."""
    if e.kind == "constant":
        return e.value == 0.0
    if e.kind == "negate":
        return is_zero(e.children[0])
    return False
