"""Tiny arithmetic language for weights over ``x1, x2``.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | '+' unary | power
    power  := atom ('^' unary)?
    atom   := number | 'x1' | 'x2' | func '(' expr ')' | '(' expr ')'
    func   := exp | log | sin | cos

``^`` is right associative and binds tighter than unary minus, so ``-x1^2``
means ``-(x1^2)``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

FUNCTIONS = {"exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos}
_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(.))")


def tokenize(text: str) -> list[tuple[str, str]]:
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            break
        num, name, sym = m.groups()
        if num is not None:
            out.append(("num", num))
        elif name is not None:
            out.append(("name", name))
        elif sym in "+-*/^()":
            out.append(("op", sym))
        else:
            raise ValidationError(f"unexpected character {sym!r} at position {m.start(3)}")
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("end", "")

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, sym: str):
        tok = self.take()
        if tok != ("op", sym):
            raise ValidationError(f"expected {sym!r}, found {tok[1] or 'end of input'!r}")

    def parse(self):
        if not self.tokens:
            raise ValidationError("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            raise ValidationError(f"unexpected {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek() in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return ("neg", self.unary())
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            return ("^", base, self.unary())
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return ("num", float(val))
        if kind == "name":
            if val in ("x1", "x2"):
                return ("var", int(val[1]) - 1)
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return ("call", val, arg)
            raise ValidationError(f"unknown name {val!r}")
        if (kind, val) == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        raise ValidationError(f"unexpected {val or 'end of input'!r}")


def _eval(node, x: np.ndarray):
    tag = node[0]
    if tag == "num":
        return np.full(len(x), node[1])
    if tag == "var":
        return x[:, node[1]]
    if tag == "neg":
        return -_eval(node[1], x)
    if tag == "call":
        return FUNCTIONS[node[1]](_eval(node[2], x))
    a, b = _eval(node[1], x), _eval(node[2], x)
    if tag == "+":
        return a + b
    if tag == "-":
        return a - b
    if tag == "*":
        return a * b
    if tag == "/":
        return a / b
    return np.power(a, b)


@dataclass(frozen=True)
class Expression:
    """Parsed expression; callable on an ``(n, 2)`` array of points. Picklable."""

    source: str
    tree: tuple

    def __call__(self, pts) -> np.ndarray:
        x = np.atleast_2d(np.asarray(pts, dtype=float))
        with np.errstate(all="ignore"):
            return np.asarray(_eval(self.tree, x), dtype=float)

    def __str__(self) -> str:
        return self.source


def parse_expression(text: str) -> Expression:
    return Expression(text, _Parser(text).parse())
