"""Arithmetic expressions over phase-space variables.

Grammar (``^`` is right associative and binds tighter than unary minus)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('+' | '-') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Names are ``q1..qn``, ``p1..pn`` and the constant ``pi``.  Compiled
expressions evaluate values and, by forward-mode differentiation of the
tree, gradients.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParseError, UnknownIdentifierError

__all__ = ["Expression", "parse_expression", "FUNCTIONS"]

FUNCTIONS = {
    "sin": (math.sin, math.cos),
    "cos": (math.cos, lambda x: -math.sin(x)),
    "exp": (math.exp, math.exp),
    "sqrt": (math.sqrt, lambda x: 0.5 / math.sqrt(x)),
    "log": (math.log, lambda x: 1.0 / x),
}

_TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>\*\*|[-+*/^()]))")


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    col: int


def _tokenize(text: str, line: int, col0: int):
    pos = 0
    out = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[bad]!r}", line, col0 + bad + 1)
        kind = m.lastgroup
        tok = m.group(kind)
        out.append(_Tok(kind, "^" if tok == "**" else tok, col0 + m.start(kind) + 1))
        pos = m.end()
    out.append(_Tok("end", "", col0 + len(text) + 1))
    return out


class _Parser:
    def __init__(self, text, n, line, col0):
        self.toks = _tokenize(text, line, col0)
        self.i = 0
        self.n = n
        self.line = line

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        return ParseError(msg, self.line, tok.col)

    def parse(self):
        node = self.expr()
        if self.peek().kind != "end":
            raise self.error(f"unexpected {self.peek().text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.take().text
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().text in ("*", "/") and self.peek().kind == "op":
            op = self.take().text
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text in ("+", "-"):
            self.take()
            inner = self.unary()
            return ("neg", inner) if tok.text == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            return ("bin", "^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        if tok.kind == "num":
            return ("num", float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            close = self.take()
            if close.text != ")":
                raise ParseError("unclosed parenthesis", self.line, tok.col)
            return node
        if tok.kind == "name":
            if self.peek().kind == "op" and self.peek().text == "(":
                if tok.text not in FUNCTIONS:
                    raise UnknownIdentifierError(f"unknown function {tok.text!r}", self.line, tok.col)
                open_tok = self.take()
                arg = self.expr()
                close = self.take()
                if close.text != ")":
                    raise ParseError("unclosed parenthesis", self.line, open_tok.col)
                return ("call", tok.text, arg)
            return self.variable(tok)
        if tok.kind == "end":
            raise ParseError("unexpected end of expression", self.line, tok.col)
        raise self.error(f"unexpected {tok.text!r}", tok)

    def variable(self, tok):
        if tok.text == "pi":
            return ("num", math.pi)
        m = re.fullmatch(r"([qp])([1-9]\d*)", tok.text)
        if not m:
            raise UnknownIdentifierError(f"unknown identifier {tok.text!r}", self.line, tok.col)
        idx = int(m.group(2))
        if self.n is not None and idx > self.n:
            raise UnknownIdentifierError(
                f"identifier {tok.text!r} out of range for n = {self.n}", self.line, tok.col)
        return ("var", m.group(1), idx)


def _max_index(node) -> int:
    tag = node[0]
    if tag == "var":
        return node[2]
    if tag == "num":
        return 0
    if tag == "neg":
        return _max_index(node[1])
    if tag == "call":
        return _max_index(node[2])
    return max(_max_index(node[2]), _max_index(node[3]))


def _compile_value(node, n) -> Callable:
    tag = node[0]
    if tag == "num":
        c = node[1]
        return lambda z: c
    if tag == "var":
        j = node[2] - 1 + (n if node[1] == "p" else 0)
        return lambda z: z[j]
    if tag == "neg":
        f = _compile_value(node[1], n)
        return lambda z: -f(z)
    if tag == "call":
        fn = FUNCTIONS[node[1]][0]
        f = _compile_value(node[2], n)
        return lambda z: fn(f(z))
    op, a, b = node[1], _compile_value(node[2], n), _compile_value(node[3], n)
    if op == "+":
        return lambda z: a(z) + b(z)
    if op == "-":
        return lambda z: a(z) - b(z)
    if op == "*":
        return lambda z: a(z) * b(z)
    if op == "/":
        return lambda z: a(z) / b(z)
    if node[3][0] == "num" and float(node[3][1]).is_integer():
        e = int(node[3][1])
        return lambda z: a(z) ** e
    return lambda z: a(z) ** b(z)


def _compile_dual(node, n) -> Callable:
    """Closure returning ``(value, gradient)``."""
    dim = 2 * n
    tag = node[0]
    if tag == "num":
        c = node[1]
        zero = np.zeros(dim)
        return lambda z: (c, zero)
    if tag == "var":
        j = node[2] - 1 + (n if node[1] == "p" else 0)
        unit = np.zeros(dim)
        unit[j] = 1.0
        return lambda z: (z[j], unit)
    if tag == "neg":
        f = _compile_dual(node[1], n)

        def neg(z):
            v, d = f(z)
            return -v, -d
        return neg
    if tag == "call":
        fn, dfn = FUNCTIONS[node[1]]
        f = _compile_dual(node[2], n)

        def call(z):
            v, d = f(z)
            return fn(v), dfn(v) * d
        return call
    op, a, b = node[1], _compile_dual(node[2], n), _compile_dual(node[3], n)
    if op == "+":
        def add(z):
            va, da = a(z)
            vb, db = b(z)
            return va + vb, da + db
        return add
    if op == "-":
        def sub(z):
            va, da = a(z)
            vb, db = b(z)
            return va - vb, da - db
        return sub
    if op == "*":
        def mul(z):
            va, da = a(z)
            vb, db = b(z)
            return va * vb, vb * da + va * db
        return mul
    if op == "/":
        def div(z):
            va, da = a(z)
            vb, db = b(z)
            return va / vb, (da * vb - va * db) / (vb * vb)
        return div
    if node[3][0] == "num":
        e = node[3][1]

        def powc(z):
            va, da = a(z)
            if e == 0:
                return 1.0, np.zeros(dim)
            return va ** e, e * va ** (e - 1) * da
        return powc

    def powg(z):
        va, da = a(z)
        vb, db = b(z)
        val = va ** vb
        return val, val * (db * math.log(va) + vb * da / va)
    return powg


@dataclass(frozen=True)
class Expression:
    text: str
    n: int
    tree: tuple
    value: Callable
    dual: Callable

    def __call__(self, z) -> float:
        return float(self.value(z))

    def gradient(self, z) -> np.ndarray:
        return np.array(self.dual(z)[1], dtype=float)


def parse_expression(text: str, n: int = None, line: int = 1, col0: int = 0) -> Expression:
    """Parse and compile an expression.  ``n`` bounds the variable indices;
    when omitted it is inferred from the largest index used."""
    tree = _Parser(text, n, line, col0).parse()
    if n is None:
        n = max(_max_index(tree), 1)
    return Expression(text.strip(), n, tree, _compile_value(tree, n), _compile_dual(tree, n))
