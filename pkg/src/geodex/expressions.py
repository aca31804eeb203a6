"""Small arithmetic expression language for metric components.

Grammar (infix, usual precedence, ``^`` is right associative and binds
tighter than unary minus)::

    expr   :=  term (('+' | '-') term)*
    term   :=  unary (('*' | '/') unary)*
    unary  :=  '-' unary | power
    power  :=  atom ['^' unary]
    atom   :=  NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

Identifiers that are not one of the known function names (sin, cos, tan,
exp, log, sqrt) denote variables.  Parse trees evaluate against a dict of
numpy-compatible values and differentiate symbolically; there is no hidden
numeric fallback here, callers that want finite differences do that
themselves.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}


class ExprError(ValueError):
    """Parse or evaluation failure, carrying 1-based line/column."""

    def __init__(self, message, line, column):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class Expr:
    """Base node.  Subclasses implement evaluate/diff/__str__."""

    def evaluate(self, env):
        raise NotImplementedError

    def diff(self, name):
        raise NotImplementedError

    def variables(self):
        out = set()
        self._collect(out)
        return out

    def _collect(self, out):
        pass

    def __repr__(self):
        return f"{type(self).__name__}({self})"


@dataclass(frozen=True, repr=False)
class Num(Expr):
    value: float

    def evaluate(self, env):
        return self.value

    def diff(self, name):
        return Num(0.0)

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True, repr=False)
class Var(Expr):
    name: str

    def evaluate(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise ExprError(f"unknown variable '{self.name}'", 1, 1) from None

    def diff(self, name):
        return Num(1.0 if name == self.name else 0.0)

    def _collect(self, out):
        out.add(self.name)

    def __str__(self):
        return self.name


@dataclass(frozen=True, repr=False)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return a / b
        return a ** b

    def diff(self, name):
        a, b = self.left, self.right
        da, db = a.diff(name), b.diff(name)
        if self.op == "+":
            return add(da, db)
        if self.op == "-":
            return sub(da, db)
        if self.op == "*":
            return add(mul(da, b), mul(a, db))
        if self.op == "/":
            return div(sub(mul(da, b), mul(a, db)), mul(b, b))
        # a^b: general rule a^b * (db*log(a) + b*da/a); constant exponent
        # folds to the power rule to keep trees small.
        if isinstance(b, Num):
            return mul(mul(b, power(a, Num(b.value - 1.0))), da)
        return mul(power(a, b), add(mul(db, call("log", a)), div(mul(b, da), a)))

    def _collect(self, out):
        self.left._collect(out)
        self.right._collect(out)

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True, repr=False)
class Neg(Expr):
    arg: Expr

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def diff(self, name):
        return neg(self.arg.diff(name))

    def _collect(self, out):
        self.arg._collect(out)

    def __str__(self):
        return f"(-{self.arg})"


@dataclass(frozen=True, repr=False)
class Call(Expr):
    func: str
    arg: Expr

    def evaluate(self, env):
        return FUNCTIONS[self.func](self.arg.evaluate(env))

    def diff(self, name):
        a = self.arg
        da = a.diff(name)
        if self.func == "sin":
            outer = call("cos", a)
        elif self.func == "cos":
            outer = neg(call("sin", a))
        elif self.func == "tan":
            outer = div(Num(1.0), power(call("cos", a), Num(2.0)))
        elif self.func == "exp":
            outer = call("exp", a)
        elif self.func == "log":
            outer = div(Num(1.0), a)
        else:  # sqrt
            outer = div(Num(0.5), call("sqrt", a))
        return mul(outer, da)

    def _collect(self, out):
        self.arg._collect(out)

    def __str__(self):
        return f"{self.func}({self.arg})"


def _num(x):
    return isinstance(x, Num)


def add(a, b):
    if _num(a) and _num(b):
        return Num(a.value + b.value)
    if _num(a) and a.value == 0.0:
        return b
    if _num(b) and b.value == 0.0:
        return a
    return BinOp("+", a, b)


def sub(a, b):
    if _num(a) and _num(b):
        return Num(a.value - b.value)
    if _num(b) and b.value == 0.0:
        return a
    if _num(a) and a.value == 0.0:
        return neg(b)
    return BinOp("-", a, b)


def mul(a, b):
    if _num(a) and _num(b):
        return Num(a.value * b.value)
    if (_num(a) and a.value == 0.0) or (_num(b) and b.value == 0.0):
        return Num(0.0)
    if _num(a) and a.value == 1.0:
        return b
    if _num(b) and b.value == 1.0:
        return a
    return BinOp("*", a, b)


def div(a, b):
    if _num(a) and a.value == 0.0:
        return Num(0.0)
    if _num(b) and b.value == 1.0:
        return a
    if _num(a) and _num(b):
        return Num(a.value / b.value)
    return BinOp("/", a, b)


def power(a, b):
    if _num(b):
        if b.value == 0.0:
            return Num(1.0)
        if b.value == 1.0:
            return a
    if _num(a) and _num(b):
        return Num(a.value ** b.value)
    return BinOp("^", a, b)


def neg(a):
    if _num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def call(func, a):
    if _num(a):
        return Num(float(FUNCTIONS[func](a.value)))
    return Call(func, a)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text, line):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            # skip leading whitespace manually to locate the offender
            rest = text[pos:]
            stripped = rest.lstrip()
            if not stripped:
                break
            col = pos + (len(rest) - len(stripped)) + 1
            raise ExprError(f"unexpected character {stripped[0]!r}", line, col)
        col = m.start(m.lastgroup) + 1
        tokens.append((m.lastgroup, m.group(m.lastgroup), col))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, tokens, line):
        self.tokens = tokens
        self.line = line
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ExprError(message, self.line, tok[2])

    def expect_op(self, symbol):
        kind, value, _ = self.peek()
        if kind != "op" or value != symbol:
            self.fail(f"expected '{symbol}'")
        return self.next()

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.next()[1]
            rhs = self.term()
            node = add(node, rhs) if op == "+" else sub(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.next()[1]
            rhs = self.unary()
            node = mul(node, rhs) if op == "*" else div(node, rhs)
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.next()
            return neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.next()
            return power(base, self.unary())
        return base

    def atom(self):
        kind, value, col = self.next()
        if kind == "num":
            return Num(float(value))
        if kind == "ident":
            if self.peek()[:2] == ("op", "("):
                if value not in FUNCTIONS:
                    raise ExprError(f"unknown function '{value}'", self.line, col)
                self.next()
                inner = self.expr()
                self.expect_op(")")
                return call(value, inner)
            return Var(value)
        if kind == "op" and value == "(":
            inner = self.expr()
            self.expect_op(")")
            return inner
        if kind == "end":
            raise ExprError("unexpected end of expression", self.line, col)
        raise ExprError(f"unexpected token {value!r}", self.line, col)


def parse(text, line=1):
    """Parse ``text`` into an Expr.  ``line`` seeds error positions."""
    return _Parser(_tokenize(text, line), line).parse()


def evaluate(text, env=None):
    """Parse and evaluate in one go; handy for constant config values."""
    return parse(text).evaluate(env or {})


def constant_value(text, line=1):
    """Parse a variable-free expression and return its float value."""
    node = parse(text, line=line)
    free = node.variables()
    if free:
        raise ExprError(f"expected a constant, found variable(s) {sorted(free)}", line, 1)
    value = node.evaluate({})
    if not math.isfinite(value):
        raise ExprError("constant does not evaluate to a finite number", line, 1)
    return float(value)
