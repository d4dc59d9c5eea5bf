"""Recursive-descent parser for the expression grammar.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?          exponent must be an integer
    atom   := NUMBER | IDENT | IDENT '(' args ')' | '(' expr ')'

``D(f, x, n)`` applied to a bare variable ``f`` is the jet coordinate of
order ``n``; applied to anything else it differentiates ``n`` times with
respect to ``x``.  ``D(F, i, n)`` with an integer ``i`` differentiates the
opaque application ``F`` in its ``i``-th argument slot (1-based).
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import Mapping, Sequence

from .core import Add, Const, Exp, Expr, Func, Log, Mul, Pow, Var, jet_var, lookup_var, symbol

BUILTINS = {"exp": 1, "ln": 1, "D": 3}

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)|([A-Za-z_][A-Za-z0-9_]*)|(.))")


class ParseError(ValueError):
    """Syntax error carrying the byte offset and the set of expected tokens."""

    def __init__(self, message: str, offset: int, expected: frozenset[str] = frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class _Tok:
    __slots__ = ("kind", "text", "offset")

    def __init__(self, kind, text, offset):
        self.kind = kind
        self.text = text
        self.offset = offset


def _tokenize(text: str) -> list[_Tok]:
    raw = text.encode("utf-8")
    if len(raw) != len(text):
        # offsets are byte offsets; reject non-ASCII early with the right position
        for i, ch in enumerate(text):
            if ord(ch) > 127:
                raise ParseError(f"unexpected character {ch!r}", len(text[:i].encode("utf-8")))
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        if m.group(1):
            toks.append(_Tok("num", m.group(1), m.start(1)))
        elif m.group(2):
            toks.append(_Tok("ident", m.group(2), m.start(2)))
        elif m.group(3):
            ch = m.group(3)
            if ch not in "+-*/^(),":
                raise ParseError(f"unexpected character {ch!r}", m.start(3))
            toks.append(_Tok("op", ch, m.start(3)))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


_OPERAND = frozenset({"NUMBER", "IDENT", "(", "-", "+"})


class _Parser:
    def __init__(self, text: str, functions: Mapping[str, Sequence[str]]):
        self.toks = _tokenize(text)
        self.i = 0
        self.functions = {k: tuple(v) for k, v in functions.items()}

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, op: str) -> _Tok:
        t = self.peek()
        if t.kind != "op" or t.text != op:
            raise ParseError(f"unexpected {t.text or 'end of input'!r}", t.offset, frozenset({op}))
        return self.next()

    def parse(self) -> Expr:
        e = self.expr()
        t = self.peek()
        if t.kind != "end":
            raise ParseError(f"unexpected {t.text!r}", t.offset, frozenset({"+", "-", "*", "/", "^", "end"}))
        return e

    def expr(self) -> Expr:
        terms = [self.term()]
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.next().text
            rhs = self.term()
            terms.append(rhs if op == "+" else Mul((Const(-1), rhs)))
        return terms[0] if len(terms) == 1 else Add(terms)

    def term(self) -> Expr:
        factors = [self.unary()]
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.next().text
            rhs = self.unary()
            factors.append(rhs if op == "*" else Pow(rhs, -1))
        return factors[0] if len(factors) == 1 else Mul(factors)

    def unary(self) -> Expr:
        t = self.peek()
        if t.kind == "op" and t.text == "-":
            self.next()
            inner = self.unary()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Mul((Const(-1), inner))
        if t.kind == "op" and t.text == "+":
            self.next()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        t = self.peek()
        if t.kind == "op" and t.text == "^":
            self.next()
            at = self.peek().offset
            ex = self.unary()
            value = _int_value(ex)
            if value is None:
                raise ParseError("exponent must be an integer constant", at, frozenset({"INTEGER"}))
            return Pow(base, value)
        return base

    def atom(self) -> Expr:
        t = self.next()
        if t.kind == "num":
            return Const(Fraction(t.text))
        if t.kind == "op" and t.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "ident":
            nxt = self.peek()
            if nxt.kind == "op" and nxt.text == "(":
                return self.call(t)
            return self.name(t)
        raise ParseError(f"unexpected {t.text or 'end of input'!r}", t.offset, _OPERAND)

    def name(self, t: _Tok) -> Expr:
        if t.text in self.functions:
            return Func(t.text, [symbol(a) for a in self.functions[t.text]])
        if t.text in BUILTINS:
            raise ParseError(f"{t.text} requires arguments", t.offset + len(t.text), frozenset({"("}))
        v = lookup_var(t.text)
        return v if v is not None else symbol(t.text)

    def call(self, t: _Tok) -> Expr:
        self.expect("(")
        args: list[Expr] = []
        arg_offsets: list[int] = []
        if not (self.peek().kind == "op" and self.peek().text == ")"):
            while True:
                arg_offsets.append(self.peek().offset)
                args.append(self.expr())
                if self.peek().kind == "op" and self.peek().text == ",":
                    self.next()
                    continue
                break
        self.expect(")")
        name = t.text
        want = BUILTINS.get(name)
        if want is None and name in self.functions:
            want = len(self.functions[name])
        if want is not None and len(args) != want:
            raise ParseError(f"{name} takes {want} argument(s), got {len(args)}", t.offset)
        if name == "exp":
            return Exp(args[0])
        if name == "ln":
            return Log(args[0])
        if name == "D":
            return self.derivative(args, arg_offsets)
        if not args:
            raise ParseError("function application needs at least one argument", t.offset)
        return Func(name, args)

    def derivative(self, args: list[Expr], offsets: list[int]) -> Expr:
        target, wrt, count = args
        n = _int_value(count)
        if n is None or n < 0:
            raise ParseError("derivative order must be a non-negative integer", offsets[2], frozenset({"INTEGER"}))
        slot = _int_value(wrt)
        if slot is not None:
            if not isinstance(target, Func) or not 1 <= slot <= len(target.args):
                raise ParseError("slot derivative needs an opaque application with that slot", offsets[1])
            return target.derivative(slot - 1, n) if n else target
        if not isinstance(wrt, Var):
            raise ParseError("derivative variable must be an identifier", offsets[1], frozenset({"IDENT"}))
        if isinstance(target, Var):
            if target.jet is None:
                return jet_var(target, wrt, n)
            base, indep, order = target.jet
            if indep != wrt.name:
                raise ParseError("mixed independent variables in jet coordinate", offsets[1])
            return jet_var(base, indep, order + n)
        from .ops import differentiate

        return differentiate(target, wrt, n)


def _int_value(e: Expr) -> int | None:
    if isinstance(e, Const) and e.value.denominator == 1:
        return int(e.value)
    if isinstance(e, Mul) and len(e.factors) == 2 and e.factors[0] == Const(-1):
        inner = _int_value(e.factors[1])
        return None if inner is None else -inner
    return None


def parse(text: str, functions: Mapping[str, Sequence[str]] | None = None) -> Expr:
    """Parse ``text`` into an (unnormalized) expression tree.

    ``functions`` declares opaque functions by name with their argument
    variable names; a declared name may then be used bare (``tau``) or in
    ``D(tau, a, 2)``.
    """
    return _Parser(text, functions or {}).parse()
