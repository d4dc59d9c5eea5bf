"""Deterministic text rendering in the parser's grammar."""

from __future__ import annotations

from fractions import Fraction
from typing import Mapping, Sequence

from .core import Add, Const, Exp, Expr, Func, Log, Mul, Pow, Var

# precedence levels
_SUM, _PROD, _NEG, _POW, _ATOM = 1, 2, 3, 4, 5


def render(e: Expr, functions: Mapping[str, Sequence[str]] | None = None) -> str:
    """Render ``e``; declared functions whose arguments match print bare (``tau``)."""
    return _Renderer(functions or {}).go(e)[0]


class _Renderer:
    def __init__(self, functions: Mapping[str, Sequence[str]]):
        self.functions = {k: tuple(v) for k, v in functions.items()}

    def wrap(self, e: Expr, level: int) -> str:
        s, p = self.go(e)
        return f"({s})" if p < level else s

    def go(self, e: Expr) -> tuple[str, int]:
        if isinstance(e, Const):
            return _const(e.value)
        if isinstance(e, Var):
            if e.jet is not None:
                base, indep, order = e.jet
                return f"D({base},{indep},{order})", _ATOM
            return e.name, _ATOM
        if isinstance(e, Add):
            return self.add(e), _SUM
        if isinstance(e, Mul):
            return self.mul(e)
        if isinstance(e, Pow):
            if e.exponent < 0:
                return f"1/{self.wrap(e.base, _POW)}" + ("" if e.exponent == -1 else f"^{-e.exponent}"), _PROD
            return f"{self.wrap(e.base, _ATOM)}^{e.exponent}", _POW
        if isinstance(e, Exp):
            return f"exp({self.go(e.arg)[0]})", _ATOM
        if isinstance(e, Log):
            return f"ln({self.go(e.arg)[0]})", _ATOM
        if isinstance(e, Func):
            return self.func(e), _ATOM
        raise TypeError(f"cannot render {type(e).__name__}")

    def add(self, e: Add) -> str:
        parts: list[str] = []
        for i, t in enumerate(e.terms):
            s, p = self.go(t)
            if i and s.startswith("-") and p >= _PROD:
                parts.append(" - " + s[1:])
            elif i:
                parts.append(" + " + (s if p > _SUM else f"({s})"))
            else:
                parts.append(s if p > _SUM else f"({s})")
        return "".join(parts)

    def mul(self, e: Mul) -> tuple[str, int]:
        num: list[Expr] = []
        den: list[Expr] = []
        for f in e.factors:
            if isinstance(f, Pow) and f.exponent < 0:
                den.append(f.base if f.exponent == -1 else Pow(f.base, -f.exponent))
            else:
                num.append(f)
        sign = ""
        if num and isinstance(num[0], Const) and num[0].value < 0:
            c = -num[0].value
            sign = "-"
            num = ([Const(c)] if c != 1 else []) + num[1:]
        parts = []
        for f in num:
            s, p = self.go(f)
            parts.append(f"({s})" if p < _PROD or (parts and p == _NEG) else s)
        top = "*".join(parts) if parts else "1"
        if den:
            if len(den) == 1:
                bottom = self.wrap(den[0], _POW)
            else:
                bottom = "(" + "*".join(self.wrap(d, _POW) for d in den) + ")"
            top = f"{top}/{bottom}"
        return sign + top, (_NEG if sign else _PROD)

    def func(self, e: Func) -> str:
        declared = self.functions.get(e.name)
        bare = declared is not None and tuple(
            a.name if isinstance(a, Var) and a.jet is None else None for a in e.args
        ) == declared
        s = e.name if bare else f"{e.name}({','.join(self.go(a)[0] for a in e.args)})"
        for slot, order in enumerate(e.orders):
            if not order:
                continue
            arg = e.args[slot]
            unique = isinstance(arg, Var) and all(
                j == slot or arg not in a.norm.free_vars() for j, a in enumerate(e.args)
            )
            wrt = arg.name if unique and arg.jet is None else str(slot + 1)
            s = f"D({s},{wrt},{order})"
        return s


def _const(v: Fraction) -> tuple[str, int]:
    if v.denominator == 1:
        return str(v.numerator), (_NEG if v < 0 else _ATOM)
    return f"{v.numerator}/{v.denominator}", (_NEG if v < 0 else _PROD)
